use homcrit::cell::*;
use homcrit::{Matrix3, Vector3};
use proptest::prelude::*;

fn solve(preset: &Preset, n: usize) -> (CoefficientField, CorrectorSet) {
    let field = CoefficientField::from_preset(preset, n).unwrap();
    let c = solve_cell_problem(&field, 1e-11).unwrap();
    (field, c)
}

#[test]
fn layered_matches_harmonic_and_arithmetic_means() {
    let (_, c) = solve(&Preset::layered(), 256);
    let expected = Matrix3::from_diagonal(&Vector3::new(3f64.sqrt(), 2.0, 2.0));
    assert!((c.a_hat - expected).abs().max() < 1e-4, "{}", c.a_hat);
    // Only the first corrector is nontrivial: d1 chi_1 = sqrt(3) / a - 1.
    assert!((c.mu - 3f64.sqrt() / 3.0).abs() < 1e-4, "mu = {}", c.mu);
    assert!(c.mean_abs_chi() < 1e-10);
}

#[test]
fn identity_has_zero_correctors() {
    let (field, c) = solve(&Preset::Identity, 16);
    assert!((c.a_hat - Matrix3::identity()).abs().max() < 1e-14);
    assert_eq!(c.mu, 1.0);
    assert!(c.chi.iter().all(|v| v.iter().all(|x| x.abs() < 1e-14)));
    assert_eq!(homogenized_matrix(&field, &c).unwrap(), c.a_hat);
    assert!(!min_det_check(&c).violation);
}

#[test]
fn checkerboard_lies_between_reuss_and_voigt() {
    let preset = Preset::CheckerboardSmoothed {
        base: 2.0,
        amplitude: 1.0,
        sharpness: 4.0,
    };
    let n = 16;
    let (field, c) = solve(&preset, n);
    let vals: Vec<f64> = field.values().iter().map(|m| m[(0, 0)]).collect();
    let len = vals.len() as f64;
    let voigt = vals.iter().sum::<f64>() / len;
    let reuss = len / vals.iter().map(|v| 1.0 / v).sum::<f64>();
    let eig = c.a_hat.symmetric_eigen().eigenvalues;
    for e in eig.iter() {
        assert!(
            *e >= reuss - 1e-8 && *e <= voigt + 1e-8,
            "{e} not in [{reuss}, {voigt}]"
        );
    }
    assert!((c.a_hat - c.a_hat.transpose()).abs().max() < 1e-8);
    // Cubic symmetry makes the diagonal isotropic.
    assert!((c.a_hat[(0, 0)] - c.a_hat[(1, 1)]).abs() < 1e-8);
    assert!(c.mu > 0.0);
}

#[test]
fn trig_tensor_energy_and_flux_forms_agree() {
    let (_, c) = solve(&Preset::TrigTensor { amplitude: 0.5 }, 16);
    assert!(
        (c.a_hat - c.a_hat_flux).abs().max() < 1e-6,
        "{} vs {}",
        c.a_hat,
        c.a_hat_flux
    );
    assert!(c.a_hat.symmetric_eigen().eigenvalues.min() > 0.0);
}

#[test]
fn normalization_maps_symmetric_part_to_identity() {
    let a = Matrix3::new(3.0, 0.5, 0.1, 0.5, 2.0, 0.2, 0.1, 0.2, 1.5);
    let t = normalization_transform(&a).unwrap();
    let m = t.s * (a + a.transpose()) * t.s.transpose();
    assert!((m - Matrix3::identity() * 2.0).abs().max() < 1e-12);
    assert!((t.s * t.s_inv - Matrix3::identity()).abs().max() < 1e-12);
    assert!(!t.is_diagonal());
    let d = normalization_transform(&Matrix3::from_diagonal(&Vector3::new(3f64.sqrt(), 2.0, 2.0))).unwrap();
    assert!(d.is_diagonal());
    assert_eq!(d.s[(1, 1)], 1.0 / 2f64.sqrt());
    assert!(normalization_transform(&(-Matrix3::identity())).is_err());
}

#[test]
fn coefficient_csv_round_trips() {
    let field = CoefficientField::from_preset(&Preset::TrigTensor { amplitude: 0.3 }, 4).unwrap();
    let mut buf = Vec::new();
    field.write_csv(&mut buf).unwrap();
    let back = CoefficientField::from_csv(buf.as_slice()).unwrap();
    assert_eq!(back.n(), 4);
    for (a, b) in field.values().iter().zip(back.values()) {
        assert!((a - b).abs().max() < 1e-12);
    }
}

#[test]
fn non_elliptic_samples_are_rejected() {
    let mut vals = vec![Matrix3::identity(); 8];
    vals[3] = -Matrix3::identity();
    assert!(CoefficientField::from_samples(2, vals).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn layered_family_closed_form(mean in 1.5f64..4.0, frac in 0.0f64..0.8) {
        let amplitude = frac * (mean - 0.5);
        let (_, c) = solve(&Preset::Layered { mean, amplitude }, 128);
        let harmonic = (mean * mean - amplitude * amplitude).sqrt();
        prop_assert!((c.a_hat[(0, 0)] - harmonic).abs() < 1e-3 * harmonic);
        prop_assert!((c.a_hat[(1, 1)] - mean).abs() < 1e-10);
        prop_assert!((c.a_hat[(2, 2)] - mean).abs() < 1e-10);
        prop_assert!((c.mu - harmonic / (mean + amplitude)).abs() < 1e-3);
    }

    #[test]
    fn constant_matrix_is_its_own_homogenization(d in prop::array::uniform3(1.0f64..3.0), off in -0.3f64..0.3) {
        let matrix = [[d[0], off, 0.0], [off, d[1], 0.0], [0.0, 0.0, d[2]]];
        let (_, c) = solve(&Preset::Constant { matrix }, 4);
        let a = Matrix3::from_fn(|i, j| matrix[i][j]);
        prop_assert!((c.a_hat - a).abs().max() < 1e-12);
        prop_assert_eq!(c.mu, 1.0);
    }
}
