use homcrit::geometry::*;
use homcrit::poly::Poly3;
use homcrit::Vector3;
use proptest::prelude::*;
use std::f64::consts::PI;

fn x1x2() -> Poly3 {
    Poly3::product(&[0, 1])
}

fn detect(u: &Poly3, r: f64, h: f64) -> Vec<CriticalPoint> {
    find_critical_points(
        u,
        &Vector3::zeros(),
        r,
        DetectOptions {
            h,
            fd_step: h,
            grad_tol: 1e-10,
            max_newton: 30,
        },
    )
    .unwrap()
}

#[test]
fn product_critical_set_is_the_axis() {
    let pts = detect(&x1x2(), 0.5, 1.0 / 32.0);
    assert!(pts.len() >= 30, "found {}", pts.len());
    for p in &pts {
        assert!(p.x.x.abs() < 1e-10 && p.x.y.abs() < 1e-10);
        assert!(p.x.norm() <= 0.5 + 1e-12);
    }
    let zs: Vec<f64> = pts.iter().map(|p| p.x.z).collect();
    assert!(zs.windows(2).all(|w| w[1] - w[0] >= 1.0 / 64.0 - 1e-12));
    assert!(zs[0] < -0.45 && zs[zs.len() - 1] > 0.45);
}

#[test]
fn saddle_has_one_critical_point() {
    // x^2 + y^2 - 2 z^2 shifted off the lattice.
    let c = Vector3::new(0.013, -0.021, 0.007);
    let u = Poly3::var(0)
        .pow(2)
        .add(&Poly3::var(1).pow(2))
        .sub(&Poly3::var(2).pow(2).scale(2.0))
        .translate(&c);
    let pts = detect(&u, 0.4, 1.0 / 16.0);
    assert_eq!(pts.len(), 1);
    assert!((pts[0].x - c).norm() < 1e-10);
}

#[test]
fn linear_function_has_no_critical_points() {
    assert!(detect(&Poly3::var(0), 0.5, 1.0 / 16.0).is_empty());
}

#[test]
fn detection_is_deterministic() {
    let u = x1x2().add(&Poly3::var(2).pow(3).scale(0.1));
    let a = detect(&u, 0.5, 1.0 / 16.0);
    let b = detect(&u, 0.5, 1.0 / 16.0);
    assert_eq!(a.len(), b.len());
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.x, q.x);
    }
}

#[test]
fn gram_of_product_singles_out_the_axis() {
    // x1 x2 = sqrt(15)^-1 * Y_{2,-2} up to the harmonic normalization.
    let e = homcrit::spectra::decompose(
        &homcrit::spectra::sphere_trace(&x1x2(), &Vector3::zeros(), 1.0, 8).unwrap(),
        2,
    )
    .unwrap();
    let p = homcrit::spectra::project(&e, 2);
    let q = gram_of(&p).unwrap();
    // Trace of Q for a normalized degree-l harmonic is l(2l + 1).
    assert!((q.trace() - 10.0).abs() < 1e-10);
    let s = almost_invariant_subspace(&q, DEFAULT_ETA).unwrap();
    assert_eq!(s.basis.len(), 1);
    assert!((s.basis[0] - Vector3::z()).norm() < 1e-10);
    assert!(s.eigenvalues[0].abs() < 1e-12);
    assert!((s.eigenvalues[1] - 5.0).abs() < 1e-10);
    let split = invariant_split(2, &p.coeffs, &Vector3::z()).unwrap();
    assert!((split.phi_norm - 1.0).abs() < 1e-10);
    assert!(split.varphi_norm < 1e-10);
    let split = invariant_split(2, &p.coeffs, &Vector3::x()).unwrap();
    assert!(split.phi_norm < 1e-10);
}

#[test]
fn generic_harmonic_has_no_invariant_direction() {
    let u = x1x2()
        .add(&Poly3::product(&[1, 2]))
        .add(&Poly3::product(&[0, 2]).scale(0.5));
    let t = homcrit::spectra::sphere_trace(&u, &Vector3::zeros(), 1.0, 8).unwrap();
    let p = homcrit::spectra::project_trace(&t, 2).unwrap();
    let s = almost_invariant_subspace(&gram_of(&p).unwrap(), DEFAULT_ETA).unwrap();
    assert!(s.basis.is_empty());
}

#[test]
fn oversized_window_is_rejected() {
    let t = homcrit::spectra::sphere_trace(&x1x2(), &Vector3::zeros(), 1.0, 8).unwrap();
    let p = homcrit::spectra::project_trace(&t, 2).unwrap();
    assert!(almost_invariant_subspace(&gram_of(&p).unwrap(), 4.0).is_err());
}

#[test]
fn two_point_turning_vanishes_along_the_axis() {
    let u = x1x2();
    let along = two_point_turning(&u, &Vector3::zeros(), &Vector3::new(0.0, 0.0, 0.3), 2, 0.5, 8).unwrap();
    assert!(along.ratio < 1e-10);
    let across = two_point_turning(&u, &Vector3::zeros(), &Vector3::new(0.3, 0.0, 0.0), 2, 0.5, 8).unwrap();
    assert!((across.ratio - 5f64.sqrt()).abs() < 1e-8);
}

#[test]
fn homogeneous_point_has_zero_minimal_radius() {
    let r = minimal_radius(
        &x1x2(),
        &Vector3::zeros(),
        2,
        DEFAULT_DELTA0,
        1.0 / 64.0,
        0.5,
        1e-3,
        0.5,
        12,
    )
    .unwrap();
    assert_eq!(r.r0, 0.0);
    assert!((r.r_star - 1.0 / 32.0).abs() < 1e-15);
}

#[test]
fn minimal_radius_locates_the_crossing() {
    // u = x1 + a x1 x2 has N*(s) increasing from 1 to 2 as s grows; solve
    // for the radius where it reaches 2 - delta0 by dense sampling.
    let u = Poly3::var(0).add(&x1x2().scale(4.0));
    let res = minimal_radius(&u, &Vector3::zeros(), 2, 0.25, 0.0, 1.0, 0.01, 2.0, 12).unwrap();
    assert!(res.r0 > 0.01 && res.r0 < 2.0);
    let quad = homcrit::quadrature::SphereQuadrature::new(12);
    let n = |s: f64| homcrit::spectra::doubling_with(&u, &Vector3::zeros(), s, &quad).unwrap();
    assert!((n(res.r0) - 1.75).abs() < 1e-6);
    assert!(n(res.r0 * 1.01) > 1.75);
}

#[test]
fn cover_constant() {
    assert!((cover_drop_constant(1.0 / 64.0, 2) - 1.0 / 4096.0).abs() < 1e-18);
}

#[test]
fn cover_classifies_bad_points() {
    let pts = vec![
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(0.05, 0.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
    ];
    let r = vec![0.2, 0.01, 0.2];
    let c = build_cover(&pts, &r).unwrap();
    assert_eq!(c.good, vec![false, true, true]);
    assert!(c.disjoint && c.contained);
    assert_eq!(c.primary.len(), 2);
    // The bad point lies at distance 0.05 from the selected small ball,
    // outside its quarter, so it gets a secondary ball of radius 0.005.
    assert_eq!(c.secondary.len(), 1);
    assert!((c.secondary[0].radius - 0.005).abs() < 1e-15);
    let mut buf = Vec::new();
    c.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x,y,z,r,label\n"));
    assert!(text.contains(",secondary\n") && text.contains(",bad\n"));
    assert!(!text.contains('\r'));
}

#[test]
fn tube_of_a_segment() {
    let set = TubeSet {
        points: vec![],
        segments: vec![(Vector3::new(0.0, 0.0, -0.5), Vector3::new(0.0, 0.0, 0.5))],
    };
    for r in [0.2, 0.1, 0.05] {
        let t = tube_volume(&set, r, 400_000, 7).unwrap();
        let exact = PI * r * r + 4.0 / 3.0 * PI * r * r * r;
        assert!(
            (t.volume - exact).abs() < 4.0 * t.stderr,
            "r={r}: {} vs {exact}",
            t.volume
        );
    }
}

#[test]
fn tube_of_a_point_and_determinism() {
    let set = TubeSet::from_points(vec![Vector3::new(0.3, 0.1, 0.0)]);
    let a = tube_volume(&set, 0.1, 200_000, 3).unwrap();
    let b = tube_volume(&set, 0.1, 200_000, 3).unwrap();
    assert_eq!(a.volume.to_bits(), b.volume.to_bits());
    let exact = 4.0 / 3.0 * PI * 1e-3;
    assert!((a.volume - exact).abs() < 4.0 * a.stderr);
}

#[test]
fn polyline_clips_to_the_ball() {
    let pts: Vec<Vector3<f64>> = (-10..=10).map(|k| Vector3::new(0.0, 0.0, k as f64 * 0.06)).collect();
    let set = TubeSet::polyline(&pts, 0.1, &Vector3::zeros(), 0.5);
    assert!(set.points.is_empty());
    let len: f64 = set.segments.iter().map(|(a, b)| (b - a).norm()).sum();
    assert!((len - 1.0).abs() < 1e-12);
    assert!(set
        .segments
        .iter()
        .all(|(a, b)| a.norm() <= 0.5 + 1e-12 && b.norm() <= 0.5 + 1e-12));
}

#[test]
fn graph_check_and_zone() {
    let line: Vec<Vector3<f64>> = (0..5)
        .map(|k| Vector3::new(0.0, 0.001 * k as f64, 0.1 * k as f64))
        .collect();
    let g = lipschitz_graph_check(&line, &[Vector3::z()], DEFAULT_GAMMA);
    assert!(g.pass && g.worst_ratio < 0.011);
    let g = lipschitz_graph_check(&line, &[Vector3::x()], DEFAULT_GAMMA);
    assert!(!g.pass);

    let u = x1x2();
    let pts = detect(&u, 0.5, 1.0 / 16.0);
    let ps: Vec<Vector3<f64>> = pts.iter().map(|p| p.x).collect();
    let z = no_critical_zone_check(&u, &ps, &Vector3::zeros(), &[Vector3::z()], DEFAULT_GAMMA, 0.05, 0.4, 6);
    assert!(z.violations.is_empty());
    assert!(z.sampled > 0 && z.min_grad > 0.0);
    assert!(low_frequency_critical_points(&u, &ps, 0.5, 8).unwrap().is_empty());
}

#[test]
fn low_frequency_points_are_flagged() {
    let u = Poly3::var(0).add(&x1x2().scale(0.1));
    let v = low_frequency_critical_points(&u, &[Vector3::zeros()], 0.5, 8).unwrap();
    assert_eq!(v.len(), 1);
    assert!(v[0].1 < 1.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cover_is_disjoint_and_covering(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, 0.001f64..0.5), 1..60)
    ) {
        let points: Vec<Vector3<f64>> = pts.iter().map(|p| Vector3::new(p.0, p.1, p.2)).collect();
        let radii: Vec<f64> = pts.iter().map(|p| p.3).collect();
        let c = build_cover(&points, &radii).unwrap();
        prop_assert!(c.disjoint);
        prop_assert!(c.contained);
        let again = build_cover(&points, &radii).unwrap();
        prop_assert_eq!(c.sum_radii(), again.sum_radii());
    }

    #[test]
    fn subspace_basis_is_unit_and_low_energy(
        coeffs in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        prop_assume!(coeffs.iter().map(|c| c * c).sum::<f64>() > 1e-3);
        let q = gram_matrix(2, &coeffs).unwrap();
        prop_assert!((q.trace() - 10.0).abs() < 1e-9);
        if let Ok(s) = almost_invariant_subspace(&q, 0.5) {
            for v in &s.basis {
                prop_assert!((v.norm() - 1.0).abs() < 1e-12);
                prop_assert!(directional_norm(&q, v) <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn split_is_orthogonal(
        coeffs in prop::collection::vec(-1.0f64..1.0, 7),
        v in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
    ) {
        let v = Vector3::new(v.0, v.1, v.2);
        prop_assume!(v.norm() > 0.1);
        prop_assume!(coeffs.iter().map(|c| c * c).sum::<f64>() > 1e-3);
        let s = invariant_split(3, &coeffs, &v).unwrap();
        prop_assert!((s.phi_norm.powi(2) + s.varphi_norm.powi(2) - 1.0).abs() < 1e-9);
        // phi does not vary along v.
        let x = Vector3::new(0.3, -0.2, 0.5);
        let dv = s.phi.grad(&x).dot(&v.normalize());
        prop_assert!(dv.abs() < 1e-9);
    }
}
