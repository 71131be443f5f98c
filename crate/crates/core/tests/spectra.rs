use homcrit::harmonics::{sh_index, solid_harmonic};
use homcrit::harness::spectral_corpus;
use homcrit::poly::Poly3;
use homcrit::quadrature::{gauss_legendre, SphereQuadrature};
use homcrit::spectra::*;
use homcrit::Vector3;
use proptest::prelude::*;

fn origin() -> Vector3<f64> {
    Vector3::zeros()
}

#[test]
fn sphere_quadrature_reproduces_moments() {
    let quad = SphereQuadrature::new(6);
    let avg = |f: &dyn Fn(&Vector3<f64>) -> f64| quad.average(&quad.points.iter().map(f).collect::<Vec<_>>());
    assert!((avg(&|_| 1.0) - 1.0).abs() < 1e-14);
    assert!((avg(&|p| p.x * p.x) - 1.0 / 3.0).abs() < 1e-14);
    assert!((avg(&|p| p.z.powi(4)) - 1.0 / 5.0).abs() < 1e-14);
    assert!((avg(&|p| (p.x * p.y).powi(2)) - 1.0 / 15.0).abs() < 1e-14);
    assert!(avg(&|p| p.x * p.y * p.z).abs() < 1e-15);
}

#[test]
fn gauss_legendre_is_exact_to_degree_2n_minus_1() {
    let (x, w) = gauss_legendre(5);
    for k in 0..10 {
        let q: f64 = x.iter().zip(&w).map(|(a, b)| b * a.powi(k)).sum();
        let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
        assert!((q - exact).abs() < 1e-13, "degree {k}");
    }
}

#[test]
fn decompose_isolates_solid_harmonics() {
    for l in 0..=4usize {
        for m in -(l as i64)..=(l as i64) {
            let p = solid_harmonic(l, m);
            let t = sphere_trace(&p, &origin(), 1.0, 8).unwrap();
            let e = decompose(&t, 5).unwrap();
            let peak = e.coeffs[sh_index(l, m)];
            let rest: f64 = e.coeffs.iter().map(|c| c * c).sum::<f64>() - peak * peak;
            assert!(rest.abs() < 1e-24, "l={l} m={m}: leak {rest}");
            // Parseval against the sampled mean square.
            assert!((peak * peak - t.mean_square()).abs() < 1e-12);
            assert!(e.residual < 1e-7);
        }
    }
}

#[test]
fn expansion_synthesizes_the_trace() {
    let u = Poly3::product(&[0, 1]).add(&Poly3::var(2).scale(0.5));
    let t = sphere_trace(&u, &origin(), 1.0, 6).unwrap();
    let e = decompose(&t, 3).unwrap();
    for p in t.quad.points.iter().step_by(7) {
        assert!((e.synthesize(p) - u.eval(p)).abs() < 1e-12);
    }
    let poly = e.to_poly();
    let x = Vector3::new(0.3, -0.2, 0.4);
    assert!((poly.eval(&x) - u.eval(&x)).abs() < 1e-12);
}

#[test]
fn homogeneous_harmonics_have_integer_indices() {
    let x = origin();
    for (l, u) in [
        (1usize, Poly3::var(0)),
        (2, Poly3::product(&[0, 1])),
        (3, Poly3::product(&[0, 1, 2])),
    ] {
        for r in [0.25, 1.0] {
            let ns = doubling_index(&u, &x, r, 8).unwrap().n_star.unwrap();
            let n = almgren_frequency(&u, &x, r, 8).unwrap().n.unwrap();
            assert!((ns - l as f64).abs() < 1e-12, "N* {ns}");
            assert!((n - l as f64).abs() < 1e-12, "N {n}");
            assert!(weiss_from_field(&u, &x, l as f64, r, 8).unwrap().abs() < 1e-12);
            assert!(turning_distance(&u, &x, l, r, r / 2.0, 8).unwrap() < 1e-12);
        }
    }
}

#[test]
fn mixed_degree_doubling_matches_mass_ratio() {
    // u = x3 + x1 x2: masses r^2/3 and r^4/15 on the sphere.
    let u = Poly3::var(2).add(&Poly3::product(&[0, 1]));
    let mass = |r: f64| r * r / 3.0 + r.powi(4) / 15.0;
    let expected = (mass(1.0) / mass(0.5)).ln() / 4f64.ln();
    let ns = doubling_index(&u, &origin(), 1.0, 8).unwrap().n_star.unwrap();
    assert!((ns - expected).abs() < 1e-12);
    assert!((spectral_doubling(&[0.0, 1.0 / 3.0, 1.0 / 15.0], 1.0) - expected).abs() < 1e-14);
}

#[test]
fn constant_field_is_degenerate() {
    let c = Poly3::constant(2.0);
    assert!(doubling_index(&c, &origin(), 1.0, 6).is_err());
    assert!(almgren_frequency(&c, &origin(), 1.0, 6).is_err());
    assert!(doubling_index(&c, &origin(), -1.0, 6).is_err());
}

#[test]
fn normalized_distance_ignores_scale() {
    let t = SphereTrace::from_fn(origin(), 1.0, 6, |p| p.x * p.y);
    let s = SphereTrace::from_fn(origin(), 1.0, 6, |p| 5.0 * p.x * p.y);
    assert!(normalized_distance(&t, &s).unwrap() < 1e-14);
    let o = SphereTrace::from_fn(origin(), 1.0, 6, |p| -p.x * p.y);
    assert!((normalized_distance(&t, &o).unwrap() - 2.0).abs() < 1e-12);
    assert!((normalized_distance_coeffs(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 2f64.sqrt()).abs() < 1e-14);
}

#[test]
fn corpus_is_seeded() {
    let a = spectral_corpus(7, 20, 6);
    let b = spectral_corpus(7, 20, 6);
    let c = spectral_corpus(8, 20, 6);
    assert_eq!(a.len(), 20);
    assert!(a.iter().zip(&b).all(|(x, y)| x.1 == y.1));
    assert!(a.iter().zip(&c).any(|(x, y)| x.1 != y.1));
}

#[test]
fn corpus_satisfies_weiss_bounds() {
    for (_, e) in spectral_corpus(1, 200, 8) {
        let en = e.energies();
        assert!(weiss_identity_check(&en).gap <= 1e-10);
        if let Some(rep) = concentration_check(&en, 2, 1.0 / 32.0) {
            assert!(rep.holds(1e-12), "{rep:?}");
        }
    }
}

fn energies() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..8).prop_filter("nonzero", |e| e[1..].iter().sum::<f64>() > 1e-3)
}

proptest! {
    #[test]
    fn weiss_identity_holds(e in energies()) {
        let w = weiss_identity_check(&e);
        prop_assert!(w.gap <= 1e-10 * (1.0 + w.rhs.abs()), "{w:?}");
        prop_assert!(w.rhs >= -1e-12);
    }

    #[test]
    fn weiss_functional_is_monotone(e in energies(), kappa in 0.0f64..4.0) {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..=32 {
            let r = 0.25 + 0.75 * (i - 1) as f64 / 31.0;
            let w = weiss_functional(&e, kappa, r);
            prop_assert!(w >= prev - 1e-10 * w.abs().max(1.0));
            prev = w;
        }
    }

    #[test]
    fn frequency_is_monotone_and_bracketed(e in energies()) {
        let lo = e.iter().position(|v| *v > 0.0).unwrap() as f64;
        let hi = e.iter().rposition(|v| *v > 0.0).unwrap() as f64;
        let mut prev = 0.0;
        for i in 1..=20 {
            let n = spectral_frequency(&e, i as f64 / 20.0);
            prop_assert!(n >= prev - 1e-12);
            prop_assert!(n >= lo - 1e-12 && n <= hi + 1e-12);
            prev = n;
        }
    }

    #[test]
    fn concentration_bounds_hold_when_hypotheses_do(e in energies(), l in 1usize..4, w in 0.01f64..0.2) {
        if let Some(rep) = concentration_check(&e, l, w) {
            prop_assert!(rep.holds(1e-12), "{rep:?}");
        }
    }

    #[test]
    fn frequency_drop_bound(e in energies(), l in 1usize..5, delta in 0.05f64..0.5) {
        if let Some((worst, bound)) = frequency_drop(&e, l, delta, 64) {
            prop_assert!(worst <= bound + 1e-12);
        }
    }

    #[test]
    fn pure_degree_does_not_turn(l in 0usize..6, a in 0.1f64..10.0, r in 0.1f64..1.0) {
        let mut e = vec![0.0; 6];
        e[l] = a;
        prop_assert!(spectral_turning(&e, l, 1.0, r) < 1e-12);
        prop_assert!((spectral_doubling(&e, r) - l as f64).abs() < 1e-10);
    }
}
