use homcrit::cell::{CoefficientField, Preset};
use homcrit::solver::{
    aligned_spacing, harmonic_approximant, interior_estimate_check, solve_dirichlet, solve_harmonic, BallProblem,
    BoundaryData, Medium, Scheme, SolveOptions,
};
use homcrit::{Error, ScalarField, Vector3};

fn opts(scheme: Scheme) -> SolveOptions {
    SolveOptions {
        scheme,
        ..SolveOptions::default()
    }
}

fn problem(name: &str, h: f64) -> BallProblem<'static> {
    BallProblem {
        center: Vector3::zeros(),
        radius: 1.0,
        epsilon: 1.0,
        spacing: h,
        boundary: BoundaryData::preset(name, &Vector3::zeros()).unwrap(),
    }
}

fn max_nodal_error(sol: &homcrit::solver::Solution, f: impl Fn(&Vector3<f64>) -> f64) -> f64 {
    sol.samples_within(1.0)
        .iter()
        .map(|(x, u, _)| (u - f(x)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn linear_data_is_reproduced_by_both_schemes() {
    for scheme in [Scheme::Cartesian, Scheme::Axial] {
        let sol = solve_harmonic(&problem("linear", 1.0 / 24.0), opts(scheme)).unwrap();
        let err = max_nodal_error(&sol, |x| x.x);
        assert!(err <= 1e-8, "{scheme:?}: {err}");
        let g = sol.gradient(&Vector3::new(0.1, 0.2, -0.3));
        assert!((g - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-8, "{scheme:?}: {g}");
    }
}

#[test]
fn quadratic_harmonic_is_reproduced() {
    for scheme in [Scheme::Cartesian, Scheme::Axial] {
        let sol = solve_harmonic(&problem("x1x2", 1.0 / 24.0), opts(scheme)).unwrap();
        let err = max_nodal_error(&sol, |x| x.x * x.y);
        assert!(err <= 1e-8, "{scheme:?}: {err}");
    }
}

#[test]
fn constants_are_preserved() {
    let mut p = problem("linear", 1.0 / 16.0);
    p.boundary = BoundaryData::Poly(homcrit::poly::Poly3::constant(1.0));
    for scheme in [Scheme::Cartesian, Scheme::Axial] {
        let sol = solve_harmonic(&p, opts(scheme)).unwrap();
        assert!(max_nodal_error(&sol, |_| 1.0) < 1e-9);
    }
}

#[test]
fn bandlimited_data_matches_spectral_synthesis() {
    let name = "random-bandlimited:11,4";
    let exact = match BoundaryData::preset(name, &Vector3::zeros()).unwrap() {
        BoundaryData::Poly(p) => p,
        _ => unreachable!(),
    };
    let mut last = f64::INFINITY;
    for h in [1.0 / 16.0, 1.0 / 32.0] {
        let sol = solve_harmonic(&problem(name, h), opts(Scheme::Axial)).unwrap();
        let err = max_nodal_error(&sol, |x| exact.eval(x)) / exact.max_coeff();
        assert!(err < last / 3.0, "h = {h}: {err} vs {last}");
        last = err;
    }
    assert!(last < 1e-3, "{last}");
}

#[test]
fn axial_and_cartesian_agree() {
    let name = "mix:3,1,1;2,-2,0.5";
    let a = solve_harmonic(&problem(name, 1.0 / 32.0), opts(Scheme::Axial)).unwrap();
    let c = solve_harmonic(&problem(name, 1.0 / 32.0), opts(Scheme::Cartesian)).unwrap();
    for x in [Vector3::new(0.3, -0.2, 0.4), Vector3::new(-0.5, 0.5, 0.1)] {
        assert!((a.value(&x) - c.value(&x)).abs() < 2e-3);
        assert!((a.gradient(&x) - c.gradient(&x)).norm() < 2e-2);
    }
}

#[test]
fn maximum_principle() {
    let sol = solve_harmonic(&problem("hp:3,2", 1.0 / 24.0), opts(Scheme::Cartesian)).unwrap();
    let sq = homcrit::quadrature::SphereQuadrature::new(30);
    let data = match BoundaryData::preset("hp:3,2", &Vector3::zeros()).unwrap() {
        BoundaryData::Poly(p) => p,
        _ => unreachable!(),
    };
    let (lo, hi) = sq
        .points
        .iter()
        .map(|p| data.eval(p))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    for (_, u, _) in sol.samples_within(1.0) {
        assert!(u <= hi + 1e-3 && u >= lo - 1e-3);
    }
}

#[test]
fn guard_refuses_coarse_grids() {
    let field = CoefficientField::from_preset(&Preset::layered(), 32).unwrap();
    let medium = Medium::normalized(field, 1e-10).unwrap();
    let mut p = problem("linear", 1.0 / 64.0);
    p.epsilon = 1.0 / 8.0;
    match solve_dirichlet(&p, &medium, SolveOptions::default()) {
        Err(Error::ResolutionGuard { required, .. }) => assert_eq!(required, 128),
        other => panic!("expected guard, got {:?}", other.err()),
    }
}

#[test]
fn layered_solution_tracks_corrector() {
    let field = CoefficientField::from_preset(&Preset::layered(), 64).unwrap();
    let medium = Medium::normalized(field, 1e-11).unwrap();
    let eps = 1.0 / 8.0;
    let h = aligned_spacing(&medium, eps, 16);
    let mut p = problem("linear", h);
    p.epsilon = eps;
    let sol = solve_dirichlet(&p, &medium, SolveOptions::default()).unwrap();
    assert!(sol.residual() <= 1e-10);
    // Away from the boundary layer u is close to x1 + eps chi1(x1 / eps).
    let mut dev = 0.0f64;
    for (x, u, _) in sol.samples_within(0.5) {
        let chi = medium.corrector(&(x / eps))[0];
        dev = dev.max((u - x.x - eps * chi).abs());
    }
    assert!(dev < eps.sqrt() * 0.2, "deviation {dev}");
}

#[test]
fn approximant_of_harmonic_function_is_exact() {
    let sol = solve_harmonic(&problem("x1x2", 1.0 / 24.0), opts(Scheme::Axial)).unwrap();
    let ap = harmonic_approximant(&sol, &Medium::identity(), 1.0, 1.0, 1e-11).unwrap();
    assert!(ap.e_sup < 1e-8, "{}", ap.e_sup);
}

#[test]
fn approximant_rejects_constants() {
    let mut p = problem("linear", 1.0 / 16.0);
    p.boundary = BoundaryData::Poly(homcrit::poly::Poly3::constant(2.0));
    let sol = solve_harmonic(&p, SolveOptions::default()).unwrap();
    assert!(matches!(
        harmonic_approximant(&sol, &Medium::identity(), 1.0, 1.0, 1e-10),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn interior_estimate_moments() {
    let x1 = homcrit::poly::Poly3::var(0);
    let c = Vector3::zeros();
    let e = interior_estimate_check(&x1, &c, 1.0, 0.05).unwrap();
    assert!((e.volume_ratio - 0.6).abs() < 1e-12);
    let x1x2 = homcrit::poly::Poly3::product(&[0, 1]);
    let e = interior_estimate_check(&x1x2, &c, 1.0, 0.05).unwrap();
    assert!((e.volume_ratio - 3.0 / 7.0).abs() < 1e-12);
    let one = homcrit::poly::Poly3::constant(1.0);
    let e = interior_estimate_check(&one, &c, 1.0, 0.05).unwrap();
    assert!((e.volume_ratio - 1.0).abs() < 1e-12 && (e.sup_ratio - 1.0).abs() < 1e-12);
}

#[test]
fn rescaling_matches_scaled_problem() {
    // u solves on B(0, 1/2) with eps; v(x) = u(x / 2) solves on B(0, 1) with 2 eps.
    let field = CoefficientField::from_preset(&Preset::layered(), 64).unwrap();
    let medium = Medium::normalized(field, 1e-11).unwrap();
    let eps = 1.0 / 16.0;
    let h = aligned_spacing(&medium, eps, 16);
    let small = BallProblem {
        center: Vector3::zeros(),
        radius: 0.5,
        epsilon: eps,
        spacing: h,
        boundary: BoundaryData::preset("x1x2", &Vector3::zeros()).unwrap(),
    };
    let big = BallProblem {
        center: Vector3::zeros(),
        radius: 1.0,
        epsilon: 2.0 * eps,
        spacing: 2.0 * h,
        boundary: BoundaryData::Poly(homcrit::poly::Poly3::product(&[0, 1]).scale(0.25)),
    };
    let u = solve_dirichlet(&small, &medium, SolveOptions::default()).unwrap();
    let v = solve_dirichlet(&big, &medium, SolveOptions::default()).unwrap();
    for x in [Vector3::new(0.3, 0.2, 0.1), Vector3::new(-0.6, 0.1, 0.3)] {
        assert!((v.value(&x) - u.value(&(x / 2.0))).abs() < 1e-9);
    }
}
