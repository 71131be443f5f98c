//! Dirichlet problems on balls for -div(B(x/eps) grad u) = 0.
//!
//! Two discretizations share one interface. [`cartesian`] is a conservative
//! seven-point scheme with symmetric cut cells at the sphere and works for any
//! medium. [`axial`] handles media of the form diag(alpha(y1), beta, beta),
//! including the identity, by expanding the data in Fourier modes around the
//! x1 axis and solving one two-dimensional problem per mode with multigrid
//! preconditioned CG.

pub mod approx;
pub mod axial;
pub mod cartesian;
pub mod medium;
mod multigrid;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::harmonics::solid_harmonic;
use crate::poly::Poly3;
use crate::tolerances::{BALL_RESIDUAL, GUARD_NODES};

pub use approx::{harmonic_approximant, interior_estimate_check, Approximant, InteriorEstimate};
pub use axial::AxialSolution;
pub use cartesian::GridSolution;
pub use medium::Medium;

/// Dirichlet data on the sphere, extended to a neighbourhood.
pub enum BoundaryData<'a> {
    /// A polynomial in absolute coordinates.
    Poly(Poly3),
    /// Values of another field, typically a previous solution.
    Field(&'a dyn ScalarField),
}

impl<'a> BoundaryData<'a> {
    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Self::Poly(p) => p.eval(x),
            Self::Field(f) => f.value(x),
        }
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Self::Poly(p) => p.grad(x),
            Self::Field(f) => f.gradient(x),
        }
    }

    /// Named data about `center`.
    ///
    /// Recognised names: `linear` (x1), `x1x2`, `hp:l,m` (solid harmonic),
    /// `mix:l,m,c;l,m,c;...` and `random-bandlimited:seed,L`.
    pub fn preset(name: &str, center: &Vector3<f64>) -> Result<BoundaryData<'static>> {
        let bad = || Error::InvalidInput(format!("unknown boundary data '{name}'"));
        let p = match name {
            "linear" => Poly3::var(0),
            "x1x2" | "hp:2-product" => Poly3::product(&[0, 1]),
            _ => {
                let (kind, args) = name.split_once(':').ok_or_else(bad)?;
                match kind {
                    "hp" => {
                        let (l, m) = parse_lm(args).ok_or_else(bad)?;
                        solid_harmonic(l, m)
                    }
                    "mix" => {
                        let mut p = Poly3::zero();
                        for part in args.split(';').filter(|s| !s.trim().is_empty()) {
                            let f: Vec<&str> = part.split(',').map(str::trim).collect();
                            if f.len() != 3 {
                                return Err(bad());
                            }
                            let (l, m) = parse_lm(&format!("{},{}", f[0], f[1])).ok_or_else(bad)?;
                            let c: f64 = f[2].parse().map_err(|_| bad())?;
                            p = p.add(&solid_harmonic(l, m).scale(c));
                        }
                        p
                    }
                    "random-bandlimited" => {
                        let f: Vec<&str> = args.split(',').map(str::trim).collect();
                        if f.len() != 2 {
                            return Err(bad());
                        }
                        let seed: u64 = f[0].parse().map_err(|_| bad())?;
                        let l_max: usize = f[1].parse().map_err(|_| bad())?;
                        random_bandlimited(seed, l_max)
                    }
                    _ => return Err(bad()),
                }
            }
        };
        Ok(BoundaryData::Poly(p.translate(center)))
    }
}

fn parse_lm(s: &str) -> Option<(usize, i64)> {
    let (a, b) = s.split_once(',')?;
    let l: usize = a.trim().parse().ok()?;
    let m: i64 = b.trim().parse().ok()?;
    (m.unsigned_abs() as usize <= l).then_some((l, m))
}

/// Harmonic polynomial with uniform random coefficients in [-1, 1] on every
/// solid harmonic of degree 1..=l_max.
pub fn random_bandlimited(seed: u64, l_max: usize) -> Poly3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Poly3::zero();
    for l in 1..=l_max {
        for m in -(l as i64)..=(l as i64) {
            let c: f64 = rng.gen_range(-1.0..=1.0);
            p = p.add(&solid_harmonic(l, m).scale(c));
        }
    }
    p
}

pub struct BallProblem<'a> {
    pub center: Vector3<f64>,
    pub radius: f64,
    /// Oscillation scale; ignored for constant media.
    pub epsilon: f64,
    pub spacing: f64,
    pub boundary: BoundaryData<'a>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Axial when the medium allows it, Cartesian otherwise.
    #[default]
    Auto,
    Cartesian,
    Axial,
}

/// How Dirichlet data enters the Cartesian scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BoundaryMode {
    /// Values at the sphere crossings of lattice edges.
    #[default]
    CutCell,
    /// Values of the data extended to the first lattice nodes outside the
    /// ball. Only meaningful for data defined beyond the sphere; exact for
    /// harmonic polynomials of degree at most three when A = I.
    Extension,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub scheme: Scheme,
    pub max_iter: Option<usize>,
    pub boundary: BoundaryMode,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: BALL_RESIDUAL,
            scheme: Scheme::Auto,
            max_iter: None,
            boundary: BoundaryMode::CutCell,
        }
    }
}

/// A discrete solution, usable as a field inside its ball.
pub enum Solution {
    Cartesian(GridSolution),
    Axial(AxialSolution),
}

impl Solution {
    pub fn residual(&self) -> f64 {
        match self {
            Self::Cartesian(s) => s.residual,
            Self::Axial(s) => s.residual,
        }
    }

    pub fn iterations(&self) -> usize {
        match self {
            Self::Cartesian(s) => s.iterations,
            Self::Axial(s) => s.iterations,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        match self {
            Self::Cartesian(s) => s.center,
            Self::Axial(s) => s.center,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            Self::Cartesian(s) => s.radius,
            Self::Axial(s) => s.radius,
        }
    }

    pub fn h(&self) -> f64 {
        match self {
            Self::Cartesian(s) => s.h,
            Self::Axial(s) => s.h,
        }
    }

    pub fn add_constant(&mut self, c: f64) {
        match self {
            Self::Cartesian(s) => s.add_constant(c),
            Self::Axial(s) => s.add_constant(c),
        }
    }

    /// Unknown nodes within distance r of the center, with nodal values and
    /// gradients.
    pub fn samples_within(&self, r: f64) -> Vec<(Vector3<f64>, f64, Vector3<f64>)> {
        match self {
            Self::Cartesian(s) => s.samples_within(r),
            Self::Axial(s) => s.samples_within(r),
        }
    }
}

impl ScalarField for Solution {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Self::Cartesian(s) => s.value(x),
            Self::Axial(s) => s.value(x),
        }
    }

    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Self::Cartesian(s) => s.gradient(x),
            Self::Axial(s) => s.gradient(x),
        }
    }

    fn contains_ball(&self, c: &Vector3<f64>, r: f64) -> bool {
        match self {
            Self::Cartesian(s) => s.contains_ball(c, r),
            Self::Axial(s) => s.contains_ball(c, r),
        }
    }

    fn spacing(&self) -> Option<f64> {
        Some(self.h())
    }
}

/// Fails unless h <= eps / 16 for an oscillating medium.
pub fn resolution_guard(medium: &Medium, epsilon: f64, h: f64) -> Result<()> {
    if medium.is_constant() {
        return Ok(());
    }
    let limit = epsilon / GUARD_NODES;
    if h > limit * (1.0 + 1e-12) {
        return Err(Error::ResolutionGuard {
            spacing: h,
            limit,
            required: (GUARD_NODES / epsilon).ceil() as usize,
        });
    }
    Ok(())
}

/// Spacing eps * period / n_cell, aligned with the cell period along x1.
pub fn aligned_spacing(medium: &Medium, epsilon: f64, n_cell: usize) -> f64 {
    epsilon * medium.period_x1().abs() / n_cell as f64
}

pub fn solve_dirichlet(problem: &BallProblem, medium: &Medium, opts: SolveOptions) -> Result<Solution> {
    if !(problem.radius > 0.0 && problem.spacing > 0.0) || !problem.radius.is_finite() {
        return Err(Error::InvalidInput("radius and spacing must be positive".into()));
    }
    if !medium.is_constant() && !(problem.epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    if problem.radius / problem.spacing < 4.0 {
        return Err(Error::InvalidInput(format!(
            "spacing {} too coarse for radius {}",
            problem.spacing, problem.radius
        )));
    }
    resolution_guard(medium, problem.epsilon, problem.spacing)?;
    let extension = opts.boundary == BoundaryMode::Extension;
    if extension && !matches!(problem.boundary, BoundaryData::Poly(_)) {
        return Err(Error::InvalidInput("extension boundary needs polynomial data".into()));
    }
    let scheme = match opts.scheme {
        Scheme::Auto if extension => Scheme::Cartesian,
        Scheme::Axial if extension => {
            return Err(Error::InvalidInput(
                "extension boundary is only available on the Cartesian scheme".into(),
            ))
        }
        Scheme::Auto if medium.is_axial() => Scheme::Axial,
        Scheme::Auto => Scheme::Cartesian,
        s => s,
    };
    match scheme {
        Scheme::Axial => {
            if !medium.is_axial() {
                return Err(Error::InvalidInput(
                    "axial scheme needs a medium diag(alpha(y1), beta, beta)".into(),
                ));
            }
            Ok(Solution::Axial(axial::solve(problem, medium, &opts)?))
        }
        _ => Ok(Solution::Cartesian(cartesian::solve(problem, medium, &opts)?)),
    }
}

/// Dirichlet problem for the Laplacian.
pub fn solve_harmonic(problem: &BallProblem, opts: SolveOptions) -> Result<Solution> {
    solve_dirichlet(problem, &Medium::identity(), opts)
}

/// Distance s > 0 along the unit axis direction `dir` (sign `sign`) from
/// `p` (relative to the center) to the sphere of radius r.
pub(crate) fn axis_crossing(p: &Vector3<f64>, axis: usize, sign: f64, r: f64) -> f64 {
    let b = sign * p[axis];
    let c = p.norm_squared() - r * r;
    let disc = (b * b - c).max(0.0);
    -b + disc.sqrt()
}

/// One-sided derivative from three non-uniform points: values at -hm, 0, +hp.
pub(crate) fn nonuniform_derivative(um: f64, hm: f64, u0: f64, up: f64, hp: f64) -> f64 {
    let s = hp + hm;
    hm / (hp * s) * (up - u0) + hp / (hm * s) * (u0 - um)
}

pub(crate) fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        let c = Vector3::zeros();
        for name in [
            "linear",
            "x1x2",
            "hp:3,-2",
            "mix:1,1,1;2,0,0.5",
            "random-bandlimited:7,4",
        ] {
            let BoundaryData::Poly(p) = BoundaryData::preset(name, &c).unwrap() else {
                panic!()
            };
            assert!(p.laplacian().max_coeff() < 1e-10, "{name}");
        }
        assert!(BoundaryData::preset("hp:1,2", &c).is_err());
        assert!(BoundaryData::preset("nonsense", &c).is_err());
    }

    #[test]
    fn crossing_distance() {
        let p = Vector3::new(0.5, 0.0, 0.0);
        assert!((axis_crossing(&p, 0, 1.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((axis_crossing(&p, 0, -1.0, 1.0) - 1.5).abs() < 1e-15);
        assert!((axis_crossing(&p, 1, 1.0, 1.0) - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn nonuniform_stencil_exact_for_quadratics() {
        let f = |x: f64| 1.0 + 2.0 * x - 3.0 * x * x;
        let (hm, hp) = (0.3, 0.07);
        let d = nonuniform_derivative(f(-hm), hm, f(0.0), f(hp), hp);
        assert!((d - 2.0).abs() < 1e-12);
    }
}
