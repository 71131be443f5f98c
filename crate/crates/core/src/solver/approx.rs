//! Harmonic approximation of oscillating solutions and interior estimates.

use nalgebra::{Matrix3, Vector3};

use super::{solve_dirichlet, BallProblem, BoundaryData, Medium, Scheme, Solution, SolveOptions};
use crate::error::{Error, Result};
use crate::field::{ball_lattice, ScalarField};
use crate::quadrature::{gauss_legendre_interval, SphereQuadrature};

/// Harmonic u0 on B(x0, 7r/8) matching u_eps there, with measured errors on
/// B(x0, 3r/4).
pub struct Approximant {
    pub u0: Solution,
    pub center: Vector3<f64>,
    pub radius: f64,
    pub epsilon: f64,
    /// (fint over the sphere of radius r of u_eps^2)^(1/2).
    pub normalizer: f64,
    /// Constant added to u0 so that u0(x0) = u_eps(x0).
    pub shift: f64,
    pub e_sup: f64,
    /// sup |grad u_eps - (I + grad chi(x / eps)) grad u0|.
    pub e_grad: f64,
    /// Number of lattice nodes the errors were taken over.
    pub samples: usize,
}

impl Approximant {
    pub fn e_sup_normalized(&self) -> f64 {
        self.e_sup / self.normalizer
    }

    pub fn e_grad_normalized(&self) -> f64 {
        self.e_grad * self.radius / self.normalizer
    }
}

/// Square root of the sphere average of u^2.
pub fn sphere_rms(u: &dyn ScalarField, center: &Vector3<f64>, r: f64, q: usize) -> f64 {
    let sq = SphereQuadrature::new(q);
    let vals: Vec<f64> = sq.points.iter().map(|p| u.value(&(center + p * r)).powi(2)).collect();
    sq.average(&vals).sqrt()
}

pub fn harmonic_approximant(u_eps: &Solution, medium: &Medium, epsilon: f64, r: f64, tol: f64) -> Result<Approximant> {
    let x0 = u_eps.center();
    if !u_eps.contains_ball(&x0, r) {
        return Err(Error::OutsideDomain {
            center: [x0.x, x0.y, x0.z],
            radius: r,
        });
    }
    let sq = SphereQuadrature::new(24);
    let vals: Vec<f64> = sq.points.iter().map(|p| u_eps.value(&(x0 + p * r))).collect();
    let mean = sq.average(&vals);
    let var = sq.average(&vals.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>());
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if var.sqrt() <= 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("approximated solution is constant".into()));
    }
    let normalizer = sq.average(&vals.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();

    let scheme = match u_eps {
        Solution::Axial(_) => Scheme::Axial,
        Solution::Cartesian(_) => Scheme::Cartesian,
    };
    let problem = BallProblem {
        center: x0,
        radius: 7.0 * r / 8.0,
        epsilon,
        spacing: u_eps.h(),
        boundary: BoundaryData::Field(u_eps),
    };
    let mut u0 = solve_dirichlet(
        &problem,
        &Medium::identity(),
        SolveOptions {
            tol,
            scheme,
            max_iter: None,
            boundary: Default::default(),
        },
    )?;
    let shift = u_eps.value(&x0) - u0.value(&x0);
    u0.add_constant(shift);

    let samples = u0.samples_within(0.75 * r);
    let (mut e_sup, mut e_grad) = (0.0f64, 0.0f64);
    for (x, v0, g0) in &samples {
        e_sup = e_sup.max((u_eps.value(x) - v0).abs());
        let g = if medium.correctors().is_some() {
            medium.corrector_gradient(&(x / epsilon))
        } else {
            Matrix3::zeros()
        };
        let corrected = (Matrix3::identity() + g) * g0;
        e_grad = e_grad.max((u_eps.gradient(x) - corrected).norm());
    }
    Ok(Approximant {
        u0,
        center: x0,
        radius: r,
        epsilon,
        normalizer,
        shift,
        e_sup,
        e_grad,
        samples: samples.len(),
    })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct InteriorEstimate {
    /// fint_B u^2 / fint_{dB} u^2.
    pub volume_ratio: f64,
    /// max over B(7r/8) of (u^2 + r^2 |grad u|^2) / fint_{dB} u^2.
    pub sup_ratio: f64,
    /// r sup_{B(r/2)} |grad u| / (fint_B u^2)^(1/2).
    pub lipschitz_ratio: f64,
}

/// Moment ratios of a solution on B(center, r). Volume averages use a
/// Gauss rule in the radius; maxima are taken over a lattice of spacing h.
pub fn interior_estimate_check(u: &dyn ScalarField, center: &Vector3<f64>, r: f64, h: f64) -> Result<InteriorEstimate> {
    if !u.contains_ball(center, r) {
        return Err(Error::OutsideDomain {
            center: [center.x, center.y, center.z],
            radius: r,
        });
    }
    let q = 16;
    let sq = SphereQuadrature::new(q);
    let avg_sq = |s: f64| {
        let v: Vec<f64> = sq.points.iter().map(|p| u.value(&(center + p * s)).powi(2)).collect();
        sq.average(&v)
    };
    let sphere = avg_sq(r);
    let (nodes, weights) = gauss_legendre_interval(q, 0.0, r);
    let volume: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(s, w)| w * s * s * avg_sq(*s))
        .sum::<f64>()
        * 3.0
        / (r * r * r);
    let mut sup = 0.0f64;
    let mut grad_half = 0.0f64;
    for x in ball_lattice(center, 7.0 * r / 8.0, h) {
        let v = u.value(&x);
        let g = u.gradient(&x);
        sup = sup.max(v * v + r * r * g.norm_squared());
        if (x - center).norm() <= 0.5 * r {
            grad_half = grad_half.max(g.norm());
        }
    }
    if !(sphere > 0.0) {
        return Err(Error::Degenerate("solution vanishes on the sphere".into()));
    }
    Ok(InteriorEstimate {
        volume_ratio: volume / sphere,
        sup_ratio: sup / sphere,
        lipschitz_ratio: if volume > 0.0 {
            r * grad_half / volume.sqrt()
        } else {
            f64::INFINITY
        },
    })
}
