//! Sphere-based analysis: traces, harmonic expansions, doubling indices,
//! frequencies, Weiss functionals and turning distances.
//!
//! Sphere integrals are averages (weights sum to one). Radial families are
//! harmonic: u(r w) = sum_lm a_lm r^l Y_lm(w), so their statistics only
//! depend on the per-degree energies e_k = sum_m a_km^2.

use std::io::Write;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::harmonics::{real_sh, sh_count, sh_degree_order, sh_index, solid_harmonic};
use crate::harness::fmt_num;
use crate::poly::Poly3;
use crate::quadrature::{gauss_legendre_interval, SphereQuadrature};

#[derive(Clone, Debug)]
pub struct SphereTrace {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub quad: SphereQuadrature,
    pub values: Vec<f64>,
    pub gradients: Option<Vec<Vector3<f64>>>,
}

impl SphereTrace {
    pub fn from_fn(center: Vector3<f64>, radius: f64, q: usize, f: impl Fn(&Vector3<f64>) -> f64) -> Self {
        let quad = SphereQuadrature::new(q);
        let values = quad.points.iter().map(|p| f(&(center + p * radius))).collect();
        Self {
            center,
            radius,
            quad,
            values,
            gradients: None,
        }
    }

    pub fn mean(&self) -> f64 {
        self.quad.average(&self.values)
    }

    /// Sphere average of the squared values.
    pub fn mean_square(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        self.quad.average(&sq)
    }

    pub fn norm(&self) -> f64 {
        self.mean_square().sqrt()
    }

    pub fn centered(&self, c: f64) -> Self {
        let mut t = self.clone();
        t.values.iter_mut().for_each(|v| *v -= c);
        t
    }
}

/// Samples u on the sphere of radius r about x0.
pub fn sphere_trace(u: &dyn ScalarField, x0: &Vector3<f64>, r: f64, q: usize) -> Result<SphereTrace> {
    check_ball(u, x0, r)?;
    Ok(SphereTrace::from_fn(*x0, r, q, |x| u.value(x)))
}

/// As [`sphere_trace`], also sampling the gradient.
pub fn sphere_trace_with_gradient(u: &dyn ScalarField, x0: &Vector3<f64>, r: f64, q: usize) -> Result<SphereTrace> {
    let mut t = sphere_trace(u, x0, r, q)?;
    let g = t.quad.points.iter().map(|p| u.gradient(&(x0 + p * r))).collect();
    t.gradients = Some(g);
    Ok(t)
}

fn check_ball(u: &dyn ScalarField, x0: &Vector3<f64>, r: f64) -> Result<()> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput(format!("radius {r} must be positive")));
    }
    if !u.contains_ball(x0, r) {
        return Err(Error::OutsideDomain {
            center: [x0.x, x0.y, x0.z],
            radius: r,
        });
    }
    Ok(())
}

/// Coefficients in the real orthonormal basis, flat index l^2 + l + m.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicExpansion {
    pub l_max: usize,
    pub coeffs: Vec<f64>,
    /// L2 norm of the part of the trace above l_max.
    pub residual: f64,
}

pub fn decompose(trace: &SphereTrace, l_max: usize) -> Result<HarmonicExpansion> {
    if trace.quad.q < l_max + 1 {
        return Err(Error::InvalidInput(format!(
            "quadrature order {} cannot resolve degree {l_max} (need q >= {})",
            trace.quad.q,
            l_max + 1
        )));
    }
    let mut coeffs = vec![0.0; sh_count(l_max)];
    for ((p, w), f) in trace.quad.points.iter().zip(&trace.quad.weights).zip(&trace.values) {
        let y = real_sh(l_max, p);
        for (c, yi) in coeffs.iter_mut().zip(&y) {
            *c += w * f * yi;
        }
    }
    let total = trace.mean_square();
    let captured: f64 = coeffs.iter().map(|a| a * a).sum();
    Ok(HarmonicExpansion {
        l_max,
        coeffs,
        residual: (total - captured).max(0.0).sqrt(),
    })
}

impl HarmonicExpansion {
    pub fn zeros(l_max: usize) -> Self {
        Self {
            l_max,
            coeffs: vec![0.0; sh_count(l_max)],
            residual: 0.0,
        }
    }

    pub fn get(&self, l: usize, m: i64) -> f64 {
        self.coeffs[sh_index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: i64, v: f64) {
        self.coeffs[sh_index(l, m)] = v;
    }

    pub fn with(mut self, l: usize, m: i64, v: f64) -> Self {
        self.set(l, m, v);
        self
    }

    /// Per-degree energies e_k = sum_m a_km^2.
    pub fn energies(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.l_max + 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            e[sh_degree_order(i).0] += a * a;
        }
        e
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum()
    }

    pub fn degree_coeffs(&self, l: usize) -> &[f64] {
        &self.coeffs[l * l..(l + 1) * (l + 1)]
    }

    pub fn degree_part(&self, l: usize) -> Self {
        let mut out = Self::zeros(self.l_max);
        out.coeffs[l * l..(l + 1) * (l + 1)].copy_from_slice(self.degree_coeffs(l));
        out
    }

    /// Harmonic extension evaluated at x (relative to the expansion center,
    /// in units of the expansion radius).
    pub fn synthesize(&self, x: &Vector3<f64>) -> f64 {
        let r = x.norm();
        if r == 0.0 {
            return self.coeffs[0];
        }
        let y = real_sh(self.l_max, &(x / r));
        y.iter()
            .enumerate()
            .map(|(i, yi)| self.coeffs[i] * yi * r.powi(sh_degree_order(i).0 as i32))
            .sum()
    }

    /// Harmonic extension as a polynomial.
    pub fn to_poly(&self) -> Poly3 {
        let mut p = Poly3::zero();
        for (i, a) in self.coeffs.iter().enumerate() {
            if *a != 0.0 {
                let (l, m) = sh_degree_order(i);
                p = p.add(&solid_harmonic(l, m).scale(*a));
            }
        }
        p
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv_writer(writer);
        w.write_record(["l", "m", "a"])?;
        for (i, a) in self.coeffs.iter().enumerate() {
            let (l, m) = sh_degree_order(i);
            w.write_record([l.to_string(), m.to_string(), fmt_num(*a)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_writer<W: Write>(writer: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer)
}

/// Degree-l component of an expansion, with its norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub l: usize,
    pub coeffs: Vec<f64>,
    pub norm: f64,
}

impl Projection {
    pub fn to_poly(&self) -> Poly3 {
        let l = self.l;
        let mut p = Poly3::zero();
        for (k, a) in self.coeffs.iter().enumerate() {
            if *a != 0.0 {
                p = p.add(&solid_harmonic(l, k as i64 - l as i64).scale(*a));
            }
        }
        p
    }
}

pub fn project(e: &HarmonicExpansion, l: usize) -> Projection {
    if l > e.l_max {
        return Projection {
            l,
            coeffs: vec![0.0; 2 * l + 1],
            norm: 0.0,
        };
    }
    let coeffs = e.degree_coeffs(l).to_vec();
    let norm = coeffs.iter().map(|a| a * a).sum::<f64>().sqrt();
    Projection { l, coeffs, norm }
}

pub fn project_trace(trace: &SphereTrace, l: usize) -> Result<Projection> {
    Ok(project(&decompose(trace, l)?, l))
}

// ---------------------------------------------------------------------------
// Radial families given by per-degree energies.

/// sum_k e_k t^(2k): the mean square on the sphere of radius t.
pub fn spectral_mass(e: &[f64], t: f64) -> f64 {
    e.iter().enumerate().map(|(k, ek)| ek * t.powi(2 * k as i32)).sum()
}

/// N(t) = sum k e_k t^(2k) / sum e_k t^(2k).
pub fn spectral_frequency(e: &[f64], t: f64) -> f64 {
    let num: f64 = e
        .iter()
        .enumerate()
        .map(|(k, ek)| k as f64 * ek * t.powi(2 * k as i32))
        .sum();
    num / spectral_mass(e, t)
}

/// N*(t) = log_4 of mass(t) / mass(t / 2).
pub fn spectral_doubling(e: &[f64], t: f64) -> f64 {
    (spectral_mass(e, t) / spectral_mass(e, 0.5 * t)).ln() / 4f64.ln()
}

/// W_kappa(r) = sum (k - kappa) e_k r^(2(k - kappa)), i.e.
/// (N(r) - kappa) r^(-2 kappa) times the sphere average of u^2.
pub fn weiss_functional(e: &[f64], kappa: f64, r: f64) -> f64 {
    e.iter()
        .enumerate()
        .map(|(k, ek)| (k as f64 - kappa) * ek * r.powf(2.0 * (k as f64 - kappa)))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeissIdentity {
    pub kappa: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Compares sum e_j |j - kappa| |1 - 4^(kappa - j)| with N(1) - N(1/2) for
/// kappa = N(1/2), after normalizing the outer sphere mass to one.
pub fn weiss_identity_check(e: &[f64]) -> WeissIdentity {
    let total: f64 = e.iter().sum();
    let kappa = spectral_frequency(e, 0.5);
    let lhs: f64 = e
        .iter()
        .enumerate()
        .map(|(j, ej)| {
            let d = j as f64 - kappa;
            ej / total * d.abs() * (1.0 - 4f64.powf(-d)).abs()
        })
        .sum();
    let rhs = spectral_frequency(e, 1.0) - kappa;
    WeissIdentity {
        kappa,
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub eta: f64,
    /// e_l against (1 - 3 eta) ||u||^2.
    pub main: f64,
    pub main_bound: f64,
    /// sum_{j<l} e_j 4^-j against 2 eta 4^-l ||u||^2.
    pub low_tail: f64,
    pub low_bound: f64,
    /// sum_{j>l} e_j against 2 eta ||u||^2.
    pub high_tail: f64,
    pub high_bound: f64,
    /// Turning between radii 1 and 1/2 against 8 eta.
    pub turning: f64,
    pub turning_bound: f64,
}

impl ConcentrationReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.main >= self.main_bound - slack
            && self.low_tail <= self.low_bound + slack
            && self.high_tail <= self.high_bound + slack
            && self.turning <= self.turning_bound + slack
    }
}

/// Concentration and turning bounds for a harmonic family, or None when the
/// frequency window hypothesis fails.
pub fn concentration_check(e: &[f64], l: usize, window: f64) -> Option<ConcentrationReport> {
    let n_half = spectral_frequency(e, 0.5);
    let n_one = spectral_frequency(e, 1.0);
    let lf = l as f64;
    let inside = |n: f64| n >= lf - window && n <= lf + window;
    if !(inside(n_half) && inside(n_one)) || l >= e.len() {
        return None;
    }
    let total: f64 = e.iter().sum();
    let eta = n_one - n_half;
    let low: f64 = e[..l]
        .iter()
        .enumerate()
        .map(|(j, ej)| ej * 4f64.powi(-(j as i32)))
        .sum();
    let high: f64 = e[l + 1..].iter().sum();
    Some(ConcentrationReport {
        eta,
        main: e[l],
        main_bound: (1.0 - 3.0 * eta) * total,
        low_tail: low,
        low_bound: 2.0 * eta * 4f64.powi(-(l as i32)) * total,
        high_tail: high,
        high_bound: 2.0 * eta * total,
        turning: spectral_turning(e, l, 1.0, 0.5),
        turning_bound: 8.0 * eta,
    })
}

/// ||P_l(u(r1))/||u(r1)|| - P_l(u(r2))/||u(r2)|||| for a harmonic family.
/// Both projections point the same way, so only the energies matter.
pub fn spectral_turning(e: &[f64], l: usize, r1: f64, r2: f64) -> f64 {
    if l >= e.len() {
        return 0.0;
    }
    let a = e[l].sqrt();
    let s1 = r1.powi(l as i32) / spectral_mass(e, r1).sqrt();
    let s2 = r2.powi(l as i32) / spectral_mass(e, r2).sqrt();
    a * (s1 - s2).abs()
}

/// If N(1) <= l - delta, the largest N(t) over t in (0, delta / l] sampled on
/// `samples` points; the bound is l - 1 + delta. None when the hypothesis fails.
pub fn frequency_drop(e: &[f64], l: usize, delta: f64, samples: usize) -> Option<(f64, f64)> {
    let lf = l as f64;
    if l == 0 || spectral_frequency(e, 1.0) > lf - delta {
        return None;
    }
    let tmax = delta / lf;
    let worst = (1..=samples)
        .map(|i| spectral_frequency(e, tmax * i as f64 / samples as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    Some((worst, lf - 1.0 + delta))
}

// ---------------------------------------------------------------------------
// Grid-field quantities.

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FrequencyRecord {
    pub center: [f64; 3],
    pub radius: f64,
    pub n_star: Option<f64>,
    pub n: Option<f64>,
    pub eta: Option<f64>,
    pub delta: Option<f64>,
    pub kappa: Option<f64>,
}

/// Sphere average of (u - c)^2 on the sphere of radius r about x0.
pub fn centered_mass(u: &dyn ScalarField, x0: &Vector3<f64>, r: f64, c: f64, quad: &SphereQuadrature) -> f64 {
    let v: Vec<f64> = quad
        .points
        .iter()
        .map(|p| {
            let d = u.value(&(x0 + p * r)) - c;
            d * d
        })
        .collect();
    quad.average(&v)
}

fn degenerate_scale(c: f64, outer: f64) -> f64 {
    let s = c.abs().max(outer.sqrt());
    (1e-12 * s).powi(2)
}

/// N*(u, x0, r) with centering at u(x0).
pub fn doubling_index(u: &dyn ScalarField, x0: &Vector3<f64>, r: f64, q: usize) -> Result<FrequencyRecord> {
    check_ball(u, x0, r)?;
    let quad = SphereQuadrature::new(q);
    let n_star = doubling_with(u, x0, r, &quad)?;
    Ok(FrequencyRecord {
        center: [x0.x, x0.y, x0.z],
        radius: r,
        n_star: Some(n_star),
        ..Default::default()
    })
}

/// Doubling index with a prepared quadrature; the ball must fit.
pub fn doubling_with(u: &dyn ScalarField, x0: &Vector3<f64>, r: f64, quad: &SphereQuadrature) -> Result<f64> {
    let c = u.value(x0);
    let outer = centered_mass(u, x0, r, c, quad);
    let inner = centered_mass(u, x0, 0.5 * r, c, quad);
    if outer <= degenerate_scale(c, outer) || inner <= degenerate_scale(c, outer) * 1e-8 {
        return Err(Error::Degenerate(format!(
            "centered sphere mass vanishes at {:?}, r = {r}",
            [x0.x, x0.y, x0.z]
        )));
    }
    Ok((outer / inner).ln() / 4f64.ln())
}

/// Almgren frequency by volume and surface quadrature.
pub fn almgren_frequency(u: &dyn ScalarField, x0: &Vector3<f64>, r: f64, q: usize) -> Result<FrequencyRecord> {
    check_ball(u, x0, r)?;
    let quad = SphereQuadrature::new(q);
    let c = u.value(x0);
    let m = centered_mass(u, x0, r, c, &quad);
    if m <= degenerate_scale(c, m) {
        return Err(Error::Degenerate("constant function has no frequency".into()));
    }
    let n = dirichlet_energy(u, x0, r, q, &quad) / (r * m);
    Ok(FrequencyRecord {
        center: [x0.x, x0.y, x0.z],
        radius: r,
        n: Some(n),
        ..Default::default()
    })
}

/// int_0^r s^2 (sphere average of |grad u|^2 at radius s) ds, i.e. the
/// Dirichlet energy divided by the area of the unit sphere.
fn dirichlet_energy(u: &dyn ScalarField, x0: &Vector3<f64>, r: f64, q: usize, quad: &SphereQuadrature) -> f64 {
    let (s, w) = gauss_legendre_interval(q, 0.0, r);
    s.iter()
        .zip(&w)
        .map(|(si, wi)| {
            let g: Vec<f64> = quad
                .points
                .iter()
                .map(|p| u.gradient(&(x0 + p * *si)).norm_squared())
                .collect();
            wi * si * si * quad.average(&g)
        })
        .sum()
}

/// Spectral frequency of an expansion viewed as a harmonic radial family.
pub fn almgren_frequency_spectral(e: &HarmonicExpansion, t: f64) -> FrequencyRecord {
    FrequencyRecord {
        radius: t,
        n: Some(spectral_frequency(&e.energies(), t)),
        ..Default::default()
    }
}

/// W_kappa from a field: (N(r) - kappa) r^(-2 kappa) fint (u - u(x0))^2.
pub fn weiss_from_field(u: &dyn ScalarField, x0: &Vector3<f64>, kappa: f64, r: f64, q: usize) -> Result<f64> {
    let rec = almgren_frequency(u, x0, r, q)?;
    let quad = SphereQuadrature::new(q);
    let c = u.value(x0);
    let m = centered_mass(u, x0, r, c, &quad);
    Ok((rec.n.unwrap() - kappa) * m / r.powf(2.0 * kappa))
}

/// L2 distance between f / ||f|| and g / ||g|| on the sphere.
pub fn normalized_distance(f: &SphereTrace, g: &SphereTrace) -> Result<f64> {
    if f.quad.q != g.quad.q {
        return Err(Error::InvalidInput("traces use different quadratures".into()));
    }
    let (nf, ng) = (f.norm(), g.norm());
    if nf == 0.0 || ng == 0.0 {
        return Err(Error::Degenerate("zero-norm trace".into()));
    }
    let d: Vec<f64> = f
        .values
        .iter()
        .zip(&g.values)
        .map(|(a, b)| (a / nf - b / ng).powi(2))
        .collect();
    Ok(f.quad.average(&d).max(0.0).sqrt())
}

/// Same distance for coefficient vectors in an orthonormal basis.
pub fn normalized_distance_coeffs(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm coefficients".into()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x / na - y / nb).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Degree-l projection of the centered trace at radius r about x0, together
/// with the trace norm.
pub fn centered_projection(
    u: &dyn ScalarField,
    x0: &Vector3<f64>,
    l: usize,
    r: f64,
    q: usize,
) -> Result<(Projection, f64)> {
    let c = u.value(x0);
    let t = sphere_trace(u, x0, r, q)?.centered(c);
    let norm = t.norm();
    if norm <= 1e-14 * c.abs().max(1e-300) {
        return Err(Error::Degenerate("centered trace vanishes".into()));
    }
    Ok((project_trace(&t, l)?, norm))
}

/// ||P_l(u(r1))/||u(r1)|| - P_l(u(r2))/||u(r2)|||| with centering at u(x0).
pub fn turning_distance(u: &dyn ScalarField, x0: &Vector3<f64>, l: usize, r1: f64, r2: f64, q: usize) -> Result<f64> {
    let (p1, n1) = centered_projection(u, x0, l, r1, q)?;
    let (p2, n2) = centered_projection(u, x0, l, r2, q)?;
    Ok(p1
        .coeffs
        .iter()
        .zip(&p2.coeffs)
        .map(|(a, b)| (a / n1 - b / n2).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub r: f64,
    pub n_star: f64,
    pub n: f64,
    pub w_kappa: f64,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv_writer(writer);
    w.write_record(["r", "Nstar", "N", "Wkappa"])?;
    for r in rows {
        w.write_record([fmt_num(r.r), fmt_num(r.n_star), fmt_num(r.n), fmt_num(r.w_kappa)])?;
    }
    w.flush()?;
    Ok(())
}

/// Doubling, frequency and Weiss values of a harmonic family at each radius.
pub fn spectral_sweep(e: &[f64], kappa: f64, radii: &[f64]) -> Vec<SweepRow> {
    radii
        .iter()
        .map(|&r| SweepRow {
            r,
            n_star: spectral_doubling(e, r),
            n: spectral_frequency(e, r),
            w_kappa: weiss_functional(e, kappa, r),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_values() {
        let e = [0.0, 0.5, 0.5];
        assert!((spectral_frequency(&e, 1.0) - 1.5).abs() < 1e-15);
        assert!((spectral_frequency(&e, 0.5) - 1.2).abs() < 1e-15);
        let ns = spectral_doubling(&e, 1.0);
        assert!((ns - 6.4f64.ln() / 4f64.ln()).abs() < 1e-14);
        let w = weiss_identity_check(&e);
        assert!((w.lhs - 0.3).abs() < 1e-14 && w.gap < 1e-14);
        assert!(weiss_functional(&e, 1.2, 0.5).abs() < 1e-14);
        assert!((weiss_functional(&e, 1.2, 1.0) - 0.3).abs() < 1e-14);
    }

    #[test]
    fn turning_of_homogeneous_is_zero() {
        let e = [0.0, 0.0, 1.0];
        assert!(spectral_turning(&e, 2, 1.0, 0.3) < 1e-15);
    }
}
