//! Critical sets, minimal radii, invariant subspaces, covers and tubes.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ball_lattice, ScalarField};
use crate::harmonics::solid_harmonic;
use crate::harness::fmt_num;
use crate::poly::Poly3;
use crate::quadrature::SphereQuadrature;
use crate::spectra::{doubling_with, project_trace, sphere_trace, Projection};

/// Defaults for the free window and geometry parameters.
pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_DELTA0: f64 = 1.0 / 64.0;
pub const DEFAULT_EPS0: f64 = 1.0 / 32.0;
pub const DEFAULT_GAMMA: f64 = 0.1;

#[derive(Clone, Debug, Serialize)]
pub struct CriticalPoint {
    pub x: Vector3<f64>,
    /// |grad u| at x.
    pub residual: f64,
    pub iterations: usize,
    /// Lattice offset of the seed relative to the region center.
    pub seed: [i64; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct DetectOptions {
    /// Lattice spacing for seeding.
    pub h: f64,
    /// Finite-difference step for Hessians.
    pub fd_step: f64,
    pub grad_tol: f64,
    pub max_newton: usize,
}

/// Symmetrized central-difference Hessian of u from its gradient.
fn fd_hessian(u: &dyn ScalarField, x: &Vector3<f64>, h: f64) -> Matrix3<f64> {
    let mut hs = Matrix3::zeros();
    for a in 0..3 {
        let mut e = Vector3::zeros();
        e[a] = h;
        let d = (u.gradient(&(x + e)) - u.gradient(&(x - e))) / (2.0 * h);
        hs.set_column(a, &d);
    }
    (hs + hs.transpose()) * 0.5
}

/// Minimum-norm Newton step -H^+ g, dropping eigenvalues below a relative
/// threshold so the step stays tangent to degenerate directions.
fn newton_step(hs: &Matrix3<f64>, g: &Vector3<f64>) -> Vector3<f64> {
    let eig = SymmetricEigen::new(*hs);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut step = Vector3::zeros();
    for k in 0..3 {
        let lam = eig.eigenvalues[k];
        if lam.abs() > 1e-8 * top && top > 0.0 {
            let v = eig.eigenvectors.column(k);
            step -= v * (v.dot(g) / lam);
        }
    }
    step
}

fn newton(
    u: &dyn ScalarField,
    start: Vector3<f64>,
    center: &Vector3<f64>,
    radius: f64,
    opts: &DetectOptions,
) -> Option<(Vector3<f64>, f64, usize)> {
    let mut x = start;
    let mut g = u.gradient(&x);
    let mut gn = g.norm();
    for it in 0..opts.max_newton {
        if !gn.is_finite() {
            return None;
        }
        if gn <= opts.grad_tol {
            return Some((x, gn, it));
        }
        let step = newton_step(&fd_hessian(u, &x, opts.fd_step), &g);
        if step.norm() == 0.0 || !step.norm().is_finite() {
            return None;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let y = x + step * t;
            if (y - center).norm() > radius {
                t *= 0.5;
                continue;
            }
            let gy = u.gradient(&y);
            let gyn = gy.norm();
            if gyn.is_finite() && gyn <= (1.0 - 1e-4 * t) * gn {
                x = y;
                g = gy;
                gn = gyn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    (gn <= opts.grad_tol).then_some((x, gn, opts.max_newton))
}

/// Zeros of grad u inside the closed ball B(center, radius).
///
/// Seeds are lattice nodes where |grad u| is below a Hessian-scaled screen
/// and centers of lattice cells across which every gradient component
/// changes sign. Converged points closer than h/2 are merged, keeping the
/// smallest residual.
pub fn find_critical_points(
    u: &dyn ScalarField,
    center: &Vector3<f64>,
    radius: f64,
    opts: DetectOptions,
) -> Result<Vec<CriticalPoint>> {
    if !(opts.h > 0.0 && radius > 0.0) {
        return Err(Error::InvalidInput(
            "detection spacing and radius must be positive".into(),
        ));
    }
    if !u.contains_ball(center, radius + opts.h) {
        return Err(Error::OutsideDomain {
            center: [center.x, center.y, center.z],
            radius,
        });
    }
    let h = opts.h;
    let m = (radius / h).ceil() as i64 + 1;
    let dim = (2 * m + 1) as usize;
    let at = |i: usize, j: usize, k: usize| (i * dim + j) * dim + k;
    let pos = |i: usize, j: usize, k: usize| {
        center + Vector3::new(i as f64 - m as f64, j as f64 - m as f64, k as f64 - m as f64) * h
    };
    let reach = radius + 2.0 * h;
    let grads: Vec<Option<Vector3<f64>>> = (0..dim * dim * dim)
        .into_par_iter()
        .map(|n| {
            let (i, j, k) = (n / (dim * dim), (n / dim) % dim, n % dim);
            let x = pos(i, j, k);
            ((x - center).norm() <= reach && u.contains_ball(&x, 0.0)).then(|| u.gradient(&x))
        })
        .collect();
    let mut seeds: Vec<([i64; 3], Vector3<f64>)> = Vec::new();
    for i in 0..dim {
        for j in 0..dim {
            for k in 0..dim {
                let x = pos(i, j, k);
                if (x - center).norm() > radius {
                    continue;
                }
                let Some(g) = grads[at(i, j, k)] else { continue };
                let tag = [i as i64 - m, j as i64 - m, k as i64 - m];
                let hn = fd_hessian(u, &x, opts.fd_step).norm();
                if g.norm() <= 2.0 * h * hn {
                    seeds.push((tag, x));
                    continue;
                }
                if i + 1 < dim && j + 1 < dim && k + 1 < dim {
                    let mut lo = Vector3::repeat(f64::INFINITY);
                    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
                    let mut ok = true;
                    for c in 0..8 {
                        let (a, b, d) = (i + (c >> 2 & 1), j + (c >> 1 & 1), k + (c & 1));
                        match grads[at(a, b, d)] {
                            Some(gc) => {
                                lo = lo.inf(&gc);
                                hi = hi.sup(&gc);
                            }
                            None => ok = false,
                        }
                    }
                    if ok && (0..3).all(|a| lo[a] <= 0.0 && hi[a] >= 0.0) {
                        seeds.push((tag, x + Vector3::repeat(0.5 * h)));
                    }
                }
            }
        }
    }
    let found: Vec<Option<CriticalPoint>> = seeds
        .par_iter()
        .map(|(tag, x)| {
            newton(u, *x, center, radius, &opts).map(|(y, res, it)| CriticalPoint {
                x: y,
                residual: res,
                iterations: it,
                seed: *tag,
            })
        })
        .collect();
    let mut pts: Vec<CriticalPoint> = found.into_iter().flatten().collect();
    pts.sort_by(|a, b| a.residual.total_cmp(&b.residual).then_with(|| lex_cmp(&a.x, &b.x)));
    let mut hash = SpatialHash::new(0.5 * h);
    let mut kept: Vec<CriticalPoint> = Vec::new();
    for p in pts {
        if hash.nearest_within(&p.x, 0.5 * h, |i| kept[i].x).is_none() {
            hash.insert(&p.x, kept.len());
            kept.push(p);
        }
    }
    kept.sort_by(|a, b| lex_cmp(&a.x, &b.x));
    Ok(kept)
}

fn lex_cmp(a: &Vector3<f64>, b: &Vector3<f64>) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then_with(|| a.y.total_cmp(&b.y))
        .then_with(|| a.z.total_cmp(&b.z))
}

/// Uniform-grid bucket index over items located by position.
pub struct SpatialHash {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl SpatialHash {
    pub fn new(cell: f64) -> Self {
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, x: &Vector3<f64>) -> [i64; 3] {
        [
            (x.x / self.cell).floor() as i64,
            (x.y / self.cell).floor() as i64,
            (x.z / self.cell).floor() as i64,
        ]
    }

    pub fn insert(&mut self, x: &Vector3<f64>, id: usize) {
        let k = self.key(x);
        self.buckets.entry(k).or_default().push(id);
    }

    /// Inserts an item into every cell overlapping an axis-aligned box.
    pub fn insert_box(&mut self, lo: &Vector3<f64>, hi: &Vector3<f64>, id: usize) {
        let a = self.key(lo);
        let b = self.key(hi);
        for i in a[0]..=b[0] {
            for j in a[1]..=b[1] {
                for k in a[2]..=b[2] {
                    self.buckets.entry([i, j, k]).or_default().push(id);
                }
            }
        }
    }

    /// Items in cells within `reach` of x (a superset of the items there).
    pub fn candidates(&self, x: &Vector3<f64>, reach: f64) -> Vec<usize> {
        let lo = self.key(&(x - Vector3::repeat(reach)));
        let hi = self.key(&(x + Vector3::repeat(reach)));
        let mut out = Vec::new();
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    if let Some(v) = self.buckets.get(&[i, j, k]) {
                        out.extend_from_slice(v);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    fn nearest_within(&self, x: &Vector3<f64>, r: f64, pos: impl Fn(usize) -> Vector3<f64>) -> Option<usize> {
        self.candidates(x, r)
            .into_iter()
            .filter(|&i| (pos(i) - x).norm() < r)
            .min_by(|&a, &b| (pos(a) - x).norm().total_cmp(&(pos(b) - x).norm()))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimalRadius {
    pub x: Vector3<f64>,
    pub r0: f64,
    pub r_star: f64,
    pub l: usize,
    pub delta0: f64,
    /// Sampled (s, N*(s)).
    pub curve: Vec<(f64, f64)>,
}

/// r0 = sup{s in (0, s_max] : N*(u, x, s) <= l - delta0}, located on a
/// geometric sample of [s_min, s_max] refined by bisection at the largest
/// crossing; r* = max(r0, eps / eps0).
#[allow(clippy::too_many_arguments)]
pub fn minimal_radius(
    u: &dyn ScalarField,
    x: &Vector3<f64>,
    l: usize,
    delta0: f64,
    eps: f64,
    eps0: f64,
    s_min: f64,
    s_max: f64,
    q: usize,
) -> Result<MinimalRadius> {
    if !(0.0 < s_min && s_min < s_max) {
        return Err(Error::InvalidInput(format!("bad radius range [{s_min}, {s_max}]")));
    }
    if !u.contains_ball(x, s_max) {
        return Err(Error::OutsideDomain {
            center: [x.x, x.y, x.z],
            radius: s_max,
        });
    }
    let quad = SphereQuadrature::new(q);
    let target = l as f64 - delta0;
    let samples = 24;
    let ratio = (s_max / s_min).powf(1.0 / (samples - 1) as f64);
    let mut curve = Vec::with_capacity(samples);
    for k in 0..samples {
        let s = if k + 1 == samples {
            s_max
        } else {
            s_min * ratio.powi(k as i32)
        };
        curve.push((s, doubling_with(u, x, s, &quad)?));
    }
    let below = curve.iter().rposition(|&(_, n)| n <= target);
    let r0 = match below {
        None => 0.0,
        Some(k) if k + 1 == samples => s_max,
        Some(k) => {
            let (mut lo, mut hi) = (curve[k].0, curve[k + 1].0);
            for _ in 0..25 {
                let mid = (lo * hi).sqrt();
                if doubling_with(u, x, mid, &quad)? <= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };
    Ok(MinimalRadius {
        x: *x,
        r0,
        r_star: r0.max(eps / eps0),
        l,
        delta0,
        curve,
    })
}

/// Constant c = delta0 / (32 l) in the frequency-drop scale of a cover.
pub fn cover_drop_constant(delta0: f64, l: usize) -> f64 {
    delta0 / (32.0 * l as f64)
}

/// Homogeneous harmonic polynomial sum_m c_m r^l Y_lm.
pub fn degree_poly(l: usize, coeffs: &[f64]) -> Poly3 {
    coeffs.iter().enumerate().fold(Poly3::zero(), |p, (k, c)| {
        p.add(&solid_harmonic(l, k as i64 - l as i64).scale(*c))
    })
}

/// Q_ab = fint over the unit sphere of d_a psi d_b psi, with psi the
/// normalized homogeneous extension of the coefficients.
pub fn gram_matrix(l: usize, coeffs: &[f64]) -> Result<Matrix3<f64>> {
    if coeffs.len() != 2 * l + 1 {
        return Err(Error::InvalidInput("coefficient count must be 2l + 1".into()));
    }
    let n = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::Degenerate("zero projection".into()));
    }
    let psi = degree_poly(l, &coeffs.iter().map(|c| c / n).collect::<Vec<_>>());
    let sq = SphereQuadrature::new(l.max(1) + 1);
    let mut q = Matrix3::zeros();
    for (p, w) in sq.points.iter().zip(&sq.weights) {
        let g = psi.grad(p);
        q += g * g.transpose() * *w;
    }
    Ok((q + q.transpose()) * 0.5)
}

pub fn gram_of(p: &Projection) -> Result<Matrix3<f64>> {
    gram_matrix(p.l, &p.coeffs)
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantSubspace {
    /// Orthonormal basis, at most d - 2 = 1 vectors.
    pub basis: Vec<Vector3<f64>>,
    /// All eigenvalues of Q, ascending.
    pub eigenvalues: [f64; 3],
    /// Matching unit eigenvectors.
    pub eigenvectors: [Vector3<f64>; 3],
    pub eta: f64,
}

fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let k = (0..3).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
    if v[k] < 0.0 {
        -v
    } else {
        v
    }
}

/// Eigenvectors of Q with eigenvalue <= eta^2, truncated to dimension d - 2.
pub fn almost_invariant_subspace(q: &Matrix3<f64>, eta: f64) -> Result<InvariantSubspace> {
    let eig = SymmetricEigen::new(*q);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.map(|k| eig.eigenvalues[k]);
    let eigenvectors = order.map(|k| canonical_sign(eig.eigenvectors.column(k).into_owned()));
    let small = eigenvalues.iter().filter(|&&v| v <= eta * eta).count();
    if small == 3 {
        return Err(Error::InvalidInput(format!(
            "every direction is almost invariant at eta = {eta}; psi is close to constant"
        )));
    }
    Ok(InvariantSubspace {
        basis: eigenvectors.iter().take(small.min(1)).copied().collect(),
        eigenvalues,
        eigenvectors,
        eta,
    })
}

/// ||n . grad psi|| for a unit n, from the Gram matrix.
pub fn directional_norm(q: &Matrix3<f64>, n: &Vector3<f64>) -> f64 {
    (n.transpose() * q * n)[(0, 0)].max(0.0).sqrt()
}

/// Orthonormal frame whose first vector is v.
pub fn frame_from(v: &Vector3<f64>) -> [Vector3<f64>; 3] {
    let a = v.normalize();
    let k = (0..3).min_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs())).unwrap();
    let mut t = Vector3::zeros();
    t[k] = 1.0;
    let b = (t - a * a.dot(&t)).normalize();
    let c = a.cross(&b);
    [a, b, c]
}

#[derive(Clone, Debug)]
pub struct Split {
    pub phi: Poly3,
    pub varphi: Poly3,
    pub phi_norm: f64,
    pub varphi_norm: f64,
}

fn sphere_inner(a: &Poly3, b: &Poly3, sq: &SphereQuadrature) -> f64 {
    sq.points
        .iter()
        .zip(&sq.weights)
        .map(|(p, w)| w * a.eval(p) * b.eval(p))
        .sum()
}

/// Splits a normalized degree-l harmonic into its part depending only on the
/// two coordinates orthogonal to v, and the rest.
pub fn invariant_split(l: usize, coeffs: &[f64], v: &Vector3<f64>) -> Result<Split> {
    if l == 0 {
        return Err(Error::InvalidInput("degree must be positive".into()));
    }
    if v.norm() == 0.0 {
        return Err(Error::InvalidInput("V must be nonzero".into()));
    }
    let n = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::Degenerate("zero projection".into()));
    }
    let psi = degree_poly(l, &coeffs.iter().map(|c| c / n).collect::<Vec<_>>());
    let [_, b, c] = frame_from(v);
    // (s + i t)^l with s = x.b, t = x.c.
    let s = Poly3::var(0)
        .scale(b.x)
        .add(&Poly3::var(1).scale(b.y))
        .add(&Poly3::var(2).scale(b.z));
    let t = Poly3::var(0)
        .scale(c.x)
        .add(&Poly3::var(1).scale(c.y))
        .add(&Poly3::var(2).scale(c.z));
    let (mut re, mut im) = (Poly3::constant(1.0), Poly3::zero());
    for _ in 0..l {
        let r2 = re.mul(&s).sub(&im.mul(&t));
        let i2 = re.mul(&t).add(&im.mul(&s));
        re = r2;
        im = i2;
    }
    let sq = SphereQuadrature::new(l + 1);
    let mut phi = Poly3::zero();
    for basis in [re, im] {
        let nb = sphere_inner(&basis, &basis, &sq).sqrt();
        let e = basis.scale(1.0 / nb);
        phi = phi.add(&e.scale(sphere_inner(&psi, &e, &sq)));
    }
    let varphi = psi.sub(&phi);
    Ok(Split {
        phi_norm: sphere_inner(&phi, &phi, &sq).max(0.0).sqrt(),
        varphi_norm: sphere_inner(&varphi, &varphi, &sq).max(0.0).sqrt(),
        phi,
        varphi,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoPoint {
    pub n: Vector3<f64>,
    /// ||n . grad P_l|| / ||P_l|| at the given scale about x0.
    pub ratio: f64,
}

/// Directional derivative of the degree-l part of u(x0 + r .) along the
/// direction from x0 to x1.
pub fn two_point_turning(
    u: &dyn ScalarField,
    x0: &Vector3<f64>,
    x1: &Vector3<f64>,
    l: usize,
    r: f64,
    q: usize,
) -> Result<TwoPoint> {
    let d = x1 - x0;
    if d.norm() == 0.0 {
        return Err(Error::InvalidInput("points coincide".into()));
    }
    let n = d / d.norm();
    let p = project_trace(&sphere_trace(u, x0, r, q)?, l)?;
    if p.norm <= 1e-14 {
        return Err(Error::Degenerate("degree-l projection vanishes".into()));
    }
    let g = gram_of(&p)?;
    Ok(TwoPoint {
        n,
        ratio: directional_norm(&g, &n),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BallLabel {
    Good,
    Bad,
    Secondary,
}

impl BallLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Good => "good",
            Self::Bad => "bad",
            Self::Secondary => "secondary",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverBall {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub label: BallLabel,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalCover {
    pub points: Vec<Vector3<f64>>,
    pub r_star: Vec<f64>,
    pub good: Vec<bool>,
    /// Vitali-selected balls B(x_i, r_i) over good points.
    pub primary: Vec<CoverBall>,
    /// Balls B(y_j, t_j) for bad points outside the primary quarter balls.
    pub secondary: Vec<CoverBall>,
    pub sum_primary: f64,
    pub sum_secondary: f64,
    pub disjoint: bool,
    pub contained: bool,
}

impl CriticalCover {
    /// Sum of r^(d-2) = r over all selected balls.
    pub fn sum_radii(&self) -> f64 {
        self.sum_primary + self.sum_secondary
    }

    /// Every ball with its label, plus the bad points, as x,y,z,r,label.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,z,r,label")?;
        for b in self.primary.iter().chain(&self.secondary) {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_num(b.center.x),
                fmt_num(b.center.y),
                fmt_num(b.center.z),
                fmt_num(b.radius),
                b.label.as_str()
            )?;
        }
        for (i, p) in self.points.iter().enumerate() {
            if !self.good[i] {
                writeln!(
                    w,
                    "{},{},{},{},bad",
                    fmt_num(p.x),
                    fmt_num(p.y),
                    fmt_num(p.z),
                    fmt_num(self.r_star[i])
                )?;
            }
        }
        Ok(())
    }
}

/// Greedy Vitali selection: descending radius, ties by lexicographic center,
/// keeping balls whose radius/20 shrinkings are pairwise disjoint.
fn vitali(items: &[(Vector3<f64>, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b]
            .1
            .total_cmp(&items[a].1)
            .then_with(|| lex_cmp(&items[a].0, &items[b].0))
    });
    let mut chosen: Vec<usize> = Vec::new();
    for i in order {
        let (x, r) = items[i];
        if chosen
            .iter()
            .all(|&j| (x - items[j].0).norm() >= (r + items[j].1) / 20.0)
        {
            chosen.push(i);
        }
    }
    chosen
}

/// Builds the good/bad classification, the Vitali subcover and the
/// secondary balls for detected critical points with radii r*.
pub fn build_cover(points: &[Vector3<f64>], r_star: &[f64]) -> Result<CriticalCover> {
    if points.len() != r_star.len() {
        return Err(Error::InvalidInput("one radius per point".into()));
    }
    let n = points.len();
    let rmax = r_star.iter().fold(0.0f64, |a, v| a.max(*v));
    let mut hash = SpatialHash::new(rmax.max(1e-12));
    for (i, p) in points.iter().enumerate() {
        hash.insert(p, i);
    }
    let good: Vec<bool> = (0..n)
        .map(|i| {
            hash.candidates(&points[i], r_star[i])
                .into_iter()
                .all(|j| j == i || (points[j] - points[i]).norm() >= r_star[i] || r_star[j] >= r_star[i] / 3.0)
        })
        .collect();
    let good_items: Vec<(Vector3<f64>, f64)> = (0..n).filter(|&i| good[i]).map(|i| (points[i], r_star[i])).collect();
    let primary: Vec<CoverBall> = vitali(&good_items)
        .into_iter()
        .map(|k| CoverBall {
            center: good_items[k].0,
            radius: good_items[k].1,
            label: BallLabel::Good,
        })
        .collect();
    let in_primary = |x: &Vector3<f64>| primary.iter().any(|b| (x - b.center).norm() < b.radius / 4.0);
    let bad_items: Vec<(Vector3<f64>, f64)> = (0..n)
        .filter(|&i| !good[i] && !in_primary(&points[i]))
        .map(|i| {
            let d = primary
                .iter()
                .map(|b| (points[i] - b.center).norm())
                .fold(f64::INFINITY, f64::min);
            let t = if d.is_finite() { d / 10.0 } else { r_star[i] / 5.0 };
            (points[i], t)
        })
        .collect();
    let secondary: Vec<CoverBall> = vitali(&bad_items)
        .into_iter()
        .map(|k| CoverBall {
            center: bad_items[k].0,
            radius: bad_items[k].1,
            label: BallLabel::Secondary,
        })
        .collect();
    let disjoint_in = |balls: &[CoverBall]| {
        balls.iter().enumerate().all(|(i, a)| {
            balls[i + 1..]
                .iter()
                .all(|b| (a.center - b.center).norm() >= (a.radius + b.radius) / 20.0)
        })
    };
    let disjoint = disjoint_in(&primary) && disjoint_in(&secondary);
    let contained = points.iter().all(|p| {
        primary
            .iter()
            .chain(&secondary)
            .any(|b| (p - b.center).norm() < b.radius / 4.0)
    });
    Ok(CriticalCover {
        points: points.to_vec(),
        r_star: r_star.to_vec(),
        good,
        sum_primary: primary.iter().map(|b| b.radius).sum(),
        sum_secondary: secondary.iter().map(|b| b.radius).sum(),
        primary,
        secondary,
        disjoint,
        contained,
    })
}

/// A set for tube-volume measurement: points and segments.
#[derive(Clone, Debug, Default)]
pub struct TubeSet {
    pub points: Vec<Vector3<f64>>,
    pub segments: Vec<(Vector3<f64>, Vector3<f64>)>,
}

fn segment_distance(x: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let d = b - a;
    let l2 = d.norm_squared();
    if l2 == 0.0 {
        return (x - a).norm();
    }
    let t = ((x - a).dot(&d) / l2).clamp(0.0, 1.0);
    (x - (a + d * t)).norm()
}

/// Part of segment [a, b] inside the closed ball B(c, r), if any.
fn clip_segment(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, r: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let d = b - a;
    let f = a - c;
    let qa = d.norm_squared();
    let qb = 2.0 * f.dot(&d);
    let qc = f.norm_squared() - r * r;
    if qa == 0.0 {
        return (qc <= 0.0).then_some((*a, *b));
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t0 = ((-qb - s) / (2.0 * qa)).max(0.0);
    let t1 = ((-qb + s) / (2.0 * qa)).min(1.0);
    (t0 <= t1).then(|| (a + d * t0, a + d * t1))
}

impl TubeSet {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            segments: Vec::new(),
        }
    }

    /// Links points closer than `link` by segments and clips everything to
    /// B(center, radius). Points without a partner are kept as points.
    pub fn polyline(points: &[Vector3<f64>], link: f64, center: &Vector3<f64>, radius: f64) -> Self {
        let mut hash = SpatialHash::new(link);
        for (i, p) in points.iter().enumerate() {
            hash.insert(p, i);
        }
        let mut set = Self::default();
        for (i, p) in points.iter().enumerate() {
            let mut linked = false;
            for j in hash.candidates(p, link) {
                if j == i || (points[j] - p).norm() >= link {
                    continue;
                }
                linked = true;
                if j > i {
                    if let Some(s) = clip_segment(p, &points[j], center, radius) {
                        set.segments.push(s);
                    }
                }
            }
            if !linked && (p - center).norm() <= radius {
                set.points.push(*p);
            }
        }
        set
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.segments.is_empty()
    }

    fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in self
            .points
            .iter()
            .chain(self.segments.iter().flat_map(|s| [&s.0, &s.1]))
        {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TubeEstimate {
    pub r: f64,
    pub volume: f64,
    pub stderr: f64,
    pub ratio_r2: f64,
    pub samples: usize,
}

/// Monte Carlo volume of {x : dist(x, S) < r}. Samples are drawn uniformly
/// in the bounding box of S grown by r, in fixed-size chunks with seeds
/// derived from `seed`, so the estimate does not depend on thread count.
pub fn tube_volume(set: &TubeSet, r: f64, samples: usize, seed: u64) -> Result<TubeEstimate> {
    if !(r > 0.0) {
        return Err(Error::InvalidInput("tube radius must be positive".into()));
    }
    if set.is_empty() || samples == 0 {
        return Ok(TubeEstimate {
            r,
            volume: 0.0,
            stderr: 0.0,
            ratio_r2: 0.0,
            samples,
        });
    }
    let (lo, hi) = set.bounds();
    let lo = lo - Vector3::repeat(r);
    let hi = hi + Vector3::repeat(r);
    let ext = hi - lo;
    let box_vol = ext.x * ext.y * ext.z;
    let mut hash = SpatialHash::new(r);
    let np = set.points.len();
    for (i, p) in set.points.iter().enumerate() {
        hash.insert(p, i);
    }
    for (k, (a, b)) in set.segments.iter().enumerate() {
        hash.insert_box(&a.inf(b), &a.sup(b), np + k);
    }
    let dist_lt = |x: &Vector3<f64>| {
        hash.candidates(x, r).into_iter().any(|id| {
            if id < np {
                (x - set.points[id]).norm() < r
            } else {
                let (a, b) = &set.segments[id - np];
                segment_distance(x, a, b) < r
            }
        })
    };
    const CHUNK: usize = 4096;
    let chunks = samples.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            (0..count)
                .filter(|_| {
                    let x = Vector3::new(
                        lo.x + ext.x * rng.gen::<f64>(),
                        lo.y + ext.y * rng.gen::<f64>(),
                        lo.z + ext.z * rng.gen::<f64>(),
                    );
                    dist_lt(&x)
                })
                .count()
        })
        .sum();
    let p = hits as f64 / samples as f64;
    let volume = box_vol * p;
    let stderr = box_vol * (p * (1.0 - p) / samples as f64).sqrt();
    Ok(TubeEstimate {
        r,
        volume,
        stderr,
        ratio_r2: volume / (r * r),
        samples,
    })
}

pub fn write_tube_csv<W: Write>(rows: &[TubeEstimate], mut w: W) -> Result<()> {
    writeln!(w, "r,volume,stderr,ratio_r2")?;
    for t in rows {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_num(t.r),
            fmt_num(t.volume),
            fmt_num(t.stderr),
            fmt_num(t.ratio_r2)
        )?;
    }
    Ok(())
}

/// Distance from v to span(basis), for an orthonormal basis.
pub fn dist_to_subspace(v: &Vector3<f64>, basis: &[Vector3<f64>]) -> f64 {
    let proj: Vector3<f64> = basis.iter().map(|e| e * e.dot(v)).sum();
    (v - proj).norm()
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphCheck {
    pub pass: bool,
    pub worst_ratio: f64,
    pub worst_pair: Option<(usize, usize)>,
}

/// Cone condition dist(x_i - x_k, V) <= gamma |x_i - x_k| for all pairs.
pub fn lipschitz_graph_check(centers: &[Vector3<f64>], basis: &[Vector3<f64>], gamma: f64) -> GraphCheck {
    let mut worst = 0.0f64;
    let mut pair = None;
    for i in 0..centers.len() {
        for k in i + 1..centers.len() {
            let d = centers[i] - centers[k];
            let n = d.norm();
            if n == 0.0 {
                continue;
            }
            let ratio = dist_to_subspace(&d, basis) / n;
            if ratio > worst || pair.is_none() {
                worst = worst.max(ratio);
                if ratio >= worst {
                    pair = Some((i, k));
                }
            }
        }
    }
    GraphCheck {
        pass: worst <= gamma,
        worst_ratio: worst,
        worst_pair: pair,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ZoneReport {
    /// Detected critical points inside the zone.
    pub violations: Vec<Vector3<f64>>,
    /// Smallest |grad u| over the sampled zone.
    pub min_grad: f64,
    pub sampled: usize,
}

/// Whether x lies in {r_in <= |x - x0| <= r_out, dist(x - x0, V) >= gamma |x - x0|}.
pub fn in_zone(x: &Vector3<f64>, x0: &Vector3<f64>, basis: &[Vector3<f64>], gamma: f64, r_in: f64, r_out: f64) -> bool {
    let d = x - x0;
    let n = d.norm();
    n >= r_in && n <= r_out && dist_to_subspace(&d, basis) >= gamma * n
}

/// Checks that no detected critical point lies in the cone-complement zone
/// about x0 and samples |grad u| there on spherical shells.
#[allow(clippy::too_many_arguments)]
pub fn no_critical_zone_check(
    u: &dyn ScalarField,
    points: &[Vector3<f64>],
    x0: &Vector3<f64>,
    basis: &[Vector3<f64>],
    gamma: f64,
    r_in: f64,
    r_out: f64,
    shells: usize,
) -> ZoneReport {
    let violations = points
        .iter()
        .filter(|p| in_zone(p, x0, basis, gamma, r_in, r_out))
        .copied()
        .collect();
    let sq = SphereQuadrature::new(12);
    let mut min_grad = f64::INFINITY;
    let mut sampled = 0;
    for k in 0..shells.max(1) {
        let s = if shells <= 1 {
            r_out
        } else {
            r_in * (r_out / r_in).powf(k as f64 / (shells - 1) as f64)
        };
        for p in &sq.points {
            let x = x0 + p * s;
            if !in_zone(&x, x0, basis, gamma, r_in, r_out) || !u.contains_ball(&x, 0.0) {
                continue;
            }
            min_grad = min_grad.min(u.gradient(&x).norm());
            sampled += 1;
        }
    }
    ZoneReport {
        violations,
        min_grad,
        sampled,
    }
}

/// Critical points whose doubling index at radius r is at most 3/2.
pub fn low_frequency_critical_points(
    u: &dyn ScalarField,
    points: &[Vector3<f64>],
    r: f64,
    q: usize,
) -> Result<Vec<(Vector3<f64>, f64)>> {
    let quad = SphereQuadrature::new(q);
    let vals: Vec<Result<f64>> = points.par_iter().map(|p| doubling_with(u, p, r, &quad)).collect();
    let mut out = Vec::new();
    for (p, v) in points.iter().zip(vals) {
        let n = v?;
        if n <= 1.5 {
            out.push((*p, n));
        }
    }
    Ok(out)
}

/// Lattice sample of the ball, re-exported for callers sampling zones.
pub fn lattice(center: &Vector3<f64>, radius: f64, h: f64) -> Vec<Vector3<f64>> {
    ball_lattice(center, radius, h)
}
