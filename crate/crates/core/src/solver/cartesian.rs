//! Seven-point conservative scheme on a Cartesian lattice around the ball.
//!
//! Interior rows use harmonic face averages. Where a lattice edge leaves the
//! ball the sphere crossing at distance theta*h becomes a Dirichlet point and
//! the row keeps the nominal 1/h face scaling, which keeps the matrix
//! symmetric. Nodes just outside the ball carry the extended boundary data.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::{axis_crossing, harmonic_mean, nonuniform_derivative, BallProblem, BoundaryMode, Medium, SolveOptions};
use crate::error::Result;
use crate::harness::fmt_num;
use crate::linalg::{pcg, CgOptions, Diagonal, LinearOperator};

const OUT: u8 = 0;
const INTERIOR: u8 = 1;
const RING: u8 = 2;
const NONE: u32 = u32::MAX;

pub struct GridSolution {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub h: f64,
    m: usize,
    dim: usize,
    kind: Vec<u8>,
    u: Vec<f64>,
    grad: Vec<Vector3<f64>>,
    pub residual: f64,
    pub iterations: usize,
}

struct Lattice {
    m: usize,
    dim: usize,
    h: f64,
}

impl Lattice {
    fn coords(&self, n: usize) -> [usize; 3] {
        let d = self.dim;
        [n / (d * d), (n / d) % d, n % d]
    }

    fn index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dim + c[1]) * self.dim + c[2]
    }

    fn rel(&self, c: [usize; 3]) -> Vector3<f64> {
        let m = self.m as f64;
        Vector3::new(c[0] as f64 - m, c[1] as f64 - m, c[2] as f64 - m) * self.h
    }

    fn step(&self, n: usize, axis: usize, sign: i64) -> usize {
        let stride = [self.dim * self.dim, self.dim, 1][axis];
        if sign > 0 {
            n + stride
        } else {
            n - stride
        }
    }
}

struct CartOp {
    nbr: Vec<[u32; 6]>,
    coef: Vec<[f64; 6]>,
    diag: Vec<f64>,
    cross: Option<Vec<[(u32, f64); 12]>>,
}

impl LinearOperator for CartOp {
    fn len(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(k, yk)| {
            let mut s = self.diag[k] * x[k];
            for d in 0..6 {
                let j = self.nbr[k][d];
                if j != NONE {
                    s -= self.coef[k][d] * x[j as usize];
                }
            }
            if let Some(cross) = &self.cross {
                for &(j, w) in &cross[k] {
                    if j != NONE {
                        s += w * x[j as usize];
                    }
                }
            }
            *yk = s;
        });
    }
}

/// Coefficient matrix at an absolute position.
fn coef_at(medium: &Medium, eps: f64, x: &Vector3<f64>) -> Matrix3<f64> {
    if medium.is_constant() {
        medium.coefficient(&Vector3::zeros())
    } else {
        medium.coefficient(&(x / eps))
    }
}

pub(crate) fn solve(problem: &BallProblem, medium: &Medium, opts: &SolveOptions) -> Result<GridSolution> {
    let r = problem.radius;
    let h = problem.spacing;
    let c = problem.center;
    let eps = problem.epsilon;
    let m = (r / h).ceil() as usize + 2;
    let dim = 2 * m + 1;
    let lat = Lattice { m, dim, h };
    let total = dim * dim * dim;
    let tau = 1e-3 * h;
    let ring_r = r + 1.75 * h;

    let kind: Vec<u8> = (0..total)
        .into_par_iter()
        .map(|n| {
            let d = lat.rel(lat.coords(n)).norm();
            if r - d > tau {
                INTERIOR
            } else if d <= ring_r {
                RING
            } else {
                OUT
            }
        })
        .collect();
    let mut idx = vec![NONE; total];
    let mut nodes = Vec::new();
    for n in 0..total {
        if kind[n] == INTERIOR {
            idx[n] = nodes.len() as u32;
            nodes.push(n);
        }
    }
    let cross_terms = medium.has_cross_terms();
    let extension = opts.boundary == BoundaryMode::Extension;
    // Coefficient matrices at the lattice nodes, stored only when they vary.
    let constant = medium.is_constant().then(|| medium.coefficient(&Vector3::zeros()));
    let stored: Vec<Matrix3<f64>> = if constant.is_some() {
        Vec::new()
    } else {
        (0..total)
            .into_par_iter()
            .map(|n| {
                if kind[n] == OUT {
                    Matrix3::zeros()
                } else {
                    coef_at(medium, eps, &(c + lat.rel(lat.coords(n))))
                }
            })
            .collect()
    };
    let node_coef = |n: usize| constant.unwrap_or_else(|| stored[n]);

    let rows: Vec<([u32; 6], [f64; 6], f64, f64)> = nodes
        .par_iter()
        .map(|&n| {
            let cn = lat.coords(n);
            let p = lat.rel(cn);
            let mut nbr = [NONE; 6];
            let mut coef = [0.0; 6];
            let mut diag = 0.0;
            let mut rhs = 0.0;
            for a in 0..3 {
                let alpha = node_coef(n)[(a, a)];
                for (t, sign) in [-1i64, 1].into_iter().enumerate() {
                    let d = 2 * a + t;
                    let nn = lat.step(n, a, sign);
                    if kind[nn] == INTERIOR {
                        let w = harmonic_mean(alpha, node_coef(nn)[(a, a)]) / (h * h);
                        nbr[d] = idx[nn];
                        coef[d] = w;
                        diag += w;
                    } else if extension {
                        let w = harmonic_mean(alpha, node_coef(nn)[(a, a)]) / (h * h);
                        diag += w;
                        rhs += w * problem.boundary.eval(&(c + lat.rel(lat.coords(nn))));
                    } else {
                        let (xb, dist) = crossing_point(&lat, &p, n, a, sign, r, &c);
                        let ab = coef_at(medium, eps, &xb)[(a, a)];
                        let w = harmonic_mean(alpha, ab) / (h * dist);
                        diag += w;
                        rhs += w * problem.boundary.eval(&xb);
                    }
                }
            }
            (nbr, coef, diag, rhs)
        })
        .collect();
    let nu = nodes.len();
    let mut nbr = Vec::with_capacity(nu);
    let mut coef = Vec::with_capacity(nu);
    let mut diag = Vec::with_capacity(nu);
    let mut rhs = Vec::with_capacity(nu);
    for (a, b, d, s) in rows {
        nbr.push(a);
        coef.push(b);
        diag.push(d);
        rhs.push(s);
    }

    let ring_value: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|n| {
            if kind[n] == RING {
                problem.boundary.eval(&(c + lat.rel(lat.coords(n))))
            } else {
                0.0
            }
        })
        .collect();

    let cross = if cross_terms {
        let scale = 1.0 / (4.0 * h * h);
        let entries: Vec<([(u32, f64); 12], f64)> = nodes
            .par_iter()
            .map(|&n| {
                let mut out = [(NONE, 0.0); 12];
                let mut rhs_add = 0.0;
                let mut slot = 0;
                for i in 0..3 {
                    for j in (i + 1)..3 {
                        for si in [-1i64, 1] {
                            for sj in [-1i64, 1] {
                                let qi = lat.step(n, i, si);
                                let qj = lat.step(n, j, sj);
                                let w = lat.step(qi, j, sj);
                                let a = node_coef(qi)[(i, j)] + node_coef(qj)[(i, j)];
                                let val = -(si * sj) as f64 * a * scale;
                                if idx[w] != NONE {
                                    out[slot] = (idx[w], val);
                                } else {
                                    out[slot] = (NONE, 0.0);
                                    rhs_add -= val * ring_value[w];
                                }
                                slot += 1;
                            }
                        }
                    }
                }
                (out, rhs_add)
            })
            .collect();
        let mut cross = Vec::with_capacity(nu);
        for (k, (row, add)) in entries.into_iter().enumerate() {
            cross.push(row);
            rhs[k] += add;
        }
        Some(cross)
    } else {
        None
    };

    let op = CartOp { nbr, coef, diag, cross };
    let pre = Diagonal::new(&op.diag);
    // Start from the boundary data where it is defined inside the ball.
    let mut x: Vec<f64> = nodes
        .par_iter()
        .map(|&n| {
            let v = problem.boundary.eval(&(c + lat.rel(lat.coords(n))));
            if v.is_finite() {
                v
            } else {
                0.0
            }
        })
        .collect();
    let max_iter = opts.max_iter.unwrap_or(20 * dim + 200);
    let out = pcg(
        &op,
        &pre,
        &rhs,
        &mut x,
        CgOptions {
            tol: opts.tol,
            max_iter,
            zero_mean: false,
        },
        "ball solver",
    )?;

    let mut u = ring_value;
    for (k, &n) in nodes.iter().enumerate() {
        u[n] = x[k];
    }
    let grad: Vec<Vector3<f64>> = (0..total)
        .into_par_iter()
        .map(|n| match kind[n] {
            INTERIOR => {
                let p = lat.rel(lat.coords(n));
                let mut g = Vector3::zeros();
                for a in 0..3 {
                    let side = |sign: i64| {
                        let nn = lat.step(n, a, sign);
                        if kind[nn] == INTERIOR || extension {
                            (u[nn], h)
                        } else {
                            let (xb, dist) = crossing_point(&lat, &p, n, a, sign, r, &c);
                            (problem.boundary.eval(&xb), dist)
                        }
                    };
                    let (um, hm) = side(-1);
                    let (up, hp) = side(1);
                    g[a] = nonuniform_derivative(um, hm, u[n], up, hp);
                }
                g
            }
            RING => problem.boundary.gradient(&(c + lat.rel(lat.coords(n)))),
            _ => Vector3::zeros(),
        })
        .collect();

    Ok(GridSolution {
        center: c,
        radius: r,
        h,
        m,
        dim,
        kind,
        u,
        grad,
        residual: out.residual,
        iterations: out.iterations,
    })
}

/// Dirichlet point reached from node `n` along an axis: the sphere crossing,
/// or the neighbouring node itself when that node is classified as exterior
/// but lies on or barely inside the sphere.
fn crossing_point(
    lat: &Lattice,
    p: &Vector3<f64>,
    n: usize,
    axis: usize,
    sign: i64,
    r: f64,
    c: &Vector3<f64>,
) -> (Vector3<f64>, f64) {
    let s = axis_crossing(p, axis, sign as f64, r);
    if s >= lat.h {
        let nn = lat.step(n, axis, sign);
        (c + lat.rel(lat.coords(nn)), lat.h)
    } else {
        let mut q = *p;
        q[axis] += sign as f64 * s;
        (c + q, s.max(1e-300))
    }
}

impl GridSolution {
    fn lattice(&self) -> Lattice {
        Lattice {
            m: self.m,
            dim: self.dim,
            h: self.h,
        }
    }

    fn locate(&self, x: &Vector3<f64>) -> Option<([usize; 8], [f64; 8])> {
        let s = (x - self.center) / self.h;
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let v = s[a] + self.m as f64;
            if !v.is_finite() {
                return None;
            }
            let f = v.floor();
            if f < 0.0 || f as usize >= self.dim - 1 {
                return None;
            }
            base[a] = f as usize;
            t[a] = v - f;
        }
        let lat = self.lattice();
        let mut nodes = [0usize; 8];
        let mut w = [0.0; 8];
        for corner in 0..8 {
            let o = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let n = lat.index([base[0] + o[0], base[1] + o[1], base[2] + o[2]]);
            let mut wt = 1.0;
            for a in 0..3 {
                wt *= if o[a] == 1 { t[a] } else { 1.0 - t[a] };
            }
            if self.kind[n] == OUT && wt > 0.0 {
                return None;
            }
            nodes[corner] = n;
            w[corner] = wt;
        }
        Some((nodes, w))
    }

    /// Tricubic Lagrange interpolation of the nodal values where the 4x4x4
    /// stencil is available, trilinear otherwise; NaN outside the lattice.
    pub fn value(&self, x: &Vector3<f64>) -> f64 {
        if let Some(v) = self.tricubic(x) {
            return v;
        }
        match self.locate(x) {
            Some((n, w)) => (0..8)
                .map(|i| if w[i] != 0.0 { w[i] * self.u[n[i]] } else { 0.0 })
                .sum(),
            None => f64::NAN,
        }
    }

    fn tricubic(&self, x: &Vector3<f64>) -> Option<f64> {
        let s = (x - self.center) / self.h;
        let mut base = [0usize; 3];
        let mut w = [[0.0; 4]; 3];
        for a in 0..3 {
            let v = s[a] + self.m as f64;
            if !v.is_finite() {
                return None;
            }
            let f = v.floor();
            if f < 1.0 || f + 2.0 > (self.dim - 1) as f64 {
                return None;
            }
            base[a] = f as usize - 1;
            let t = v - f;
            w[a] = [
                -t * (t - 1.0) * (t - 2.0) / 6.0,
                (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
                -(t + 1.0) * t * (t - 2.0) / 2.0,
                (t + 1.0) * t * (t - 1.0) / 6.0,
            ];
        }
        let lat = self.lattice();
        let mut sum = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let n = lat.index([base[0] + i, base[1] + j, base[2] + k]);
                    if self.kind[n] == OUT {
                        return None;
                    }
                    sum += w[0][i] * w[1][j] * w[2][k] * self.u[n];
                }
            }
        }
        Some(sum)
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self.locate(x) {
            Some((n, w)) => (0..8).filter(|&i| w[i] != 0.0).map(|i| self.grad[n[i]] * w[i]).sum(),
            None => Vector3::repeat(f64::NAN),
        }
    }

    pub fn contains_ball(&self, c: &Vector3<f64>, r: f64) -> bool {
        (c - self.center).norm() + r <= self.radius * (1.0 + 1e-12)
    }

    pub fn add_constant(&mut self, c: f64) {
        for (u, k) in self.u.iter_mut().zip(&self.kind) {
            if *k != OUT {
                *u += c;
            }
        }
    }

    pub fn samples_within(&self, r: f64) -> Vec<(Vector3<f64>, f64, Vector3<f64>)> {
        let lat = self.lattice();
        (0..self.kind.len())
            .filter(|&n| self.kind[n] == INTERIOR)
            .filter_map(|n| {
                let p = lat.rel(lat.coords(n));
                (p.norm() <= r).then(|| (self.center + p, self.u[n], self.grad[n]))
            })
            .collect()
    }

    /// Nodal dump: i,j,k,x,y,z,u,ux,uy,uz for interior and ring nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,k,x,y,z,u,ux,uy,uz")?;
        let lat = self.lattice();
        for n in 0..self.kind.len() {
            if self.kind[n] == OUT {
                continue;
            }
            let cn = lat.coords(n);
            let x = self.center + lat.rel(cn);
            let g = self.grad[n];
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                cn[0] as i64 - self.m as i64,
                cn[1] as i64 - self.m as i64,
                cn[2] as i64 - self.m as i64,
                fmt_num(x.x),
                fmt_num(x.y),
                fmt_num(x.z),
                fmt_num(self.u[n]),
                fmt_num(g.x),
                fmt_num(g.y),
                fmt_num(g.z)
            )?;
        }
        Ok(())
    }
}
