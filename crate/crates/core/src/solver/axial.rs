//! Fourier-mode solver for media diag(alpha(y1), beta(y1), beta(y1)).
//!
//! In cylindrical coordinates (x1, rho, phi) about the line through the
//! center parallel to x1, the data split into modes cos(q phi), sin(q phi)
//! and each mode solves
//!
//!   -d1(alpha d1 U) - rho^-1 d_rho(rho beta d_rho U) + beta q^2 rho^-2 U = 0
//!
//! on the half disc. Rows are finite volumes in the measure rho drho dx1 with
//! the same cut-cell treatment as the Cartesian scheme.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::multigrid::{GridOp, Level, Multigrid, NONE};
use super::{axis_crossing, harmonic_mean, nonuniform_derivative, BallProblem, Medium, SolveOptions};
use crate::error::Result;
use crate::harness::fmt_num;
use crate::linalg::{pcg, CgOptions};

const OUT: u8 = 0;
const INTERIOR: u8 = 1;
const RING: u8 = 2;

/// Angles used to split data into modes.
const ANGLES: usize = 64;
/// Highest mode kept.
const MAX_ORDER: usize = 24;
/// Coarsest lattice half-width.
const COARSE_HALF_WIDTH: usize = 16;
const SWEEPS: usize = 2;

/// One angular mode of the solution on the meridian lattice.
struct ModePart {
    order: usize,
    sine: bool,
    u: Vec<f64>,
    /// U / rho, with d_rho U on the axis.
    w: Vec<f64>,
    d1: Vec<f64>,
    dr: Vec<f64>,
}

pub struct AxialSolution {
    pub center: Vector3<f64>,
    pub radius: f64,
    pub h: f64,
    m: usize,
    nr: usize,
    kind: Vec<u8>,
    parts: Vec<ModePart>,
    pub residual: f64,
    pub iterations: usize,
}

/// Meridian lattice: i in 0..=2m along x1, j in 0..=m along rho.
struct Mesh {
    h: f64,
    m: usize,
    nr: usize,
    kind: Vec<u8>,
}

impl Mesh {
    fn new(h: f64, m: usize, r: f64) -> Self {
        let nr = m + 1;
        let tau = 1e-3 * h;
        let ring_r = r + 1.5 * h;
        let kind = (0..(2 * m + 1) * nr)
            .map(|n| {
                let (x1, rho) = Self::pos_of(h, m, nr, n);
                let d = x1.hypot(rho);
                if r - d > tau {
                    INTERIOR
                } else if d <= ring_r {
                    RING
                } else {
                    OUT
                }
            })
            .collect();
        Self { h, m, nr, kind }
    }

    fn pos_of(h: f64, m: usize, nr: usize, n: usize) -> (f64, f64) {
        let i = n / nr;
        let j = n % nr;
        ((i as f64 - m as f64) * h, j as f64 * h)
    }

    fn pos(&self, n: usize) -> (f64, f64) {
        Self::pos_of(self.h, self.m, self.nr, n)
    }

    fn node(&self, i: usize, j: usize) -> usize {
        i * self.nr + j
    }

    /// Neighbour in direction d: 0 x1-, 1 x1+, 2 rho-, 3 rho+.
    fn neighbor(&self, n: usize, d: usize) -> Option<usize> {
        let i = n / self.nr;
        let j = n % self.nr;
        match d {
            0 => (i > 0).then(|| n - self.nr),
            1 => (i < 2 * self.m).then(|| n + self.nr),
            2 => (j > 0).then(|| n - 1),
            _ => (j + 1 < self.nr).then(|| n + 1),
        }
    }

    /// Distance to the sphere from an interior node along direction d,
    /// capped at h.
    fn crossing(&self, n: usize, d: usize, r: f64) -> f64 {
        let (x1, rho) = self.pos(n);
        let p = Vector3::new(x1, rho, 0.0);
        let s = match d {
            0 => axis_crossing(&p, 0, -1.0, r),
            1 => axis_crossing(&p, 0, 1.0, r),
            2 => axis_crossing(&p, 1, -1.0, r),
            _ => axis_crossing(&p, 1, 1.0, r),
        };
        s.min(self.h).max(1e-300)
    }
}

/// Assembles the mode-q operator on a mesh. `cut(n, d, s)` gives the x1
/// face coefficient for a cut edge; the returned list holds
/// (unknown, lattice node, direction, distance, coefficient) for every cut.
fn assemble(
    mesh: &Mesh,
    r: f64,
    q: usize,
    alpha_face: &[f64],
    beta: &[f64],
    cut_alpha: &(dyn Fn(usize, usize, f64) -> f64 + Sync),
) -> (Level, Vec<(u32, usize, usize, f64, f64)>) {
    let h = mesh.h;
    let total = mesh.kind.len();
    let mut idx = vec![NONE; total];
    let mut cells = Vec::new();
    for n in 0..total {
        let j = n % mesh.nr;
        if mesh.kind[n] == INTERIOR && (q == 0 || j >= 1) {
            idx[n] = cells.len() as u32;
            cells.push(((n / mesh.nr) as u32, j as u32));
        }
    }
    let rows: Vec<([u32; 4], [f64; 4], f64, Vec<(u32, usize, usize, f64, f64)>)> = cells
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let (i, j) = (i as usize, j as usize);
            let n = mesh.node(i, j);
            let b = beta[i];
            let xw = if j == 0 { h / 8.0 } else { j as f64 * h };
            let mut nbr = [NONE; 4];
            let mut coef = [0.0; 4];
            let mut diag = 0.0;
            let mut cuts = Vec::new();
            for d in 0..4 {
                if d == 2 && j == 0 {
                    continue;
                }
                let face = match d {
                    0 | 1 => {
                        let f = if d == 0 { i - 1 } else { i };
                        xw * alpha_face.get(f).copied().unwrap_or(0.0)
                    }
                    2 => (j as f64 - 0.5) * h * b,
                    _ => (j as f64 + 0.5) * h * b,
                };
                let nn = mesh.neighbor(n, d).expect("interior nodes have neighbours");
                if mesh.kind[nn] == INTERIOR {
                    if idx[nn] != NONE {
                        nbr[d] = idx[nn];
                        coef[d] = face;
                    }
                    // Otherwise an axis node held at zero.
                    diag += face;
                } else {
                    let s = mesh.crossing(n, d, r);
                    let w = match d {
                        0 | 1 => xw * cut_alpha(n, d, s),
                        _ => face,
                    } * h
                        / s;
                    diag += w;
                    cuts.push((k as u32, n, d, s, w));
                }
            }
            if q > 0 {
                diag += b * (q * q) as f64 * h * h / (j as f64 * h);
            }
            (nbr, coef, diag, cuts)
        })
        .collect();
    let mut nbr = Vec::with_capacity(rows.len());
    let mut coef = Vec::with_capacity(rows.len());
    let mut diag = Vec::with_capacity(rows.len());
    let mut cuts = Vec::new();
    for (a, b, c, d) in rows {
        nbr.push(a);
        coef.push(b);
        diag.push(c);
        cuts.extend(d);
    }
    (
        Level {
            nr: mesh.nr,
            idx,
            cells,
            op: GridOp { nbr, coef, diag },
        },
        cuts,
    )
}

/// Fourier coefficients of a function of phi sampled at ANGLES points:
/// [a0, a1..a_M, b1..b_M].
fn fourier(samples: &[f64]) -> Vec<f64> {
    let k = samples.len() as f64;
    let mut out = vec![0.0; 2 * MAX_ORDER + 1];
    out[0] = samples.iter().sum::<f64>() / k;
    for q in 1..=MAX_ORDER {
        let (mut a, mut b) = (0.0, 0.0);
        for (t, v) in samples.iter().enumerate() {
            let phi = 2.0 * PI * (q * t) as f64 / k;
            a += v * phi.cos();
            b += v * phi.sin();
        }
        out[q] = 2.0 * a / k;
        out[MAX_ORDER + q] = 2.0 * b / k;
    }
    out
}

fn slot(q: usize, sine: bool) -> usize {
    if sine {
        MAX_ORDER + q
    } else {
        q
    }
}

struct PointData {
    value: Vec<f64>,
    grad: Option<[Vec<f64>; 3]>,
}

pub(crate) fn solve(problem: &BallProblem, medium: &Medium, opts: &SolveOptions) -> Result<AxialSolution> {
    let r = problem.radius;
    let h = problem.spacing;
    let c = problem.center;
    let eps = problem.epsilon;
    let base = (r / h).ceil() as usize + 2;
    let mut depth = 0;
    while base.div_ceil(1 << depth) > COARSE_HALF_WIDTH {
        depth += 1;
    }
    let m = base.div_ceil(1 << depth) << depth;
    let mesh = Mesh::new(h, m, r);
    let nr = mesh.nr;

    let coef_x1 = |x1: f64| -> (f64, f64) {
        let a = if medium.is_constant() {
            medium.coefficient(&Vector3::zeros())
        } else {
            medium.coefficient(&((c + Vector3::new(x1, 0.0, 0.0)) / eps))
        };
        (a[(0, 0)], a[(1, 1)])
    };
    let nodes_x1: Vec<(f64, f64)> = (0..=2 * m).map(|i| coef_x1((i as f64 - m as f64) * h)).collect();
    let alpha_node: Vec<f64> = nodes_x1.iter().map(|v| v.0).collect();
    let beta: Vec<f64> = nodes_x1.iter().map(|v| v.1).collect();
    let alpha_face: Vec<f64> = alpha_node.windows(2).map(|w| harmonic_mean(w[0], w[1])).collect();

    // Points where data are needed: ring nodes, then sphere crossings.
    let mut points: Vec<(f64, f64, bool)> = Vec::new();
    let mut node_pt = vec![NONE; mesh.kind.len()];
    for n in 0..mesh.kind.len() {
        if mesh.kind[n] == RING {
            node_pt[n] = points.len() as u32;
            let (x1, rho) = mesh.pos(n);
            points.push((x1, rho, true));
        }
    }
    let mut cut_pt: HashMap<(usize, usize), u32> = HashMap::new();
    for n in 0..mesh.kind.len() {
        if mesh.kind[n] != INTERIOR {
            continue;
        }
        for d in 0..4 {
            let Some(nn) = mesh.neighbor(n, d) else { continue };
            if mesh.kind[nn] == INTERIOR {
                continue;
            }
            let s = mesh.crossing(n, d, r);
            let id = if s >= h {
                node_pt[nn]
            } else {
                let (x1, rho) = mesh.pos(n);
                let p = match d {
                    0 => (x1 - s, rho),
                    1 => (x1 + s, rho),
                    2 => (x1, rho - s),
                    _ => (x1, rho + s),
                };
                points.push((p.0, p.1, false));
                (points.len() - 1) as u32
            };
            cut_pt.insert((n, d), id);
        }
    }
    let data: Vec<PointData> = points
        .par_iter()
        .map(|&(x1, rho, with_grad)| {
            let mut vals = Vec::with_capacity(ANGLES);
            let mut g1 = Vec::new();
            let mut gr = Vec::new();
            let mut gt = Vec::new();
            for t in 0..ANGLES {
                let phi = 2.0 * PI * t as f64 / ANGLES as f64;
                let (s, co) = phi.sin_cos();
                let x = c + Vector3::new(x1, rho * co, rho * s);
                vals.push(problem.boundary.eval(&x));
                if with_grad {
                    let g = problem.boundary.gradient(&x);
                    g1.push(g.x);
                    gr.push(g.y * co + g.z * s);
                    gt.push(-g.y * s + g.z * co);
                }
            }
            PointData {
                value: fourier(&vals),
                grad: with_grad.then(|| [fourier(&g1), fourier(&gr), fourier(&gt)]),
            }
        })
        .collect();

    // Active modes.
    let scale = data
        .iter()
        .flat_map(|d| d.value.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let mut active: Vec<(usize, bool)> = Vec::new();
    for q in 0..=MAX_ORDER {
        for sine in [false, true] {
            if q == 0 && sine {
                continue;
            }
            let mx = data.iter().fold(0.0f64, |a, d| a.max(d.value[slot(q, sine)].abs()));
            if scale > 0.0 && mx > 1e-12 * scale {
                active.push((q, sine));
            }
        }
    }

    let mut parts = Vec::new();
    let mut residual = 0.0f64;
    let mut iterations = 0;
    let mut orders: Vec<usize> = active.iter().map(|a| a.0).collect();
    orders.dedup();
    for q in orders {
        let level0_cut = |n: usize, d: usize, s: f64| {
            let (x1, _) = mesh.pos(n);
            let xb = if d == 0 { x1 - s } else { x1 + s };
            harmonic_mean(alpha_node[n / nr], coef_x1(xb).0)
        };
        let (fine, cuts) = assemble(&mesh, r, q, &alpha_face, &beta, &level0_cut);
        let mut levels = vec![fine];
        let (mut af, mut bt, mut hl, mut ml) = (alpha_face.clone(), beta.clone(), h, m);
        for _ in 0..depth {
            let mc = ml / 2;
            let afc: Vec<f64> = (0..2 * mc).map(|i| harmonic_mean(af[2 * i], af[2 * i + 1])).collect();
            let btc: Vec<f64> = (0..=2 * mc)
                .map(|i| {
                    let f = 2 * i;
                    let lo = bt[f.saturating_sub(1)];
                    let hi = bt[(f + 1).min(bt.len() - 1)];
                    0.25 * (lo + 2.0 * bt[f] + hi)
                })
                .collect();
            hl *= 2.0;
            ml = mc;
            let cm = Mesh::new(hl, ml, r);
            let cut = |n: usize, d: usize, _s: f64| {
                let i = n / cm.nr;
                let f = if d == 0 {
                    i.saturating_sub(1)
                } else {
                    i.min(afc.len() - 1)
                };
                afc[f]
            };
            let (lv, _) = assemble(&cm, r, q, &afc, &btc, &cut);
            levels.push(lv);
            af = afc;
            bt = btc;
        }
        let mg = Multigrid::new(levels, SWEEPS)?;
        let fine = mg.finest();
        for sine in [false, true] {
            if !active.contains(&(q, sine)) {
                continue;
            }
            let sl = slot(q, sine);
            let g = |pt: u32| data[pt as usize].value[sl];
            let mut rhs = vec![0.0; fine.cells.len()];
            for &(k, n, d, _, w) in &cuts {
                rhs[k as usize] += w * g(cut_pt[&(n, d)]);
            }
            let mut x = vec![0.0; rhs.len()];
            let out = pcg(
                &fine.op,
                &mg,
                &rhs,
                &mut x,
                CgOptions {
                    tol: opts.tol,
                    max_iter: opts.max_iter.unwrap_or(500),
                    zero_mean: false,
                },
                "axial ball solver",
            )?;
            residual = residual.max(out.residual);
            iterations += out.iterations;
            parts.push(build_part(&mesh, r, q, sine, fine, &x, &data, &node_pt, &cut_pt));
        }
    }
    if parts.is_empty() {
        let z = vec![0.0; mesh.kind.len()];
        parts.push(ModePart {
            order: 0,
            sine: false,
            u: z.clone(),
            w: z.clone(),
            d1: z.clone(),
            dr: z,
        });
    }
    Ok(AxialSolution {
        center: c,
        radius: r,
        h,
        m,
        nr,
        kind: mesh.kind,
        parts,
        residual,
        iterations,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_part(
    mesh: &Mesh,
    r: f64,
    q: usize,
    sine: bool,
    level: &Level,
    x: &[f64],
    data: &[PointData],
    node_pt: &[u32],
    cut_pt: &HashMap<(usize, usize), u32>,
) -> ModePart {
    let h = mesh.h;
    let sl = slot(q, sine);
    let total = mesh.kind.len();
    let mut u = vec![0.0; total];
    for n in 0..total {
        match mesh.kind[n] {
            INTERIOR => {
                let k = level.idx[n];
                if k != NONE {
                    u[n] = x[k as usize];
                }
            }
            RING => u[n] = data[node_pt[n] as usize].value[sl],
            _ => {}
        }
    }
    let side = |n: usize, d: usize| -> (f64, f64) {
        let nn = mesh.neighbor(n, d).expect("interior nodes have neighbours");
        if mesh.kind[nn] == INTERIOR {
            (u[nn], h)
        } else {
            let pt = cut_pt[&(n, d)];
            (data[pt as usize].value[sl], mesh.crossing(n, d, r))
        }
    };
    let derivs: Vec<(f64, f64, f64)> = (0..total)
        .into_par_iter()
        .map(|n| {
            let j = n % mesh.nr;
            match mesh.kind[n] {
                INTERIOR => {
                    let (um, hm) = side(n, 0);
                    let (up, hp) = side(n, 1);
                    let d1 = nonuniform_derivative(um, hm, u[n], up, hp);
                    if j == 0 {
                        let dr = if q == 0 {
                            0.0
                        } else {
                            let n1 = n + 1;
                            let n2 = n + 2;
                            if mesh.kind[n1] != INTERIOR {
                                0.0
                            } else if j + 2 < mesh.nr && mesh.kind[n2] == INTERIOR {
                                (4.0 * u[n1] - u[n2]) / (2.0 * h)
                            } else {
                                u[n1] / h
                            }
                        };
                        (d1, dr, dr)
                    } else {
                        let (um, hm) = side(n, 2);
                        let (up, hp) = side(n, 3);
                        let dr = nonuniform_derivative(um, hm, u[n], up, hp);
                        (d1, dr, u[n] / (j as f64 * h))
                    }
                }
                RING => {
                    let g = data[node_pt[n] as usize].grad.as_ref().expect("ring gradients");
                    let w = if q == 0 {
                        0.0
                    } else if sine {
                        g[2][slot(q, false)] / q as f64
                    } else {
                        -g[2][slot(q, true)] / q as f64
                    };
                    (g[0][sl], g[1][sl], w)
                }
                _ => (0.0, 0.0, 0.0),
            }
        })
        .collect();
    let mut d1 = Vec::with_capacity(total);
    let mut dr = Vec::with_capacity(total);
    let mut w = Vec::with_capacity(total);
    for (a, b, c) in derivs {
        d1.push(a);
        dr.push(b);
        w.push(c);
    }
    ModePart {
        order: q,
        sine,
        u,
        w,
        d1,
        dr,
    }
}

impl AxialSolution {
    fn trig(part: &ModePart, phi: f64) -> (f64, f64) {
        let q = part.order as f64;
        let (s, c) = (q * phi).sin_cos();
        if part.sine {
            (s, q * c)
        } else {
            (c, -q * s)
        }
    }

    fn eval(&self, x: &Vector3<f64>, grad: bool) -> Option<(f64, Vector3<f64>)> {
        let rel = x - self.center;
        let rho = rel.y.hypot(rel.z);
        let phi = if rho > 0.0 { rel.z.atan2(rel.y) } else { 0.0 };
        let s1 = rel.x / self.h + self.m as f64;
        let sj = rho / self.h;
        if !s1.is_finite() || !sj.is_finite() {
            return None;
        }
        let (fi, fj) = (s1.floor(), sj.floor());
        if fi < 0.0 || fi as usize >= 2 * self.m || fj as usize >= self.m {
            return None;
        }
        let (i0, j0) = (fi as usize, fj as usize);
        let (t, v) = (s1 - fi, sj - fj);
        let corners = [
            (i0 * self.nr + j0, (1.0 - t) * (1.0 - v)),
            ((i0 + 1) * self.nr + j0, t * (1.0 - v)),
            (i0 * self.nr + j0 + 1, (1.0 - t) * v),
            ((i0 + 1) * self.nr + j0 + 1, t * v),
        ];
        for &(n, wt) in &corners {
            if wt > 0.0 && self.kind[n] == OUT {
                return None;
            }
        }
        let interp = |a: &[f64]| -> f64 { corners.iter().filter(|c| c.1 != 0.0).map(|&(n, wt)| wt * a[n]).sum() };
        let (mut val, mut g1, mut gr, mut gt) = (0.0, 0.0, 0.0, 0.0);
        for part in &self.parts {
            let (tv, td) = Self::trig(part, phi);
            val += tv * interp(&part.u);
            if grad {
                g1 += tv * interp(&part.d1);
                gr += tv * interp(&part.dr);
                if part.order > 0 {
                    gt += td * interp(&part.w);
                }
            }
        }
        let (sp, cp) = phi.sin_cos();
        Some((val, Vector3::new(g1, gr * cp - gt * sp, gr * sp + gt * cp)))
    }

    pub fn value(&self, x: &Vector3<f64>) -> f64 {
        self.eval(x, false).map_or(f64::NAN, |v| v.0)
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.eval(x, true).map_or(Vector3::repeat(f64::NAN), |v| v.1)
    }

    pub fn contains_ball(&self, c: &Vector3<f64>, r: f64) -> bool {
        (c - self.center).norm() + r <= self.radius * (1.0 + 1e-12)
    }

    /// Angular orders present in the solution.
    pub fn orders(&self) -> Vec<(usize, bool)> {
        self.parts.iter().map(|p| (p.order, p.sine)).collect()
    }

    pub fn add_constant(&mut self, c: f64) {
        if !self.parts.iter().any(|p| p.order == 0) {
            let z = vec![0.0; self.kind.len()];
            self.parts.insert(
                0,
                ModePart {
                    order: 0,
                    sine: false,
                    u: z.clone(),
                    w: z.clone(),
                    d1: z.clone(),
                    dr: z,
                },
            );
        }
        let part = self.parts.iter_mut().find(|p| p.order == 0).unwrap();
        for (u, k) in part.u.iter_mut().zip(&self.kind) {
            if *k != OUT {
                *u += c;
            }
        }
    }

    fn node_sample(&self, n: usize, phi: f64) -> (Vector3<f64>, f64, Vector3<f64>) {
        let i = n / self.nr;
        let j = n % self.nr;
        let x1 = (i as f64 - self.m as f64) * self.h;
        let rho = j as f64 * self.h;
        let (sp, cp) = phi.sin_cos();
        let (mut val, mut g1, mut gr, mut gt) = (0.0, 0.0, 0.0, 0.0);
        for part in &self.parts {
            let (tv, td) = Self::trig(part, phi);
            val += tv * part.u[n];
            g1 += tv * part.d1[n];
            gr += tv * part.dr[n];
            if part.order > 0 {
                gt += td * part.w[n];
            }
        }
        (
            self.center + Vector3::new(x1, rho * cp, rho * sp),
            val,
            Vector3::new(g1, gr * cp - gt * sp, gr * sp + gt * cp),
        )
    }

    /// Interior lattice nodes within r, swept through eight angles.
    pub fn samples_within(&self, r: f64) -> Vec<(Vector3<f64>, f64, Vector3<f64>)> {
        let mut out = Vec::new();
        for n in 0..self.kind.len() {
            if self.kind[n] != INTERIOR {
                continue;
            }
            let i = n / self.nr;
            let j = n % self.nr;
            let x1 = (i as f64 - self.m as f64) * self.h;
            if x1.hypot(j as f64 * self.h) > r {
                continue;
            }
            let count = if j == 0 { 1 } else { 8 };
            for t in 0..count {
                out.push(self.node_sample(n, 2.0 * PI * t as f64 / 8.0));
            }
        }
        out
    }

    /// Meridian section (phi = 0 and phi = pi) in the Cartesian dump layout.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,j,k,x,y,z,u,ux,uy,uz")?;
        for n in 0..self.kind.len() {
            if self.kind[n] == OUT {
                continue;
            }
            let i = (n / self.nr) as i64 - self.m as i64;
            let j = (n % self.nr) as i64;
            let sides: &[(f64, i64)] = if j == 0 { &[(0.0, 1)] } else { &[(PI, -1), (0.0, 1)] };
            for &(phi, sgn) in sides {
                let (x, u, g) = self.node_sample(n, phi);
                writeln!(
                    w,
                    "{},{},0,{},{},{},{},{},{},{}",
                    i,
                    sgn * j,
                    fmt_num(x.x),
                    fmt_num(x.y),
                    fmt_num(x.z),
                    fmt_num(u),
                    fmt_num(g.x),
                    fmt_num(g.y),
                    fmt_num(g.z)
                )?;
            }
        }
        Ok(())
    }
}
