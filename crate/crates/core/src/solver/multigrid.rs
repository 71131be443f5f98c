//! Geometric multigrid V-cycle for the meridian-plane mode problems.
//!
//! Each level is a five-point operator on the (x1, rho) lattice restricted to
//! a masked set of unknowns. Coarse operators are rediscretized from averaged
//! coefficients, transfers are bilinear with R = P^T, and the V-cycle uses
//! forward Gauss-Seidel before and backward Gauss-Seidel after the coarse
//! correction so that it is a symmetric preconditioner.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{LinearOperator, Preconditioner};

pub(crate) const NONE: u32 = u32::MAX;

pub(crate) struct GridOp {
    pub nbr: Vec<[u32; 4]>,
    pub coef: Vec<[f64; 4]>,
    pub diag: Vec<f64>,
}

impl GridOp {
    fn row(&self, k: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for d in 0..4 {
            let j = self.nbr[k][d];
            if j != NONE {
                s += self.coef[k][d] * x[j as usize];
            }
        }
        s
    }
}

impl LinearOperator for GridOp {
    fn len(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut()
            .enumerate()
            .for_each(|(k, yk)| *yk = self.diag[k] * x[k] - self.row(k, x));
    }
}

pub(crate) struct Level {
    pub nr: usize,
    /// Lattice node to unknown, NONE when not an unknown.
    pub idx: Vec<u32>,
    /// Unknown to (i, j).
    pub cells: Vec<(u32, u32)>,
    pub op: GridOp,
}

struct Transfer {
    /// For each fine unknown, coarse unknowns and bilinear weights.
    w: Vec<[(u32, f64); 4]>,
    coarse_len: usize,
}

impl Transfer {
    fn new(fine: &Level, coarse: &Level) -> Self {
        let w = fine
            .cells
            .iter()
            .map(|&(i, j)| {
                let parents = |v: u32| -> [(u32, f64); 2] {
                    if v.is_multiple_of(2) {
                        [(v / 2, 1.0), (0, 0.0)]
                    } else {
                        [((v - 1) / 2, 0.5), (v.div_ceil(2), 0.5)]
                    }
                };
                let mut out = [(NONE, 0.0); 4];
                let mut s = 0;
                for (ic, wi) in parents(i) {
                    if wi == 0.0 {
                        continue;
                    }
                    for (jc, wj) in parents(j) {
                        if wj == 0.0 {
                            continue;
                        }
                        let n = ic as usize * coarse.nr + jc as usize;
                        let k = coarse.idx.get(n).copied().unwrap_or(NONE);
                        if k != NONE {
                            out[s] = (k, wi * wj);
                            s += 1;
                        }
                    }
                }
                out
            })
            .collect();
        Self {
            w,
            coarse_len: coarse.cells.len(),
        }
    }

    fn restrict(&self, fine: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coarse_len];
        for (k, ws) in self.w.iter().enumerate() {
            for &(c, w) in ws {
                if c != NONE {
                    out[c as usize] += w * fine[k];
                }
            }
        }
        out
    }

    fn prolong_add(&self, coarse: &[f64], fine: &mut [f64]) {
        fine.par_iter_mut().zip(self.w.par_iter()).for_each(|(f, ws)| {
            for &(c, w) in ws {
                if c != NONE {
                    *f += w * coarse[c as usize];
                }
            }
        });
    }
}

pub(crate) struct Multigrid {
    levels: Vec<Level>,
    transfers: Vec<Transfer>,
    coarse: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    sweeps: usize,
}

impl Multigrid {
    pub fn new(levels: Vec<Level>, sweeps: usize) -> Result<Self> {
        let last = levels
            .last()
            .ok_or_else(|| Error::InvalidInput("no multigrid levels".into()))?;
        let n = last.cells.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            a[(k, k)] = last.op.diag[k];
            for d in 0..4 {
                let j = last.op.nbr[k][d];
                if j != NONE {
                    a[(k, j as usize)] -= last.op.coef[k][d];
                }
            }
        }
        // Symmetrize against rounding in the assembly.
        let a = (&a + a.transpose()) * 0.5;
        let coarse = a
            .cholesky()
            .ok_or_else(|| Error::Degenerate("coarse multigrid operator is not positive definite".into()))?;
        let transfers = levels.windows(2).map(|w| Transfer::new(&w[0], &w[1])).collect();
        Ok(Self {
            levels,
            transfers,
            coarse,
            sweeps,
        })
    }

    pub fn finest(&self) -> &Level {
        &self.levels[0]
    }

    fn vcycle(&self, l: usize, b: &[f64]) -> Vec<f64> {
        if l + 1 == self.levels.len() {
            let x = self.coarse.solve(&DVector::from_column_slice(b));
            return x.as_slice().to_vec();
        }
        let op = &self.levels[l].op;
        let n = b.len();
        let mut x = vec![0.0; n];
        for _ in 0..self.sweeps {
            for k in 0..n {
                x[k] = (b[k] + op.row(k, &x)) / op.diag[k];
            }
        }
        let mut r = vec![0.0; n];
        op.apply(&x, &mut r);
        r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
        let bc = self.transfers[l].restrict(&r);
        let xc = self.vcycle(l + 1, &bc);
        self.transfers[l].prolong_add(&xc, &mut x);
        for _ in 0..self.sweeps {
            for k in (0..n).rev() {
                x[k] = (b[k] + op.row(k, &x)) / op.diag[k];
            }
        }
        x
    }
}

impl Preconditioner for Multigrid {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let x = self.vcycle(0, r);
        z.copy_from_slice(&x);
    }
}
