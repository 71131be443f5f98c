//! Preconditioned conjugate gradients and small vector helpers.
//!
//! Reductions run sequentially in index order so results do not depend on
//! thread count.

use crate::error::{Error, Result};

pub trait LinearOperator {
    fn len(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Jacobi preconditioner.
pub struct Diagonal {
    pub inv: Vec<f64>,
}

impl Diagonal {
    pub fn new(diag: &[f64]) -> Self {
        Self {
            inv: diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect(),
        }
    }
}

impl Preconditioner for Diagonal {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv) {
            *zi = ri * di;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep all iterates orthogonal to constants (periodic problems).
    pub zero_mean: bool,
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub iterations: usize,
    /// Final relative residual ||b - Ax|| / ||b||.
    pub residual: f64,
    pub history: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Solves A x = b from the initial guess in `x`.
pub fn pcg<A: LinearOperator + ?Sized, P: Preconditioner + ?Sized>(
    op: &A,
    pre: &P,
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
    name: &'static str,
) -> Result<CgOutcome> {
    let n = op.len();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let mut rhs = b.to_vec();
    if opts.zero_mean {
        remove_mean(&mut rhs);
        remove_mean(x);
    }
    let bnorm = norm(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            residual: 0.0,
            history: vec![0.0],
        });
    }
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    op.apply(x, &mut ap);
    for i in 0..n {
        r[i] = rhs[i] - ap[i];
    }
    if opts.zero_mean {
        remove_mean(&mut r);
    }
    let mut z = vec![0.0; n];
    pre.apply(&r, &mut z);
    if opts.zero_mean {
        remove_mean(&mut z);
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut history = vec![norm(&r) / bnorm];
    let mut it = 0;
    while *history.last().unwrap() > opts.tol {
        if it >= opts.max_iter {
            return Err(Error::NotConverged {
                solver: name,
                iterations: it,
                residual: *history.last().unwrap(),
                history,
            });
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NotConverged {
                solver: name,
                iterations: it,
                residual: *history.last().unwrap(),
                history,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if opts.zero_mean {
            remove_mean(&mut r);
        }
        pre.apply(&r, &mut z);
        if opts.zero_mean {
            remove_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
        history.push(norm(&r) / bnorm);
    }
    if opts.zero_mean {
        remove_mean(x);
    }
    // Report the true residual rather than the recurrence.
    op.apply(x, &mut ap);
    for i in 0..n {
        r[i] = rhs[i] - ap[i];
    }
    if opts.zero_mean {
        remove_mean(&mut r);
    }
    let residual = norm(&r) / bnorm;
    Ok(CgOutcome {
        iterations: it,
        residual,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Lap1d(usize);

    impl LinearOperator for Lap1d {
        fn len(&self) -> usize {
            self.0
        }
        fn apply(&self, x: &[f64], y: &mut [f64]) {
            let n = self.0;
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                y[i] = 2.0 * x[i] - l - r;
            }
        }
    }

    #[test]
    fn solves_tridiagonal() {
        let op = Lap1d(50);
        let b = vec![1.0; 50];
        let mut x = vec![0.0; 50];
        let pre = Diagonal::new(&vec![2.0; 50]);
        let opts = CgOptions {
            tol: 1e-12,
            max_iter: 200,
            zero_mean: false,
        };
        let out = pcg(&op, &pre, &b, &mut x, opts, "test").unwrap();
        assert!(out.residual < 1e-11);
        // x_i = (i+1)(n-i)/2
        for (i, v) in x.iter().enumerate() {
            let e = (i as f64 + 1.0) * (50.0 - i as f64) / 2.0;
            assert!((v - e).abs() < 1e-8);
        }
    }

    #[test]
    fn reports_nonconvergence() {
        let op = Lap1d(200);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        let pre = Diagonal::new(&vec![2.0; 200]);
        let opts = CgOptions {
            tol: 1e-12,
            max_iter: 3,
            zero_mean: false,
        };
        match pcg(&op, &pre, &b, &mut x, opts, "test") {
            Err(Error::NotConverged { history, .. }) => assert_eq!(history.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
    }
}
