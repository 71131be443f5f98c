//! Sparse polynomials in three real variables.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::field::ScalarField;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly3 {
    terms: BTreeMap<[u32; 3], f64>,
}

impl Poly3 {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::monomial([0, 0, 0], c)
    }

    pub fn monomial(exp: [u32; 3], coeff: f64) -> Self {
        let mut p = Self::zero();
        p.add_term(exp, coeff);
        p
    }

    /// The coordinate function x_axis (axis in 0..3).
    pub fn var(axis: usize) -> Self {
        let mut e = [0; 3];
        e[axis] = 1;
        Self::monomial(e, 1.0)
    }

    /// Product of coordinates, e.g. `[0, 1]` gives x1 x2.
    pub fn product(axes: &[usize]) -> Self {
        let mut e = [0; 3];
        for &a in axes {
            e[a] += 1;
        }
        Self::monomial(e, 1.0)
    }

    pub fn add_term(&mut self, exp: [u32; 3], coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let c = self.terms.entry(exp).or_insert(0.0);
        *c += coeff;
        if *c == 0.0 {
            self.terms.remove(&exp);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32; 3], &f64)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e[0] + e[1] + e[2]).max().unwrap_or(0)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut p = Self::zero();
        for (e, c) in &self.terms {
            p.add_term(*e, c * s);
        }
        p
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut p = self.clone();
        for (e, c) in &other.terms {
            p.add_term(*e, *c);
        }
        p
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut p = Self::zero();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                p.add_term([a[0] + b[0], a[1] + b[1], a[2] + b[2]], ca * cb);
            }
        }
        p
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut p = Self::constant(1.0);
        for _ in 0..k {
            p = p.mul(self);
        }
        p
    }

    pub fn derivative(&self, axis: usize) -> Self {
        let mut p = Self::zero();
        for (e, c) in &self.terms {
            if e[axis] > 0 {
                let mut f = *e;
                f[axis] -= 1;
                p.add_term(f, c * e[axis] as f64);
            }
        }
        p
    }

    pub fn laplacian(&self) -> Self {
        (0..3).fold(Self::zero(), |acc, a| acc.add(&self.derivative(a).derivative(a)))
    }

    /// Directional derivative n . grad p.
    pub fn directional(&self, n: &Vector3<f64>) -> Self {
        (0..3).fold(Self::zero(), |acc, a| acc.add(&self.derivative(a).scale(n[a])))
    }

    fn powers(&self, x: &Vector3<f64>) -> [Vec<f64>; 3] {
        let d = self.degree() as usize;
        let mut out = [vec![1.0; d + 1], vec![1.0; d + 1], vec![1.0; d + 1]];
        for (a, pw) in out.iter_mut().enumerate() {
            for k in 1..=d {
                pw[k] = pw[k - 1] * x[a];
            }
        }
        out
    }

    pub fn eval(&self, x: &Vector3<f64>) -> f64 {
        let pw = self.powers(x);
        self.terms
            .iter()
            .map(|(e, c)| c * pw[0][e[0] as usize] * pw[1][e[1] as usize] * pw[2][e[2] as usize])
            .sum()
    }

    pub fn grad(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let pw = self.powers(x);
        let mut g = Vector3::zeros();
        for (e, c) in &self.terms {
            for a in 0..3 {
                if e[a] == 0 {
                    continue;
                }
                let mut t = c * e[a] as f64;
                for b in 0..3 {
                    let k = if a == b { e[b] - 1 } else { e[b] };
                    t *= pw[b][k as usize];
                }
                g[a] += t;
            }
        }
        g
    }

    /// p(x - c) expanded in powers of x.
    pub fn translate(&self, c: &Vector3<f64>) -> Self {
        let shifted: Vec<Poly3> = (0..3).map(|a| Poly3::var(a).add(&Poly3::constant(-c[a]))).collect();
        let mut p = Self::zero();
        for (e, coeff) in &self.terms {
            let term = shifted[0]
                .pow(e[0])
                .mul(&shifted[1].pow(e[1]))
                .mul(&shifted[2].pow(e[2]));
            p = p.add(&term.scale(*coeff));
        }
        p
    }

    /// Largest coefficient magnitude, a cheap size measure.
    pub fn max_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }
}

impl ScalarField for Poly3 {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.eval(x)
    }

    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.grad(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_and_gradient() {
        let p = Poly3::product(&[0, 1]).add(&Poly3::var(2).pow(3));
        let x = Vector3::new(0.3, -1.2, 0.7);
        assert!((p.eval(&x) - (0.3 * -1.2 + 0.343)).abs() < 1e-14);
        let g = p.grad(&x);
        assert!((g - Vector3::new(-1.2, 0.3, 3.0 * 0.49)).norm() < 1e-14);
    }

    #[test]
    fn harmonic_check() {
        let p = Poly3::var(0).pow(2).sub(&Poly3::var(1).pow(2));
        assert!(p.laplacian().is_zero());
        let q = Poly3::product(&[0, 1, 2]);
        assert!(q.laplacian().is_zero());
    }

    #[test]
    fn translation() {
        let p = Poly3::product(&[0, 1]);
        let c = Vector3::new(1.0, 2.0, 0.0);
        let t = p.translate(&c);
        let x = Vector3::new(0.5, 0.25, 3.0);
        assert!((t.eval(&x) - (x - c)[0] * (x - c)[1]).abs() < 1e-14);
    }
}
