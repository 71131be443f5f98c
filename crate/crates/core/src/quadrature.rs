//! Gauss-Legendre rules and the product rule on the unit sphere.

use std::f64::consts::PI;

use nalgebra::Vector3;

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, t);
        dp = if d != 0.0 { d } else { dp };
        x[i] = t;
        w[i] = 2.0 / ((1.0 - t * t) * dp * dp);
    }
    // Ascending order.
    x.reverse();
    w.reverse();
    (x, w)
}

fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}

/// Gauss-Legendre on [a, b].
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|v| v * half).collect(),
    )
}

/// Product rule: q Gauss-Legendre nodes in cos(theta) times 2q uniform
/// nodes in phi. Weights sum to one, so sums are sphere averages. Exact for
/// polynomials of degree up to 2q - 1.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    pub q: usize,
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn new(q: usize) -> Self {
        assert!(q >= 1);
        let (t, w) = gauss_legendre(q);
        let nphi = 2 * q;
        let mut points = Vec::with_capacity(q * nphi);
        let mut weights = Vec::with_capacity(q * nphi);
        for (ti, wi) in t.iter().zip(&w) {
            let s = (1.0 - ti * ti).max(0.0).sqrt();
            for k in 0..nphi {
                let phi = PI * k as f64 / q as f64;
                points.push(Vector3::new(s * phi.cos(), s * phi.sin(), *ti));
                weights.push(wi / (2.0 * nphi as f64));
            }
        }
        Self { q, points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sphere average of sampled values.
    pub fn average(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        for k in 0..12 {
            let s: f64 = x.iter().zip(&w).map(|(t, v)| v * t.powi(k)).sum();
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            assert!((s - exact).abs() < 1e-14, "k = {k}");
        }
    }

    #[test]
    fn sphere_moments() {
        let sq = SphereQuadrature::new(8);
        let avg = |f: &dyn Fn(&Vector3<f64>) -> f64| sq.average(&sq.points.iter().map(f).collect::<Vec<_>>());
        assert!((avg(&|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((avg(&|p| p.x * p.x) - 1.0 / 3.0).abs() < 1e-14);
        assert!((avg(&|p| p.x * p.x * p.y * p.y) - 1.0 / 15.0).abs() < 1e-14);
        assert!((avg(&|p| p.z.powi(4)) - 0.2).abs() < 1e-14);
    }
}
