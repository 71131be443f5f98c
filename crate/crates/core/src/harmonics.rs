//! Real spherical harmonics, orthonormal for the normalized surface measure.
//!
//! No Condon-Shortley phase: Y_{1,1} = sqrt(3) x, Y_{1,-1} = sqrt(3) y,
//! Y_{1,0} = sqrt(3) z. Negative m carries sin(|m| phi).

use nalgebra::Vector3;

use crate::poly::Poly3;

pub fn sh_index(l: usize, m: i64) -> usize {
    (l * l) + (l as i64 + m) as usize
}

pub fn sh_count(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// (l, m) for a flat index.
pub fn sh_degree_order(idx: usize) -> (usize, i64) {
    let l = (idx as f64).sqrt().floor() as usize;
    let l = if (l + 1) * (l + 1) <= idx { l + 1 } else { l };
    (l, idx as i64 - (l * l + l) as i64)
}

/// All Y_lm up to l_max at a unit vector.
pub fn real_sh(l_max: usize, u: &Vector3<f64>) -> Vec<f64> {
    let t = u.z.clamp(-1.0, 1.0);
    let rho = (u.x * u.x + u.y * u.y).sqrt();
    let (cphi, sphi) = if rho > 0.0 { (u.x / rho, u.y / rho) } else { (1.0, 0.0) };
    let s = rho.min(1.0);
    let mut out = vec![0.0; sh_count(l_max)];
    // Normalized associated Legendre functions, column by column in m.
    let mut pmm = 1.0;
    let (mut cm, mut sm) = (1.0, 0.0);
    for m in 0..=l_max {
        if m > 0 {
            pmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * s;
            let c = cm * cphi - sm * sphi;
            let sn = sm * cphi + cm * sphi;
            cm = c;
            sm = sn;
        } else {
            pmm = 1.0;
        }
        let mut p_prev = 0.0;
        let mut p = pmm;
        for l in m..=l_max {
            if l == m + 1 {
                p_prev = p;
                p = ((2 * m + 3) as f64).sqrt() * t * pmm;
            } else if l > m + 1 {
                let lf = l as f64;
                let mf = m as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
                let next = a * (t * p - b * p_prev);
                p_prev = p;
                p = next;
            }
            if m == 0 {
                out[sh_index(l, 0)] = p;
            } else {
                out[sh_index(l, m as i64)] = std::f64::consts::SQRT_2 * p * cm;
                out[sh_index(l, -(m as i64))] = std::f64::consts::SQRT_2 * p * sm;
            }
        }
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |a, k| a * k as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// The homogeneous harmonic polynomial r^l Y_lm(x / r).
pub fn solid_harmonic(l: usize, m: i64) -> Poly3 {
    let mm = m.unsigned_abs() as usize;
    assert!(mm <= l);
    // Re or Im of (x + i y)^mm.
    let mut ang = Poly3::zero();
    for j in 0..=mm {
        let keep = if m >= 0 { j % 2 == 0 } else { j % 2 == 1 };
        if !keep {
            continue;
        }
        let sign = if (j / 2) % 2 == 0 { 1.0 } else { -1.0 };
        ang.add_term([(mm - j) as u32, j as u32, 0], sign * binomial(mm, j));
    }
    let r2 = Poly3::monomial([2, 0, 0], 1.0)
        .add(&Poly3::monomial([0, 2, 0], 1.0))
        .add(&Poly3::monomial([0, 0, 2], 1.0));
    // mm-th derivative of P_l, written in z and r^2.
    let mut radial = Poly3::zero();
    for k in 0..=l / 2 {
        let n = l - 2 * k;
        if n < mm {
            continue;
        }
        let c = if k % 2 == 0 { 1.0 } else { -1.0 } * binomial(l, k) * binomial(2 * l - 2 * k, l) / 2f64.powi(l as i32)
            * factorial(n)
            / factorial(n - mm);
        radial = radial.add(&Poly3::monomial([0, 0, (n - mm) as u32], c).mul(&r2.pow(k as u32)));
    }
    let norm = if m == 0 {
        ((2 * l + 1) as f64).sqrt()
    } else {
        (2.0 * (2 * l + 1) as f64 * factorial(l - mm) / factorial(l + mm)).sqrt()
    };
    ang.mul(&radial).scale(norm)
}

/// Solid harmonics for every (l, m) up to l_max, in flat index order.
pub fn solid_harmonics(l_max: usize) -> Vec<Poly3> {
    (0..sh_count(l_max))
        .map(|i| {
            let (l, m) = sh_degree_order(i);
            solid_harmonic(l, m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::SphereQuadrature;

    #[test]
    fn low_degree_constants() {
        let u = Vector3::new(0.48, -0.6, 0.64);
        let y = real_sh(2, &u);
        let s3 = 3f64.sqrt();
        assert!((y[sh_index(0, 0)] - 1.0).abs() < 1e-14);
        assert!((y[sh_index(1, 1)] - s3 * u.x).abs() < 1e-14);
        assert!((y[sh_index(1, -1)] - s3 * u.y).abs() < 1e-14);
        assert!((y[sh_index(1, 0)] - s3 * u.z).abs() < 1e-14);
        assert!((y[sh_index(2, -2)] - 15f64.sqrt() * u.x * u.y).abs() < 1e-14);
        assert!((y[sh_index(2, 2)] - 0.5 * 15f64.sqrt() * (u.x * u.x - u.y * u.y)).abs() < 1e-14);
    }

    #[test]
    fn recursion_matches_polynomials() {
        let l_max = 8;
        let polys = solid_harmonics(l_max);
        let u = Vector3::new(0.3, 0.5, -0.2).normalize();
        let y = real_sh(l_max, &u);
        for (i, p) in polys.iter().enumerate() {
            assert!(p.laplacian().max_coeff() < 1e-9 * p.max_coeff().max(1.0), "index {i}");
            assert!(
                (p.eval(&u) - y[i]).abs() < 1e-11,
                "index {i}: {} vs {}",
                p.eval(&u),
                y[i]
            );
        }
    }

    #[test]
    fn orthonormal_under_quadrature() {
        let l_max = 8;
        let sq = SphereQuadrature::new(l_max + 1);
        let table: Vec<Vec<f64>> = sq.points.iter().map(|p| real_sh(l_max, p)).collect();
        let n = sh_count(l_max);
        for a in 0..n {
            for b in 0..n {
                let s: f64 = table.iter().zip(&sq.weights).map(|(y, w)| w * y[a] * y[b]).sum();
                let e = if a == b { 1.0 } else { 0.0 };
                assert!((s - e).abs() < 1e-12, "({a},{b}) = {s}");
            }
        }
    }

    #[test]
    fn index_roundtrip() {
        for i in 0..sh_count(10) {
            let (l, m) = sh_degree_order(i);
            assert_eq!(sh_index(l, m), i);
        }
    }
}
