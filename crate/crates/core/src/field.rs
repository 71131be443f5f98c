//! Point evaluation interface shared by grid solutions and analytic fields.

use nalgebra::Vector3;

/// A scalar function of position with a gradient.
///
/// Grid-backed fields are only meaningful inside their domain; callers ask
/// [`ScalarField::contains_ball`] before sampling spheres.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: &Vector3<f64>) -> f64;

    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64>;

    fn contains_ball(&self, _center: &Vector3<f64>, _radius: f64) -> bool {
        true
    }

    /// Natural sampling spacing of the field, if it has one.
    fn spacing(&self) -> Option<f64> {
        None
    }
}

/// A field given by closures, mostly for tests and oracles.
pub struct FnField<F, G> {
    pub f: F,
    pub g: G,
}

impl<F, G> ScalarField for FnField<F, G>
where
    F: Fn(&Vector3<f64>) -> f64 + Send + Sync,
    G: Fn(&Vector3<f64>) -> Vector3<f64> + Send + Sync,
{
    fn value(&self, x: &Vector3<f64>) -> f64 {
        (self.f)(x)
    }

    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        (self.g)(x)
    }
}

/// Adds a constant to another field.
pub struct Shifted<'a> {
    pub inner: &'a dyn ScalarField,
    pub shift: f64,
}

impl ScalarField for Shifted<'_> {
    fn value(&self, x: &Vector3<f64>) -> f64 {
        self.inner.value(x) + self.shift
    }

    fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.inner.gradient(x)
    }

    fn contains_ball(&self, c: &Vector3<f64>, r: f64) -> bool {
        self.inner.contains_ball(c, r)
    }

    fn spacing(&self) -> Option<f64> {
        self.inner.spacing()
    }
}

/// Lattice points of spacing `h` inside the closed ball B(center, radius).
pub fn ball_lattice(center: &Vector3<f64>, radius: f64, h: f64) -> Vec<Vector3<f64>> {
    let m = (radius / h).floor() as i64;
    let mut pts = Vec::new();
    for i in -m..=m {
        for j in -m..=m {
            for k in -m..=m {
                let d = Vector3::new(i as f64, j as f64, k as f64) * h;
                if d.norm() <= radius {
                    pts.push(center + d);
                }
            }
        }
    }
    pts
}
