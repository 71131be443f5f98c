use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use crate::cell::{
    normalization_transform, solve_cell_problem, CoefficientField, CorrectorSet, NormalizationTransform,
};
use crate::error::Result;

/// Coefficients B(y) = S A(S^-1 y) S^T at cell scale, plus correctors.
///
/// With S from the normalization transform the homogenized operator of B is
/// the Laplacian.
#[derive(Clone, Debug)]
pub struct Medium {
    field: Option<Arc<CoefficientField>>,
    correctors: Option<Arc<CorrectorSet>>,
    transform: NormalizationTransform,
}

impl Medium {
    pub fn identity() -> Self {
        Self {
            field: None,
            correctors: None,
            transform: NormalizationTransform::identity(),
        }
    }

    pub fn new(
        field: Arc<CoefficientField>,
        correctors: Option<Arc<CorrectorSet>>,
        transform: Option<NormalizationTransform>,
    ) -> Self {
        Self {
            field: Some(field),
            correctors,
            transform: transform.unwrap_or_else(NormalizationTransform::identity),
        }
    }

    /// Solves the cell problem and applies the normalizing change of variables.
    pub fn normalized(field: CoefficientField, tol: f64) -> Result<Self> {
        let c = solve_cell_problem(&field, tol)?;
        let s = normalization_transform(&c.a_hat)?;
        Ok(Self::new(Arc::new(field), Some(Arc::new(c)), Some(s)))
    }

    /// Same coefficients, with correctors recomputed on a cell grid of
    /// `n_cell` nodes per period. On a lattice aligned with the cell these
    /// are the discrete correctors of the ball scheme itself.
    pub fn with_lattice_correctors(&self, n_cell: usize, tol: f64) -> Result<Self> {
        let Some(f) = &self.field else { return Ok(self.clone()) };
        let coarse = match f.preset() {
            Some(p) => CoefficientField::from_preset(p, n_cell)?,
            None => CoefficientField::from_fn(n_cell, |y| f.at(y))?,
        };
        let c = solve_cell_problem(&coarse, tol)?;
        Ok(Self {
            field: self.field.clone(),
            correctors: Some(Arc::new(c)),
            transform: self.transform,
        })
    }

    pub fn field(&self) -> Option<&CoefficientField> {
        self.field.as_deref()
    }

    pub fn correctors(&self) -> Option<&CorrectorSet> {
        self.correctors.as_deref()
    }

    pub fn transform(&self) -> &NormalizationTransform {
        &self.transform
    }

    pub fn is_constant(&self) -> bool {
        self.field.as_ref().is_none_or(|f| f.is_constant())
    }

    /// B(y) at a cell-scale point y = x / eps.
    pub fn coefficient(&self, y: &Vector3<f64>) -> Matrix3<f64> {
        match &self.field {
            None => Matrix3::identity(),
            Some(f) => {
                let s = &self.transform.s;
                s * f.at(&(self.transform.s_inv * y)) * s.transpose()
            }
        }
    }

    /// Gradient of the transformed correctors, G[(i, j)] = d_i chi_j.
    pub fn corrector_gradient(&self, y: &Vector3<f64>) -> Matrix3<f64> {
        match &self.correctors {
            None => Matrix3::zeros(),
            Some(c) => {
                let s = &self.transform.s;
                let si = &self.transform.s_inv;
                si.transpose() * c.grad_at(&(si * y)) * s.transpose()
            }
        }
    }

    /// Transformed correctors chi^B(y) = S chi(S^-1 y).
    pub fn corrector(&self, y: &Vector3<f64>) -> Vector3<f64> {
        match &self.correctors {
            None => Vector3::zeros(),
            Some(c) => self.transform.s * c.chi_at(&(self.transform.s_inv * y)),
        }
    }

    /// True when B = diag(alpha(y1), beta(y1), beta(y1)), so that problems
    /// are symmetric under rotation about the x1 axis.
    pub fn is_axial(&self) -> bool {
        let Some(f) = &self.field else { return true };
        let t = &self.transform;
        if !t.is_diagonal() || (t.s[(1, 1)] - t.s[(2, 2)]).abs() > 1e-14 * t.s[(1, 1)].abs() {
            return false;
        }
        let e = f.grid().extent;
        if e[1] != 1 || e[2] != 1 {
            return false;
        }
        f.values().iter().all(|a| {
            (0..3).all(|i| (0..3).all(|j| i == j || a[(i, j)] == 0.0))
                && (a[(1, 1)] - a[(2, 2)]).abs() <= 1e-14 * a[(1, 1)].abs()
        })
    }

    /// True when some off-diagonal entry is nonzero somewhere.
    pub fn has_cross_terms(&self) -> bool {
        let Some(f) = &self.field else { return false };
        let t = &self.transform;
        !t.is_diagonal()
            || f.values()
                .iter()
                .any(|a| (0..3).any(|i| (0..3).any(|j| i != j && a[(i, j)] != 0.0)))
    }

    /// Period of B along y1 when S is diagonal.
    pub fn period_x1(&self) -> f64 {
        self.transform.s[(0, 0)]
    }

    /// Homogenized matrix of B, S A-hat S^T.
    pub fn homogenized(&self) -> Matrix3<f64> {
        match &self.correctors {
            None => match &self.field {
                Some(f) if f.is_constant() => {
                    let s = &self.transform.s;
                    s * f.node(0) * s.transpose()
                }
                _ => Matrix3::identity(),
            },
            Some(c) => self.transform.s * c.a_hat * self.transform.s.transpose(),
        }
    }
}
