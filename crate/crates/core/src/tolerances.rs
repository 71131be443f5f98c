//! Numerical tolerances shared across modules.

/// Relative residual for the periodic cell solve.
pub const CELL_RESIDUAL: f64 = 1e-10;

/// Relative residual for Dirichlet ball solves.
pub const BALL_RESIDUAL: f64 = 1e-10;

/// Matrix identities (symmetry, normalization, energy vs flux).
pub const MATRIX_IDENTITY: f64 = 1e-8;

/// Parseval and basis orthonormality on the sphere.
pub const PARSEVAL: f64 = 1e-10;

/// Slack for spectral inequalities (Weiss, sandwich, concentration).
pub const SPECTRAL_SLACK: f64 = 1e-10;

/// Newton convergence for critical points, relative to the gradient scale.
pub const GRAD_TOL: f64 = 1e-8;

/// Minimum spacing ratio: grid spacing must not exceed eps / GUARD_NODES.
pub const GUARD_NODES: f64 = 16.0;

/// Allowed drift of fitted constants against the checked-in baseline.
pub const BASELINE_DRIFT: f64 = 0.25;

/// Cell-problem iteration cap as a multiple of the grid size along one axis.
pub const CELL_ITER_FACTOR: usize = 40;
