//! Periodic cell problems on the unit cube.
//!
//! Grids carry a per-axis extent that is either `n` or 1. An extent of 1 means
//! the field is invariant along that axis; derivatives along it vanish and the
//! solve is done on the reduced grid. A layered medium at n = 256 is therefore
//! a one-dimensional problem.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pcg, CgOptions, Diagonal, LinearOperator};
use crate::tolerances;

/// Named coefficient families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum Preset {
    Identity,
    Constant {
        matrix: [[f64; 3]; 3],
    },
    /// (mean + amplitude sin 2 pi y1) I
    Layered {
        #[serde(default = "default_mean")]
        mean: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// (base + amplitude prod_i tanh(sharpness sin 2 pi y_i)) I
    CheckerboardSmoothed {
        #[serde(default = "default_mean")]
        base: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_sharpness")]
        sharpness: f64,
    },
    /// Full symmetric tensor with trigonometric entries, diagonally dominant
    /// for amplitude < 1.
    TrigTensor {
        #[serde(default = "default_trig_amplitude")]
        amplitude: f64,
    },
}

fn default_mean() -> f64 {
    2.0
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_sharpness() -> f64 {
    4.0
}
fn default_trig_amplitude() -> f64 {
    0.5
}

impl Preset {
    pub fn layered() -> Self {
        Preset::Layered {
            mean: 2.0,
            amplitude: 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Identity => "identity",
            Preset::Constant { .. } => "constant",
            Preset::Layered { .. } => "layered",
            Preset::CheckerboardSmoothed { .. } => "checkerboard-smoothed",
            Preset::TrigTensor { .. } => "trig-tensor",
        }
    }

    pub fn eval(&self, y: &Vector3<f64>) -> Matrix3<f64> {
        let s = |t: f64| (2.0 * PI * t).sin();
        let c = |t: f64| (2.0 * PI * t).cos();
        match self {
            Preset::Identity => Matrix3::identity(),
            Preset::Constant { matrix } => Matrix3::from_fn(|i, j| matrix[i][j]),
            Preset::Layered { mean, amplitude } => Matrix3::identity() * (mean + amplitude * s(y[0])),
            Preset::CheckerboardSmoothed {
                base,
                amplitude,
                sharpness,
            } => {
                let p: f64 = (0..3).map(|i| (sharpness * s(y[i])).tanh()).product();
                Matrix3::identity() * (base + amplitude * p)
            }
            Preset::TrigTensor { amplitude: a } => {
                let mut m = Matrix3::zeros();
                for i in 0..3 {
                    let j = (i + 1) % 3;
                    m[(i, i)] = 2.0 + a * s(y[i]) * c(y[j]);
                    let off = 0.5 * a * c(y[i] + y[j]);
                    m[(i, j)] = off;
                    m[(j, i)] = off;
                }
                m
            }
        }
    }

    /// Axes along which the preset is constant.
    pub fn invariant_axes(&self) -> [bool; 3] {
        match self {
            Preset::Identity | Preset::Constant { .. } => [true; 3],
            Preset::Layered { .. } => [false, true, true],
            Preset::CheckerboardSmoothed { .. } | Preset::TrigTensor { .. } => [false; 3],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.invariant_axes() == [true; 3]
    }
}

/// Index arithmetic on a periodic grid with broadcast axes.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    pub n: usize,
    pub extent: [usize; 3],
    strides: [usize; 3],
}

impl CellGrid {
    pub fn new(n: usize, extent: [usize; 3]) -> Self {
        Self {
            n,
            extent,
            strides: [extent[1] * extent[2], extent[2], 1],
        }
    }

    pub fn len(&self) -> usize {
        self.extent.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn active(&self, axis: usize) -> bool {
        self.extent[axis] > 1
    }

    pub fn coords(&self, p: usize) -> [usize; 3] {
        [
            p / self.strides[0],
            (p / self.strides[1]) % self.extent[1],
            p % self.extent[2],
        ]
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        c[0] * self.strides[0] + c[1] * self.strides[1] + c[2]
    }

    pub fn shift(&self, p: usize, axis: usize, forward: bool) -> usize {
        let e = self.extent[axis];
        let c = self.coords(p)[axis];
        let nc = if forward { (c + 1) % e } else { (c + e - 1) % e };
        p + nc * self.strides[axis] - c * self.strides[axis]
    }

    /// Cell coordinates of node p (invariant axes report 0).
    pub fn point(&self, p: usize) -> Vector3<f64> {
        let c = self.coords(p);
        Vector3::new(
            c[0] as f64 / self.n as f64,
            c[1] as f64 / self.n as f64,
            c[2] as f64 / self.n as f64,
        )
    }

    /// Periodic trilinear interpolation weights at cell point y.
    fn stencil(&self, y: &Vector3<f64>) -> Vec<(usize, f64)> {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            if !self.active(a) {
                continue;
            }
            let e = self.extent[a];
            let s = (y[a] - y[a].floor()) * self.n as f64;
            let f = s.floor();
            lo[a] = (f as usize) % e;
            hi[a] = (lo[a] + 1) % e;
            t[a] = s - f;
        }
        let mut out = Vec::with_capacity(8);
        for corner in 0..8 {
            let mut c = [0usize; 3];
            let mut w = 1.0;
            for a in 0..3 {
                let up = (corner >> a) & 1 == 1;
                if !self.active(a) {
                    if up {
                        w = 0.0;
                    }
                    continue;
                }
                c[a] = if up { hi[a] } else { lo[a] };
                w *= if up { t[a] } else { 1.0 - t[a] };
            }
            if w != 0.0 {
                out.push((self.index(c), w));
            }
        }
        out
    }
}

/// Symmetric uniformly elliptic coefficient samples on the unit cell.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    grid: CellGrid,
    values: Vec<Matrix3<f64>>,
    lambda: f64,
    lipschitz: f64,
    preset: Option<Preset>,
}

impl CoefficientField {
    pub fn from_preset(preset: &Preset, n: usize) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidInput(format!("cell resolution {n} below 4")));
        }
        let inv = preset.invariant_axes();
        let extent = [0, 1, 2].map(|a| if inv[a] { 1 } else { n });
        let grid = CellGrid::new(n, extent);
        let values = (0..grid.len()).map(|p| preset.eval(&grid.point(p))).collect();
        let mut field = Self::from_parts(grid, values)?;
        field.preset = Some(preset.clone());
        Ok(field)
    }

    /// Full n^3 samples, compressed along invariant axes.
    pub fn from_samples(n: usize, values: Vec<Matrix3<f64>>) -> Result<Self> {
        if values.len() != n * n * n {
            return Err(Error::InvalidInput(format!(
                "expected {} samples for n = {n}, got {}",
                n * n * n,
                values.len()
            )));
        }
        let grid = CellGrid::new(n, [n, n, n]);
        Ok(Self::from_parts(grid, values)?.compress())
    }

    pub fn from_fn(n: usize, f: impl Fn(&Vector3<f64>) -> Matrix3<f64>) -> Result<Self> {
        let grid = CellGrid::new(n, [n, n, n]);
        let values = (0..grid.len()).map(|p| f(&grid.point(p))).collect();
        Self::from_samples(n, values)
    }

    fn from_parts(grid: CellGrid, values: Vec<Matrix3<f64>>) -> Result<Self> {
        let mut min_eig = f64::INFINITY;
        let mut max_norm: f64 = 0.0;
        for (p, a) in values.iter().enumerate() {
            let scale = a.abs().max().max(1e-300);
            if (a - a.transpose()).abs().max() > 1e-12 * scale {
                return Err(Error::InvalidInput(format!(
                    "coefficient at node {:?} is not symmetric",
                    grid.coords(p)
                )));
            }
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput("non-finite coefficient".into()));
            }
            let eig = SymmetricEigen::new(*a).eigenvalues;
            let lo = eig.min();
            if lo <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "ellipticity violated at node {:?}: smallest eigenvalue {lo:.3e}",
                    grid.coords(p)
                )));
            }
            min_eig = min_eig.min(lo);
            max_norm = max_norm.max(eig.abs().max());
        }
        let lambda = min_eig.min(1.0 / max_norm);
        let mut lipschitz: f64 = 0.0;
        for a in 0..3 {
            if !grid.active(a) {
                continue;
            }
            for p in 0..grid.len() {
                let q = grid.shift(p, a, true);
                lipschitz = lipschitz.max((values[q] - values[p]).norm() * grid.n as f64);
            }
        }
        Ok(Self {
            grid,
            values,
            lambda,
            lipschitz,
            preset: None,
        })
    }

    /// Collapses axes along which every sample is repeated exactly.
    pub fn compress(self) -> Self {
        let mut grid = self.grid.clone();
        let mut values = self.values.clone();
        for a in 0..3 {
            if !grid.active(a) {
                continue;
            }
            let invariant = (0..grid.len()).all(|p| values[grid.shift(p, a, true)] == values[p]);
            if invariant {
                let mut ext = grid.extent;
                ext[a] = 1;
                let reduced = CellGrid::new(grid.n, ext);
                let mut v = Vec::with_capacity(reduced.len());
                for p in 0..reduced.len() {
                    let c = reduced.coords(p);
                    v.push(values[grid.index(c)]);
                }
                grid = reduced;
                values = v;
            }
        }
        Self { grid, values, ..self }
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn preset(&self) -> Option<&Preset> {
        self.preset.as_ref()
    }

    pub fn values(&self) -> &[Matrix3<f64>] {
        &self.values
    }

    pub fn node(&self, p: usize) -> &Matrix3<f64> {
        &self.values[p]
    }

    pub fn is_constant(&self) -> bool {
        self.grid.len() == 1
    }

    /// Coefficient at an arbitrary cell point: exact for presets, periodic
    /// trilinear interpolation otherwise.
    pub fn at(&self, y: &Vector3<f64>) -> Matrix3<f64> {
        if let Some(p) = &self.preset {
            return p.eval(y);
        }
        self.grid
            .stencil(y)
            .into_iter()
            .fold(Matrix3::zeros(), |acc, (p, w)| acc + self.values[p] * w)
    }

    /// Counts violations of the two-sided ellipticity bound over a direction set.
    pub fn ellipticity_violations(&self, dirs: &[Vector3<f64>]) -> usize {
        let mut bad = 0;
        for a in &self.values {
            for xi in dirs {
                let q = xi.dot(&(a * xi));
                if q < self.lambda * xi.norm_squared() * (1.0 - 1e-12) {
                    bad += 1;
                }
                for zeta in dirs {
                    let b = zeta.dot(&(a * xi)).abs();
                    if b > xi.norm() * zeta.norm() / self.lambda * (1.0 + 1e-12) {
                        bad += 1;
                    }
                }
            }
        }
        bad
    }

    /// Reads node samples with header `i,j,k,a11,...,a33`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let expected = [
            "i", "j", "k", "a11", "a12", "a13", "a21", "a22", "a23", "a31", "a32", "a33",
        ];
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        if header != expected {
            return Err(Error::InvalidInput(format!("unexpected CSV header {header:?}")));
        }
        let mut rows = Vec::new();
        let mut n = 0usize;
        for rec in rdr.records() {
            let rec = rec?;
            let idx: Vec<usize> = (0..3)
                .map(|c| rec[c].trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("bad index: {e}")))?;
            let vals: Vec<f64> = (3..12)
                .map(|c| rec[c].trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("bad value: {e}")))?;
            n = n.max(idx[0] + 1).max(idx[1] + 1).max(idx[2] + 1);
            rows.push((idx, Matrix3::from_row_slice(&vals)));
        }
        if rows.len() != n * n * n {
            return Err(Error::InvalidInput(format!(
                "CSV holds {} rows, a cubic grid of side {n} needs {}",
                rows.len(),
                n * n * n
            )));
        }
        let grid = CellGrid::new(n, [n, n, n]);
        let mut values = vec![None; n * n * n];
        for (idx, m) in rows {
            values[grid.index([idx[0], idx[1], idx[2]])] = Some(m);
        }
        let values: Option<Vec<_>> = values.into_iter().collect();
        let values = values.ok_or_else(|| Error::InvalidInput("duplicate CSV node".into()))?;
        Self::from_samples(n, values)
    }

    /// Writes the full n^3 node samples.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record([
            "i", "j", "k", "a11", "a12", "a13", "a21", "a22", "a23", "a31", "a32", "a33",
        ])?;
        let n = self.grid.n;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = [i, j, k]
                        .into_iter()
                        .enumerate()
                        .map(|(a, v)| if self.grid.active(a) { v } else { 0 });
                    let c: Vec<usize> = c.collect();
                    let m = &self.values[self.grid.index([c[0], c[1], c[2]])];
                    let mut rec = vec![i.to_string(), j.to_string(), k.to_string()];
                    for r in 0..3 {
                        for s in 0..3 {
                            rec.push(crate::harness::fmt_num(m[(r, s)]));
                        }
                    }
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Correctors and derived quantities for one coefficient field.
#[derive(Clone, Debug)]
pub struct CorrectorSet {
    grid: CellGrid,
    /// chi[j] on the (reduced) cell grid.
    pub chi: [Vec<f64>; 3],
    /// One-sided gradient, G[(i, j)] = D+_i chi_j.
    pub grad_chi: Vec<Matrix3<f64>>,
    /// Centered gradient, used for corrected gradients.
    pub grad_chi_centered: Vec<Matrix3<f64>>,
    pub a_hat: Matrix3<f64>,
    /// Flux-average form of the homogenized matrix.
    pub a_hat_flux: Matrix3<f64>,
    pub mu: f64,
    pub mu_argmin: Vector3<f64>,
    pub residual: f64,
    pub iterations: [usize; 3],
}

#[derive(Clone, Copy, Debug)]
pub struct CellOptions {
    pub tol: f64,
    pub max_iter: Option<usize>,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            tol: tolerances::CELL_RESIDUAL,
            max_iter: None,
        }
    }
}

struct CellOperator<'a> {
    field: &'a CoefficientField,
    plus: [Vec<u32>; 3],
    minus: [Vec<u32>; 3],
    /// Harmonic average of a_aa across the face (p, p + e_a).
    face: [Vec<f64>; 3],
    cross: bool,
    diag: Vec<f64>,
}

impl<'a> CellOperator<'a> {
    fn new(field: &'a CoefficientField) -> Self {
        let g = &field.grid;
        let len = g.len();
        let mut plus: [Vec<u32>; 3] = Default::default();
        let mut minus: [Vec<u32>; 3] = Default::default();
        let mut face: [Vec<f64>; 3] = Default::default();
        for a in 0..3 {
            plus[a] = (0..len).map(|p| g.shift(p, a, true) as u32).collect();
            minus[a] = (0..len).map(|p| g.shift(p, a, false) as u32).collect();
            face[a] = (0..len)
                .map(|p| {
                    let x = field.values[p][(a, a)];
                    let y = field.values[plus[a][p] as usize][(a, a)];
                    2.0 * x * y / (x + y)
                })
                .collect();
        }
        let cross = field
            .values
            .iter()
            .any(|m| (0..3).any(|i| (0..3).any(|j| i != j && g.active(i) && m[(i, j)] != 0.0)));
        let n2 = (g.n * g.n) as f64;
        let diag = (0..len)
            .map(|p| {
                (0..3)
                    .filter(|a| g.active(*a))
                    .map(|a| (face[a][p] + face[a][minus[a][p] as usize]) * n2)
                    .sum()
            })
            .collect();
        Self {
            field,
            plus,
            minus,
            face,
            cross,
            diag,
        }
    }

    fn active(&self) -> Vec<usize> {
        (0..3).filter(|a| self.field.grid.active(*a)).collect()
    }

    fn centered(&self, x: &[f64], a: usize) -> Vec<f64> {
        let h2 = self.field.grid.n as f64 / 2.0;
        (0..x.len())
            .map(|p| (x[self.plus[a][p] as usize] - x[self.minus[a][p] as usize]) * h2)
            .collect()
    }

    fn forward(&self, x: &[f64], a: usize) -> Vec<f64> {
        let n = self.field.grid.n as f64;
        (0..x.len()).map(|p| (x[self.plus[a][p] as usize] - x[p]) * n).collect()
    }

    /// Right-hand side div(A e_j).
    fn rhs(&self, j: usize) -> Vec<f64> {
        let g = &self.field.grid;
        let n = g.n as f64;
        let len = g.len();
        let mut b = vec![0.0; len];
        if g.active(j) {
            for (p, bp) in b.iter_mut().enumerate() {
                *bp += (self.face[j][p] - self.face[j][self.minus[j][p] as usize]) * n;
            }
        }
        for i in self.active() {
            if i == j {
                continue;
            }
            for (p, bp) in b.iter_mut().enumerate() {
                let up = self.field.values[self.plus[i][p] as usize][(i, j)];
                let dn = self.field.values[self.minus[i][p] as usize][(i, j)];
                *bp += (up - dn) * n / 2.0;
            }
        }
        b
    }
}

impl LinearOperator for CellOperator<'_> {
    fn len(&self) -> usize {
        self.field.grid.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = &self.field.grid;
        let n = g.n as f64;
        y.iter_mut().for_each(|v| *v = 0.0);
        let active = self.active();
        for &a in &active {
            for p in 0..x.len() {
                let q = self.plus[a][p] as usize;
                let flux = self.face[a][p] * (x[q] - x[p]) * n * n;
                y[p] -= flux;
                y[q] += flux;
            }
        }
        if !self.cross {
            return;
        }
        let d: Vec<(usize, Vec<f64>)> = active.iter().map(|&m| (m, self.centered(x, m))).collect();
        for &i in &active {
            let c: Vec<f64> = (0..x.len())
                .map(|p| {
                    d.iter()
                        .filter(|(m, _)| *m != i)
                        .map(|(m, dm)| self.field.values[p][(i, *m)] * dm[p])
                        .sum()
                })
                .collect();
            for p in 0..x.len() {
                y[p] -= (c[self.plus[i][p] as usize] - c[self.minus[i][p] as usize]) * n / 2.0;
            }
        }
    }
}

/// Solves the three cell problems with the default tolerance.
pub fn solve_cell_problem(field: &CoefficientField, tol: f64) -> Result<CorrectorSet> {
    solve_cell_problem_with(
        field,
        CellOptions {
            tol,
            ..Default::default()
        },
    )
}

pub fn solve_cell_problem_with(field: &CoefficientField, opts: CellOptions) -> Result<CorrectorSet> {
    if opts.tol <= 0.0 {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let g = field.grid.clone();
    let op = CellOperator::new(field);
    let pre = Diagonal::new(&op.diag);
    let max_iter = opts.max_iter.unwrap_or(tolerances::CELL_ITER_FACTOR * g.n.max(16) * 4);
    let cg = CgOptions {
        tol: opts.tol,
        max_iter,
        zero_mean: true,
    };
    let mut chi: [Vec<f64>; 3] = Default::default();
    let mut iterations = [0; 3];
    let mut residual: f64 = 0.0;
    for j in 0..3 {
        let b = op.rhs(j);
        let mut x = vec![0.0; g.len()];
        if g.len() > 1 {
            let out = pcg(&op, &pre, &b, &mut x, cg, "cell problem")?;
            iterations[j] = out.iterations;
            residual = residual.max(out.residual);
        }
        chi[j] = x;
    }
    let len = g.len();
    let mut grad_chi = vec![Matrix3::zeros(); len];
    let mut grad_chi_centered = vec![Matrix3::zeros(); len];
    for j in 0..3 {
        for a in op.active() {
            let f = op.forward(&chi[j], a);
            let c = op.centered(&chi[j], a);
            for p in 0..len {
                grad_chi[p][(a, j)] = f[p];
                grad_chi_centered[p][(a, j)] = c[p];
            }
        }
    }
    let a_hat = energy_matrix(field, &op, &grad_chi, &grad_chi_centered);
    let a_hat_flux = flux_matrix(field, &op, &grad_chi, &grad_chi_centered);
    let (mu, arg) = min_det(&grad_chi);
    Ok(CorrectorSet {
        mu_argmin: g.point(arg),
        grid: g,
        chi,
        grad_chi,
        grad_chi_centered,
        a_hat,
        a_hat_flux,
        mu,
        residual,
        iterations,
    })
}

fn face_or_node(field: &CoefficientField, op: &CellOperator, a: usize, p: usize) -> f64 {
    if field.grid.active(a) {
        op.face[a][p]
    } else {
        field.values[p][(a, a)]
    }
}

fn energy_matrix(
    field: &CoefficientField,
    op: &CellOperator,
    gf: &[Matrix3<f64>],
    gc: &[Matrix3<f64>],
) -> Matrix3<f64> {
    let len = field.grid.len();
    let mut out = Matrix3::zeros();
    for j in 0..3 {
        for k in 0..3 {
            let mut s = 0.0;
            for p in 0..len {
                let a = &field.values[p];
                let xf = |i: usize, c: usize| gf[p][(i, c)] + if i == c { 1.0 } else { 0.0 };
                let xc = |i: usize, c: usize| gc[p][(i, c)] + if i == c { 1.0 } else { 0.0 };
                let mut e = 0.0;
                for i in 0..3 {
                    e += face_or_node(field, op, i, p) * xf(i, j) * xf(i, k);
                    for m in 0..3 {
                        if m != i {
                            e += a[(i, m)] * xc(m, j) * xc(i, k);
                        }
                    }
                }
                s += e;
            }
            out[(j, k)] = s / len as f64;
        }
    }
    out
}

fn flux_matrix(field: &CoefficientField, op: &CellOperator, gf: &[Matrix3<f64>], gc: &[Matrix3<f64>]) -> Matrix3<f64> {
    let len = field.grid.len();
    let mut out = Matrix3::zeros();
    for j in 0..3 {
        for k in 0..3 {
            let mut s = 0.0;
            for p in 0..len {
                let a = &field.values[p];
                let mut f = face_or_node(field, op, k, p) * (gf[p][(k, j)] + if k == j { 1.0 } else { 0.0 });
                for m in 0..3 {
                    if m != k {
                        f += a[(k, m)] * (gc[p][(m, j)] + if m == j { 1.0 } else { 0.0 });
                    }
                }
                s += f;
            }
            out[(k, j)] = s / len as f64;
        }
    }
    out
}

fn min_det(grad: &[Matrix3<f64>]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (p, g) in grad.iter().enumerate() {
        let d = (Matrix3::identity() + g).determinant();
        if d < best.0 {
            best = (d, p);
        }
    }
    best
}

/// Homogenized matrix by the corrector-energy formula.
pub fn homogenized_matrix(field: &CoefficientField, c: &CorrectorSet) -> Result<Matrix3<f64>> {
    if field.grid != c.grid {
        return Err(Error::InvalidInput(
            "corrector grid does not match coefficient grid".into(),
        ));
    }
    let op = CellOperator::new(field);
    Ok(energy_matrix(field, &op, &c.grad_chi, &c.grad_chi_centered))
}

#[derive(Clone, Copy, Debug)]
pub struct MinDet {
    pub mu: f64,
    pub argmin: Vector3<f64>,
    /// mu <= 0 contradicts the standing invertibility assumption.
    pub violation: bool,
}

pub fn min_det_check(c: &CorrectorSet) -> MinDet {
    let (mu, p) = min_det(&c.grad_chi);
    MinDet {
        mu,
        argmin: c.grid.point(p),
        violation: mu <= 0.0,
    }
}

impl CorrectorSet {
    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn chi_at(&self, y: &Vector3<f64>) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        for (p, w) in self.grid.stencil(y) {
            for j in 0..3 {
                v[j] += w * self.chi[j][p];
            }
        }
        v
    }

    /// Centered corrector gradient at a cell point, G[(i, j)] = d_i chi_j.
    pub fn grad_at(&self, y: &Vector3<f64>) -> Matrix3<f64> {
        self.grid
            .stencil(y)
            .into_iter()
            .fold(Matrix3::zeros(), |acc, (p, w)| acc + self.grad_chi_centered[p] * w)
    }

    pub fn mean_abs_chi(&self) -> f64 {
        let len = self.grid.len() as f64;
        (0..3)
            .map(|j| (self.chi[j].iter().sum::<f64>() / len).abs())
            .fold(0.0, f64::max)
    }
}

/// S with S (A + A^T) S^T = 2 I.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationTransform {
    pub s: Matrix3<f64>,
    pub s_inv: Matrix3<f64>,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            s: Matrix3::identity(),
            s_inv: Matrix3::identity(),
        }
    }

    /// True when S is diagonal.
    pub fn is_diagonal(&self) -> bool {
        (0..3).all(|i| (0..3).all(|j| i == j || self.s[(i, j)].abs() <= 1e-14 * self.s.abs().max()))
    }
}

pub fn normalization_transform(a_hat: &Matrix3<f64>) -> Result<NormalizationTransform> {
    let sym = (a_hat + a_hat.transpose()) * 0.5;
    if sym.iter().all(|v| *v == 0.0) || sym == Matrix3::from_diagonal(&sym.diagonal()) {
        // Diagonal input: avoid round-off from the eigen-solver.
        let d = sym.diagonal();
        if d.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidInput(
                "symmetric part of A-hat is not positive definite".into(),
            ));
        }
        return Ok(NormalizationTransform {
            s: Matrix3::from_diagonal(&d.map(|v| 1.0 / v.sqrt())),
            s_inv: Matrix3::from_diagonal(&d.map(|v| v.sqrt())),
        });
    }
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidInput(
            "symmetric part of A-hat is not positive definite".into(),
        ));
    }
    let q = eig.eigenvectors;
    let s = q * Matrix3::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt())) * q.transpose();
    let s_inv = q * Matrix3::from_diagonal(&eig.eigenvalues.map(|v| v.sqrt())) * q.transpose();
    Ok(NormalizationTransform { s, s_inv })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_correctors() {
        let f = CoefficientField::from_preset(&Preset::Identity, 16).unwrap();
        let c = solve_cell_problem(&f, 1e-10).unwrap();
        assert_eq!(c.residual, 0.0);
        assert!(c.chi.iter().all(|v| v.iter().all(|x| *x == 0.0)));
        assert_eq!(c.mu, 1.0);
        assert!((c.a_hat - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn layered_closed_form() {
        let n = 64;
        let f = CoefficientField::from_preset(&Preset::layered(), n).unwrap();
        assert_eq!(f.grid().extent, [n, 1, 1]);
        let c = solve_cell_problem(&f, 1e-12).unwrap();
        // Discrete harmonic mean of face coefficients.
        let op = CellOperator::new(&f);
        let hm = n as f64 / op.face[0].iter().map(|a| 1.0 / a).sum::<f64>();
        assert!((c.a_hat[(0, 0)] - hm).abs() < 1e-10);
        assert!((c.a_hat[(0, 0)] - 3f64.sqrt()).abs() < 1e-4);
        assert!((c.a_hat[(1, 1)] - 2.0).abs() < 1e-12);
        for p in 0..n {
            let d = c.grad_chi[p][(0, 0)];
            assert!((d - (hm / op.face[0][p] - 1.0)).abs() < 1e-8);
        }
        assert!(c.mean_abs_chi() < 1e-10);
    }

    #[test]
    fn grid_shift_wraps() {
        let g = CellGrid::new(4, [4, 1, 4]);
        let p = g.index([3, 0, 0]);
        assert_eq!(g.coords(g.shift(p, 0, true)), [0, 0, 0]);
        assert_eq!(g.shift(p, 1, true), p);
        assert_eq!(g.coords(g.shift(p, 2, false)), [3, 0, 3]);
    }
}
