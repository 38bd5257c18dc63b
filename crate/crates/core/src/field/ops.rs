//! Cell- and face-centered fields and the discrete vector calculus on them.
//!
//! Face storage: for every axis there is one slot per cell, holding the
//! normal component on the face at the positive side of that cell. With a
//! no-flux box the slot of the last cell along the axis is the boundary face
//! and stays zero; the face at the negative wall is implicit and also zero.

use std::ops::{Index, IndexMut};

use super::grid::{Grid, GridError};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self { grid: *grid, values: vec![value; grid.len()] }
    }

    pub fn from_vec(grid: &Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Mismatch(format!("{} values", values.len()), format!("{} cells", grid.len())));
        }
        Ok(Self { grid: *grid, values })
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.center(k))).collect();
        Self { grid: *grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Plain Euclidean norm of the value vector (no cell-volume weight).
    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Discrete L² norm, `sqrt(dx^d Σ f²)`.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, GridError> {
        self.grid.ensure_same(&other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { grid: self.grid, values })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }
}

impl Index<usize> for ScalarField {
    type Output = f64;

    fn index(&self, k: usize) -> &f64 {
        &self.values[k]
    }
}

impl IndexMut<usize> for ScalarField {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.values[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl FaceField {
    pub fn zeros(grid: &Grid) -> Self {
        Self { grid: *grid, comps: vec![vec![0.0; grid.len()]; grid.dim()] }
    }

    /// Builds a face field from per-axis slots; boundary slots of a
    /// no-flux grid are forced to zero.
    pub fn from_components(grid: &Grid, comps: Vec<Vec<f64>>) -> Result<Self, GridError> {
        if comps.len() != grid.dim() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(GridError::Mismatch(
                "face components".into(),
                format!("{} axes x {} slots", grid.dim(), grid.len()),
            ));
        }
        let mut f = Self { grid: *grid, comps };
        f.zero_boundary();
        Ok(f)
    }

    /// Fills every active face from `f(axis, cell)`.
    pub fn from_fn(grid: &Grid, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for axis in 0..grid.dim() {
            for k in 0..grid.len() {
                if grid.face_active(k, axis) {
                    out.comps[axis][k] = f(axis, k);
                }
            }
        }
        out
    }

    fn zero_boundary(&mut self) {
        for axis in 0..self.grid.dim() {
            for k in 0..self.grid.len() {
                if !self.grid.face_active(k, axis) {
                    self.comps[axis][k] = 0.0;
                }
            }
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn axis(&self, axis: usize) -> &[f64] {
        &self.comps[axis]
    }

    #[inline]
    pub fn axis_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.comps[axis]
    }

    #[inline]
    pub fn get(&self, axis: usize, k: usize) -> f64 {
        self.comps[axis][k]
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `dx^d Σ_faces F·G`, the face inner product.
    pub fn inner(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let s: f64 =
            self.comps.iter().zip(&other.comps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()).sum();
        s * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scale(mut self, alpha: f64) -> Self {
        for c in &mut self.comps {
            for v in c.iter_mut() {
                *v *= alpha;
            }
        }
        self
    }
}

/// Face-normal difference quotient `(f_right - f_left) / dx`.
pub fn gradient(f: &ScalarField) -> FaceField {
    let grid = *f.grid();
    let inv_dx = 1.0 / grid.dx();
    let mut out = FaceField::zeros(&grid);
    for axis in 0..grid.dim() {
        let slots = out.axis_mut(axis);
        for (k, slot) in slots.iter_mut().enumerate() {
            if let Some(r) = grid.plus(k, axis) {
                *slot = (f[r] - f[k]) * inv_dx;
            }
        }
    }
    out
}

/// Per cell, `Σ_axes (F_right - F_left) / dx`.
pub fn divergence(flux: &FaceField) -> ScalarField {
    let grid = *flux.grid();
    let inv_dx = 1.0 / grid.dx();
    let mut out = ScalarField::zeros(&grid);
    for axis in 0..grid.dim() {
        let comp = flux.axis(axis);
        for k in 0..grid.len() {
            let right = comp[k];
            let left = grid.minus(k, axis).map_or(0.0, |l| comp[l]);
            out[k] += (right - left) * inv_dx;
        }
    }
    out
}

/// Midpoint quadrature, `dx^d Σ f`.
pub fn integrate(f: &ScalarField) -> f64 {
    f.grid().cell_volume() * f.values().iter().sum::<f64>()
}

/// `|x|²` at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentWeight(ScalarField);

impl SecondMomentWeight {
    pub fn new(grid: &Grid) -> Self {
        Self(ScalarField::from_fn(grid, |x| x[0] * x[0] + x[1] * x[1]))
    }

    pub fn field(&self) -> &ScalarField {
        &self.0
    }
}
