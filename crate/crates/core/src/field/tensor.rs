//! The anisotropy tensor `A(x, t)` and its action on face gradients.
//!
//! Faces see the arithmetic mean of the two adjacent cell tensors. In two
//! dimensions the tangential gradient at a face is the mean of the four
//! nearest parallel face differences (zero where those faces are walls).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grid::Grid;
use super::ops::FaceField;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor parameter {name} = {value} is invalid: {reason}")]
    Parameter { name: &'static str, value: f64, reason: &'static str },
    #[error("cell tensor list has {got} entries, grid has {expected} cells")]
    CellCount { got: usize, expected: usize },
    #[error("ellipticity floor must be positive, got {0}")]
    Floor(f64),
}

/// Built-in tensor families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TensorPreset {
    Identity,
    /// `diag(a1, a2)`; only `a1` is used in one dimension.
    Diagonal {
        a: [f64; 2],
    },
    /// `R(angle) diag(a1, a2) R(angle)^T`, constant in space and time.
    Rotation {
        a: [f64; 2],
        angle: f64,
    },
    /// `diag(a_i (1 + amplitude sin(wavenumber x_i) cos(frequency t)))`.
    Smooth {
        a: [f64; 2],
        amplitude: f64,
        wavenumber: f64,
        frequency: f64,
    },
    /// Explicit time-independent per-cell matrices.
    Cells(Vec<Mat2>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid,
    preset: TensorPreset,
    floor: f64,
}

fn positive(name: &'static str, value: f64) -> Result<(), TensorError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(TensorError::Parameter { name, value, reason: "must be positive and finite" })
    }
}

fn sym_eigs(m: &Mat2) -> (f64, f64) {
    let off = 0.5 * (m[0][1] + m[1][0]);
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_gap = (0.25 * (m[0][0] - m[1][1]).powi(2) + off * off).sqrt();
    (mean - half_gap, mean + half_gap)
}

impl TensorField {
    /// Builds the field with the analytic ellipticity constant of the preset
    /// (for `Cells`, the smallest eigenvalue of the symmetric parts).
    pub fn new(grid: &Grid, preset: TensorPreset) -> Result<Self, TensorError> {
        let d = grid.dim();
        let floor = match &preset {
            TensorPreset::Identity => 1.0,
            TensorPreset::Diagonal { a } | TensorPreset::Rotation { a, .. } => {
                positive("a1", a[0])?;
                if d == 2 {
                    positive("a2", a[1])?;
                }
                if let TensorPreset::Rotation { angle, .. } = &preset {
                    if !angle.is_finite() {
                        return Err(TensorError::Parameter { name: "angle", value: *angle, reason: "must be finite" });
                    }
                }
                a[..d].iter().copied().fold(f64::INFINITY, f64::min)
            }
            TensorPreset::Smooth { a, amplitude, wavenumber, frequency } => {
                positive("a1", a[0])?;
                if d == 2 {
                    positive("a2", a[1])?;
                }
                if !(amplitude.is_finite() && amplitude.abs() < 1.0) {
                    return Err(TensorError::Parameter {
                        name: "amplitude",
                        value: *amplitude,
                        reason: "must satisfy |amplitude| < 1",
                    });
                }
                for (name, v) in [("wavenumber", *wavenumber), ("frequency", *frequency)] {
                    if !v.is_finite() {
                        return Err(TensorError::Parameter { name, value: v, reason: "must be finite" });
                    }
                }
                a[..d].iter().copied().fold(f64::INFINITY, f64::min) * (1.0 - amplitude.abs())
            }
            TensorPreset::Cells(cells) => {
                if cells.len() != grid.len() {
                    return Err(TensorError::CellCount { got: cells.len(), expected: grid.len() });
                }
                cells.iter().map(|m| if d == 1 { m[0][0] } else { sym_eigs(m).0 }).fold(f64::INFINITY, f64::min)
            }
        };
        Ok(Self { grid: *grid, preset, floor })
    }

    pub fn identity(grid: &Grid) -> Self {
        Self { grid: *grid, preset: TensorPreset::Identity, floor: 1.0 }
    }

    /// Overrides the ellipticity constant that validation checks against.
    pub fn with_floor(mut self, floor: f64) -> Result<Self, TensorError> {
        if !(floor.is_finite() && floor > 0.0) {
            return Err(TensorError::Floor(floor));
        }
        self.floor = floor;
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn preset(&self) -> &TensorPreset {
        &self.preset
    }

    pub fn ellipticity_floor(&self) -> f64 {
        self.floor
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(&self.preset, TensorPreset::Smooth { amplitude, frequency, .. } if *amplitude != 0.0 && *frequency != 0.0)
    }

    /// Tensor in cell `k` at time `t`. In one dimension only `[0][0]` is meaningful.
    pub fn at(&self, k: usize, t: f64) -> Mat2 {
        match &self.preset {
            TensorPreset::Identity => [[1.0, 0.0], [0.0, 1.0]],
            TensorPreset::Diagonal { a } => [[a[0], 0.0], [0.0, a[1]]],
            TensorPreset::Rotation { a, angle } => {
                if self.grid.dim() == 1 {
                    return [[a[0], 0.0], [0.0, 0.0]];
                }
                let (s, c) = angle.sin_cos();
                let xx = c * c * a[0] + s * s * a[1];
                let yy = s * s * a[0] + c * c * a[1];
                let xy = c * s * (a[0] - a[1]);
                [[xx, xy], [xy, yy]]
            }
            TensorPreset::Smooth { a, amplitude, wavenumber, frequency } => {
                let x = self.grid.center(k);
                let phase = (frequency * t).cos();
                let f = |i: usize| a[i] * (1.0 + amplitude * (wavenumber * x[i]).sin() * phase);
                [[f(0), 0.0], [0.0, f(1)]]
            }
            TensorPreset::Cells(cells) => cells[k],
        }
    }

    pub fn sample(&self, t: f64) -> CellTensors {
        CellTensors { grid: self.grid, cells: (0..self.grid.len()).map(|k| self.at(k, t)).collect() }
    }

    /// Largest spectral norm of the symmetric part over cells at time `t`.
    pub fn sup_norm(&self, t: f64) -> f64 {
        self.sample(t).sup_norm()
    }
}

/// Tensor values frozen at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CellTensors {
    grid: Grid,
    cells: Vec<Mat2>,
}

impl CellTensors {
    pub fn cells(&self) -> &[Mat2] {
        &self.cells
    }

    pub fn sup_norm(&self) -> f64 {
        let d = self.grid.dim();
        self.cells
            .iter()
            .map(|m| {
                if d == 1 {
                    m[0][0].abs()
                } else {
                    let (lo, hi) = sym_eigs(m);
                    lo.abs().max(hi.abs())
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn face_coefficients(&self) -> FaceTensors {
        FaceTensors::new(self)
    }
}

/// Face-averaged tensor entries: for each axis the normal coefficient
/// `A_aa` and the cross coefficient `A_ab` on every face slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTensors {
    grid: Grid,
    normal: Vec<Vec<f64>>,
    cross: Vec<Vec<f64>>,
}

impl FaceTensors {
    pub fn new(cells: &CellTensors) -> Self {
        let grid = cells.grid;
        let d = grid.dim();
        let mut normal = vec![vec![0.0; grid.len()]; d];
        let mut cross = vec![vec![0.0; grid.len()]; d];
        for axis in 0..d {
            let other = 1 - axis;
            for k in 0..grid.len() {
                if let Some(r) = grid.plus(k, axis) {
                    let (a, b) = (&cells.cells[k], &cells.cells[r]);
                    normal[axis][k] = 0.5 * (a[axis][axis] + b[axis][axis]);
                    if d == 2 {
                        cross[axis][k] = 0.5 * (a[axis][other] + b[axis][other]);
                    }
                }
            }
        }
        Self { grid, normal, cross }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn normal(&self, axis: usize) -> &[f64] {
        &self.normal[axis]
    }

    pub fn cross(&self, axis: usize) -> &[f64] {
        &self.cross[axis]
    }

    /// Mean of the four `axis`-tangential face values around face `(axis, k)`.
    #[inline]
    pub(crate) fn tangential(&self, g: &FaceField, axis: usize, k: usize) -> f64 {
        let grid = &self.grid;
        let other = 1 - axis;
        let comp = g.axis(other);
        let Some(r) = grid.plus(k, axis) else { return 0.0 };
        let below = |c: usize| grid.minus(c, other).map_or(0.0, |b| comp[b]);
        0.25 * (comp[k] + below(k) + comp[r] + below(r))
    }

    /// Face-normal component of `A g`.
    pub fn apply(&self, g: &FaceField) -> FaceField {
        debug_assert_eq!(&self.grid, g.grid());
        let d = self.grid.dim();
        let mut out = FaceField::zeros(&self.grid);
        for axis in 0..d {
            for k in 0..self.grid.len() {
                let mut v = self.normal[axis][k] * g.get(axis, k);
                if d == 2 && self.cross[axis][k] != 0.0 {
                    v += self.cross[axis][k] * self.tangential(g, axis, k);
                }
                out.axis_mut(axis)[k] = v;
            }
        }
        out
    }
}

/// Face-normal component of `A(t) g`.
pub fn apply_tensor(tensor: &TensorField, g: &FaceField, t: f64) -> FaceField {
    tensor.sample(t).face_coefficients().apply(g)
}

/// Outcome of checking symmetry and ellipticity over cells and sample times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub max_asymmetry: f64,
    /// Cell and time of the largest asymmetry, when nonzero.
    pub asymmetric_at: Option<(usize, f64)>,
    pub min_eigenvalue: f64,
    pub min_eigenvalue_at: (usize, f64),
    pub sup_norm: f64,
    pub ellipticity_floor: f64,
    pub pass: bool,
}

pub fn validate_tensor(tensor: &TensorField, sample_times: &[f64]) -> ValidationReport {
    let d = tensor.grid.dim();
    let times: Vec<f64> = if sample_times.is_empty() { vec![0.0] } else { sample_times.to_vec() };
    let mut max_asym = 0.0;
    let mut asym_at = None;
    let mut min_eig = f64::INFINITY;
    let mut min_at = (0, times[0]);
    let mut sup = 0.0f64;
    let mut finite = true;
    for &t in &times {
        for k in 0..tensor.grid.len() {
            let m = tensor.at(k, t);
            if d == 2 {
                let asym = (m[0][1] - m[1][0]).abs();
                if asym > max_asym {
                    max_asym = asym;
                    asym_at = Some((k, t));
                }
            }
            let (lo, hi) = if d == 1 { (m[0][0], m[0][0]) } else { sym_eigs(&m) };
            finite &= lo.is_finite() && hi.is_finite();
            if lo < min_eig {
                min_eig = lo;
                min_at = (k, t);
            }
            sup = sup.max(lo.abs()).max(hi.abs());
        }
    }
    let pass = finite && max_asym == 0.0 && min_eig >= tensor.floor;
    ValidationReport {
        max_asymmetry: max_asym,
        asymmetric_at: asym_at,
        min_eigenvalue: min_eig,
        min_eigenvalue_at: min_at,
        sup_norm: sup,
        ellipticity_floor: tensor.floor,
        pass,
    }
}
