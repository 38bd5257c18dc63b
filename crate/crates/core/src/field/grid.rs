use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("unsupported dimension {0} (expected 1 or 2)")]
    Dimension(usize),
    #[error("half_length must be positive and finite, got {0}")]
    HalfLength(f64),
    #[error("cells_per_axis must be at least 2, got {0}")]
    Cells(usize),
    #[error("grid mismatch: {0} vs {1}")]
    Mismatch(String, String),
}

/// Boundary treatment at the edges of the truncated box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    NoFlux,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Periodic => "periodic",
            Boundary::NoFlux => "noflux",
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Boundary {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "noflux" => Ok(Boundary::NoFlux),
            other => Err(format!("unknown boundary '{other}' (expected periodic or noflux)")),
        }
    }
}

/// Uniform cell-centered mesh on `[-L, L]^d`.
///
/// Cells are stored row-major with x fastest: the flat index of cell
/// `(i, j)` is `i + N * j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_length: f64,
    cells: usize,
    boundary: Boundary,
}

impl Grid {
    pub fn new(dim: usize, half_length: f64, cells_per_axis: usize, boundary: Boundary) -> Result<Self, GridError> {
        if !(1..=2).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(GridError::HalfLength(half_length));
        }
        if cells_per_axis < 2 {
            return Err(GridError::Cells(cells_per_axis));
        }
        Ok(Self { dim, half_length, cells: cells_per_axis, boundary })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    #[inline]
    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    #[inline]
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        2.0 * self.half_length / self.cells as f64
    }

    /// Volume of one cell, `dx^d`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Measure of the whole box.
    pub fn measure(&self) -> f64 {
        (2.0 * self.half_length).powi(self.dim as i32)
    }

    /// Center coordinate of index `j` along any axis.
    #[inline]
    pub fn center_1d(&self, j: usize) -> f64 {
        -self.half_length + (j as f64 + 0.5) * self.dx()
    }

    /// Per-axis indices of a flat cell index.
    #[inline]
    pub fn unravel(&self, k: usize) -> [usize; 2] {
        if self.dim == 1 {
            [k, 0]
        } else {
            [k % self.cells, k / self.cells]
        }
    }

    #[inline]
    pub fn ravel(&self, idx: [usize; 2]) -> usize {
        idx[0] + self.cells * idx[1]
    }

    /// Cell center; unused trailing coordinates are zero.
    pub fn center(&self, k: usize) -> [f64; 2] {
        let [i, j] = self.unravel(k);
        if self.dim == 1 {
            [self.center_1d(i), 0.0]
        } else {
            [self.center_1d(i), self.center_1d(j)]
        }
    }

    pub fn centers_1d(&self) -> Vec<f64> {
        (0..self.cells).map(|j| self.center_1d(j)).collect()
    }

    /// Neighbor of `k` one step in the positive direction of `axis`.
    /// `None` when that step would leave a no-flux box.
    #[inline]
    pub fn plus(&self, k: usize, axis: usize) -> Option<usize> {
        let mut idx = self.unravel(k);
        if idx[axis] + 1 < self.cells {
            idx[axis] += 1;
        } else if self.boundary == Boundary::Periodic {
            idx[axis] = 0;
        } else {
            return None;
        }
        Some(self.ravel(idx))
    }

    /// Neighbor of `k` one step in the negative direction of `axis`.
    #[inline]
    pub fn minus(&self, k: usize, axis: usize) -> Option<usize> {
        let mut idx = self.unravel(k);
        if idx[axis] > 0 {
            idx[axis] -= 1;
        } else if self.boundary == Boundary::Periodic {
            idx[axis] = self.cells - 1;
        } else {
            return None;
        }
        Some(self.ravel(idx))
    }

    /// True when the face on the positive side of cell `k` along `axis`
    /// carries flux (interior or periodic-wrapped).
    #[inline]
    pub fn face_active(&self, k: usize, axis: usize) -> bool {
        self.boundary == Boundary::Periodic || self.unravel(k)[axis] + 1 < self.cells
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<(), GridError> {
        if self == other {
            Ok(())
        } else {
            Err(GridError::Mismatch(self.to_string(), other.to_string()))
        }
    }

    /// Same box and boundary with a different resolution.
    pub fn with_cells(&self, cells_per_axis: usize) -> Result<Self, GridError> {
        Grid::new(self.dim, self.half_length, cells_per_axis, self.boundary)
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D [-{}, {}] N={} {}", self.dim, self.half_length, self.half_length, self.cells, self.boundary)
    }
}
