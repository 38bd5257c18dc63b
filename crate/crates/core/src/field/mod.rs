//! Structured grids with the discrete vector calculus every other module
//! is built on.

mod grid;
mod ops;
mod tensor;

pub use grid::{Boundary, Grid, GridError};
pub use ops::{divergence, gradient, integrate, FaceField, ScalarField, SecondMomentWeight};
pub use tensor::{
    apply_tensor, validate_tensor, CellTensors, FaceTensors, Mat2, TensorError, TensorField, TensorPreset,
    ValidationReport,
};
