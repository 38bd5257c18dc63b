//! Everything between a config file and the output directory.

mod config;
mod drivers;
mod fit;
pub mod io;

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub use config::{
    parse_config, Anisotropy, Bump, ConfigError, GridConfig, InitialData, ModelConfig, OutputConfig, OutputFormat,
    SimConfig, TimeConfig,
};
pub use drivers::{
    restrict, run_refinement, run_refinement_detailed, run_single, run_single_to, run_sweep, run_sweep_detailed,
    validate, RefinementReport, RefinementRow, RunOutput, SweepOptions, ValidationOutcome,
};
pub use fit::{fit_rate, FitError, RateFit};

use crate::diagnostics::DiagnosticsError;
use crate::evolution::EvolveError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("{label}: {source}")]
    Member {
        label: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("sweep aborted: {} run(s) failed, partial table has {completed} row(s); first failure: {first}", failed)]
    SweepAborted { failed: usize, completed: usize, first: String },
}

impl HarnessError {
    /// Configuration and validation problems, as opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Validation(_) | HarnessError::Request(_) => true,
            HarnessError::Member { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

/// One `ν` of a viscosity sweep, compared against the Darcy reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub nu: f64,
    /// `‖m_ν - n_ν‖` in `L²(0,T;L²)`.
    pub l2_m_minus_n: f64,
    /// `‖n_ν - n₀‖` in `L²(0,T;L²)`.
    pub l2_n_minus_n0: f64,
    /// `‖∇m_ν - ∇n₀‖` in `L²(0,T;L²)` on faces.
    pub l2_gradm_minus_gradn0: f64,
    /// `∫₀ᵀ -∫ n div(A∇m)`.
    pub dissipation_integral: f64,
    /// `∫₀ᵀ ∫ n |∇m|²`.
    pub dissipation_kinetic_integral: f64,
    /// `sup_t √ν ‖∇m‖`.
    pub sqrt_nu_gradm_sup: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepFits {
    pub l2_m_minus_n: Option<RateFit>,
    pub l2_n_minus_n0: Option<RateFit>,
    pub l2_gradm_minus_gradn0: Option<RateFit>,
}

/// Rows sorted by decreasing `ν`; the Darcy reference is the final row with `ν = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub fits: SweepFits,
    pub sample_times: usize,
    pub reference_cells: usize,
}

impl ConvergenceTable {
    /// Rows with `ν > 0`.
    pub fn viscous_rows(&self) -> impl Iterator<Item = &ConvergenceRow> {
        self.rows.iter().filter(|r| r.nu > 0.0)
    }
}
