//! Readers and writers for every output file.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{ConvergenceRow, HarnessError};
use crate::diagnostics::DiagnosticsRecord;
use crate::evolution::State;
use crate::field::{Grid, ScalarField};

pub const SWEEP_COLUMNS: [&str; 6] =
    ["nu", "l2_m_minus_n", "l2_n_minus_n0", "l2_gradm_minus_gradn0", "dissipation_integral", "sqrt_nu_gradm_sup"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

pub fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// 17 significant digits, round-trip exact.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_table<'a>(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<f64>> + 'a,
) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    let mut body = header.join(",");
    body.push('\n');
    for row in rows {
        body.push_str(&row.into_iter().map(num).collect::<Vec<_>>().join(","));
        body.push('\n');
    }
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<(), HarnessError> {
    write_table(path, &DiagnosticsRecord::COLUMNS, records.iter().map(|r| r.values().to_vec()))
}

pub fn write_sweep_csv(path: &Path, rows: &[ConvergenceRow]) -> Result<(), HarnessError> {
    write_table(
        path,
        &SWEEP_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.nu,
                r.l2_m_minus_n,
                r.l2_n_minus_n0,
                r.l2_gradm_minus_gradn0,
                r.dissipation_integral,
                r.sqrt_nu_gradm_sup,
            ]
        }),
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    let text = serde_json::to_string_pretty(value).expect("serializable report");
    w.write_all(text.as_bytes()).and_then(|_| w.write_all(b"\n")).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Hex SHA-256 of the canonical config text.
pub fn config_digest(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Writes one snapshot of `state`, returning the files created.
///
/// One-dimensional states go to a CSV with columns `x, n1, n2, m`; planar
/// states to one raw little-endian `f64` file per field (x fastest) with a
/// JSON sidecar.
pub fn write_snapshot(dir: &Path, step: usize, state: &State) -> Result<Vec<PathBuf>, HarnessError> {
    let grid = *state.n1.grid();
    if grid.dim() == 1 {
        let path = dir.join(format!("snapshot_{step:06}.csv"));
        let xs = grid.centers_1d();
        write_table(
            &path,
            &["x", "n1", "n2", "m"],
            (0..grid.len()).map(|k| vec![xs[k], state.n1[k], state.n2[k], state.m[k]]),
        )?;
        return Ok(vec![path]);
    }
    let mut files = Vec::new();
    for (name, field) in [("n1", &state.n1), ("n2", &state.n2), ("m", &state.m)] {
        let bin = dir.join(format!("snapshot_{step:06}_{name}.bin"));
        write_raw(&bin, field)?;
        let sidecar = dir.join(format!("snapshot_{step:06}_{name}.json"));
        write_json(&sidecar, &snapshot_sidecar(&grid, state.t, step, name))?;
        files.push(bin);
        files.push(sidecar);
    }
    Ok(files)
}

fn write_raw(path: &Path, field: &ScalarField) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    let bytes: Vec<u8> = field.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(io_err(path))
}

fn snapshot_sidecar(grid: &Grid, t: f64, step: usize, field: &str) -> serde_json::Value {
    json!({
        "field": field,
        "time": t,
        "step": step,
        "grid": {
            "dimension": grid.dim(),
            "half_length": grid.half_length(),
            "cells_per_axis": grid.cells_per_axis(),
            "boundary": grid.boundary().as_str(),
        },
        "dtype": "float64",
        "byte_order": "little",
        "layout": "row-major, x fastest",
    })
}

/// Reads back a raw snapshot written by [`write_snapshot`].
pub fn read_raw(path: &Path, grid: &Grid) -> Result<ScalarField, HarnessError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != 8 * grid.len() {
        return Err(HarnessError::Format(format!(
            "{}: expected {} bytes, found {}",
            path.display(),
            8 * grid.len(),
            bytes.len()
        )));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(ScalarField::from_vec(grid, values).expect("length checked"))
}

/// Parses a diagnostics CSV back into records.
pub fn read_diagnostics_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != DiagnosticsRecord::COLUMNS.join(",") {
        return Err(HarnessError::Format(format!("{}: unexpected header {header:?}", path.display())));
    }
    lines
        .map(|line| {
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| HarnessError::Format(format!("{}: {e}", path.display())))?;
            if v.len() != DiagnosticsRecord::COLUMNS.len() {
                return Err(HarnessError::Format(format!("{}: row has {} columns", path.display(), v.len())));
            }
            Ok(DiagnosticsRecord {
                t: v[0],
                mass1: v[1],
                mass2: v[2],
                mass_total: v[3],
                linf_total: v[4],
                second_moment: v[5],
                entropy: v[6],
                dissipation_rate: v[7],
                dissipation_kinetic: v[8],
                sqrt_nu_grad_m_l2: v[9],
                overlap: v[10],
                clipped_mass_cum: v[11],
            })
        })
        .collect()
}
