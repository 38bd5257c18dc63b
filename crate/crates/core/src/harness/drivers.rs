//! Experiment drivers built from repeated single runs.

use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::{OutputFormat, SimConfig};
use super::fit::{fit_rate, RateFit};
use super::io;
use super::{ConvergenceRow, ConvergenceTable, HarnessError, SweepFits};
use crate::brinkman::{brinkman_consistency, BrinkmanOperator};
use crate::diagnostics::{
    face_l2_distance, l2_distance, AuditSample, Diagnostics, DiagnosticsRecord, EntropyAudit, Recorder, Trajectory,
};
use crate::evolution::{Evolution, Observer, RunSummary, State, StepInfo};
use crate::field::{gradient, validate_tensor, Grid, ScalarField, ValidationReport};

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: State,
    pub records: Vec<DiagnosticsRecord>,
    pub samples: Vec<AuditSample>,
    pub audit: EntropyAudit,
    pub steps: usize,
    pub clip_warnings: usize,
    pub bound_violations: usize,
    pub max_total: f64,
    /// `sup_x |A|` at the initial time, for moment envelopes.
    pub tensor_sup: f64,
}

impl RunOutput {
    pub fn trajectory(&self) -> Trajectory {
        Trajectory { records: self.records.clone(), samples: self.samples.clone() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationOutcome {
    pub tensor: ValidationReport,
    pub initial_max_total: f64,
    pub nbar: f64,
    /// Brinkman consistency of the initial potential, when `ν > 0`.
    pub initial_consistency: Option<f64>,
    pub pass: bool,
}

/// Checks the config and the initial data without time stepping.
pub fn validate(cfg: &SimConfig) -> Result<ValidationOutcome, HarnessError> {
    cfg.validate()?;
    let grid = cfg.build_grid()?;
    let tensor = cfg.build_tensor(&grid)?;
    let times: Vec<f64> = (0..=10).map(|k| cfg.time.t_final * k as f64 / 10.0).collect();
    let report = validate_tensor(&tensor, &times);
    let laws = cfg.laws();
    let evo = Evolution::new(&tensor, laws, cfg.stepper(), cfg.solver)?;
    let (n1, n2) = cfg.initial_fields(&grid);
    let state = evo.initial_state(n1, n2, 0.0)?;
    let total = state.total();
    let initial_consistency = if cfg.model.nu > 0.0 {
        let op =
            BrinkmanOperator::new(&tensor, cfg.model.nu, 0.0).map_err(|e| HarnessError::Validation(e.to_string()))?;
        Some(brinkman_consistency(&op, &state.m, &total).map_err(|e| HarnessError::Validation(e.to_string()))?)
    } else {
        None
    };
    let initial_max_total = total.max();
    let pass = report.pass && initial_max_total <= laws.nbar() * (1.0 + cfg.model.bound_tolerance);
    Ok(ValidationOutcome { tensor: report, initial_max_total, nbar: laws.nbar(), initial_consistency, pass })
}

/// Writes snapshots at step 0, every `every` steps (if nonzero), and at the end.
struct SnapshotWriter {
    dir: PathBuf,
    every: usize,
    error: Option<HarnessError>,
}

impl Observer for SnapshotWriter {
    fn observe(&mut self, info: &StepInfo, state: &State) {
        let due = info.step == 0 || info.is_final || (self.every > 0 && info.step.is_multiple_of(self.every));
        if due && self.error.is_none() {
            if let Err(e) = io::write_snapshot(&self.dir, info.step, state) {
                self.error = Some(e);
            }
        }
    }
}

/// Runs `cfg` with extra observers; writes outputs under `out` if given.
fn simulate(cfg: &SimConfig, out: Option<&Path>, extra: &mut [&mut dyn Observer]) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let grid = cfg.build_grid()?;
    let tensor = cfg.build_tensor(&grid)?;
    let laws = cfg.laws();
    let evo = Evolution::new(&tensor, laws, cfg.stepper(), cfg.solver)?;
    let (n1, n2) = cfg.initial_fields(&grid);
    let initial = evo.initial_state(n1, n2, 0.0)?;

    let mut recorder = Recorder::new(Diagnostics::new(&tensor, laws, cfg.model.nu), cfg.time.record_every_steps, true);
    let mut snapshots = match out {
        Some(dir) if cfg.output.wants(OutputFormat::Snapshots) => {
            Some(SnapshotWriter { dir: dir.join("snapshots"), every: cfg.output.snapshot_every_steps, error: None })
        }
        _ => None,
    };
    let summary: RunSummary = {
        let mut observers: Vec<&mut dyn Observer> = vec![&mut recorder];
        if let Some(s) = snapshots.as_mut() {
            observers.push(s);
        }
        for o in extra.iter_mut() {
            observers.push(&mut **o);
        }
        evo.run(initial, cfg.time.t_final, &mut observers)?
    };
    if let Some(SnapshotWriter { error: Some(e), .. }) = snapshots {
        return Err(e);
    }
    let trajectory = recorder.finish()?;
    let audit = trajectory.audit()?;
    let output = RunOutput {
        state: summary.state,
        records: trajectory.records,
        samples: trajectory.samples,
        audit,
        steps: summary.steps,
        clip_warnings: summary.clip_warnings,
        bound_violations: summary.bound_violations,
        max_total: summary.max_total,
        tensor_sup: tensor.sup_norm(0.0),
    };
    if let Some(dir) = out {
        write_run(cfg, dir, &output)?;
    }
    Ok(output)
}

fn write_run(cfg: &SimConfig, dir: &Path, run: &RunOutput) -> Result<(), HarnessError> {
    io::ensure_dir(dir)?;
    let canonical = cfg.serialize();
    std::fs::write(dir.join("config.cfg"), &canonical)
        .map_err(|source| HarnessError::Io { path: dir.join("config.cfg"), source })?;
    if cfg.output.wants(OutputFormat::Diagnostics) {
        io::write_diagnostics_csv(&dir.join("diagnostics.csv"), &run.records)?;
    }
    if cfg.output.wants(OutputFormat::Audit) {
        let report = json!({
            "config_digest": io::config_digest(&canonical),
            "audit": run.audit,
            "steps": run.steps,
            "t_final": run.state.t,
            "clip_warnings": run.clip_warnings,
            "bound_violations": run.bound_violations,
            "max_total": run.max_total,
            "clipped_mass": run.state.clipped,
        });
        io::write_json(&dir.join("audit.json"), &report)?;
    }
    Ok(())
}

/// One run, written to the configured output directory.
pub fn run_single(cfg: &SimConfig) -> Result<RunOutput, HarnessError> {
    run_single_to(cfg, Some(&cfg.output.directory))
}

/// One run, written to `out` (nothing is written for `None`).
pub fn run_single_to(cfg: &SimConfig, out: Option<&Path>) -> Result<RunOutput, HarnessError> {
    info!("run: {} cells, nu = {}, T = {}", cfg.grid.cells_per_axis, cfg.model.nu, cfg.time.t_final);
    simulate(cfg, out, &mut [])
}

/// Averages `fine` onto `coarse`; the cell counts must nest.
pub fn restrict(fine: &ScalarField, coarse: &Grid) -> Result<ScalarField, HarnessError> {
    let fg = fine.grid();
    let (nf, nc) = (fg.cells_per_axis(), coarse.cells_per_axis());
    if fg.dim() != coarse.dim() || fg.half_length() != coarse.half_length() || nc == 0 || nf % nc != 0 {
        return Err(HarnessError::Request(format!("cannot restrict {fg} onto {coarse}")));
    }
    let r = nf / nc;
    let d = coarse.dim();
    let mut out = vec![0.0; coarse.len()];
    for k in 0..fg.len() {
        let [i, j] = fg.unravel(k);
        out[coarse.ravel([i / r, j / r])] += fine[k];
    }
    let scale = 1.0 / (r.pow(d as u32) as f64);
    Ok(ScalarField::from_vec(coarse, out.into_iter().map(|v| v * scale).collect()).expect("sized to grid"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    /// Common sample times `T k / samples`, `k = 0..=samples`.
    pub samples: usize,
    /// Darcy reference on `reference_refinement` times more cells per axis.
    pub reference_refinement: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { samples: 64, reference_refinement: 1 }
    }
}

/// Captures `(t, n, m)` at prescribed times, which the integrator lands on.
struct Sampler {
    times: Vec<f64>,
    frames: Vec<(f64, ScalarField, ScalarField)>,
}

impl Sampler {
    fn new(t_final: f64, samples: usize) -> Self {
        let times = (0..=samples).map(|k| t_final * k as f64 / samples as f64).collect();
        Self { times, frames: Vec::new() }
    }
}

impl Observer for Sampler {
    fn observe(&mut self, info: &StepInfo, state: &State) {
        if info.step == 0 || info.is_final || self.times.contains(&state.t) {
            if self.frames.last().is_some_and(|f| f.0 == state.t) {
                return;
            }
            self.frames.push((state.t, state.total(), state.m.clone()));
        }
    }

    fn landing_times(&self) -> Vec<f64> {
        self.times.clone()
    }
}

struct Member {
    nu: f64,
    run: RunOutput,
    frames: Vec<(f64, ScalarField, ScalarField)>,
}

fn trapezoid(ts: &[f64], ys: &[f64]) -> f64 {
    ts.windows(2).zip(ys.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum()
}

fn member_label(nu: f64) -> String {
    if nu == 0.0 {
        "darcy".into()
    } else {
        format!("nu_{nu:e}")
    }
}

fn sweep_row(member: &Member, reference: &[(f64, ScalarField, ScalarField)]) -> Result<ConvergenceRow, HarnessError> {
    if member.frames.len() != reference.len() || member.frames.iter().zip(reference).any(|(a, b)| a.0 != b.0) {
        return Err(HarnessError::Request(format!(
            "{}: sample times differ from the reference run",
            member_label(member.nu)
        )));
    }
    let ts: Vec<f64> = reference.iter().map(|f| f.0).collect();
    let mut dm = Vec::with_capacity(ts.len());
    let mut dn = Vec::with_capacity(ts.len());
    let mut dg = Vec::with_capacity(ts.len());
    for ((_, n, m), (_, n0, _)) in member.frames.iter().zip(reference) {
        dm.push(l2_distance(m, n)?.powi(2));
        dn.push(l2_distance(n, n0)?.powi(2));
        dg.push(face_l2_distance(&gradient(m), &gradient(n0))?.powi(2));
    }
    let rec_t: Vec<f64> = member.run.records.iter().map(|r| r.t).collect();
    let column = |f: fn(&DiagnosticsRecord) -> f64| member.run.records.iter().map(f).collect::<Vec<f64>>();
    Ok(ConvergenceRow {
        nu: member.nu,
        l2_m_minus_n: trapezoid(&ts, &dm).sqrt(),
        l2_n_minus_n0: trapezoid(&ts, &dn).sqrt(),
        l2_gradm_minus_gradn0: trapezoid(&ts, &dg).sqrt(),
        dissipation_integral: trapezoid(&rec_t, &column(|r| r.dissipation_rate)),
        dissipation_kinetic_integral: trapezoid(&rec_t, &column(|r| r.dissipation_kinetic)),
        sqrt_nu_gradm_sup: member.run.records.iter().map(|r| r.sqrt_nu_grad_m_l2).fold(0.0, f64::max),
        steps: member.run.steps,
    })
}

fn fit_column(rows: &[ConvergenceRow], f: impl Fn(&ConvergenceRow) -> f64) -> Option<RateFit> {
    let points: Vec<(f64, f64)> = rows.iter().filter(|r| r.nu > 0.0).map(|r| (r.nu, f(r))).collect();
    fit_rate(&points).ok()
}

fn assemble(mut rows: Vec<ConvergenceRow>, opts: &SweepOptions, reference_cells: usize) -> ConvergenceTable {
    rows.sort_by(|a, b| b.nu.total_cmp(&a.nu));
    let fits = SweepFits {
        l2_m_minus_n: fit_column(&rows, |r| r.l2_m_minus_n),
        l2_n_minus_n0: fit_column(&rows, |r| r.l2_n_minus_n0),
        l2_gradm_minus_gradn0: fit_column(&rows, |r| r.l2_gradm_minus_gradn0),
    };
    ConvergenceTable { rows, fits, sample_times: opts.samples + 1, reference_cells }
}

fn write_sweep(cfg: &SimConfig, dir: &Path, table: &ConvergenceTable, nus: &[f64]) -> Result<(), HarnessError> {
    io::write_sweep_csv(&dir.join("sweep.csv"), &table.rows)?;
    let summary = json!({
        "config_digest": io::config_digest(&cfg.serialize()),
        "nu": nus,
        "fits": table.fits,
        "sample_times": table.sample_times,
        "reference_cells": table.reference_cells,
        "rows": table.rows,
    });
    io::write_json(&dir.join("sweep_summary.json"), &summary)
}

/// Runs every `ν` plus a Darcy reference in parallel and tabulates the
/// time-integrated distances at common sample times.
pub fn run_sweep(
    cfg: &SimConfig,
    nus: &[f64],
    opts: &SweepOptions,
    out: Option<&Path>,
) -> Result<ConvergenceTable, HarnessError> {
    run_sweep_detailed(cfg, nus, opts, out).map(|(table, _)| table)
}

/// [`run_sweep`], also returning every member run (reference first, `ν = 0`).
pub fn run_sweep_detailed(
    cfg: &SimConfig,
    nus: &[f64],
    opts: &SweepOptions,
    out: Option<&Path>,
) -> Result<(ConvergenceTable, Vec<(f64, RunOutput)>), HarnessError> {
    if nus.is_empty() || nus.iter().any(|&nu| !(nu.is_finite() && nu > 0.0)) {
        return Err(HarnessError::Request(format!("viscosities must be positive, got {nus:?}")));
    }
    if opts.samples == 0 || opts.reference_refinement == 0 {
        return Err(HarnessError::Request("samples and reference_refinement must be positive".into()));
    }
    let base = cfg.with_nu(0.0);
    base.validate()?;
    let grid = base.build_grid()?;
    let reference_cells = cfg.grid.cells_per_axis * opts.reference_refinement;

    let mut jobs: Vec<(f64, SimConfig)> = vec![(0.0, base.with_cells(reference_cells))];
    jobs.extend(nus.iter().map(|&nu| (nu, cfg.with_nu(nu))));
    let results: Vec<Result<Member, HarnessError>> = jobs
        .par_iter()
        .map(|(nu, job)| {
            let label = member_label(*nu);
            let dir = out.map(|d| d.join(&label));
            let mut sampler = Sampler::new(job.time.t_final, opts.samples);
            let run = simulate(job, dir.as_deref(), &mut [&mut sampler])
                .map_err(|e| HarnessError::Member { label, source: Box::new(e) })?;
            Ok(Member { nu: *nu, run, frames: sampler.frames })
        })
        .collect();

    let mut results = results.into_iter();
    let mut reference = results.next().expect("reference job")?;
    if opts.reference_refinement > 1 {
        for frame in reference.frames.iter_mut() {
            frame.1 = restrict(&frame.1, &grid)?;
            frame.2 = restrict(&frame.2, &grid)?;
        }
    }
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut runs = Vec::new();
    for result in results {
        match result.and_then(|m| sweep_row(&m, &reference.frames).map(|row| (row, m))) {
            Ok((row, m)) => {
                rows.push(row);
                runs.push((m.nu, m.run));
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    reference.nu = 0.0;
    rows.push(sweep_row(&reference, &reference.frames)?);
    let table = assemble(rows, opts, reference_cells);
    if let Some(dir) = out {
        write_sweep(cfg, dir, &table, nus)?;
    }
    if !failures.is_empty() {
        return Err(HarnessError::SweepAborted {
            failed: failures.len(),
            completed: table.viscous_rows().count(),
            first: failures.swap_remove(0),
        });
    }
    runs.insert(0, (0.0, reference.run));
    Ok((table, runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementRow {
    pub cells: usize,
    pub dx: f64,
    pub steps: usize,
    /// Distance at `T` to the next finer run, averaged onto this grid.
    pub self_error: Option<f64>,
    pub audit_residual: f64,
    pub overlap_final: f64,
    pub mass_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport {
    pub rows: Vec<RefinementRow>,
    pub self_error_fit: Option<RateFit>,
    pub audit_residual_fit: Option<RateFit>,
    pub overlap_fit: Option<RateFit>,
}

fn check_nesting(cells: &[usize]) -> Result<(), HarnessError> {
    if cells.is_empty() {
        return Err(HarnessError::Request("no resolutions given".into()));
    }
    for w in cells.windows(2) {
        if w[0] == 0 || w[1] < w[0] || w[1] % w[0] != 0 {
            return Err(HarnessError::Request(format!(
                "resolutions must ascend with each dividing the next, got {cells:?}"
            )));
        }
    }
    Ok(())
}

/// Runs `cfg` at each resolution in parallel and measures self-convergence.
pub fn run_refinement(cfg: &SimConfig, cells: &[usize], out: Option<&Path>) -> Result<RefinementReport, HarnessError> {
    run_refinement_detailed(cfg, cells, out).map(|(report, _)| report)
}

/// [`run_refinement`], also returning the run at each resolution.
pub fn run_refinement_detailed(
    cfg: &SimConfig,
    cells: &[usize],
    out: Option<&Path>,
) -> Result<(RefinementReport, Vec<RunOutput>), HarnessError> {
    check_nesting(cells)?;
    let runs: Vec<RunOutput> = cells
        .par_iter()
        .map(|&n| {
            let label = format!("cells_{n}");
            let dir = out.map(|d| d.join(&label));
            simulate(&cfg.with_cells(n), dir.as_deref(), &mut [])
                .map_err(|e| HarnessError::Member { label, source: Box::new(e) })
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(runs.len());
    for (k, run) in runs.iter().enumerate() {
        let grid = *run.state.n1.grid();
        let self_error = match runs.get(k + 1) {
            Some(fine) => {
                let e1 = l2_distance(&run.state.n1, &restrict(&fine.state.n1, &grid)?)?;
                let e2 = l2_distance(&run.state.n2, &restrict(&fine.state.n2, &grid)?)?;
                Some(e1.hypot(e2))
            }
            None => None,
        };
        let last = run.records.last().expect("final record");
        rows.push(RefinementRow {
            cells: cells[k],
            dx: grid.dx(),
            steps: run.steps,
            self_error,
            audit_residual: run.audit.residual,
            overlap_final: last.overlap,
            mass_final: last.mass_total,
        });
    }
    let fit = |f: &dyn Fn(&RefinementRow) -> Option<f64>| {
        let points: Vec<(f64, f64)> = rows.iter().filter_map(|r| f(r).map(|e| (r.dx, e))).collect();
        fit_rate(&points).ok()
    };
    let report = RefinementReport {
        self_error_fit: fit(&|r| r.self_error),
        audit_residual_fit: fit(&|r| Some(r.audit_residual.abs())),
        overlap_fit: fit(&|r| Some(r.overlap_final)),
        rows,
    };
    if let Some(dir) = out {
        write_refinement(cfg, dir, &report)?;
    }
    Ok((report, runs))
}

fn write_refinement(cfg: &SimConfig, dir: &Path, report: &RefinementReport) -> Result<(), HarnessError> {
    io::ensure_dir(dir)?;
    let path = dir.join("refinement.csv");
    let mut text = String::from("cells,dx,self_error,audit_residual,overlap_final\n");
    for r in &report.rows {
        let err = r.self_error.map(|e| format!("{e:.16e}")).unwrap_or_default();
        text.push_str(&format!(
            "{},{:.16e},{},{:.16e},{:.16e}\n",
            r.cells, r.dx, err, r.audit_residual, r.overlap_final
        ));
    }
    std::fs::write(&path, text).map_err(|source| HarnessError::Io { path, source })?;
    let summary = json!({
        "config_digest": io::config_digest(&cfg.serialize()),
        "report": report,
    });
    io::write_json(&dir.join("refinement_summary.json"), &summary)
}
