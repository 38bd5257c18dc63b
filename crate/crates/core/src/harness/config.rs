//! Sectioned plain-text run configuration.
//!
//! ```text
//! # comment
//! [grid]
//! dimension = 1
//! half_length = 4
//! cells_per_axis = 256
//! ```
//!
//! Unknown sections and keys are rejected. `serialize` writes every key, so
//! a parse/serialize/parse round trip is the identity.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::brinkman::{Preconditioner, SolverConfig};
use crate::evolution::{GrowthLaw, GrowthLaws, Mode, StepperConfig};
use crate::field::{Boundary, Grid, ScalarField, TensorField, TensorPreset};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{key}: {message}")]
    Key { key: String, message: String },
}

fn key_err(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Key { key: key.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub dimension: usize,
    pub half_length: f64,
    pub cells_per_axis: usize,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConfig {
    pub t_final: f64,
    pub cfl_safety: f64,
    pub record_every_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Anisotropy {
    Identity,
    Diagonal { a: [f64; 2] },
    Rotation { a: [f64; 2], angle: f64 },
    Smooth { a: [f64; 2], amplitude: f64, wavenumber: f64, frequency: f64 },
}

impl Anisotropy {
    pub fn preset(&self) -> TensorPreset {
        match *self {
            Anisotropy::Identity => TensorPreset::Identity,
            Anisotropy::Diagonal { a } => TensorPreset::Diagonal { a },
            Anisotropy::Rotation { a, angle } => TensorPreset::Rotation { a, angle },
            Anisotropy::Smooth { a, amplitude, wavenumber, frequency } => {
                TensorPreset::Smooth { a, amplitude, wavenumber, frequency }
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Anisotropy::Identity => "identity",
            Anisotropy::Diagonal { .. } => "diagonal",
            Anisotropy::Rotation { .. } => "rotation",
            Anisotropy::Smooth { .. } => "smooth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Zero selects the Darcy limit.
    pub nu: f64,
    pub bound_tolerance: f64,
    pub anisotropy: Anisotropy,
    pub growth: [GrowthLaw; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: [f64; 2],
    pub width: f64,
    pub amplitude: f64,
}

impl Bump {
    fn eval(&self, x: [f64; 2], dim: usize) -> f64 {
        let r2: f64 = (0..dim).map(|a| (x[a] - self.center[a]).powi(2)).sum();
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialData {
    Constant {
        values: [f64; 2],
    },
    /// `amplitude exp(-|x - center|² / (2 width²))` per species.
    Gauss {
        bumps: [Bump; 2],
    },
    /// Species 1 on `[left, interface)`, species 2 on `[interface, right)`
    /// along the first axis; cell averages of the indicator functions.
    Blocks {
        left: f64,
        interface: f64,
        right: f64,
        heights: [f64; 2],
    },
}

impl InitialData {
    fn name(&self) -> &'static str {
        match self {
            InitialData::Constant { .. } => "constant",
            InitialData::Gauss { .. } => "gauss",
            InitialData::Blocks { .. } => "blocks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OutputFormat {
    Diagnostics,
    Snapshots,
    Audit,
}

impl OutputFormat {
    fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Diagnostics => "diagnostics",
            OutputFormat::Snapshots => "snapshots",
            OutputFormat::Audit => "audit",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "diagnostics" => Ok(OutputFormat::Diagnostics),
            "snapshots" => Ok(OutputFormat::Snapshots),
            "audit" => Ok(OutputFormat::Audit),
            other => Err(format!("unknown output format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Snapshot every this many steps; 0 keeps only the initial and final states.
    pub snapshot_every_steps: usize,
    pub formats: Vec<OutputFormat>,
}

impl OutputConfig {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub model: ModelConfig,
    pub initial: InitialData,
    pub solver: SolverConfig,
    pub output: OutputConfig,
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

struct Document {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

const SECTIONS: [&str; 8] = ["grid", "time", "model", "species1", "species2", "initial", "solver", "output"];

impl Document {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax {
                        line,
                        message: format!("malformed section header {content:?}"),
                    })?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Syntax { line, message: format!("unknown section [{name}]") });
                }
                if sections.contains_key(name) {
                    return Err(ConfigError::Syntax { line, message: format!("duplicate section [{name}]") });
                }
                sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            })?;
            let key = key.trim();
            let value = value.trim().trim_matches('"');
            let section = current
                .as_ref()
                .ok_or_else(|| ConfigError::Syntax { line, message: format!("key {key:?} outside any section") })?;
            let map = sections.get_mut(section).expect("section inserted");
            if map.contains_key(key) {
                return Err(ConfigError::Syntax { line, message: format!("duplicate key {section}.{key}") });
            }
            map.insert(key.to_string(), Entry { value: value.to_string(), line, used: false });
        }
        Ok(Self { sections })
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<&str> {
        let e = self.sections.get_mut(section)?.get_mut(key)?;
        e.used = true;
        Some(e.value.as_str())
    }

    fn get<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| key_err(format!("{section}.{key}"), format!("cannot parse {v:?}: {e}"))),
        }
    }

    fn require<T: FromStr>(&mut self, section: &str, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)?.ok_or_else(|| key_err(format!("{section}.{key}"), "missing required key"))
    }

    fn list(&mut self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| key_err(format!("{section}.{key}"), format!("cannot parse {v:?}: {e}"))),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        for (section, map) in &self.sections {
            if let Some((key, e)) = map.iter().find(|(_, e)| !e.used) {
                return Err(key_err(format!("{section}.{key}"), format!("unknown key (line {})", e.line)));
            }
        }
        Ok(())
    }
}

fn check(ok: bool, key: &str, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(key_err(key, message))
    }
}

fn pair(values: Vec<f64>, key: &str) -> Result<[f64; 2], ConfigError> {
    match values[..] {
        [a] => Ok([a, a]),
        [a, b] => Ok([a, b]),
        _ => Err(key_err(key, format!("expected one or two values, got {}", values.len()))),
    }
}

fn point(values: Vec<f64>, dim: usize, key: &str) -> Result<[f64; 2], ConfigError> {
    check(values.len() == dim, key, format!("expected {dim} coordinate(s), got {}", values.len()))?;
    Ok([values[0], values.get(1).copied().unwrap_or(0.0)])
}

pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let mut doc = Document::parse(text)?;

    let dimension: usize = doc.require("grid", "dimension")?;
    check(dimension == 1 || dimension == 2, "grid.dimension", format!("must be 1 or 2, got {dimension}"))?;
    let half_length: f64 = doc.require("grid", "half_length")?;
    check(half_length.is_finite() && half_length > 0.0, "grid.half_length", "must be positive")?;
    let cells_per_axis: usize = doc.require("grid", "cells_per_axis")?;
    check(cells_per_axis >= 2, "grid.cells_per_axis", "must be at least 2")?;
    let boundary: Boundary = doc.get("grid", "boundary")?.unwrap_or(Boundary::NoFlux);
    let grid = GridConfig { dimension, half_length, cells_per_axis, boundary };

    let t_final: f64 = doc.require("time", "t_final")?;
    check(t_final.is_finite() && t_final >= 0.0, "time.t_final", "must be nonnegative")?;
    let cfl_safety: f64 = doc.get("time", "cfl_safety")?.unwrap_or(0.4);
    check(cfl_safety > 0.0 && cfl_safety <= 1.0, "time.cfl_safety", "must lie in (0, 1]")?;
    let record_every_steps: usize = doc.get("time", "record_every_steps")?.unwrap_or(1);
    check(record_every_steps >= 1, "time.record_every_steps", "must be at least 1")?;
    let time = TimeConfig { t_final, cfl_safety, record_every_steps };

    let nu: f64 = doc.require("model", "nu")?;
    check(nu.is_finite() && nu >= 0.0, "model.nu", "must be nonnegative (0 selects Darcy)")?;
    let bound_tolerance: f64 = doc.get("model", "bound_tolerance")?.unwrap_or(1e-8);
    check(bound_tolerance.is_finite() && bound_tolerance >= 0.0, "model.bound_tolerance", "must be nonnegative")?;
    let kind: String = doc.get("model", "anisotropy")?.unwrap_or_else(|| "identity".into());
    let a = match doc.list("model", "anisotropy_a")? {
        Some(v) => pair(v, "model.anisotropy_a")?,
        None => [1.0, 1.0],
    };
    let angle: f64 = doc.get("model", "anisotropy_angle")?.unwrap_or(0.0);
    let amplitude: f64 = doc.get("model", "anisotropy_amplitude")?.unwrap_or(0.0);
    let wavenumber: f64 = doc.get("model", "anisotropy_wavenumber")?.unwrap_or(1.0);
    let frequency: f64 = doc.get("model", "anisotropy_frequency")?.unwrap_or(0.0);
    let anisotropy = match kind.as_str() {
        "identity" => Anisotropy::Identity,
        "diagonal" => Anisotropy::Diagonal { a },
        "rotation" => Anisotropy::Rotation { a, angle },
        "smooth" => Anisotropy::Smooth { a, amplitude, wavenumber, frequency },
        other => return Err(key_err("model.anisotropy", format!("unknown preset {other:?}"))),
    };

    let mut growth = [GrowthLaw { nbar: 1.0, slope: 0.0 }; 2];
    for (i, law) in growth.iter_mut().enumerate() {
        let section = ["species1", "species2"][i];
        let nbar: f64 = doc.get(section, "nbar")?.unwrap_or(1.0);
        let slope: f64 = doc.get(section, "slope")?.unwrap_or(0.0);
        *law = GrowthLaw::new(nbar, slope).map_err(|e| key_err(section, e.to_string()))?;
    }
    let model = ModelConfig { nu, bound_tolerance, anisotropy, growth };

    let preset: String = doc.require("initial", "preset")?;
    let inside = |x: f64| x.abs() <= half_length;
    let initial = match preset.as_str() {
        "constant" => {
            let values = [doc.get("initial", "value1")?.unwrap_or(0.0), doc.get("initial", "value2")?.unwrap_or(0.0)];
            for (i, v) in values.iter().enumerate() {
                let key = format!("initial.value{}", i + 1);
                check(*v >= 0.0 && *v <= growth[i].nbar, &key, "must lie in [0, nbar]")?;
            }
            InitialData::Constant { values }
        }
        "gauss" => {
            let mut bumps = [Bump { center: [0.0; 2], width: 1.0, amplitude: 0.0 }; 2];
            for (i, b) in bumps.iter_mut().enumerate() {
                let s = i + 1;
                let ckey = format!("initial.center{s}");
                let center = match doc.list("initial", &format!("center{s}"))? {
                    Some(v) => point(v, dimension, &ckey)?,
                    None => [0.0; 2],
                };
                check(center.iter().all(|&c| inside(c)), &ckey, "must lie inside the box")?;
                let width: f64 = doc.require("initial", &format!("width{s}"))?;
                check(width.is_finite() && width > 0.0, &format!("initial.width{s}"), "must be positive")?;
                let amplitude: f64 = doc.require("initial", &format!("amplitude{s}"))?;
                check(
                    amplitude >= 0.0 && amplitude <= growth[i].nbar,
                    &format!("initial.amplitude{s}"),
                    "must lie in [0, nbar]",
                )?;
                *b = Bump { center, width, amplitude };
            }
            InitialData::Gauss { bumps }
        }
        "blocks" => {
            let left: f64 = doc.get("initial", "left")?.unwrap_or(-1.0);
            let right: f64 = doc.get("initial", "right")?.unwrap_or(1.0);
            let interface: f64 = doc.require("initial", "interface")?;
            check(inside(left) && inside(right), "initial.left", "block extent must lie inside the box")?;
            check(
                left < interface && interface < right,
                "initial.interface",
                "must lie strictly between left and right",
            )?;
            let mut heights = [0.0; 2];
            for (i, h) in heights.iter_mut().enumerate() {
                let key = format!("height{}", i + 1);
                *h = doc.require("initial", &key)?;
                check(*h >= 0.0 && *h <= growth[i].nbar, &format!("initial.{key}"), "must lie in [0, nbar]")?;
            }
            InitialData::Blocks { left, interface, right, heights }
        }
        other => return Err(key_err("initial.preset", format!("unknown preset {other:?}"))),
    };

    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        rel_tolerance: doc.get("solver", "rel_tolerance")?.unwrap_or(defaults.rel_tolerance),
        max_iterations: doc.get("solver", "max_iterations")?.or(defaults.max_iterations),
        preconditioner: doc.get::<Preconditioner>("solver", "preconditioner")?.unwrap_or(defaults.preconditioner),
    };
    solver.validate().map_err(|e| key_err("solver", e.to_string()))?;

    let directory: PathBuf = doc.get::<String>("output", "directory")?.unwrap_or_else(|| "out".into()).into();
    let snapshot_every_steps: usize = doc.get("output", "snapshot_every_steps")?.unwrap_or(0);
    let formats = match doc.raw("output", "formats") {
        None => vec![OutputFormat::Diagnostics, OutputFormat::Snapshots, OutputFormat::Audit],
        Some(v) => {
            let mut f = v
                .split(',')
                .map(|s| s.trim())
                .filter(|s| !s.is_empty())
                .map(OutputFormat::from_str)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| key_err("output.formats", e))?;
            f.sort();
            f.dedup();
            f
        }
    };
    let output = OutputConfig { directory, snapshot_every_steps, formats };

    doc.finish()?;
    let cfg = SimConfig { grid, time, model, initial, solver, output };
    cfg.validate()?;
    Ok(cfg)
}

impl SimConfig {
    /// Cross-field checks that need the assembled objects.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let grid = self.build_grid()?;
        let tensor = self.build_tensor(&grid)?;
        let laws = self.laws();
        self.stepper().validate().map_err(|e| key_err("model", e.to_string()))?;
        let (n1, n2) = self.initial_fields(&grid);
        let peak = n1.zip_map(&n2, |a, b| a + b).expect("same grid").max();
        check(
            peak <= laws.nbar() * (1.0 + self.model.bound_tolerance),
            "initial",
            format!("total initial density peaks at {peak}, above nbar = {}", laws.nbar()),
        )?;
        if let Anisotropy::Rotation { .. } = self.model.anisotropy {
            check(self.grid.dimension == 2, "model.anisotropy", "rotation needs dimension 2")?;
        }
        let _ = tensor;
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.grid.dimension, self.grid.half_length, self.grid.cells_per_axis, self.grid.boundary)
            .map_err(|e| key_err("grid", e.to_string()))
    }

    pub fn build_tensor(&self, grid: &Grid) -> Result<TensorField, ConfigError> {
        TensorField::new(grid, self.model.anisotropy.preset()).map_err(|e| key_err("model.anisotropy", e.to_string()))
    }

    pub fn laws(&self) -> GrowthLaws {
        GrowthLaws(self.model.growth)
    }

    pub fn mode(&self) -> Mode {
        Mode::from_nu(self.model.nu)
    }

    pub fn stepper(&self) -> StepperConfig {
        StepperConfig {
            cfl_safety: self.time.cfl_safety,
            bound_tolerance: self.model.bound_tolerance,
            mode: self.mode(),
        }
    }

    pub fn with_cells(&self, cells: usize) -> Self {
        let mut c = self.clone();
        c.grid.cells_per_axis = cells;
        c
    }

    pub fn with_nu(&self, nu: f64) -> Self {
        let mut c = self.clone();
        c.model.nu = nu;
        c
    }

    /// Initial densities sampled (bumps, constants) or cell-averaged (blocks).
    pub fn initial_fields(&self, grid: &Grid) -> (ScalarField, ScalarField) {
        let dim = grid.dim();
        match self.initial {
            InitialData::Constant { values } => {
                (ScalarField::constant(grid, values[0]), ScalarField::constant(grid, values[1]))
            }
            InitialData::Gauss { bumps } => (
                ScalarField::from_fn(grid, |x| bumps[0].eval(x, dim)),
                ScalarField::from_fn(grid, |x| bumps[1].eval(x, dim)),
            ),
            InitialData::Blocks { left, interface, right, heights } => {
                let h = grid.dx();
                let cover = move |x: f64, a: f64, b: f64| {
                    let lo = (x - 0.5 * h).max(a);
                    let hi = (x + 0.5 * h).min(b);
                    (hi - lo).max(0.0) / h
                };
                (
                    ScalarField::from_fn(grid, |x| heights[0] * cover(x[0], left, interface)),
                    ScalarField::from_fn(grid, |x| heights[1] * cover(x[0], interface, right)),
                )
            }
        }
    }

    /// Canonical text form listing every key.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
        let g = &self.grid;
        let _ = writeln!(s, "[grid]");
        let _ = writeln!(s, "dimension = {}", g.dimension);
        let _ = writeln!(s, "half_length = {}", g.half_length);
        let _ = writeln!(s, "cells_per_axis = {}", g.cells_per_axis);
        let _ = writeln!(s, "boundary = {}", g.boundary);

        let t = &self.time;
        let _ = writeln!(s, "\n[time]");
        let _ = writeln!(s, "t_final = {}", t.t_final);
        let _ = writeln!(s, "cfl_safety = {}", t.cfl_safety);
        let _ = writeln!(s, "record_every_steps = {}", t.record_every_steps);

        let m = &self.model;
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "nu = {}", m.nu);
        let _ = writeln!(s, "bound_tolerance = {}", m.bound_tolerance);
        let _ = writeln!(s, "anisotropy = {}", m.anisotropy.name());
        match m.anisotropy {
            Anisotropy::Identity => {}
            Anisotropy::Diagonal { a } => {
                let _ = writeln!(s, "anisotropy_a = {}", list(&a));
            }
            Anisotropy::Rotation { a, angle } => {
                let _ = writeln!(s, "anisotropy_a = {}", list(&a));
                let _ = writeln!(s, "anisotropy_angle = {angle}");
            }
            Anisotropy::Smooth { a, amplitude, wavenumber, frequency } => {
                let _ = writeln!(s, "anisotropy_a = {}", list(&a));
                let _ = writeln!(s, "anisotropy_amplitude = {amplitude}");
                let _ = writeln!(s, "anisotropy_wavenumber = {wavenumber}");
                let _ = writeln!(s, "anisotropy_frequency = {frequency}");
            }
        }
        for (i, law) in m.growth.iter().enumerate() {
            let _ = writeln!(s, "\n[species{}]", i + 1);
            let _ = writeln!(s, "nbar = {}", law.nbar);
            let _ = writeln!(s, "slope = {}", law.slope);
        }

        let _ = writeln!(s, "\n[initial]");
        let _ = writeln!(s, "preset = {}", self.initial.name());
        let d = g.dimension;
        match self.initial {
            InitialData::Constant { values } => {
                let _ = writeln!(s, "value1 = {}", values[0]);
                let _ = writeln!(s, "value2 = {}", values[1]);
            }
            InitialData::Gauss { bumps } => {
                for (i, b) in bumps.iter().enumerate() {
                    let _ = writeln!(s, "center{} = {}", i + 1, list(&b.center[..d]));
                    let _ = writeln!(s, "width{} = {}", i + 1, b.width);
                    let _ = writeln!(s, "amplitude{} = {}", i + 1, b.amplitude);
                }
            }
            InitialData::Blocks { left, interface, right, heights } => {
                let _ = writeln!(s, "left = {left}");
                let _ = writeln!(s, "interface = {interface}");
                let _ = writeln!(s, "right = {right}");
                let _ = writeln!(s, "height1 = {}", heights[0]);
                let _ = writeln!(s, "height2 = {}", heights[1]);
            }
        }

        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "rel_tolerance = {}", self.solver.rel_tolerance);
        if let Some(it) = self.solver.max_iterations {
            let _ = writeln!(s, "max_iterations = {it}");
        }
        let _ = writeln!(s, "preconditioner = {}", self.solver.preconditioner.as_str());

        let o = &self.output;
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "directory = {}", o.directory.display());
        let _ = writeln!(s, "snapshot_every_steps = {}", o.snapshot_every_steps);
        let formats: Vec<&str> = o.formats.iter().map(|f| f.as_str()).collect();
        let _ = writeln!(s, "formats = {}", formats.join(", "));
        s
    }
}
