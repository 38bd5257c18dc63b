//! Explicit upwind time integration of the two-species system.
//!
//! Both species are transported by the velocity `w = -A∇m` on faces:
//! `n_i ← n_i - dt div(upwind(n_i, w)) + dt n_i G_i(n1 + n2)`, which is the
//! conservative form of `∂t n_i = div(n_i A∇m) + n_i G_i(n)`. In Brinkman
//! mode `m` solves `-ν div(A∇m) + m = n`; in Darcy mode `m = n`.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brinkman::{solve_brinkman, velocity, BrinkmanOperator, SolveError, SolverConfig};
use crate::field::{divergence, integrate, FaceField, GridError, ScalarField, TensorField};

/// Guards the transport limit when the velocity vanishes.
const VELOCITY_FLOOR: f64 = 1e-14;
/// Clipped mass per step above this fraction of the total raises a warning.
const CLIP_WARNING_FRACTION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("Brinkman solve failed at step {step}, t = {t}: {source}")]
    Solve {
        step: usize,
        t: f64,
        #[source]
        source: SolveError,
    },
    #[error("non-finite density after step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error("t_final = {t_final} precedes the initial time {t0}")]
    Horizon { t0: f64, t_final: f64 },
    #[error("time step collapsed to {dt:e} at step {step}, t = {t}")]
    StepCollapse { step: usize, t: f64, dt: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Affine growth `G(n) = slope (nbar - n)`. A zero slope switches growth off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthLaw {
    pub nbar: f64,
    pub slope: f64,
}

impl GrowthLaw {
    pub fn new(nbar: f64, slope: f64) -> Result<Self, EvolveError> {
        if !(nbar.is_finite() && nbar > 0.0) {
            return Err(EvolveError::Config(format!("nbar must be positive, got {nbar}")));
        }
        if !(slope.is_finite() && slope >= 0.0) {
            return Err(EvolveError::Config(format!("growth slope must be nonnegative, got {slope}")));
        }
        Ok(Self { nbar, slope })
    }

    #[inline]
    pub fn rate(&self, n: f64) -> f64 {
        self.slope * (self.nbar - n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthLaws(pub [GrowthLaw; 2]);

impl GrowthLaws {
    pub fn new(first: GrowthLaw, second: GrowthLaw) -> Self {
        Self([first, second])
    }

    /// Both species with the same law.
    pub fn uniform(law: GrowthLaw) -> Self {
        Self([law, law])
    }

    /// Global density ceiling `max_i nbar_i`.
    pub fn nbar(&self) -> f64 {
        self.0[0].nbar.max(self.0[1].nbar)
    }

    /// Monotonicity constant `min_i slope_i`.
    pub fn alpha(&self) -> f64 {
        self.0[0].slope.min(self.0[1].slope)
    }

    /// `max_i max_{s in [0, nbar]} |G_i(s)|`.
    pub fn max_abs_rate(&self) -> f64 {
        let nbar = self.nbar();
        self.0.iter().map(|g| g.slope * g.nbar.max(nbar - g.nbar)).fold(0.0, f64::max)
    }

    /// Stiffest reaction rate `max_i slope_i * nbar`.
    pub fn max_reaction_rate(&self) -> f64 {
        let nbar = self.nbar();
        self.0.iter().map(|g| g.slope * nbar).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|g| g.slope == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub n1: ScalarField,
    pub n2: ScalarField,
    /// Velocity potential consistent with `n1 + n2` at time `t`.
    pub m: ScalarField,
    pub t: f64,
    /// Mass removed by clipping negative values, per species, cumulative.
    pub clipped: [f64; 2],
}

impl State {
    pub fn total(&self) -> ScalarField {
        self.n1.zip_map(&self.n2, |a, b| a + b).expect("species share a grid")
    }

    pub fn clipped_total(&self) -> f64 {
        self.clipped[0] + self.clipped[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Mode {
    Brinkman { nu: f64 },
    Darcy,
}

impl Mode {
    /// `ν` for Brinkman, zero for Darcy.
    pub fn nu(&self) -> f64 {
        match self {
            Mode::Brinkman { nu } => *nu,
            Mode::Darcy => 0.0,
        }
    }

    /// `ν = 0` maps to Darcy.
    pub fn from_nu(nu: f64) -> Self {
        if nu == 0.0 {
            Mode::Darcy
        } else {
            Mode::Brinkman { nu }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub cfl_safety: f64,
    pub bound_tolerance: f64,
    pub mode: Mode,
}

impl StepperConfig {
    pub fn new(mode: Mode) -> Self {
        Self { cfl_safety: 0.4, bound_tolerance: 1e-8, mode }
    }

    pub fn validate(&self) -> Result<(), EvolveError> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(EvolveError::Config(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        if !(self.bound_tolerance.is_finite() && self.bound_tolerance >= 0.0) {
            return Err(EvolveError::Config(format!(
                "bound_tolerance must be nonnegative, got {}",
                self.bound_tolerance
            )));
        }
        if let Mode::Brinkman { nu } = self.mode {
            if !(nu.is_finite() && nu > 0.0) {
                return Err(EvolveError::Config(format!("Brinkman mode needs nu > 0, got {nu}")));
            }
        }
        Ok(())
    }
}

/// Donor-cell flux of `n` carried by the face velocity `v`:
/// `v⁺ n_left + v⁻ n_right`. Wall faces carry nothing.
pub fn upwind_flux(n: &ScalarField, v: &FaceField) -> FaceField {
    let grid = *n.grid();
    debug_assert_eq!(&grid, v.grid());
    let mut out = FaceField::zeros(&grid);
    for axis in 0..grid.dim() {
        let vel = v.axis(axis);
        let slots = out.axis_mut(axis);
        for k in 0..grid.len() {
            if let Some(r) = grid.plus(k, axis) {
                let w = vel[k];
                slots[k] = w.max(0.0) * n[k] + w.min(0.0) * n[r];
            }
        }
    }
    out
}

/// `r_i = n_i G_i(n1 + n2)`.
pub fn reaction(n1: &ScalarField, n2: &ScalarField, laws: &GrowthLaws) -> (ScalarField, ScalarField) {
    let [g1, g2] = laws.0;
    let r1 = n1.zip_map(n2, |a, b| a * g1.rate(a + b)).expect("species share a grid");
    let r2 = n1.zip_map(n2, |a, b| b * g2.rate(a + b)).expect("species share a grid");
    (r1, r2)
}

/// Largest admissible step for velocity `v`.
///
/// Transport: `cfl dx / (2d max|v|)`. Reaction: `cfl / max_i(g_i nbar)`.
/// Parabolic, with `κ = 2dΛ/dx²`: Darcy uses `cfl / (κ nbar)`; Brinkman uses
/// `cfl (1 + 2νκ) / (κ nbar)`, which relaxes to the transport limit for
/// large `ν` and recovers the Darcy limit as `ν → 0`.
pub fn stable_dt(v: &FaceField, laws: &GrowthLaws, tensor_sup: f64, cfg: &StepperConfig) -> f64 {
    let grid = v.grid();
    let d = grid.dim() as f64;
    let dx = grid.dx();
    let cfl = cfg.cfl_safety;
    let nbar = laws.nbar();
    let mut dt = cfl * dx / (2.0 * d * v.max_abs() + VELOCITY_FLOOR);
    let reaction = laws.max_reaction_rate();
    if reaction > 0.0 {
        dt = dt.min(cfl / reaction);
    }
    let kappa = 2.0 * d * tensor_sup / (dx * dx);
    if kappa > 0.0 {
        let parabolic = match cfg.mode {
            Mode::Darcy => cfl / (kappa * nbar),
            Mode::Brinkman { nu } => cfl * (1.0 + 2.0 * nu * kappa) / (kappa * nbar),
        };
        dt = dt.min(parabolic);
    }
    dt
}

/// Per-step bookkeeping passed to observers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// 0 for the initial state.
    pub step: usize,
    pub dt: f64,
    pub is_final: bool,
    pub solver_iterations: usize,
}

pub trait Observer {
    fn observe(&mut self, info: &StepInfo, state: &State);

    /// Times the integrator must land on exactly.
    fn landing_times(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub state: State,
    pub clipped: [f64; 2],
    pub clip_warning: bool,
    /// `max(n1 + n2)` exceeded `nbar (1 + bound_tolerance)`.
    pub bound_violation: bool,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub state: State,
    pub steps: usize,
    pub clip_warnings: usize,
    pub bound_violations: usize,
    pub max_total: f64,
}

/// The coupled system on one grid with fixed coefficients.
#[derive(Debug, Clone)]
pub struct Evolution<'a> {
    tensor: &'a TensorField,
    laws: GrowthLaws,
    cfg: StepperConfig,
    solver: SolverConfig,
}

impl<'a> Evolution<'a> {
    pub fn new(
        tensor: &'a TensorField,
        laws: GrowthLaws,
        cfg: StepperConfig,
        solver: SolverConfig,
    ) -> Result<Self, EvolveError> {
        cfg.validate()?;
        solver.validate().map_err(|e| EvolveError::Config(e.to_string()))?;
        Ok(Self { tensor, laws, cfg, solver })
    }

    pub fn tensor(&self) -> &TensorField {
        self.tensor
    }

    pub fn laws(&self) -> &GrowthLaws {
        &self.laws
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    fn potential(&self, total: &ScalarField, t: f64, step: usize) -> Result<(ScalarField, usize), EvolveError> {
        match self.cfg.mode {
            Mode::Darcy => Ok((total.clone(), 0)),
            Mode::Brinkman { nu } => {
                let op = BrinkmanOperator::new(self.tensor, nu, t).map_err(|source| EvolveError::Solve {
                    step,
                    t,
                    source,
                })?;
                let sol = solve_brinkman(&op, total, &self.solver).map_err(|source| EvolveError::Solve {
                    step,
                    t,
                    source,
                })?;
                Ok((sol.m, sol.iterations))
            }
        }
    }

    /// Builds a state at `t` with a consistent potential.
    pub fn initial_state(&self, n1: ScalarField, n2: ScalarField, t: f64) -> Result<State, EvolveError> {
        self.tensor.grid().ensure_same(n1.grid())?;
        self.tensor.grid().ensure_same(n2.grid())?;
        if n1.min() < 0.0 || n2.min() < 0.0 {
            return Err(EvolveError::Config("initial densities must be nonnegative".into()));
        }
        let total = n1.zip_map(&n2, |a, b| a + b)?;
        let (m, _) = self.potential(&total, t, 0)?;
        Ok(State { n1, n2, m, t, clipped: [0.0, 0.0] })
    }

    /// `-A(t)∇m` for the current state.
    pub fn velocity(&self, state: &State) -> FaceField {
        let op = BrinkmanOperator::new(self.tensor, self.cfg.mode.nu(), state.t).expect("viscosity validated");
        velocity(&op, &state.m)
    }

    pub fn stable_dt(&self, state: &State, v: &FaceField) -> f64 {
        stable_dt(v, &self.laws, self.tensor.sup_norm(state.t), &self.cfg)
    }

    /// One forward-Euler step of length `dt` (velocity computed here).
    pub fn step(&self, state: &State, dt: f64) -> Result<StepReport, EvolveError> {
        let v = self.velocity(state);
        self.step_with_velocity(state, &v, dt, 0)
    }

    pub fn step_with_velocity(
        &self,
        state: &State,
        v: &FaceField,
        dt: f64,
        step: usize,
    ) -> Result<StepReport, EvolveError> {
        let grid = *state.n1.grid();
        let vol = grid.cell_volume();
        let (r1, r2) = reaction(&state.n1, &state.n2, &self.laws);
        let mut clipped = [0.0; 2];
        let mut next = [state.n1.clone(), state.n2.clone()];
        for (i, (n, r)) in next.iter_mut().zip([&r1, &r2]).enumerate() {
            let div = divergence(&upwind_flux(n, v));
            for ((ni, di), ri) in n.values_mut().iter_mut().zip(div.values()).zip(r.values()) {
                *ni += dt * (ri - di);
                if *ni < 0.0 {
                    clipped[i] -= *ni * vol;
                    *ni = 0.0;
                }
            }
        }
        let t = state.t + dt;
        let [n1, n2] = next;
        if !(n1.is_finite() && n2.is_finite()) {
            return Err(EvolveError::NonFinite { step, t });
        }
        let total = n1.zip_map(&n2, |a, b| a + b)?;
        let mass = integrate(&total);
        let clip_warning = clipped[0] + clipped[1] > CLIP_WARNING_FRACTION * mass;
        let bound_violation = total.max() > self.laws.nbar() * (1.0 + self.cfg.bound_tolerance);
        let (m, solver_iterations) = self.potential(&total, t, step)?;
        let cum = [state.clipped[0] + clipped[0], state.clipped[1] + clipped[1]];
        Ok(StepReport {
            state: State { n1, n2, m, t, clipped: cum },
            clipped,
            clip_warning,
            bound_violation,
            solver_iterations,
        })
    }

    /// Steps from `initial` to exactly `t_final`, also landing on every time
    /// the observers request.
    pub fn run(
        &self,
        initial: State,
        t_final: f64,
        observers: &mut [&mut dyn Observer],
    ) -> Result<RunSummary, EvolveError> {
        let t0 = initial.t;
        if t_final.is_nan() || t0.is_nan() || t_final < t0 {
            return Err(EvolveError::Horizon { t0, t_final });
        }
        let mut landings: Vec<f64> =
            observers.iter().flat_map(|o| o.landing_times()).filter(|&s| s > t0 && s < t_final).collect();
        landings.push(t_final);
        landings.sort_by(f64::total_cmp);
        landings.dedup();

        let mut state = initial;
        let mut summary_max = state.total().max();
        let info0 = StepInfo { step: 0, dt: 0.0, is_final: t_final == t0, solver_iterations: 0 };
        for o in observers.iter_mut() {
            o.observe(&info0, &state);
        }
        let (mut clip_warnings, mut bound_violations) = (0, 0);
        let mut step = 0;
        let mut next_landing = 0;
        while state.t < t_final {
            while landings[next_landing] <= state.t {
                next_landing += 1;
            }
            let target = landings[next_landing];
            let v = self.velocity(&state);
            let mut dt = self.stable_dt(&state, &v);
            step += 1;
            if !(dt.is_finite() && dt > 0.0) || state.t + dt == state.t {
                return Err(EvolveError::StepCollapse { step, t: state.t, dt });
            }
            let lands = state.t + dt >= target;
            if lands {
                dt = target - state.t;
            }
            let report = self.step_with_velocity(&state, &v, dt, step)?;
            if report.clip_warning {
                clip_warnings += 1;
                warn!("step {step}: clipped mass {:.3e}", report.clipped[0] + report.clipped[1]);
            }
            if report.bound_violation {
                bound_violations += 1;
                warn!("step {step}: total density above nbar (1 + tol)");
            }
            state = report.state;
            if lands {
                state.t = target;
            }
            summary_max = summary_max.max(state.total().max());
            let info = StepInfo { step, dt, is_final: state.t >= t_final, solver_iterations: report.solver_iterations };
            for o in observers.iter_mut() {
                o.observe(&info, &state);
            }
        }
        Ok(RunSummary { state, steps: step, clip_warnings, bound_violations, max_total: summary_max })
    }
}
