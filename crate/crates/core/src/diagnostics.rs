//! Observables along a trajectory and the discrete entropy-identity audit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{GrowthLaws, Observer, State, StepInfo};
use crate::field::{gradient, integrate, FaceField, GridError, ScalarField, SecondMomentWeight, TensorField};

/// Cells below this density contribute nothing to `log n` integrands.
const LOG_GUARD: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("{what} is negative ({value:e}) in cell {cell}")]
    Negative { what: &'static str, cell: usize, value: f64 },
    #[error("entropy audit needs every step: sample {index} has step {got}, expected {expected}")]
    MissingStep { index: usize, expected: usize, got: usize },
    #[error("entropy audit needs at least one sample")]
    Empty,
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn check_nonnegative(what: &'static str, f: &ScalarField) -> Result<(), DiagnosticsError> {
    match f.values().iter().position(|&v| v < 0.0 || v.is_nan()) {
        Some(cell) => Err(DiagnosticsError::Negative { what, cell, value: f[cell] }),
        None => Ok(()),
    }
}

#[inline]
fn entropy_density(s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s * (s.ln() - 1.0)
    }
}

/// `∫ n (log n - 1)` with `0 log 0 = 0`.
pub fn entropy(n: &ScalarField) -> Result<f64, DiagnosticsError> {
    check_nonnegative("density", n)?;
    Ok(n.grid().cell_volume() * n.values().iter().map(|&s| entropy_density(s)).sum::<f64>())
}

/// Instantaneous dissipation `-∫ n div(A∇m)`.
///
/// For `ν > 0` the Brinkman relation `div(A∇m) = (m - n)/ν` replaces the
/// second differences; for `ν = 0` it is the quadratic form `∫ ∇n·A∇n`.
pub fn dissipation_rate(
    n: &ScalarField,
    m: &ScalarField,
    tensor: &TensorField,
    t: f64,
    nu: f64,
) -> Result<f64, DiagnosticsError> {
    n.grid().ensure_same(m.grid())?;
    if nu > 0.0 {
        let integrand = n.zip_map(m, |a, b| a * (b - a))?;
        Ok(-integrate(&integrand) / nu)
    } else {
        let grad = gradient(n);
        let flux = tensor.sample(t).face_coefficients().apply(&grad);
        Ok(grad.inner(&flux))
    }
}

/// `-∫ n div(A∇m)` evaluated with the discrete divergence.
pub fn dissipation_direct(
    n: &ScalarField,
    m: &ScalarField,
    tensor: &TensorField,
    t: f64,
) -> Result<f64, DiagnosticsError> {
    n.grid().ensure_same(m.grid())?;
    let faces = tensor.sample(t).face_coefficients();
    let div = crate::field::divergence(&faces.apply(&gradient(m)));
    Ok(-integrate(&n.zip_map(&div, |a, b| a * b)?))
}

/// `∫ n |∇m|²` on faces, with `n` averaged onto each face.
pub fn dissipation_kinetic(n: &ScalarField, m: &ScalarField) -> Result<f64, DiagnosticsError> {
    let grid = *n.grid();
    grid.ensure_same(m.grid())?;
    let grad = gradient(m);
    let mut sum = 0.0;
    for axis in 0..grid.dim() {
        let g = grad.axis(axis);
        for k in 0..grid.len() {
            if let Some(r) = grid.plus(k, axis) {
                sum += 0.5 * (n[k] + n[r]) * g[k] * g[k];
            }
        }
    }
    Ok(sum * grid.cell_volume())
}

pub fn second_moment(n: &ScalarField, weight: &SecondMomentWeight) -> Result<f64, DiagnosticsError> {
    Ok(integrate(&n.zip_map(weight.field(), |a, b| a * b)?))
}

/// `∫ n1 n2`.
pub fn overlap(n1: &ScalarField, n2: &ScalarField) -> Result<f64, DiagnosticsError> {
    Ok(integrate(&n1.zip_map(n2, |a, b| a * b)?))
}

/// `∫ log n (n1 G1(n) + n2 G2(n))` with empty cells contributing zero.
pub fn reaction_rate(n1: &ScalarField, n2: &ScalarField, laws: &GrowthLaws) -> Result<f64, DiagnosticsError> {
    n1.grid().ensure_same(n2.grid())?;
    let [g1, g2] = laws.0;
    let sum: f64 = n1
        .values()
        .iter()
        .zip(n2.values())
        .map(|(&a, &b)| {
            let n = a + b;
            if n <= 0.0 {
                0.0
            } else {
                (n + LOG_GUARD).ln() * (a * g1.rate(n) + b * g2.rate(n))
            }
        })
        .sum();
    Ok(sum * n1.grid().cell_volume())
}

pub fn l2_distance(f: &ScalarField, g: &ScalarField) -> Result<f64, DiagnosticsError> {
    Ok(f.zip_map(g, |a, b| a - b)?.l2_norm())
}

pub fn face_l2_distance(f: &FaceField, g: &FaceField) -> Result<f64, DiagnosticsError> {
    f.grid().ensure_same(g.grid())?;
    let grid = f.grid();
    let sum: f64 = (0..grid.dim())
        .map(|axis| f.axis(axis).iter().zip(g.axis(axis)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok((sum * grid.cell_volume()).sqrt())
}

/// One row of the diagnostics time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass1: f64,
    pub mass2: f64,
    pub mass_total: f64,
    pub linf_total: f64,
    pub second_moment: f64,
    pub entropy: f64,
    pub dissipation_rate: f64,
    pub dissipation_kinetic: f64,
    pub sqrt_nu_grad_m_l2: f64,
    pub overlap: f64,
    pub clipped_mass_cum: f64,
}

impl DiagnosticsRecord {
    pub const COLUMNS: [&'static str; 12] = [
        "t",
        "mass1",
        "mass2",
        "mass_total",
        "linf_total",
        "second_moment",
        "entropy",
        "dissipation_rate",
        "dissipation_kinetic",
        "sqrt_nu_grad_m_l2",
        "overlap",
        "clipped_mass_cum",
    ];

    pub fn values(&self) -> [f64; 12] {
        [
            self.t,
            self.mass1,
            self.mass2,
            self.mass_total,
            self.linf_total,
            self.second_moment,
            self.entropy,
            self.dissipation_rate,
            self.dissipation_kinetic,
            self.sqrt_nu_grad_m_l2,
            self.overlap,
            self.clipped_mass_cum,
        ]
    }
}

/// Per-step quantities the entropy audit integrates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSample {
    pub step: usize,
    pub t: f64,
    pub entropy: f64,
    pub dissipation_rate: f64,
    pub reaction_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyAudit {
    pub entropy_initial: f64,
    pub entropy_final: f64,
    pub dissipation_integral: f64,
    pub reaction_integral: f64,
    /// `(entropy_final - entropy_initial + dissipation_integral) - reaction_integral`.
    pub residual: f64,
}

fn trapezoid(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut acc = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (t, y) in points {
        if let Some((t0, y0)) = prev {
            acc += 0.5 * (t - t0) * (y0 + y);
        }
        prev = Some((t, y));
    }
    acc
}

/// Discrete entropy balance over a fully resolved trajectory.
pub fn entropy_audit(samples: &[AuditSample]) -> Result<EntropyAudit, DiagnosticsError> {
    let first = samples.first().ok_or(DiagnosticsError::Empty)?;
    for (index, s) in samples.iter().enumerate() {
        let expected = first.step + index;
        if s.step != expected {
            return Err(DiagnosticsError::MissingStep { index, expected, got: s.step });
        }
    }
    let last = samples.last().expect("non-empty");
    let dissipation_integral = trapezoid(samples.iter().map(|s| (s.t, s.dissipation_rate)));
    let reaction_integral = trapezoid(samples.iter().map(|s| (s.t, s.reaction_rate)));
    let residual = (last.entropy - first.entropy + dissipation_integral) - reaction_integral;
    Ok(EntropyAudit {
        entropy_initial: first.entropy,
        entropy_final: last.entropy,
        dissipation_integral,
        reaction_integral,
        residual,
    })
}

/// Gronwall envelope for the second moment.
///
/// With `K(t) = ∫ n |∇m|²`, `Λ = sup |A|` and `Ĝ = max |G|`, the moment obeys
/// `M'(t) ≤ (1 + Ĝ) M + Λ² K(t)`, so `M(t) ≤ (M(0) + C t) e^{C t}` with
/// `C = max(1 + Ĝ, Λ² sup_t K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEnvelope {
    pub constant: f64,
    /// Largest `M(t) / bound(t)` over the records.
    pub worst_ratio: f64,
    pub violations: usize,
}

pub fn second_moment_envelope(records: &[DiagnosticsRecord], growth_bound: f64, tensor_sup: f64) -> MomentEnvelope {
    let kinetic = records.iter().map(|r| r.dissipation_kinetic).fold(0.0, f64::max);
    let constant = (1.0 + growth_bound).max(tensor_sup * tensor_sup * kinetic);
    let Some(first) = records.first() else {
        return MomentEnvelope { constant, worst_ratio: 0.0, violations: 0 };
    };
    let (m0, t0) = (first.second_moment, first.t);
    let mut worst_ratio: f64 = 0.0;
    let mut violations = 0;
    for r in records {
        let s = r.t - t0;
        let bound = (m0 + constant * s) * (constant * s).exp();
        if r.second_moment > bound {
            violations += 1;
        }
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(r.second_moment / bound);
        }
    }
    MomentEnvelope { constant, worst_ratio, violations }
}

/// Everything needed to turn a `State` into observables.
#[derive(Debug, Clone)]
pub struct Diagnostics<'a> {
    tensor: &'a TensorField,
    laws: GrowthLaws,
    nu: f64,
    weight: SecondMomentWeight,
}

impl<'a> Diagnostics<'a> {
    pub fn new(tensor: &'a TensorField, laws: GrowthLaws, nu: f64) -> Self {
        Self { tensor, laws, nu, weight: SecondMomentWeight::new(tensor.grid()) }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn record(&self, state: &State) -> Result<DiagnosticsRecord, DiagnosticsError> {
        let n = state.total();
        let grad_m = gradient(&state.m);
        let mass1 = integrate(&state.n1);
        let mass2 = integrate(&state.n2);
        Ok(DiagnosticsRecord {
            t: state.t,
            mass1,
            mass2,
            mass_total: mass1 + mass2,
            linf_total: n.max_abs(),
            second_moment: second_moment(&n, &self.weight)?,
            entropy: entropy(&n)?,
            dissipation_rate: dissipation_rate(&n, &state.m, self.tensor, state.t, self.nu)?,
            dissipation_kinetic: dissipation_kinetic(&n, &state.m)?,
            sqrt_nu_grad_m_l2: self.nu.sqrt() * grad_m.l2_norm(),
            overlap: overlap(&state.n1, &state.n2)?,
            clipped_mass_cum: state.clipped_total(),
        })
    }

    pub fn audit_sample(&self, step: usize, state: &State) -> Result<AuditSample, DiagnosticsError> {
        let n = state.total();
        Ok(AuditSample {
            step,
            t: state.t,
            entropy: entropy(&n)?,
            dissipation_rate: dissipation_rate(&n, &state.m, self.tensor, state.t, self.nu)?,
            reaction_rate: reaction_rate(&state.n1, &state.n2, &self.laws)?,
        })
    }
}

/// Observer that keeps the diagnostics series (every `cadence` steps plus
/// the first and last) and, optionally, a full-resolution audit trail.
#[derive(Debug)]
pub struct Recorder<'a> {
    diagnostics: Diagnostics<'a>,
    cadence: usize,
    audit: bool,
    records: Vec<DiagnosticsRecord>,
    samples: Vec<AuditSample>,
    error: Option<DiagnosticsError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<DiagnosticsRecord>,
    pub samples: Vec<AuditSample>,
}

impl Trajectory {
    pub fn audit(&self) -> Result<EntropyAudit, DiagnosticsError> {
        entropy_audit(&self.samples)
    }

    /// Trapezoid integral of a record column over the recorded times.
    pub fn integrate_records(&self, f: impl Fn(&DiagnosticsRecord) -> f64) -> f64 {
        trapezoid(self.records.iter().map(|r| (r.t, f(r))))
    }
}

impl<'a> Recorder<'a> {
    pub fn new(diagnostics: Diagnostics<'a>, cadence: usize, audit: bool) -> Self {
        Self { diagnostics, cadence: cadence.max(1), audit, records: vec![], samples: vec![], error: None }
    }

    pub fn finish(self) -> Result<Trajectory, DiagnosticsError> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(Trajectory { records: self.records, samples: self.samples }),
        }
    }
}

impl Observer for Recorder<'_> {
    fn observe(&mut self, info: &StepInfo, state: &State) {
        if self.error.is_some() {
            return;
        }
        let result = (|| {
            if info.step.is_multiple_of(self.cadence) || info.is_final {
                self.records.push(self.diagnostics.record(state)?);
            }
            if self.audit {
                self.samples.push(self.diagnostics.audit_sample(info.step, state)?);
            }
            Ok(())
        })();
        if let Err(e) = result {
            self.error = Some(e);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brinkman::{solve_brinkman, BrinkmanOperator, SolverConfig};
    use crate::evolution::{Evolution, GrowthLaw, Mode, StepperConfig};
    use crate::field::{Boundary, Grid, TensorPreset};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::E;

    fn grid1(half: f64, cells: usize) -> Grid {
        Grid::new(1, half, cells, Boundary::NoFlux).unwrap()
    }

    #[test]
    fn entropy_examples() {
        let g = grid1(1.0, 8);
        assert_eq!(entropy(&ScalarField::zeros(&g)).unwrap(), 0.0);
        assert!((entropy(&ScalarField::constant(&g, 1.0)).unwrap() + 2.0).abs() < 1e-14);
        let unit = grid1(0.5, 8);
        assert!(entropy(&ScalarField::constant(&unit, E)).unwrap().abs() < 1e-14);
        let mut neg = ScalarField::zeros(&g);
        neg[2] = -1e-3;
        assert!(matches!(entropy(&neg), Err(DiagnosticsError::Negative { cell: 2, .. })));
    }

    #[test]
    fn dissipation_examples() {
        let g = grid1(1.0, 10);
        let a = TensorField::new(&g, TensorPreset::Diagonal { a: [3.0, 0.0] }).unwrap();
        let c = ScalarField::constant(&g, 0.4);
        assert_eq!(dissipation_rate(&c, &c, &a, 0.0, 0.1).unwrap(), 0.0);
        assert_eq!(dissipation_rate(&c, &c, &a, 0.0, 0.0).unwrap(), 0.0);
        // constant gradient 2: 9 interior faces, each 3 * 4 * dx
        let ramp = ScalarField::from_fn(&g, |x| 2.0 * x[0]);
        let d = dissipation_rate(&ramp, &ramp, &a, 0.0, 0.0).unwrap();
        assert!((d - 3.0 * 4.0 * 9.0 * g.dx()).abs() < 1e-12);
    }

    #[test]
    fn brinkman_form_matches_direct_form() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for grid in [grid1(2.0, 50), Grid::new(2, 1.0, 10, Boundary::Periodic).unwrap()] {
            let a = TensorField::new(&grid, TensorPreset::Diagonal { a: [1.0, 2.0] }).unwrap();
            for nu in [1e-2, 1e-1, 1.0] {
                let n = ScalarField::from_vec(&grid, (0..grid.len()).map(|_| rng.random_range(0.0..1.0)).collect())
                    .unwrap();
                let op = BrinkmanOperator::new(&a, nu, 0.0).unwrap();
                let m = solve_brinkman(&op, &n, &SolverConfig::default()).unwrap().m;
                let via_identity = dissipation_rate(&n, &m, &a, 0.0, nu).unwrap();
                let direct = dissipation_direct(&n, &m, &a, 0.0).unwrap();
                let consistency = crate::brinkman::brinkman_consistency(&op, &m, &n).unwrap();
                let bound = n.l2_norm() * consistency + 1e-12;
                assert!((via_identity - direct).abs() <= bound, "{via_identity} vs {direct}");
            }
        }
    }

    #[test]
    fn kinetic_examples() {
        let g = Grid::new(2, 1.0, 6, Boundary::NoFlux).unwrap();
        let n = ScalarField::constant(&g, 1.0);
        assert_eq!(dissipation_kinetic(&n, &ScalarField::constant(&g, 2.0)).unwrap(), 0.0);
        let m = ScalarField::from_fn(&g, |x| x[0] * x[1] + x[0]);
        let k = dissipation_kinetic(&n, &m).unwrap();
        let grad = gradient(&m);
        assert!((k - grad.inner(&grad)).abs() < 1e-12);
    }

    /// Composite Simpson for the moment oracle.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut s = f(a) + f(b);
        for i in 1..panels {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn second_moment_examples() {
        let g = grid1(1.0, 64);
        let w = SecondMomentWeight::new(&g);
        assert_eq!(second_moment(&ScalarField::zeros(&g), &w).unwrap(), 0.0);
        let err = |cells: usize| {
            let g = grid1(1.0, cells);
            (second_moment(&ScalarField::constant(&g, 1.0), &SecondMomentWeight::new(&g)).unwrap() - 2.0 / 3.0).abs()
        };
        assert!(((err(32) / err(64)).log2() - 2.0).abs() < 0.01);

        let g = grid1(4.0, 512);
        let gauss = |x: f64| (-x * x / 2.0).exp();
        let oracle = simpson(|x| x * x * gauss(x), -4.0, 4.0, 100_000);
        let got = second_moment(&ScalarField::from_fn(&g, |x| gauss(x[0])), &SecondMomentWeight::new(&g)).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-6);
    }

    #[test]
    fn overlap_and_distances() {
        let g = grid1(1.0, 8);
        let left = ScalarField::from_fn(&g, |x| if x[0] < 0.0 { 1.0 } else { 0.0 });
        let right = ScalarField::from_fn(&g, |x| if x[0] > 0.0 { 1.0 } else { 0.0 });
        assert_eq!(overlap(&left, &right).unwrap(), 0.0);
        let one = ScalarField::constant(&g, 1.0);
        assert!((overlap(&one, &one).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(l2_distance(&one, &one).unwrap(), 0.0);
        assert!((l2_distance(&one, &ScalarField::zeros(&g)).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        let other = grid1(1.0, 16);
        assert!(l2_distance(&one, &ScalarField::zeros(&other)).is_err());
    }

    #[test]
    fn distances_match_brute_force() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let g = Grid::new(2, 1.5, 7, Boundary::Periodic).unwrap();
        let rand_field =
            |rng: &mut rand::rngs::StdRng| (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (a, b) = (rand_field(&mut rng), rand_field(&mut rng));
        let brute = (a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * g.dx() * g.dx()).sqrt();
        let fa = ScalarField::from_vec(&g, a.clone()).unwrap();
        let fb = ScalarField::from_vec(&g, b.clone()).unwrap();
        assert!((l2_distance(&fa, &fb).unwrap() - brute).abs() < 1e-14);

        let fa_faces = FaceField::from_components(&g, vec![a.clone(), b.clone()]).unwrap();
        let fb_faces = FaceField::from_components(&g, vec![b.clone(), a.clone()]).unwrap();
        let brute = (2.0 * a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() * g.dx() * g.dx()).sqrt();
        assert!((face_l2_distance(&fa_faces, &fb_faces).unwrap() - brute).abs() < 1e-13);
    }

    #[test]
    fn audit_requires_every_step() {
        let s = |step, t| AuditSample { step, t, entropy: 0.0, dissipation_rate: 0.0, reaction_rate: 0.0 };
        assert!(entropy_audit(&[]).is_err());
        assert!(matches!(
            entropy_audit(&[s(0, 0.0), s(2, 0.1)]),
            Err(DiagnosticsError::MissingStep { index: 1, expected: 1, got: 2 })
        ));
        let audit = entropy_audit(&[s(0, 0.0), s(1, 0.1), s(2, 0.2)]).unwrap();
        assert_eq!(audit.residual, 0.0);
    }

    #[test]
    fn audit_trapezoid_by_hand() {
        let samples = [
            AuditSample { step: 0, t: 0.0, entropy: 1.0, dissipation_rate: 2.0, reaction_rate: 1.0 },
            AuditSample { step: 1, t: 0.5, entropy: 0.5, dissipation_rate: 1.0, reaction_rate: 0.0 },
        ];
        let a = entropy_audit(&samples).unwrap();
        assert_eq!(a.dissipation_integral, 0.75);
        assert_eq!(a.reaction_integral, 0.25);
        assert_eq!(a.residual, (0.5 - 1.0 + 0.75) - 0.25);
    }

    fn audited_run(mode: Mode, n1: ScalarField, n2: ScalarField, slope: f64, t_final: f64) -> Trajectory {
        let grid = *n1.grid();
        let a = TensorField::identity(&grid);
        let laws = crate::evolution::GrowthLaws::uniform(GrowthLaw::new(1.0, slope).unwrap());
        let evo = Evolution::new(&a, laws, StepperConfig::new(mode), SolverConfig::default()).unwrap();
        let s = evo.initial_state(n1, n2, 0.0).unwrap();
        let mut rec = Recorder::new(Diagnostics::new(&a, laws, mode.nu()), 1, true);
        evo.run(s, t_final, &mut [&mut rec]).unwrap();
        rec.finish().unwrap()
    }

    #[test]
    fn audit_of_trivial_trajectories() {
        let g = grid1(1.0, 16);
        for mode in [Mode::Darcy, Mode::Brinkman { nu: 0.1 }] {
            let steady =
                audited_run(mode, ScalarField::constant(&g, 1.0), ScalarField::zeros(&g), 1.0, 0.3).audit().unwrap();
            // H[1] on measure 2 is -2 and stays there
            assert!((steady.entropy_initial + 2.0).abs() < 1e-14);
            assert!((steady.entropy_final - steady.entropy_initial).abs() < 1e-14);
            assert_eq!(steady.dissipation_integral, 0.0);
            assert_eq!(steady.reaction_integral, 0.0);
            assert!(steady.residual.abs() < 1e-14);
            let zero = audited_run(mode, ScalarField::zeros(&g), ScalarField::zeros(&g), 1.0, 0.3).audit().unwrap();
            assert_eq!(
                zero,
                EntropyAudit {
                    entropy_initial: 0.0,
                    entropy_final: 0.0,
                    dissipation_integral: 0.0,
                    reaction_integral: 0.0,
                    residual: 0.0
                }
            );
        }
    }

    #[test]
    fn audit_residual_shrinks_under_refinement() {
        let residual = |cells: usize| {
            let g = grid1(2.0, cells);
            let bump = |c: f64, a: f64| ScalarField::from_fn(&g, move |x| a * (-(x[0] - c).powi(2) / 0.5).exp());
            audited_run(Mode::Brinkman { nu: 0.01 }, bump(-0.5, 0.5), bump(0.5, 0.4), 1.0, 0.2)
                .audit()
                .unwrap()
                .residual
                .abs()
        };
        let (coarse, fine) = (residual(64), residual(256));
        let order = (coarse / fine).log2() / 2.0;
        assert!(order >= 0.8, "{coarse} -> {fine}, order {order}");
    }

    #[test]
    fn darcy_dissipation_is_nonnegative() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        let g = Grid::new(2, 1.0, 8, Boundary::NoFlux).unwrap();
        let a = TensorField::new(&g, TensorPreset::Rotation { a: [0.5, 2.0], angle: 1.1 }).unwrap();
        for _ in 0..20 {
            let n = ScalarField::from_vec(&g, (0..g.len()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
            assert!(dissipation_rate(&n, &n, &a, 0.0, 0.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn moment_envelope_flags_fast_growth() {
        let rec = |t: f64, m2: f64| DiagnosticsRecord {
            t,
            mass1: 0.0,
            mass2: 0.0,
            mass_total: 0.0,
            linf_total: 0.0,
            second_moment: m2,
            entropy: 0.0,
            dissipation_rate: 0.0,
            dissipation_kinetic: 0.5,
            sqrt_nu_grad_m_l2: 0.0,
            overlap: 0.0,
            clipped_mass_cum: 0.0,
        };
        // C = max(1 + 1, 4 * 0.5) = 2
        let ok = [rec(0.0, 1.0), rec(0.5, (1.0 + 1.0) * 1f64.exp())];
        let env = second_moment_envelope(&ok, 1.0, 2.0);
        assert_eq!(env.constant, 2.0);
        assert_eq!(env.violations, 0);
        assert!((env.worst_ratio - 1.0).abs() < 1e-15);
        let bad = [rec(0.0, 1.0), rec(0.5, 6.0)];
        assert_eq!(second_moment_envelope(&bad, 1.0, 2.0).violations, 1);
    }

    proptest! {
        #[test]
        fn averaging_two_cells_lowers_entropy(a in 0.0..5.0f64, b in 0.0..5.0f64) {
            let g = grid1(1.0, 2);
            let split = ScalarField::from_vec(&g, vec![a, b]).unwrap();
            let mean = ScalarField::constant(&g, 0.5 * (a + b));
            prop_assert!(entropy(&split).unwrap() >= entropy(&mean).unwrap() - 1e-12);
        }
    }
}
