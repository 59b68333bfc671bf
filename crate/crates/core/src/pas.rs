//! PCA-based adaptive search: coordinate training and corrected sampling.
//!
//! Training walks the student schedule from `i = N` to `1`. At each step every
//! sample gets its own trajectory basis `U` (see [`crate::subspace::pca_basis`]), the
//! batch shares one coordinate vector `C`, and `C` is fitted by gradient descent so
//! that `φ(x_i, U C)` lands on the teacher state `x^gt_{i-1}`. A step keeps its
//! correction only when the batch loss improves by more than the tolerance `τ`;
//! accepted coordinates go into a [`CorrectionTable`] that [`sample_with_correction`]
//! replays on new noise.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PasError, Result};
use crate::metrics::Loss;
use crate::rng::{self, Purpose};
use crate::scorefield::DirectionField;
use crate::solvers::{
    affine_decomposition, generate_ground_truth, run_sampler, solver_step, HistoryBuffer, SolverSpec,
    TeacherKind, TrajectoryRecord,
};
use crate::subspace::{pca_basis, CoordinateVector, OrthonormalBasis, DEFAULT_BASIS_SIZE};
use crate::timegrid::TimeSchedule;
use crate::Vector;

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TAU: f64 = 1e-4;

/// How shared coordinates map to a per-sample direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `d̃ = Σ c_j u_j`; `c_1` starts at the batch-mean `‖d‖`.
    #[default]
    Absolute,
    /// `d̃ = ‖d‖ Σ γ_j u_j`; `γ` starts at `(1, 0, ..., 0)`.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Exact gradient for affine solvers, finite differences otherwise.
    #[default]
    Analytic,
    FiniteDifference,
}

fn default_lr() -> f64 {
    1e-2
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_iterations() -> usize {
    100
}
fn default_trajectories() -> usize {
    512
}
fn default_basis() -> usize {
    DEFAULT_BASIS_SIZE
}
fn default_teacher_steps() -> usize {
    100
}
fn default_teacher() -> TeacherKind {
    TeacherKind::Heun
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub loss: Loss,
    /// Tolerance for the first accepted correction.
    #[serde(default = "default_tau", with = "tolerance_serde")]
    pub tau: f64,
    /// Tolerance once a correction has been accepted.
    #[serde(default = "default_tau", with = "tolerance_serde")]
    pub tau_after_first: f64,
    #[serde(default = "default_iterations")]
    pub inner_iterations: usize,
    /// Mini-batch size; `None` uses the whole batch every iteration.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_trajectories")]
    pub trajectory_count: usize,
    #[serde(default = "default_basis")]
    pub basis_size: usize,
    #[serde(default = "default_teacher_steps")]
    pub teacher_steps: usize,
    #[serde(default = "default_teacher")]
    pub teacher: TeacherKind,
    #[serde(default)]
    pub parameterization: Parameterization,
    #[serde(default)]
    pub gradient: GradientMode,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            loss: Loss::L1,
            tau: DEFAULT_TAU,
            tau_after_first: DEFAULT_TAU,
            inner_iterations: default_iterations(),
            batch_size: None,
            trajectory_count: default_trajectories(),
            basis_size: DEFAULT_BASIS_SIZE,
            teacher_steps: default_teacher_steps(),
            teacher: TeacherKind::Heun,
            parameterization: Parameterization::Absolute,
            gradient: GradientMode::Analytic,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for first-order solvers with large truncation error (Euler/DDIM).
    pub fn large_error_solver() -> Self {
        Self {
            tau: 1e-2,
            ..Self::default()
        }
    }

    /// Settings for multistep solvers with small truncation error (iPNDM).
    pub fn small_error_solver() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(PasError::invalid(format!("train.{field}: {why}")));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", format!("must be finite and > 0, got {}", self.learning_rate));
        }
        if !(self.tau >= 0.0) {
            return bad("tau", format!("must be >= 0, got {}", self.tau));
        }
        if !(self.tau_after_first >= 0.0) {
            return bad("tau_after_first", format!("must be >= 0, got {}", self.tau_after_first));
        }
        if self.inner_iterations == 0 {
            return bad("inner_iterations", "must be >= 1".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size", "must be >= 1".into());
        }
        if self.trajectory_count == 0 {
            return bad("trajectory_count", "must be >= 1".into());
        }
        if !(2..=4).contains(&self.basis_size) {
            return bad("basis_size", format!("must be 2..=4, got {}", self.basis_size));
        }
        if self.teacher_steps == 0 {
            return bad("teacher_steps", "must be >= 1".into());
        }
        self.loss.validate()
    }
}

/// Keep the correction iff `L_uncorrected - (L_corrected + τ) > 0`.
pub fn adaptive_accept(loss_corrected: f64, loss_uncorrected: f64, tau: f64) -> bool {
    loss_uncorrected - (loss_corrected + tau) > 0.0
}

/// Direction produced by coordinates in a sample's basis. Coordinates beyond the
/// basis size (degenerate bases) are ignored.
pub fn corrected_direction(
    basis: &OrthonormalBasis,
    coords: &CoordinateVector,
    direction_norm: f64,
    parameterization: Parameterization,
) -> Vector {
    let scale = match parameterization {
        Parameterization::Absolute => 1.0,
        Parameterization::Relative => direction_norm,
    };
    let mut out = Vector::zeros(basis.dim());
    for (u, c) in basis.vectors().iter().zip(coords.as_slice()) {
        out.axpy(scale * c, u, 1.0);
    }
    out
}

/// One sample's view of a training step.
#[derive(Debug, Clone, Copy)]
pub struct StepSample<'a> {
    pub state: &'a Vector,
    pub direction: &'a Vector,
    pub basis: &'a OrthonormalBasis,
    pub history: &'a HistoryBuffer,
    /// `x^gt_{t_{i-1}}`.
    pub target: &'a Vector,
}

struct Prepared {
    /// `φ(x, d) = base + sensitivity · d` for affine solvers.
    affine: Option<(Vector, f64)>,
    direction_norm: f64,
}

/// Batch-mean loss of shared coordinates at one step, with analytic and
/// finite-difference gradients.
pub struct CoordinateObjective<'a, F: DirectionField + ?Sized> {
    field: &'a F,
    solver: SolverSpec,
    t_i: f64,
    t_prev: f64,
    loss: Loss,
    parameterization: Parameterization,
    batch: &'a [StepSample<'a>],
    prepared: Vec<Prepared>,
}

impl<'a, F: DirectionField + ?Sized> CoordinateObjective<'a, F> {
    pub fn new(
        field: &'a F,
        solver: SolverSpec,
        t_i: f64,
        t_prev: f64,
        loss: Loss,
        parameterization: Parameterization,
        batch: &'a [StepSample<'a>],
    ) -> Result<Self> {
        if batch.is_empty() {
            return Err(PasError::invalid("coordinate optimization needs a non-empty batch"));
        }
        let prepared = batch
            .iter()
            .map(|s| {
                if s.target.len() != s.state.len() || s.basis.dim() != s.state.len() {
                    return Err(PasError::invalid("batch sample dimensions disagree"));
                }
                Ok(Prepared {
                    affine: affine_decomposition(solver, s.state, s.history, t_i, t_prev),
                    direction_norm: s.direction.norm(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            field,
            solver,
            t_i,
            t_prev,
            loss,
            parameterization,
            batch,
            prepared,
        })
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    fn output(&self, n: usize, coords: &CoordinateVector) -> Result<Vector> {
        let s = &self.batch[n];
        let p = &self.prepared[n];
        let d = corrected_direction(s.basis, coords, p.direction_norm, self.parameterization);
        match &p.affine {
            Some((base, sens)) => Ok(base + d * *sens),
            None => Ok(solver_step(self.field, self.solver, s.state, &d, s.history, self.t_i, self.t_prev)?.0),
        }
    }

    /// Solver output when the direction is taken as-is.
    pub fn uncorrected_output(&self, n: usize) -> Result<Vector> {
        let s = &self.batch[n];
        Ok(solver_step(self.field, self.solver, s.state, s.direction, s.history, self.t_i, self.t_prev)?.0)
    }

    /// The actual solver step with corrected direction (used for state updates).
    pub fn corrected_step(&self, n: usize, coords: &CoordinateVector) -> Result<(Vector, Vector)> {
        let s = &self.batch[n];
        let d = corrected_direction(s.basis, coords, self.prepared[n].direction_norm, self.parameterization);
        let x = solver_step(self.field, self.solver, s.state, &d, s.history, self.t_i, self.t_prev)?.0;
        Ok((x, d))
    }

    fn mean_over(&self, indices: &[usize], f: impl Fn(usize) -> Result<f64> + Sync) -> Result<f64> {
        let parts: Vec<f64> = indices.par_iter().map(|&n| f(n)).collect::<Result<_>>()?;
        Ok(parts.iter().sum::<f64>() / indices.len() as f64)
    }

    fn all(&self) -> Vec<usize> {
        (0..self.batch.len()).collect()
    }

    pub fn loss(&self, coords: &CoordinateVector) -> Result<f64> {
        self.loss_on(&self.all(), coords)
    }

    fn loss_on(&self, indices: &[usize], coords: &CoordinateVector) -> Result<f64> {
        self.mean_over(indices, |n| {
            let r = self.output(n, coords)? - self.batch[n].target;
            Ok(self.loss.value(&r))
        })
    }

    pub fn uncorrected_loss(&self) -> Result<f64> {
        self.mean_over(&self.all(), |n| {
            let r = self.uncorrected_output(n)? - self.batch[n].target;
            Ok(self.loss.value(&r))
        })
    }

    /// Exact gradient; `None` when the solver is not affine in the direction.
    pub fn analytic_gradient(&self, coords: &CoordinateVector) -> Option<Result<Vec<f64>>> {
        if !self.solver.is_affine() {
            return None;
        }
        Some(self.analytic_gradient_on(&self.all(), coords))
    }

    fn analytic_gradient_on(&self, indices: &[usize], coords: &CoordinateVector) -> Result<Vec<f64>> {
        let k = coords.len();
        let parts: Vec<Vec<f64>> = indices
            .par_iter()
            .map(|&n| {
                let s = &self.batch[n];
                let p = &self.prepared[n];
                let (base, sens) = p.affine.as_ref().expect("affine solver");
                let d = corrected_direction(s.basis, coords, p.direction_norm, self.parameterization);
                let r = base + d * *sens - s.target;
                let g = self.loss.gradient(&r);
                let scale = match self.parameterization {
                    Parameterization::Absolute => *sens,
                    Parameterization::Relative => *sens * p.direction_norm,
                };
                let mut out = vec![0.0; k];
                for (o, u) in out.iter_mut().zip(s.basis.vectors()) {
                    *o = scale * u.dot(&g);
                }
                out
            })
            .collect();
        let mut grad = vec![0.0; k];
        for part in &parts {
            for (acc, v) in grad.iter_mut().zip(part) {
                *acc += v;
            }
        }
        let n = indices.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    /// Central differences with step `rel_step · max(1, |c_j|)`.
    pub fn finite_difference_gradient(&self, coords: &CoordinateVector, rel_step: f64) -> Result<Vec<f64>> {
        self.finite_difference_gradient_on(&self.all(), coords, rel_step)
    }

    fn finite_difference_gradient_on(
        &self,
        indices: &[usize],
        coords: &CoordinateVector,
        rel_step: f64,
    ) -> Result<Vec<f64>> {
        (0..coords.len())
            .map(|j| {
                let h = rel_step * coords.0[j].abs().max(1.0);
                let mut up = coords.clone();
                let mut down = coords.clone();
                up.0[j] += h;
                down.0[j] -= h;
                Ok((self.loss_on(indices, &up)? - self.loss_on(indices, &down)?) / (2.0 * h))
            })
            .collect()
    }

    fn gradient_on(&self, indices: &[usize], coords: &CoordinateVector, mode: GradientMode) -> Result<Vec<f64>> {
        match mode {
            GradientMode::Analytic if self.solver.is_affine() => self.analytic_gradient_on(indices, coords),
            _ => self.finite_difference_gradient_on(indices, coords, 1e-6),
        }
    }
}

/// Plain gradient descent on shared coordinates from `init`.
///
/// `step_index` only labels divergence errors and seeds the mini-batch order.
pub fn optimize_coordinates<F: DirectionField + ?Sized>(
    objective: &CoordinateObjective<'_, F>,
    init: &CoordinateVector,
    config: &TrainConfig,
    step_index: usize,
) -> Result<CoordinateVector> {
    let n = objective.len();
    let mut order: Vec<usize> = (0..n).collect();
    let batch = config.batch_size.unwrap_or(n).min(n);
    if batch < n {
        let mut rng = rng::stream(config.seed, Purpose::Minibatch, step_index as u64);
        order.shuffle(&mut rng);
    }
    let chunks: Vec<&[usize]> = order.chunks(batch).collect();

    let mut coords = init.clone();
    for iteration in 0..config.inner_iterations {
        let indices = chunks[iteration % chunks.len()];
        let loss = objective.loss_on(indices, &coords)?;
        if !loss.is_finite() {
            return Err(PasError::Divergence {
                step: step_index,
                iteration,
                loss,
            });
        }
        let grad = objective.gradient_on(indices, &coords, config.gradient)?;
        for (c, g) in coords.0.iter_mut().zip(&grad) {
            *c -= config.learning_rate * g;
        }
        if coords.0.iter().any(|c| !c.is_finite()) {
            return Err(PasError::Divergence {
                step: step_index,
                iteration,
                loss: f64::NAN,
            });
        }
    }
    let final_loss = objective.loss(&coords)?;
    if !final_loss.is_finite() {
        return Err(PasError::Divergence {
            step: step_index,
            iteration: config.inner_iterations,
            loss: final_loss,
        });
    }
    Ok(coords)
}

/// `(ρ, t_min, t_max, N)` of the schedule a table was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub rho: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub n: usize,
}

impl From<&TimeSchedule> for ScheduleParams {
    fn from(s: &TimeSchedule) -> Self {
        Self {
            rho: s.rho(),
            t_min: s.t_min(),
            t_max: s.t_max(),
            n: s.n_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionEntry {
    pub step: usize,
    pub coords: CoordinateVector,
}

/// Learned coordinates per corrected step, with the training provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionTable {
    pub format_version: u32,
    pub solver: SolverSpec,
    pub schedule: ScheduleParams,
    pub basis_k: usize,
    #[serde(default)]
    pub parameterization: Parameterization,
    pub loss: Loss,
    #[serde(with = "tolerance_serde")]
    pub tau: f64,
    pub lr: f64,
    pub trajectories: usize,
    pub seed: u64,
    /// Descending by step (training order).
    pub entries: Vec<CorrectionEntry>,
}

impl CorrectionTable {
    pub fn empty(solver: SolverSpec, schedule: &TimeSchedule, config: &TrainConfig, trajectories: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            solver,
            schedule: schedule.into(),
            basis_k: config.basis_size,
            parameterization: config.parameterization,
            loss: config.loss,
            tau: config.tau,
            lr: config.learning_rate,
            trajectories,
            seed: config.seed,
            entries: Vec::new(),
        }
    }

    pub fn corrected_steps(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.step).collect()
    }

    /// Number of stored scalars.
    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|e| e.coords.len()).sum()
    }

    pub fn get(&self, step: usize) -> Option<&CoordinateVector> {
        self.entries.iter().find(|e| e.step == step).map(|e| &e.coords)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PasError::IncompatibleTable(msg));
        if self.format_version != FORMAT_VERSION {
            return bad(format!("unsupported format_version {}", self.format_version));
        }
        if !(2..=4).contains(&self.basis_k) {
            return bad(format!("basis_k must be 2..=4, got {}", self.basis_k));
        }
        let mut last = usize::MAX;
        for e in &self.entries {
            if e.step == 0 || e.step > self.schedule.n {
                return bad(format!("step {} outside 1..={}", e.step, self.schedule.n));
            }
            if e.step >= last {
                return bad("entries must be strictly descending by step".into());
            }
            if e.coords.len() != self.basis_k {
                return bad(format!("step {} has {} coordinates, expected {}", e.step, e.coords.len(), self.basis_k));
            }
            if e.coords.as_slice().iter().any(|c| !c.is_finite()) {
                return bad(format!("step {} has non-finite coordinates", e.step));
            }
            last = e.step;
        }
        Ok(())
    }

    /// Errors unless the table was trained for this solver and schedule.
    pub fn check_compatible(&self, solver: SolverSpec, schedule: &TimeSchedule) -> Result<()> {
        if self.solver != solver {
            return Err(PasError::IncompatibleTable(format!(
                "table solver {:?} does not match {:?}",
                self.solver, solver
            )));
        }
        if self.schedule != ScheduleParams::from(schedule) {
            return Err(PasError::IncompatibleTable(format!(
                "table schedule {:?} does not match {:?}",
                self.schedule,
                ScheduleParams::from(schedule)
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: CorrectionTable = serde_json::from_str(text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Corrected steps as a comma-separated list in sampling order, e.g. `6,4,2`.
pub fn format_corrected_steps(table: &CorrectionTable) -> String {
    let steps = table.corrected_steps();
    if steps.is_empty() {
        return "-".into();
    }
    steps.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

/// Per-step record of the adaptive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub t_i: f64,
    pub loss_uncorrected: f64,
    pub loss_corrected: f64,
    #[serde(with = "tolerance_serde")]
    pub tau: f64,
    pub accepted: bool,
    pub coords: CoordinateVector,
    pub mean_basis_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub table: CorrectionTable,
    pub log: Vec<StepLog>,
    /// Training-batch states after training (corrections applied), by sample.
    pub final_states: Vec<Vector>,
}

struct SampleState {
    x: Vector,
    history: HistoryBuffer,
}

/// Trains a correction table against teacher trajectories generated from `initial_noises`.
pub fn train_pas<F: DirectionField + ?Sized>(
    field: &F,
    solver: SolverSpec,
    schedule: &TimeSchedule,
    initial_noises: &[Vector],
    config: &TrainConfig,
) -> Result<CorrectionTable> {
    Ok(train_pas_with_log(field, solver, schedule, initial_noises, config)?.table)
}

pub fn train_pas_with_log<F: DirectionField + ?Sized>(
    field: &F,
    solver: SolverSpec,
    schedule: &TimeSchedule,
    initial_noises: &[Vector],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if initial_noises.is_empty() {
        return Err(PasError::invalid("training needs at least one initial noise"));
    }
    let ground_truth: Vec<Vec<Vector>> = initial_noises
        .par_iter()
        .map(|x| generate_ground_truth(field, schedule, x, config.teacher_steps, config.teacher))
        .collect::<Result<_>>()?;
    train_pas_against(field, solver, schedule, initial_noises, &ground_truth, config)
}

/// Training with caller-supplied targets `ground_truth[n][i] = x^gt_{t_i}`.
pub fn train_pas_against<F: DirectionField + ?Sized>(
    field: &F,
    solver: SolverSpec,
    schedule: &TimeSchedule,
    initial_noises: &[Vector],
    ground_truth: &[Vec<Vector>],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n_steps = schedule.n_steps();
    if initial_noises.is_empty() || ground_truth.len() != initial_noises.len() {
        return Err(PasError::invalid("need one ground-truth trajectory per initial noise"));
    }
    if ground_truth.iter().any(|g| g.len() != n_steps + 1) {
        return Err(PasError::invalid("ground-truth trajectories must have N+1 states"));
    }

    let mut table = CorrectionTable::empty(solver, schedule, config, initial_noises.len());
    let mut log = Vec::with_capacity(n_steps);
    let mut samples: Vec<SampleState> = initial_noises
        .iter()
        .map(|x| SampleState {
            x: x.clone(),
            history: HistoryBuffer::new(x.clone()),
        })
        .collect();

    for i in (1..=n_steps).rev() {
        let (t_i, t_prev) = (schedule.time(i), schedule.time(i - 1));
        let per_sample: Vec<(Vector, OrthonormalBasis)> = samples
            .par_iter()
            .map(|s| {
                let d = field.noise_prediction(&s.x, t_i)?;
                let basis = pca_basis(&s.history, &d, config.basis_size)?;
                Ok((d, basis))
            })
            .collect::<Result<_>>()?;

        let batch: Vec<StepSample<'_>> = samples
            .iter()
            .zip(&per_sample)
            .zip(ground_truth)
            .map(|((s, (d, basis)), gt)| StepSample {
                state: &s.x,
                direction: d,
                basis,
                history: &s.history,
                target: &gt[i - 1],
            })
            .collect();
        let objective = CoordinateObjective::new(
            field,
            solver,
            t_i,
            t_prev,
            config.loss,
            config.parameterization,
            &batch,
        )?;

        let mut init = vec![0.0; config.basis_size];
        init[0] = match config.parameterization {
            Parameterization::Absolute => {
                per_sample.iter().map(|(d, _)| d.norm()).sum::<f64>() / per_sample.len() as f64
            }
            Parameterization::Relative => 1.0,
        };
        let coords = optimize_coordinates(&objective, &CoordinateVector(init), config, i)?;

        let loss_uncorrected = objective.uncorrected_loss()?;
        let loss_corrected = objective.loss(&coords)?;
        let tau = if table.entries.is_empty() {
            config.tau
        } else {
            config.tau_after_first
        };
        let accepted = adaptive_accept(loss_corrected, loss_uncorrected, tau);
        let mean_basis_size =
            per_sample.iter().map(|(_, b)| b.len() as f64).sum::<f64>() / per_sample.len() as f64;

        let updates: Vec<(Vector, Vector)> = (0..samples.len())
            .into_par_iter()
            .map(|n| {
                if accepted {
                    objective.corrected_step(n, &coords)
                } else {
                    Ok((objective.uncorrected_output(n)?, per_sample[n].0.clone()))
                }
            })
            .collect::<Result<_>>()?;
        drop(objective);
        drop(batch);

        for (s, (x, d)) in samples.iter_mut().zip(updates) {
            s.x = x;
            s.history.push(d)?;
        }
        if accepted {
            table.entries.push(CorrectionEntry {
                step: i,
                coords: coords.clone(),
            });
        }
        log.push(StepLog {
            step: i,
            t_i,
            loss_uncorrected,
            loss_corrected,
            tau,
            accepted,
            coords,
            mean_basis_size,
        });
    }

    Ok(TrainOutcome {
        table,
        log,
        final_states: samples.into_iter().map(|s| s.x).collect(),
    })
}

/// Samples with the table's corrections replayed at its steps.
pub fn sample_with_correction<F: DirectionField + ?Sized>(
    field: &F,
    solver: SolverSpec,
    schedule: &TimeSchedule,
    x_t_max: &Vector,
    table: &CorrectionTable,
) -> Result<TrajectoryRecord> {
    table.validate()?;
    table.check_compatible(solver, schedule)?;
    let by_step: BTreeMap<usize, &CoordinateVector> = table.entries.iter().map(|e| (e.step, &e.coords)).collect();
    if by_step.is_empty() {
        return Ok(run_sampler(field, solver, schedule, x_t_max, None)?.0);
    }
    let hook = |i: usize, history: &HistoryBuffer, d: &Vector| -> Result<Option<Vector>> {
        let Some(coords) = by_step.get(&i) else {
            return Ok(None);
        };
        let basis = pca_basis(history, d, table.basis_k)?;
        Ok(Some(corrected_direction(&basis, coords, d.norm(), table.parameterization)))
    };
    Ok(run_sampler(field, solver, schedule, x_t_max, Some(&hook))?.0)
}

/// Serializes tolerances as numbers, with `"inf"` standing in for `+∞`.
mod tolerance_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "+inf" | "infinity" | "Infinity") => Ok(f64::INFINITY),
            Raw::Text(t) => Err(de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}
