//! Student and teacher ODE solvers for `dx/dt = ε(x, t)`.
//!
//! Every student step has the form `x_{i-1} = φ(x_i, d_i, t_i, t_{i-1})`. For Euler
//! and iPNDM `φ` is affine in the current direction `d_i`; the slope is reported as
//! the step's sensitivity so coordinate training can use exact gradients.

use serde::{Deserialize, Serialize};

use crate::error::{PasError, Result};
use crate::scorefield::DirectionField;
use crate::timegrid::{refine_for_teacher, TimeSchedule};
use crate::Vector;

pub const DEFAULT_IPNDM_ORDER: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Euler,
    Ipndm,
    Heun,
}

/// Solver choice; `order` is present exactly for iPNDM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSolverSpec", into = "RawSolverSpec")]
pub struct SolverSpec {
    kind: SolverKind,
    order: Option<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolverSpec {
    kind: SolverKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order: Option<u8>,
}

impl TryFrom<RawSolverSpec> for SolverSpec {
    type Error = PasError;

    fn try_from(raw: RawSolverSpec) -> Result<Self> {
        match (raw.kind, raw.order) {
            (SolverKind::Ipndm, None) => SolverSpec::ipndm(DEFAULT_IPNDM_ORDER),
            (SolverKind::Ipndm, Some(order)) => SolverSpec::ipndm(order),
            (kind, None) => Ok(SolverSpec { kind, order: None }),
            (kind, Some(_)) => Err(PasError::invalid(format!(
                "solver order is only meaningful for ipndm, not {kind:?}"
            ))),
        }
    }
}

impl From<SolverSpec> for RawSolverSpec {
    fn from(s: SolverSpec) -> Self {
        RawSolverSpec {
            kind: s.kind,
            order: s.order,
        }
    }
}

impl SolverSpec {
    pub const EULER: SolverSpec = SolverSpec {
        kind: SolverKind::Euler,
        order: None,
    };
    pub const HEUN: SolverSpec = SolverSpec {
        kind: SolverKind::Heun,
        order: None,
    };

    pub fn ipndm(order: u8) -> Result<Self> {
        if !(1..=4).contains(&order) {
            return Err(PasError::invalid(format!("ipndm order must be 1..=4, got {order}")));
        }
        Ok(SolverSpec {
            kind: SolverKind::Ipndm,
            order: Some(order),
        })
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn order(&self) -> Option<u8> {
        self.order
    }

    /// Whether the step is affine in the current direction.
    pub fn is_affine(&self) -> bool {
        !matches!(self.kind, SolverKind::Heun)
    }

    /// Model evaluations per step.
    pub fn evaluations_per_step(&self) -> usize {
        match self.kind {
            SolverKind::Heun => 2,
            _ => 1,
        }
    }
}

/// The buffer `Q`: the starting state followed by every direction used so far.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    origin: Vector,
    directions: Vec<Vector>,
}

impl HistoryBuffer {
    pub fn new(origin: Vector) -> Self {
        Self {
            origin,
            directions: Vec::new(),
        }
    }

    pub fn origin(&self) -> &Vector {
        &self.origin
    }

    /// Oldest first.
    pub fn directions(&self) -> &[Vector] {
        &self.directions
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn push(&mut self, d: Vector) -> Result<()> {
        if d.len() != self.dim() {
            return Err(PasError::invalid(format!(
                "direction has dimension {} but the buffer holds {}",
                d.len(),
                self.dim()
            )));
        }
        self.directions.push(d);
        Ok(())
    }

    /// Rows of the trajectory matrix: origin, then directions.
    pub fn rows(&self) -> impl Iterator<Item = &Vector> {
        std::iter::once(&self.origin).chain(self.directions.iter())
    }

    pub fn len(&self) -> usize {
        1 + self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// States `x_{t_i}` for `i = 0..=N` and directions `d_{t_i}` for `i = 1..=N`,
/// both addressed by schedule index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    times: Vec<f64>,
    states: Vec<Vector>,
    directions: Vec<Vector>,
}

impl TrajectoryRecord {
    pub fn from_parts(times: Vec<f64>, states: Vec<Vector>, directions: Vec<Vector>) -> Result<Self> {
        if times.is_empty() || states.len() != times.len() || directions.len() + 1 != times.len() {
            return Err(PasError::invalid("trajectory needs N+1 times and states and N directions"));
        }
        let dim = states[0].len();
        if states.iter().chain(&directions).any(|v| v.len() != dim) {
            return Err(PasError::invalid("trajectory vectors disagree in dimension"));
        }
        Ok(Self {
            times,
            states,
            directions,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &Vector {
        &self.states[i]
    }

    /// Indexed by schedule index, so `states()[N]` is the initial noise.
    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    /// `d_{t_i}`, `1 <= i <= N`.
    pub fn direction(&self, i: usize) -> &Vector {
        &self.directions[i - 1]
    }

    /// `directions()[i - 1] = d_{t_i}`.
    pub fn directions(&self) -> &[Vector] {
        &self.directions
    }

    pub fn final_state(&self) -> &Vector {
        &self.states[0]
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }
}

/// Result of an affine step: the new state and `∂x_out/∂d` (a scalar multiple of I).
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: Vector,
    pub sensitivity: f64,
}

fn check_dims(x: &Vector, d: &Vector) -> Result<()> {
    if x.len() != d.len() {
        return Err(PasError::invalid(format!(
            "state has dimension {} but direction has {}",
            x.len(),
            d.len()
        )));
    }
    Ok(())
}

fn check_times(t_i: f64, t_prev: f64) -> Result<()> {
    if !(t_prev < t_i) {
        return Err(PasError::invalid(format!(
            "steps go backwards in time: t_prev ({t_prev}) must be < t_i ({t_i})"
        )));
    }
    Ok(())
}

/// DDIM under the EDM parameterization: `x + (t_prev - t_i) d`.
pub fn euler_step(x: &Vector, d: &Vector, t_i: f64, t_prev: f64) -> Result<Vector> {
    check_dims(x, d)?;
    check_times(t_i, t_prev)?;
    Ok(x + d * (t_prev - t_i))
}

/// Adams–Bashforth weights, newest direction first.
pub fn ipndm_coefficients(order: usize) -> &'static [f64] {
    const B1: [f64; 1] = [1.0];
    const B2: [f64; 2] = [3.0 / 2.0, -1.0 / 2.0];
    const B3: [f64; 3] = [23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0];
    const B4: [f64; 4] = [55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0];
    match order {
        1 => &B1,
        2 => &B2,
        3 => &B3,
        _ => &B4,
    }
}

/// Effective iPNDM order given how many earlier directions exist.
pub fn effective_order(order: u8, history: &HistoryBuffer) -> usize {
    (order as usize).min(history.directions.len() + 1)
}

pub fn ipndm_step(
    x: &Vector,
    d: &Vector,
    history: &HistoryBuffer,
    order: u8,
    t_i: f64,
    t_prev: f64,
) -> Result<StepOutput> {
    check_dims(x, d)?;
    check_times(t_i, t_prev)?;
    if !(1..=4).contains(&order) {
        return Err(PasError::invalid(format!("ipndm order must be 1..=4, got {order}")));
    }
    if history.dim() != x.len() {
        return Err(PasError::invalid("history dimension does not match the state"));
    }
    let coeffs = ipndm_coefficients(effective_order(order, history));
    let h = t_prev - t_i;
    let mut combo = d * coeffs[0];
    for (b, past) in coeffs[1..].iter().zip(history.directions.iter().rev()) {
        combo.axpy(*b, past, 1.0);
    }
    Ok(StepOutput {
        state: x + combo * h,
        sensitivity: h * coeffs[0],
    })
}

/// EDM's second-order step: Euler predictor, trapezoidal corrector.
pub fn heun_step<F: DirectionField + ?Sized>(field: &F, x: &Vector, t_i: f64, t_prev: f64) -> Result<Vector> {
    let d = field.noise_prediction(x, t_i)?;
    heun_step_from(field, x, &d, t_i, t_prev)
}

/// Heun step with the first-stage direction supplied by the caller.
pub fn heun_step_from<F: DirectionField + ?Sized>(
    field: &F,
    x: &Vector,
    d: &Vector,
    t_i: f64,
    t_prev: f64,
) -> Result<Vector> {
    check_dims(x, d)?;
    check_times(t_i, t_prev)?;
    if !(t_prev > 0.0) {
        return Err(PasError::invalid("heun needs t_prev > 0"));
    }
    let h = t_prev - t_i;
    let predicted = x + d * h;
    let d_prev = field.noise_prediction(&predicted, t_prev)?;
    Ok(x + (d + d_prev) * (0.5 * h))
}

/// `φ(x, d, t_i, t_prev)` for any solver. Sensitivity is `None` for Heun.
pub fn solver_step<F: DirectionField + ?Sized>(
    field: &F,
    spec: SolverSpec,
    x: &Vector,
    d: &Vector,
    history: &HistoryBuffer,
    t_i: f64,
    t_prev: f64,
) -> Result<(Vector, Option<f64>)> {
    match spec.kind {
        SolverKind::Euler => Ok((euler_step(x, d, t_i, t_prev)?, Some(t_prev - t_i))),
        SolverKind::Ipndm => {
            let out = ipndm_step(x, d, history, spec.order.unwrap_or(DEFAULT_IPNDM_ORDER), t_i, t_prev)?;
            Ok((out.state, Some(out.sensitivity)))
        }
        SolverKind::Heun => Ok((heun_step_from(field, x, d, t_i, t_prev)?, None)),
    }
}

/// Splits an affine step into `φ(d) = base + s·d`. `None` for Heun.
pub fn affine_decomposition(
    spec: SolverSpec,
    x: &Vector,
    history: &HistoryBuffer,
    t_i: f64,
    t_prev: f64,
) -> Option<(Vector, f64)> {
    let h = t_prev - t_i;
    match spec.kind {
        SolverKind::Euler => Some((x.clone(), h)),
        SolverKind::Ipndm => {
            let coeffs = ipndm_coefficients(effective_order(spec.order.unwrap_or(DEFAULT_IPNDM_ORDER), history));
            let mut base = x.clone();
            for (b, past) in coeffs[1..].iter().zip(history.directions.iter().rev()) {
                base.axpy(h * b, past, 1.0);
            }
            Some((base, h * coeffs[0]))
        }
        SolverKind::Heun => None,
    }
}

/// Hook for replacing `d_{t_i}` before the step at index `i` is taken.
pub(crate) type DirectionHook<'a> = dyn Fn(usize, &HistoryBuffer, &Vector) -> Result<Option<Vector>> + 'a;

pub(crate) fn run_sampler<F: DirectionField + ?Sized>(
    field: &F,
    spec: SolverSpec,
    schedule: &TimeSchedule,
    x_t_max: &Vector,
    hook: Option<&DirectionHook<'_>>,
) -> Result<(TrajectoryRecord, HistoryBuffer)> {
    if x_t_max.len() != field.dim() {
        return Err(PasError::invalid(format!(
            "initial state has dimension {} but the model has {}",
            x_t_max.len(),
            field.dim()
        )));
    }
    if x_t_max.iter().any(|v| !v.is_finite()) {
        return Err(PasError::invalid("initial state has non-finite entries"));
    }
    let n = schedule.n_steps();
    let mut states = vec![Vector::zeros(0); n + 1];
    let mut directions = vec![Vector::zeros(0); n];
    let mut history = HistoryBuffer::new(x_t_max.clone());
    let mut x = x_t_max.clone();
    states[n] = x.clone();

    for i in (1..=n).rev() {
        let (t_i, t_prev) = (schedule.time(i), schedule.time(i - 1));
        let mut d = field.noise_prediction(&x, t_i)?;
        if let Some(hook) = hook {
            if let Some(corrected) = hook(i, &history, &d)? {
                d = corrected;
            }
        }
        let (next, _) = solver_step(field, spec, &x, &d, &history, t_i, t_prev)?;
        history.push(d.clone())?;
        directions[i - 1] = d;
        states[i - 1] = next.clone();
        x = next;
    }

    Ok((
        TrajectoryRecord {
            times: schedule.times().to_vec(),
            states,
            directions,
        },
        history,
    ))
}

/// Runs the solver from `x_T` over the whole schedule.
pub fn sample<F: DirectionField + ?Sized>(
    field: &F,
    spec: SolverSpec,
    schedule: &TimeSchedule,
    x_t_max: &Vector,
) -> Result<TrajectoryRecord> {
    Ok(run_sampler(field, spec, schedule, x_t_max, None)?.0)
}

/// Like [`sample`], also returning the final history buffer.
pub fn sample_with_history<F: DirectionField + ?Sized>(
    field: &F,
    spec: SolverSpec,
    schedule: &TimeSchedule,
    x_t_max: &Vector,
) -> Result<(TrajectoryRecord, HistoryBuffer)> {
    run_sampler(field, spec, schedule, x_t_max, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherKind {
    Euler,
    Heun,
}

impl From<TeacherKind> for SolverSpec {
    fn from(k: TeacherKind) -> Self {
        match k {
            TeacherKind::Euler => SolverSpec::EULER,
            TeacherKind::Heun => SolverSpec::HEUN,
        }
    }
}

/// Teacher states on the student grid: `gt[i] = x^gt_{t_i}`, `i = 0..=N`.
///
/// The teacher runs on the refined grid with `N(M+1)` steps and is read back at
/// indices `i(M+1)`.
pub fn generate_ground_truth<F: DirectionField + ?Sized>(
    field: &F,
    student: &TimeSchedule,
    x_t_max: &Vector,
    n_prime: usize,
    teacher: TeacherKind,
) -> Result<Vec<Vector>> {
    let refinement = refine_for_teacher(student, n_prime)?;
    let run = sample(field, teacher.into(), &refinement.teacher, x_t_max)?;
    Ok((0..=student.n_steps())
        .map(|i| run.state(refinement.teacher_index(i)).clone())
        .collect())
}

/// Closed-form states of a single Gaussian on the schedule, `gt[i] = x(t_i)`.
pub fn exact_states(
    model: &crate::scorefield::GaussianMixtureScoreModel,
    schedule: &TimeSchedule,
    x_t_max: &Vector,
) -> Result<Vec<Vector>> {
    schedule
        .times()
        .iter()
        .map(|&t| model.exact_trajectory(x_t_max, t, schedule.t_max()))
        .collect()
}
