//! Losses, distances and truncation-error statistics.
//!
//! Training losses and evaluation norms share the same reductions
//! ([`sum_abs`], [`sum_squares`]), so a reported L1/L2 number is the quantity the
//! optimizer saw.

use serde::{Deserialize, Serialize};

use crate::error::{PasError, Result};
use crate::solvers::TrajectoryRecord;
use crate::Vector;

pub const DEFAULT_PSEUDO_HUBER_C: f64 = 0.03;

pub fn sum_abs(r: &Vector) -> f64 {
    r.iter().map(|v| v.abs()).sum()
}

pub fn sum_squares(r: &Vector) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Per-sample training loss on the state residual `x_out - x_gt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Loss {
    #[serde(alias = "L1")]
    L1,
    #[serde(alias = "L2")]
    L2,
    /// `√(‖r‖² + c²) - c`.
    PseudoHuber { c: f64 },
}

impl Default for Loss {
    fn default() -> Self {
        Loss::L1
    }
}

impl Loss {
    pub fn value(&self, r: &Vector) -> f64 {
        match self {
            Loss::L1 => sum_abs(r),
            Loss::L2 => sum_squares(r),
            Loss::PseudoHuber { c } => (sum_squares(r) + c * c).sqrt() - c,
        }
    }

    /// `∂loss/∂r`. L1 uses `sign(0) = 0`.
    pub fn gradient(&self, r: &Vector) -> Vector {
        match self {
            Loss::L1 => r.map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
            Loss::L2 => r * 2.0,
            Loss::PseudoHuber { c } => r / (sum_squares(r) + c * c).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Loss::PseudoHuber { c } if !(c.is_finite() && *c > 0.0) => {
                Err(PasError::invalid(format!("pseudo-huber c must be > 0, got {c}")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Loss::L1 => "l1".into(),
            Loss::L2 => "l2".into(),
            Loss::PseudoHuber { c } => format!("pseudo_huber(c={c})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[serde(alias = "L1")]
    L1,
    #[default]
    #[serde(alias = "L2")]
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Divide the L1 sum / L2 sum of squares by the dimension.
    PerDimension,
}

impl Norm {
    pub fn label(&self) -> &'static str {
        match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        }
    }
}

impl Normalization {
    pub fn label(&self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::PerDimension => "per_dimension",
        }
    }

    fn scale(&self, dim: usize) -> f64 {
        match self {
            Normalization::None => 1.0,
            Normalization::PerDimension => 1.0 / dim as f64,
        }
    }
}

/// `‖a - b‖` (L1 sum, or Euclidean for L2; RMS / mean-abs when normalized).
pub fn distance(a: &Vector, b: &Vector, norm: Norm, normalization: Normalization) -> f64 {
    let r = a - b;
    let scale = normalization.scale(r.len());
    match norm {
        Norm::L1 => sum_abs(&r) * scale,
        Norm::L2 => (sum_squares(&r) * scale).sqrt(),
    }
}

/// Per-step distances to a reference trajectory, addressed by schedule index.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub solver: String,
    pub corrected: bool,
    pub norm: Norm,
    pub normalization: Normalization,
}

impl ErrorCurve {
    pub fn n_steps(&self) -> usize {
        self.errors.len() - 1
    }

    /// Error at schedule index `i`.
    pub fn at(&self, i: usize) -> f64 {
        self.errors[i]
    }

    /// Errors in sampling order `i = N, ..., 0`.
    pub fn in_sampling_order(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.errors.len()).rev().map(|i| (i, self.times[i], self.errors[i]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# solver={},n={},corrected={},norm={},normalization={}\nstep,time,error\n",
            self.solver,
            self.n_steps(),
            self.corrected,
            self.norm.label(),
            self.normalization.label()
        );
        for (i, t, e) in self.in_sampling_order() {
            out.push_str(&format!("{i},{t:e},{e:e}\n"));
        }
        out
    }
}

pub fn truncation_error_curve(
    traj: &TrajectoryRecord,
    gt: &[Vector],
    norm: Norm,
    normalization: Normalization,
) -> Result<ErrorCurve> {
    if gt.len() != traj.states().len() {
        return Err(PasError::invalid(format!(
            "trajectory has {} states but the reference has {}",
            traj.states().len(),
            gt.len()
        )));
    }
    let errors = traj
        .states()
        .iter()
        .zip(gt)
        .map(|(x, g)| {
            if x.len() != g.len() {
                return Err(PasError::invalid("reference state dimension mismatch"));
            }
            Ok(distance(x, g, norm, normalization))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorCurve {
        times: traj.times().to_vec(),
        errors,
        solver: String::new(),
        corrected: false,
        norm,
        normalization,
    })
}

/// Pointwise mean of per-sample curves, summed in input order.
pub fn mean_curve(curves: &[ErrorCurve]) -> Result<ErrorCurve> {
    let first = curves
        .first()
        .ok_or_else(|| PasError::invalid("cannot average an empty set of curves"))?;
    if curves.iter().any(|c| c.errors.len() != first.errors.len()) {
        return Err(PasError::invalid("curves have different lengths"));
    }
    let mut errors = vec![0.0; first.errors.len()];
    for c in curves {
        for (acc, e) in errors.iter_mut().zip(&c.errors) {
            *acc += e;
        }
    }
    let n = curves.len() as f64;
    errors.iter_mut().for_each(|e| *e /= n);
    Ok(ErrorCurve {
        errors,
        ..first.clone()
    })
}

/// Shape of the increments `Δ_i = e_{i-1} - e_i` of an error curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SShapeStats {
    /// Step index `i` (the step `t_i → t_{i-1}`) with the largest increment.
    pub argmax_increment_index: usize,
    pub head_growth: f64,
    pub mid_growth: f64,
    pub tail_growth: f64,
}

pub fn s_shape_stats(curve: &ErrorCurve) -> Result<SShapeStats> {
    if curve.errors.len() < 4 {
        return Err(PasError::invalid(format!(
            "need at least 4 curve points, got {}",
            curve.errors.len()
        )));
    }
    let n = curve.n_steps();
    // sampling order: step i = N first
    let increments: Vec<(usize, f64)> = (1..=n).rev().map(|i| (i, curve.errors[i - 1] - curve.errors[i])).collect();
    let (argmax, _) = increments
        .iter()
        .copied()
        .fold((n, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best });
    let a = (n as f64 / 3.0).round() as usize;
    let b = (2.0 * n as f64 / 3.0).round() as usize;
    let mean = |s: &[(usize, f64)]| s.iter().map(|(_, d)| d).sum::<f64>() / s.len() as f64;
    Ok(SShapeStats {
        argmax_increment_index: argmax,
        head_growth: mean(&increments[..a]),
        mid_growth: mean(&increments[a..b]),
        tail_growth: mean(&increments[b..]),
    })
}

/// Mean over samples of the final-state discrepancy. L1 reports the mean L1 distance,
/// L2 the mean squared error (sum of squares, or per-dimension mean when normalized).
pub fn final_state_error(
    finals: &[Vector],
    gt_finals: &[Vector],
    norm: Norm,
    normalization: Normalization,
) -> Result<f64> {
    if finals.is_empty() {
        return Err(PasError::invalid("empty batch"));
    }
    if finals.len() != gt_finals.len() {
        return Err(PasError::invalid(format!(
            "{} samples but {} references",
            finals.len(),
            gt_finals.len()
        )));
    }
    let mut total = 0.0;
    for (x, g) in finals.iter().zip(gt_finals) {
        let r = x - g;
        let scale = normalization.scale(r.len());
        total += match norm {
            Norm::L1 => Loss::L1.value(&r) * scale,
            Norm::L2 => Loss::L2.value(&r) * scale,
        };
    }
    Ok(total / finals.len() as f64)
}

/// Mean Euclidean (or L1) distance of final states; the curve metric at `i = 0`.
pub fn mean_final_distance(finals: &[Vector], gt_finals: &[Vector], norm: Norm) -> Result<f64> {
    if finals.is_empty() || finals.len() != gt_finals.len() {
        return Err(PasError::invalid("need equally sized, non-empty batches"));
    }
    let total: f64 = finals
        .iter()
        .zip(gt_finals)
        .map(|(x, g)| distance(x, g, norm, Normalization::None))
        .sum();
    Ok(total / finals.len() as f64)
}
