//! Polynomial time schedules and refined teacher grids.

use serde::{Deserialize, Serialize};

use crate::error::{PasError, Result};

pub const DEFAULT_RHO: f64 = 7.0;
pub const DEFAULT_T_MIN: f64 = 0.002;
pub const DEFAULT_T_MAX: f64 = 80.0;

/// A polynomial time grid `t_i = (t_min^(1/ρ) + i/N (t_max^(1/ρ) - t_min^(1/ρ)))^ρ`.
///
/// `times` is ascending in `i`; sampling walks it from `i = N` down to `0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSchedule {
    rho: f64,
    t_min: f64,
    t_max: f64,
    n_steps: usize,
    times: Vec<f64>,
}

impl TimeSchedule {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `t_i`, with `i = n_steps` the starting (largest) time.
    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Same (ρ, t_min, t_max, N); bit-level comparison since schedules are rebuilt
    /// from their parameters.
    pub fn same_parameters(&self, other: &TimeSchedule) -> bool {
        self.rho == other.rho
            && self.t_min == other.t_min
            && self.t_max == other.t_max
            && self.n_steps == other.n_steps
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,time\n");
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{i},{t:e}\n"));
        }
        out
    }
}

/// Evaluates the polynomial rule at index `i` of an `n`-step grid.
pub(crate) fn polynomial_time(rho: f64, t_min: f64, t_max: f64, n: usize, i: usize) -> f64 {
    let lo = t_min.powf(1.0 / rho);
    let hi = t_max.powf(1.0 / rho);
    let frac = i as f64 / n as f64;
    (lo + frac * (hi - lo)).powf(rho)
}

pub fn build_schedule(rho: f64, t_min: f64, t_max: f64, n_steps: usize) -> Result<TimeSchedule> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(PasError::invalid(format!("rho must be finite and > 0, got {rho}")));
    }
    if !(t_min.is_finite() && t_min > 0.0) {
        return Err(PasError::invalid(format!("t_min must be finite and > 0, got {t_min}")));
    }
    if !(t_max.is_finite() && t_max > t_min) {
        return Err(PasError::invalid(format!(
            "t_max must be finite and > t_min ({t_min}), got {t_max}"
        )));
    }
    if n_steps == 0 {
        return Err(PasError::invalid("n_steps must be >= 1"));
    }

    let mut times: Vec<f64> = (0..=n_steps)
        .map(|i| polynomial_time(rho, t_min, t_max, n_steps, i))
        .collect();
    // pow(pow(t, 1/ρ), ρ) can be off by a few ulp at the ends
    times[0] = t_min;
    times[n_steps] = t_max;

    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(PasError::invalid(format!(
            "schedule is not strictly increasing for rho={rho}, t_min={t_min}, t_max={t_max}, n={n_steps}"
        )));
    }

    Ok(TimeSchedule {
        rho,
        t_min,
        t_max,
        n_steps,
        times,
    })
}

/// Teacher grid with `M` points inserted between each pair of student points.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRefinement {
    pub m_inserted: usize,
    pub teacher: TimeSchedule,
}

impl TeacherRefinement {
    /// Teacher index matching student index `i`.
    pub fn teacher_index(&self, i: usize) -> usize {
        i * (self.m_inserted + 1)
    }

    pub fn index_map(&self, student_steps: usize) -> Vec<usize> {
        (0..=student_steps).map(|i| self.teacher_index(i)).collect()
    }
}

/// Smallest `M >= 0` with `N (M + 1) >= n_prime`, and the matching teacher grid.
pub fn refine_for_teacher(student: &TimeSchedule, n_prime: usize) -> Result<TeacherRefinement> {
    let n = student.n_steps;
    if n_prime < n {
        return Err(PasError::invalid(format!(
            "teacher resolution {n_prime} is below the student's {n} steps"
        )));
    }
    let m_inserted = n_prime.div_ceil(n) - 1;
    let teacher = build_schedule(student.rho, student.t_min, student.t_max, n * (m_inserted + 1))?;
    Ok(TeacherRefinement {
        m_inserted,
        teacher,
    })
}
