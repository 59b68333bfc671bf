//! Experiment configuration (JSON). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use pas_core::metrics::{Norm, Normalization};
use pas_core::pas::TrainConfig;
use pas_core::scorefield::{GaussianMixtureScoreModel, ModelFile, Preset};
use pas_core::solvers::{SolverSpec, TeacherKind};
use pas_core::timegrid::{build_schedule, TimeSchedule, DEFAULT_RHO, DEFAULT_T_MAX, DEFAULT_T_MIN};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Seed for the preset's random basis; the global seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Explicit model JSON, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}
fn default_t_min() -> f64 {
    DEFAULT_T_MIN
}
fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Closed-form flow for single Gaussians, the teacher otherwise.
    #[default]
    Auto,
    Exact,
    Teacher,
}

fn default_samples() -> usize {
    256
}
fn default_teacher_steps() -> usize {
    100
}
fn default_teacher() -> TeacherKind {
    TeacherKind::Heun
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub norm: Norm,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default = "default_teacher_steps")]
    pub teacher_steps: usize,
    #[serde(default = "default_teacher")]
    pub teacher: TeacherKind,
    /// Also write one CSV per sample for the first `csv_samples` samples.
    #[serde(default)]
    pub csv_samples: usize,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            norm: Norm::default(),
            normalization: Normalization::default(),
            reference: Reference::Auto,
            teacher_steps: default_teacher_steps(),
            teacher: TeacherKind::Heun,
            csv_samples: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceMode {
    /// One trajectory.
    Single,
    /// Many trajectories stacked into one matrix.
    Pooled,
    #[default]
    Both,
}

fn default_points() -> usize {
    100
}
fn default_trajectories() -> usize {
    100
}
fn default_max_k() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub mode: SubspaceMode,
    /// States per trajectory.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_max_k")]
    pub max_k: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            mode: SubspaceMode::Both,
            points: default_points(),
            trajectories: default_trajectories(),
            max_k: default_max_k(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub solver: SolverSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

/// Index offset separating evaluation noise from training noise in the seeded streams.
pub const EVALUATION_NOISE_OFFSET: u64 = 1 << 40;

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        if let Some(file) = &config.model.file {
            if file.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                config.model.file = Some(base.join(file));
            }
        }
        Ok(config)
    }

    /// Applies the global seed to the training section and checks every field.
    pub fn finalize(mut self, seed_override: Option<u64>) -> Result<Self, CliError> {
        if let Some(seed) = seed_override {
            self.seed = seed;
        }
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        match (&self.model.preset, &self.model.file) {
            (Some(_), Some(_)) | (None, None) => {
                return bad("model: exactly one of `preset` or `file` is required".into());
            }
            (None, Some(_)) if self.model.seed.is_some() => {
                return bad("model.seed: only applies to presets".into());
            }
            _ => {}
        }
        let s = &self.schedule;
        if s.n == 0 {
            return bad("schedule.n: must be >= 1".into());
        }
        if !(s.rho.is_finite() && s.rho > 0.0) {
            return bad(format!("schedule.rho: must be finite and > 0, got {}", s.rho));
        }
        if !(s.t_min > 0.0 && s.t_min < s.t_max && s.t_max.is_finite()) {
            return bad(format!("schedule: need 0 < t_min < t_max, got t_min={} t_max={}", s.t_min, s.t_max));
        }
        self.train
            .validate()
            .map_err(|e| CliError::Validation(strip_prefix(e.to_string())))?;
        if self.train.teacher_steps < s.n {
            return bad(format!(
                "train.teacher_steps: must be >= schedule.n ({}), got {}",
                s.n, self.train.teacher_steps
            ));
        }
        let e = &self.evaluation;
        if e.samples == 0 {
            return bad("evaluation.samples: must be >= 1".into());
        }
        if e.teacher_steps < s.n {
            return bad(format!(
                "evaluation.teacher_steps: must be >= schedule.n ({}), got {}",
                s.n, e.teacher_steps
            ));
        }
        if e.csv_samples > e.samples {
            return bad("evaluation.csv_samples: cannot exceed evaluation.samples".into());
        }
        let a = &self.analysis;
        if a.points < 2 {
            return bad("analysis.points: must be >= 2".into());
        }
        if a.trajectories == 0 {
            return bad("analysis.trajectories: must be >= 1".into());
        }
        if a.max_k == 0 {
            return bad("analysis.max_k: must be >= 1".into());
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<GaussianMixtureScoreModel, CliError> {
        match (&self.model.preset, &self.model.file) {
            (Some(preset), _) => preset
                .build(self.model.seed.unwrap_or(self.seed))
                .map_err(|e| CliError::Validation(format!("model.preset: {}", strip_prefix(e.to_string())))),
            (None, Some(path)) => ModelFile::load(path).map_err(|e| match e {
                pas_core::PasError::Io(io) => CliError::Io(format!("model.file {}: {io}", path.display())),
                other => CliError::Validation(format!("model.file {}: {other}", path.display())),
            }),
            (None, None) => Err(CliError::Validation("model: missing".into())),
        }
    }

    pub fn build_schedule(&self) -> Result<TimeSchedule, CliError> {
        let s = &self.schedule;
        build_schedule(s.rho, s.t_min, s.t_max, s.n).map_err(|e| CliError::Validation(format!("schedule: {e}")))
    }

    /// Canonical JSON used for hashing and recorded alongside the artifacts.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

fn strip_prefix(msg: String) -> String {
    msg.strip_prefix("invalid argument: ").map(str::to_string).unwrap_or(msg)
}
