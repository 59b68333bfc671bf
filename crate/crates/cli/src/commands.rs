use std::path::{Path, PathBuf};

use pas_core::metrics::{
    mean_curve, mean_final_distance, s_shape_stats, truncation_error_curve, ErrorCurve, SShapeStats,
};
use pas_core::pas::{sample_with_correction, train_pas_against, CorrectionTable};
use pas_core::rng;
use pas_core::scorefield::GaussianMixtureScoreModel;
use pas_core::solvers::{exact_states, generate_ground_truth, sample, SolverKind, SolverSpec, TrajectoryRecord};
use pas_core::subspace::cumulative_variance;
use pas_core::timegrid::{build_schedule, refine_for_teacher, TimeSchedule};
use pas_core::trajio::{trajectory_csv, write_binary};
use pas_core::Vector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::Artifacts;
use crate::config::{ExperimentConfig, Reference, SubspaceMode, EVALUATION_NOISE_OFFSET};
use crate::CliError;

pub const SUMMARY_NAME: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SShapeSummary {
    pub argmax_increment_step: usize,
    pub head_growth: f64,
    pub mid_growth: f64,
    pub tail_growth: f64,
}

impl From<SShapeStats> for SShapeSummary {
    fn from(s: SShapeStats) -> Self {
        Self {
            argmax_increment_step: s.argmax_increment_index,
            head_growth: s.head_growth,
            mid_growth: s.mid_growth,
            tail_growth: s.tail_growth,
        }
    }
}

/// Machine-readable outcome of a run, read back by `report`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub subcommand: String,
    pub solver: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncorrected_final_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_final_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_steps: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identical_to_baseline: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_shape: Option<SShapeSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top3_variance_single: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top3_variance_pooled: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_inserted_steps: Option<usize>,
}

pub fn solver_label(spec: SolverSpec) -> String {
    match (spec.kind(), spec.order()) {
        (SolverKind::Ipndm, Some(order)) => format!("ipndm({order})"),
        (SolverKind::Euler, _) => "euler".into(),
        (SolverKind::Heun, _) => "heun".into(),
        (SolverKind::Ipndm, None) => "ipndm".into(),
    }
}

/// Everything a subcommand needs, resolved once from the config.
pub struct Context {
    pub config: ExperimentConfig,
    pub model: GaussianMixtureScoreModel,
    pub schedule: TimeSchedule,
    /// `--table` for subcommands that take one.
    pub table: Option<(PathBuf, Vec<u8>, CorrectionTable)>,
}

impl Context {
    pub fn new(config: ExperimentConfig, table_path: Option<&Path>) -> Result<Self, CliError> {
        let model = config.build_model()?;
        let schedule = config.build_schedule()?;
        let table = match table_path {
            Some(path) => {
                let bytes = std::fs::read(path)
                    .map_err(|e| CliError::Io(format!("cannot read table {}: {e}", path.display())))?;
                let text = String::from_utf8(bytes.clone())
                    .map_err(|_| CliError::Validation(format!("table {}: not UTF-8", path.display())))?;
                let table = CorrectionTable::from_json(&text)
                    .map_err(|e| CliError::Validation(format!("table {}: {e}", path.display())))?;
                table
                    .check_compatible(config.solver, &schedule)
                    .map_err(|e| CliError::Validation(format!("table {}: {e}", path.display())))?;
                Some((path.to_path_buf(), bytes, table))
            }
            None => None,
        };
        Ok(Self {
            config,
            model,
            schedule,
            table,
        })
    }

    fn dim(&self) -> usize {
        self.model.dimension()
    }

    fn evaluation_noises(&self) -> Vec<Vector> {
        rng::initial_noises(
            self.config.seed,
            EVALUATION_NOISE_OFFSET,
            self.config.evaluation.samples,
            self.dim(),
            self.schedule.t_max(),
        )
    }

    fn training_noises(&self) -> Vec<Vector> {
        rng::initial_noises(
            self.config.seed,
            0,
            self.config.train.trajectory_count,
            self.dim(),
            self.schedule.t_max(),
        )
    }

    fn use_exact(&self) -> Result<bool, CliError> {
        let single = self.model.components().len() == 1;
        match self.config.evaluation.reference {
            Reference::Auto => Ok(single),
            Reference::Teacher => Ok(false),
            Reference::Exact if single => Ok(true),
            Reference::Exact => Err(CliError::Validation(
                "evaluation.reference: `exact` needs a single-Gaussian model".into(),
            )),
        }
    }

    fn reference_label(&self) -> Result<String, CliError> {
        Ok(if self.use_exact()? {
            "exact".into()
        } else {
            let e = &self.config.evaluation;
            format!("teacher({:?}, {} steps)", e.teacher, e.teacher_steps).to_lowercase()
        })
    }

    /// Reference states on `schedule`, one list per noise.
    fn references(&self, schedule: &TimeSchedule, noises: &[Vector]) -> Result<Vec<Vec<Vector>>, CliError> {
        let exact = self.use_exact()?;
        let e = &self.config.evaluation;
        noises
            .par_iter()
            .map(|x| {
                if exact {
                    exact_states(&self.model, schedule, x)
                } else {
                    generate_ground_truth(&self.model, schedule, x, e.teacher_steps.max(schedule.n_steps()), e.teacher)
                }
            })
            .collect::<pas_core::Result<_>>()
            .map_err(CliError::from)
    }

    fn run_plain(&self, noises: &[Vector]) -> Result<Vec<TrajectoryRecord>, CliError> {
        noises
            .par_iter()
            .map(|x| sample(&self.model, self.config.solver, &self.schedule, x))
            .collect::<pas_core::Result<_>>()
            .map_err(CliError::from)
    }

    fn run_corrected(&self, noises: &[Vector], table: &CorrectionTable) -> Result<Vec<TrajectoryRecord>, CliError> {
        noises
            .par_iter()
            .map(|x| sample_with_correction(&self.model, self.config.solver, &self.schedule, x, table))
            .collect::<pas_core::Result<_>>()
            .map_err(CliError::from)
    }

    fn curves(&self, runs: &[TrajectoryRecord], refs: &[Vec<Vector>], corrected: bool) -> Result<ErrorCurve, CliError> {
        let e = &self.config.evaluation;
        let curves = runs
            .iter()
            .zip(refs)
            .map(|(r, g)| truncation_error_curve(r, g, e.norm, e.normalization))
            .collect::<pas_core::Result<Vec<_>>>()?;
        let mut mean = mean_curve(&curves)?;
        mean.solver = solver_label(self.config.solver);
        mean.corrected = corrected;
        Ok(mean)
    }

    fn final_error(&self, runs: &[TrajectoryRecord], refs: &[Vec<Vector>]) -> Result<f64, CliError> {
        let finals: Vec<Vector> = runs.iter().map(|r| r.final_state().clone()).collect();
        let gts: Vec<Vector> = refs.iter().map(|g| g[0].clone()).collect();
        Ok(mean_final_distance(&finals, &gts, self.config.evaluation.norm)?)
    }

    fn base_summary(&self, subcommand: &str) -> RunSummary {
        RunSummary {
            subcommand: subcommand.into(),
            solver: solver_label(self.config.solver),
            n: self.schedule.n_steps(),
            ..RunSummary::default()
        }
    }

    fn export_trajectories(&self, out: &mut Artifacts, prefix: &str, runs: &[TrajectoryRecord]) -> Result<(), CliError> {
        let mut bin = Vec::new();
        write_binary(&mut bin, runs)?;
        out.add(format!("{prefix}.bin"), bin);
        for (k, run) in runs.iter().take(self.config.evaluation.csv_samples).enumerate() {
            out.add_text(format!("{prefix}/sample_{k:05}.csv"), trajectory_csv(run));
        }
        Ok(())
    }
}

fn reduction_percent(base: f64, corrected: f64) -> Option<f64> {
    (base > 0.0).then(|| 100.0 * (1.0 - corrected / base))
}

pub fn schedule(ctx: &Context, out: &mut Artifacts) -> Result<RunSummary, CliError> {
    out.add_text("schedule.csv", ctx.schedule.to_csv());
    let refinement = refine_for_teacher(&ctx.schedule, ctx.config.train.teacher_steps)?;
    let mut map = String::from("student_index,teacher_index,time\n");
    for i in 0..=ctx.schedule.n_steps() {
        map.push_str(&format!("{i},{},{:e}\n", refinement.teacher_index(i), ctx.schedule.time(i)));
    }
    out.add_text("teacher_schedule.csv", refinement.teacher.to_csv());
    out.add_text("teacher_alignment.csv", map);
    Ok(RunSummary {
        teacher_inserted_steps: Some(refinement.m_inserted),
        ..ctx.base_summary("schedule")
    })
}

pub fn sample_cmd(ctx: &Context, out: &mut Artifacts) -> Result<RunSummary, CliError> {
    let noises = ctx.evaluation_noises();
    let runs = ctx.run_plain(&noises)?;
    let refs = ctx.references(&ctx.schedule, &noises)?;
    let curve = ctx.curves(&runs, &refs, false)?;
    ctx.export_trajectories(out, "trajectories", &runs)?;
    out.add_text("curve.csv", curve.to_csv());
    Ok(RunSummary {
        samples: Some(noises.len()),
        reference: Some(ctx.reference_label()?),
        norm: Some(ctx.config.evaluation.norm.label().into()),
        uncorrected_final_error: Some(ctx.final_error(&runs, &refs)?),
        s_shape: s_shape_stats(&curve).ok().map(Into::into),
        ..ctx.base_summary("sample")
    })
}

pub fn train_cmd(ctx: &Context, out: &mut Artifacts) -> Result<RunSummary, CliError> {
    let c = &ctx.config;
    let noises = ctx.training_noises();
    let gts = noises
        .par_iter()
        .map(|x| generate_ground_truth(&ctx.model, &ctx.schedule, x, c.train.teacher_steps, c.train.teacher))
        .collect::<pas_core::Result<Vec<_>>>()?;
    let outcome = train_pas_against(&ctx.model, c.solver, &ctx.schedule, &noises, &gts, &c.train)?;

    let mut log = String::from("step,time,loss_uncorrected,loss_corrected,tau,accepted,mean_basis_size,coords\n");
    for l in &outcome.log {
        let coords: Vec<String> = l.coords.as_slice().iter().map(|v| format!("{v:e}")).collect();
        log.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{},{},{}\n",
            l.step,
            l.t_i,
            l.loss_uncorrected,
            l.loss_corrected,
            l.tau,
            l.accepted,
            l.mean_basis_size,
            coords.join(" ")
        ));
    }
    let text = outcome.table.to_json()? + "\n";
    out.add_text("table.json", text);
    out.add_text("training_log.csv", log);

    // training-batch final error against the teacher
    let plain = ctx.run_plain(&noises)?;
    let gt_finals: Vec<Vector> = gts.iter().map(|g| g[0].clone()).collect();
    let plain_finals: Vec<Vector> = plain.iter().map(|r| r.final_state().clone()).collect();
    let base = mean_final_distance(&plain_finals, &gt_finals, c.evaluation.norm)?;
    let corrected = mean_final_distance(&outcome.final_states, &gt_finals, c.evaluation.norm)?;
    Ok(RunSummary {
        samples: Some(noises.len()),
        reference: Some(format!("teacher({:?}, {} steps)", c.train.teacher, c.train.teacher_steps).to_lowercase()),
        norm: Some(c.evaluation.norm.label().into()),
        uncorrected_final_error: Some(base),
        corrected_final_error: Some(corrected),
        reduction_percent: reduction_percent(base, corrected),
        corrected_steps: Some(outcome.table.corrected_steps()),
        parameter_count: Some(outcome.table.parameter_count()),
        ..ctx.base_summary("train-pas")
    })
}

fn required_table<'a>(ctx: &'a Context, subcommand: &str) -> Result<&'a CorrectionTable, CliError> {
    ctx.table
        .as_ref()
        .map(|(_, _, t)| t)
        .ok_or_else(|| CliError::Validation(format!("{subcommand}: --table PATH is required")))
}

pub fn correct_cmd(ctx: &Context, out: &mut Artifacts) -> Result<RunSummary, CliError> {
    let table = required_table(ctx, "correct-sample")?;
    let noises = ctx.evaluation_noises();
    let plain = ctx.run_plain(&noises)?;
    let corrected = ctx.run_corrected(&noises, table)?;
    let refs = ctx.references(&ctx.schedule, &noises)?;
    let curve_plain = ctx.curves(&plain, &refs, false)?;
    let curve_corrected = ctx.curves(&corrected, &refs, true)?;
    let base = ctx.final_error(&plain, &refs)?;
    let cor = ctx.final_error(&corrected, &refs)?;
    let identical = plain.iter().zip(&corrected).all(|(a, b)| a == b);
    ctx.export_trajectories(out, "trajectories_corrected", &corrected)?;
    out.add_text("curve_uncorrected.csv", curve_plain.to_csv());
    out.add_text("curve_corrected.csv", curve_corrected.to_csv());
    Ok(RunSummary {
        samples: Some(noises.len()),
        reference: Some(ctx.reference_label()?),
        norm: Some(ctx.config.evaluation.norm.label().into()),
        uncorrected_final_error: Some(base),
        corrected_final_error: Some(cor),
        reduction_percent: reduction_percent(base, cor),
        corrected_steps: Some(table.corrected_steps()),
        parameter_count: Some(table.parameter_count()),
        identical_to_baseline: Some(identical),
        ..ctx.base_summary("correct-sample")
    })
}

fn variance_csv(values: &[f64]) -> String {
    let mut s = String::from("k,cumulative_variance\n");
    for (k, v) in values.iter().enumerate() {
        s.push_str(&format!("{},{v}\n", k + 1));
    }
    s
}

pub fn analyze_cmd(ctx: &Context, out: &mut Artifacts) -> Result<RunSummary, CliError> {
    let a = &ctx.config.analysis;
    let s = &ctx.schedule;
    let grid = build_schedule(s.rho(), s.t_min(), s.t_max(), a.points - 1)?;
    let count = match a.mode {
        SubspaceMode::Single => 1,
        _ => a.trajectories,
    };
    let noises = rng::initial_noises(ctx.config.seed, EVALUATION_NOISE_OFFSET, count, ctx.dim(), s.t_max());
    let trajectories = ctx.references(&grid, &noises)?;
    let mut summary = ctx.base_summary("analyze-subspace");
    summary.reference = Some(ctx.reference_label()?);
    let top3 = |v: &[f64]| v.get(2).or(v.last()).copied();
    if matches!(a.mode, SubspaceMode::Single | SubspaceMode::Both) {
        let v = cumulative_variance(&trajectories[0], a.max_k)?;
        summary.top3_variance_single = top3(&v);
        out.add_text("variance_single.csv", variance_csv(&v));
    }
    if matches!(a.mode, SubspaceMode::Pooled | SubspaceMode::Both) {
        let pooled: Vec<Vector> = trajectories.iter().flatten().cloned().collect();
        let v = cumulative_variance(&pooled, a.max_k)?;
        summary.top3_variance_pooled = top3(&v);
        out.add_text("variance_pooled.csv", variance_csv(&v));
    }
    summary.samples = Some(count);
    Ok(summary)
}

pub fn error_curve_cmd(ctx: &Context, out: &mut Artifacts) -> Result<RunSummary, CliError> {
    let noises = ctx.evaluation_noises();
    let refs = ctx.references(&ctx.schedule, &noises)?;
    let plain = ctx.run_plain(&noises)?;
    let curve = ctx.curves(&plain, &refs, false)?;
    out.add_text("curve_uncorrected.csv", curve.to_csv());
    let mut summary = RunSummary {
        samples: Some(noises.len()),
        reference: Some(ctx.reference_label()?),
        norm: Some(ctx.config.evaluation.norm.label().into()),
        uncorrected_final_error: Some(ctx.final_error(&plain, &refs)?),
        s_shape: s_shape_stats(&curve).ok().map(Into::into),
        ..ctx.base_summary("error-curve")
    };
    if let Some((_, _, table)) = &ctx.table {
        let corrected = ctx.run_corrected(&noises, table)?;
        let c = ctx.curves(&corrected, &refs, true)?;
        out.add_text("curve_corrected.csv", c.to_csv());
        let cor = ctx.final_error(&corrected, &refs)?;
        summary.corrected_final_error = Some(cor);
        summary.reduction_percent = reduction_percent(summary.uncorrected_final_error.unwrap_or(0.0), cor);
        summary.corrected_steps = Some(table.corrected_steps());
        summary.parameter_count = Some(table.parameter_count());
    }
    Ok(summary)
}

/// Human-readable summary of a finished run directory.
pub fn render_report(manifest: &crate::artifacts::Manifest, summary: &RunSummary) -> String {
    let mut lines = vec![
        format!(
            "run: {} (solver {}, N={}, seed {})",
            manifest.subcommand, summary.solver, summary.n, manifest.seed
        ),
        format!("config sha256: {}", manifest.config_hash),
        format!(
            "wall time: {:.3} s on {} thread(s); {} artifacts verified",
            manifest.wall_time_seconds,
            manifest.threads,
            manifest.artifacts.len()
        ),
    ];
    if let Some(steps) = &summary.corrected_steps {
        if steps.is_empty() {
            lines.push("0 corrected steps; outputs identical to baseline".into());
        } else {
            let formatted = steps.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
            lines.push(format!(
                "corrected steps: {formatted} ({} of {}); parameters: {}",
                steps.len(),
                summary.n,
                summary.parameter_count.unwrap_or(0)
            ));
        }
    }
    let norm = summary.norm.as_deref().unwrap_or("l2");
    let reference = summary.reference.as_deref().unwrap_or("-");
    match (summary.uncorrected_final_error, summary.corrected_final_error) {
        (Some(b), Some(c)) => lines.push(format!(
            "final error ({norm} vs {reference}): uncorrected {b:.6} -> corrected {c:.6} ({:.1}% reduction)",
            summary.reduction_percent.unwrap_or(0.0)
        )),
        (Some(b), None) => lines.push(format!("final error ({norm} vs {reference}): {b:.6}")),
        _ => {}
    }
    if let Some(s) = &summary.s_shape {
        lines.push(format!(
            "largest error increment at step {}; mean growth head {:.4}, middle {:.4}, tail {:.4}",
            s.argmax_increment_step, s.head_growth, s.mid_growth, s.tail_growth
        ));
    }
    if let Some(v) = summary.top3_variance_single {
        lines.push(format!("top-3 cumulative variance, single trajectory: {v:.6}"));
    }
    if let Some(v) = summary.top3_variance_pooled {
        lines.push(format!("top-3 cumulative variance, pooled trajectories: {v:.6}"));
    }
    if let Some(m) = summary.teacher_inserted_steps {
        lines.push(format!("teacher grid inserts {m} step(s) per student step"));
    }
    lines.join("\n")
}
