use pas_core::metrics::{mean_final_distance, Norm};
use pas_core::pas::{
    adaptive_accept, sample_with_correction, train_pas, train_pas_with_log, CoordinateObjective, CorrectionTable,
    GradientMode, Parameterization, StepSample, TrainConfig,
};
use pas_core::rng;
use pas_core::scorefield::{GaussianMixtureScoreModel, Preset};
use pas_core::solvers::{exact_states, generate_ground_truth, sample, HistoryBuffer, SolverSpec, TeacherKind};
use pas_core::subspace::pca_basis;
use pas_core::timegrid::{build_schedule, TimeSchedule};
use pas_core::Vector;

fn setup(dim: usize, n: usize) -> (GaussianMixtureScoreModel, TimeSchedule, Vec<Vector>) {
    let model = Preset::rank2_manifold(dim).build(0).unwrap();
    let schedule = build_schedule(7.0, 0.002, 80.0, n).unwrap();
    let noises = rng::initial_noises(42, 0, 96, dim, 80.0);
    (model, schedule, noises)
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        teacher_steps: 60,
        ..TrainConfig::large_error_solver()
    }
}

#[test]
fn replay_reproduces_training_states() {
    let (model, schedule, noises) = setup(32, 6);
    let out = train_pas_with_log(&model, SolverSpec::EULER, &schedule, &noises, &quick_config()).unwrap();
    assert!(!out.table.entries.is_empty());
    for (x, trained) in noises.iter().zip(&out.final_states) {
        let replay = sample_with_correction(&model, SolverSpec::EULER, &schedule, x, &out.table).unwrap();
        assert_eq!(replay.final_state(), trained);
    }
}

#[test]
fn stored_entries_pass_acceptance_when_reevaluated() {
    let (model, schedule, noises) = setup(32, 8);
    let config = TrainConfig {
        learning_rate: 1e-5,
        parameterization: Parameterization::Relative,
        ..quick_config()
    };
    let solver = SolverSpec::ipndm(3).unwrap();
    let out = train_pas_with_log(&model, solver, &schedule, &noises, &config).unwrap();
    assert!(out.table.entries.len() >= 2);
    let gts: Vec<Vec<Vector>> = noises
        .iter()
        .map(|x| generate_ground_truth(&model, &schedule, x, config.teacher_steps, TeacherKind::Heun).unwrap())
        .collect();
    let runs: Vec<_> = noises
        .iter()
        .map(|x| sample_with_correction(&model, solver, &schedule, x, &out.table).unwrap())
        .collect();

    for entry in &out.table.entries {
        let i = entry.step;
        let (t_i, t_prev) = (schedule.time(i), schedule.time(i - 1));
        let mut owned = Vec::new();
        for (run, gt) in runs.iter().zip(&gts) {
            let mut history = HistoryBuffer::new(run.state(schedule.n_steps()).clone());
            for j in ((i + 1)..=schedule.n_steps()).rev() {
                history.push(run.direction(j).clone()).unwrap();
            }
            let x = run.state(i).clone();
            let d = model.noise_prediction(&x, t_i).unwrap();
            let basis = pca_basis(&history, &d, out.table.basis_k).unwrap();
            owned.push((x, d, basis, history, gt[i - 1].clone()));
        }
        let batch: Vec<StepSample<'_>> = owned
            .iter()
            .map(|(x, d, basis, history, target)| StepSample {
                state: x,
                direction: d,
                basis,
                history,
                target,
            })
            .collect();
        let obj = CoordinateObjective::new(&model, solver, t_i, t_prev, config.loss, config.parameterization, &batch)
            .unwrap();
        let corrected = obj.loss(&entry.coords).unwrap();
        let uncorrected = obj.uncorrected_loss().unwrap();
        let logged = out.log.iter().find(|l| l.step == i).unwrap();
        assert!(logged.accepted);
        assert_eq!(corrected, logged.loss_corrected);
        assert_eq!(uncorrected, logged.loss_uncorrected);
        assert!(adaptive_accept(corrected, uncorrected, logged.tau));
    }
    for l in out.log.iter().filter(|l| !l.accepted) {
        assert!(out.table.get(l.step).is_none());
    }
}

#[test]
fn retraining_is_bit_identical_across_thread_counts() {
    let (model, schedule, noises) = setup(16, 5);
    let config = TrainConfig {
        batch_size: Some(32),
        ..quick_config()
    };
    let train = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_pas(&model, SolverSpec::EULER, &schedule, &noises, &config).unwrap())
    };
    let a = train(1);
    let b = train(4);
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a, train(3));
}

#[test]
fn first_tolerance_applies_until_first_acceptance() {
    let (model, schedule, noises) = setup(16, 8);
    let config = TrainConfig {
        tau: 1e-2,
        tau_after_first: 1e-4,
        ..quick_config()
    };
    let out = train_pas_with_log(&model, SolverSpec::EULER, &schedule, &noises, &config).unwrap();
    let mut seen_accept = false;
    for l in &out.log {
        assert_eq!(l.tau, if seen_accept { 1e-4 } else { 1e-2 });
        seen_accept |= l.accepted;
    }
    assert!(seen_accept);
}

#[test]
fn corrected_error_drops_for_both_parameterizations() {
    let (model, schedule, noises) = setup(64, 10);
    let held = rng::initial_noises(43, 0, 64, 64, 80.0);
    for parameterization in [Parameterization::Absolute, Parameterization::Relative] {
        let config = TrainConfig {
            parameterization,
            ..quick_config()
        };
        let table = train_pas(&model, SolverSpec::EULER, &schedule, &noises, &config).unwrap();
        assert!(!table.entries.is_empty());
        assert!(table.parameter_count() <= 4 * schedule.n_steps());
        let exact: Vec<Vector> = held.iter().map(|x| exact_states(&model, &schedule, x).unwrap()[0].clone()).collect();
        let base: Vec<Vector> = held
            .iter()
            .map(|x| sample(&model, SolverSpec::EULER, &schedule, x).unwrap().final_state().clone())
            .collect();
        let cor: Vec<Vector> = held
            .iter()
            .map(|x| {
                sample_with_correction(&model, SolverSpec::EULER, &schedule, x, &table)
                    .unwrap()
                    .final_state()
                    .clone()
            })
            .collect();
        let b = mean_final_distance(&base, &exact, Norm::L2).unwrap();
        let c = mean_final_distance(&cor, &exact, Norm::L2).unwrap();
        assert!(c < b, "{parameterization:?}: corrected {c} vs baseline {b}");
    }
}

#[test]
fn heun_student_trains_with_finite_differences() {
    let (model, schedule, noises) = setup(16, 4);
    let config = TrainConfig {
        inner_iterations: 20,
        gradient: GradientMode::FiniteDifference,
        ..quick_config()
    };
    let table = train_pas(&model, SolverSpec::HEUN, &schedule, &noises[..24], &config).unwrap();
    table.validate().unwrap();
    assert_eq!(table.solver, SolverSpec::HEUN);
}

#[test]
fn analytic_and_finite_difference_training_agree() {
    let (model, schedule, noises) = setup(16, 5);
    let analytic = quick_config();
    let fd = TrainConfig {
        gradient: GradientMode::FiniteDifference,
        loss: pas_core::metrics::Loss::L2,
        ..analytic.clone()
    };
    let analytic = TrainConfig {
        loss: pas_core::metrics::Loss::L2,
        learning_rate: 1e-4,
        ..analytic
    };
    let fd = TrainConfig {
        learning_rate: 1e-4,
        ..fd
    };
    let a = train_pas(&model, SolverSpec::EULER, &schedule, &noises, &analytic).unwrap();
    let b = train_pas(&model, SolverSpec::EULER, &schedule, &noises, &fd).unwrap();
    assert_eq!(a.corrected_steps(), b.corrected_steps());
    for (x, y) in a.entries.iter().zip(&b.entries) {
        for (p, q) in x.coords.as_slice().iter().zip(y.coords.as_slice()) {
            assert!((p - q).abs() <= 1e-5 * p.abs().max(1.0), "{p} vs {q}");
        }
    }
}

#[test]
fn table_file_round_trip() {
    let (model, schedule, noises) = setup(16, 5);
    let table = train_pas(&model, SolverSpec::EULER, &schedule, &noises, &quick_config()).unwrap();
    let dir = std::env::temp_dir().join(format!("pas-table-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("table.json");
    table.save(&path).unwrap();
    assert_eq!(CorrectionTable::load(&path).unwrap(), table);
    std::fs::remove_dir_all(&dir).unwrap();
}
