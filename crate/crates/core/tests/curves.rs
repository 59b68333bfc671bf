use pas_core::metrics::{final_state_error, mean_curve, truncation_error_curve, ErrorCurve, Norm, Normalization};
use pas_core::rng;
use pas_core::scorefield::{GaussianComponent, GaussianMixtureScoreModel, Preset};
use pas_core::solvers::{exact_states, generate_ground_truth, sample, SolverSpec, TeacherKind};
use pas_core::timegrid::build_schedule;
use pas_core::Vector;

#[test]
fn one_dimensional_euler_curve_matches_hand_unrolled_steps() {
    let model = GaussianMixtureScoreModel::single(
        GaussianComponent::new(1.0, Vector::zeros(1), vec![1.0], vec![Vector::from_element(1, 1.0)]).unwrap(),
    )
    .unwrap();
    let s = build_schedule(7.0, 0.002, 80.0, 10).unwrap();
    let x_t = 80.0 * 0.7;
    let run = sample(&model, SolverSpec::EULER, &s, &Vector::from_element(1, x_t)).unwrap();
    let exact: Vec<Vector> = s
        .times()
        .iter()
        .map(|t| Vector::from_element(1, x_t * ((1.0 + t * t) / (1.0 + 80.0 * 80.0)).sqrt()))
        .collect();
    let curve = truncation_error_curve(&run, &exact, Norm::L2, Normalization::None).unwrap();

    // ε(x, t) = x t / (1 + t²) for N(0, 1)
    let mut x = x_t;
    let mut expected = vec![0.0; 11];
    for i in (1..=10).rev() {
        let (t, tp) = (s.time(i), s.time(i - 1));
        x += (tp - t) * x * t / (1.0 + t * t);
        expected[i - 1] = (x - x_t * ((1.0 + tp * tp) / (1.0 + 6400.0)).sqrt()).abs();
    }
    assert_eq!(curve.at(10), 0.0);
    for i in 0..10 {
        assert!((curve.at(i) - expected[i]).abs() <= 1e-12 * expected[i].max(1.0), "i={i}");
    }
}

fn mixture_curves(seed: u64, count: usize) -> Vec<ErrorCurve> {
    let model = Preset::mixture_symmetric(64).build(0).unwrap();
    let s = build_schedule(7.0, 0.002, 80.0, 10).unwrap();
    rng::initial_noises(seed, 0, count, 64, 80.0)
        .iter()
        .map(|x| {
            let gt = generate_ground_truth(&model, &s, x, 100, TeacherKind::Heun).unwrap();
            truncation_error_curve(&sample(&model, SolverSpec::EULER, &s, x).unwrap(), &gt, Norm::L2, Normalization::None)
                .unwrap()
        })
        .collect()
}

fn manifold_curves(seed: u64, count: usize) -> Vec<ErrorCurve> {
    let model = Preset::rank2_manifold(64).build(0).unwrap();
    let s = build_schedule(7.0, 0.002, 80.0, 10).unwrap();
    rng::initial_noises(seed, 0, count, 64, 80.0)
        .iter()
        .map(|x| {
            let exact = exact_states(&model, &s, x).unwrap();
            truncation_error_curve(&sample(&model, SolverSpec::EULER, &s, x).unwrap(), &exact, Norm::L2, Normalization::None)
                .unwrap()
        })
        .collect()
}

#[test]
fn averaged_curve_is_stable_when_batch_doubles() {
    let curves = manifold_curves(5, 512);
    let half = mean_curve(&curves[..256]).unwrap();
    let full = mean_curve(&curves).unwrap();
    assert_eq!(full.at(10), 0.0);
    for i in 0..10 {
        let change = (full.at(i) - half.at(i)).abs() / full.at(i);
        assert!(change < 0.05, "index {i}: {change}");
    }
}

#[test]
fn mixture_curve_rises_then_flattens() {
    let curve = mean_curve(&mixture_curves(6, 128)).unwrap();
    let stats = pas_core::metrics::s_shape_stats(&curve).unwrap();
    assert!(stats.argmax_increment_index > 1 && stats.argmax_increment_index < 10);
    assert!(stats.tail_growth < stats.mid_growth);
}

#[test]
fn final_error_orders_match_curve_endpoint() {
    let model = Preset::mixture_symmetric(16).build(1).unwrap();
    let s = build_schedule(7.0, 0.002, 80.0, 6).unwrap();
    let xs = rng::initial_noises(8, 0, 32, 16, 80.0);
    let mut finals = Vec::new();
    let mut gts = Vec::new();
    let mut curves = Vec::new();
    for x in &xs {
        let gt = generate_ground_truth(&model, &s, x, 60, TeacherKind::Heun).unwrap();
        let run = sample(&model, SolverSpec::EULER, &s, x).unwrap();
        curves.push(truncation_error_curve(&run, &gt, Norm::L2, Normalization::None).unwrap());
        finals.push(run.final_state().clone());
        gts.push(gt[0].clone());
    }
    let mse = final_state_error(&finals, &gts, Norm::L2, Normalization::None).unwrap();
    let squared: f64 = curves.iter().map(|c| c.at(0) * c.at(0)).sum::<f64>() / curves.len() as f64;
    assert!((mse - squared).abs() <= 1e-12 * mse);
}
