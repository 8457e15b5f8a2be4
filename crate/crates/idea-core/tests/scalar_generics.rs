//! The numeric core works at both scalar widths; spot-check f32.

use idea_core::bridge::{solve_closed_form, BridgeProblem};
use idea_core::fusion::{fisher_trace_per_layer, forward};
use idea_core::linalg::Matrix;
use idea_core::rng::SplitMix64;
use idea_core::stats::{compute_stats, moment_distance, w2_distance};
use idea_core::{FusionStack32, Observation32, StatsConfig32};

#[test]
fn stats_and_distances_work_at_f32() {
    let cfg = StatsConfig32::with_dim(2).unwrap();
    let tokens = Matrix::from_rows(vec![vec![1.0f32, 1.0], vec![3.0, 3.0]]).unwrap();
    let stats = compute_stats(&tokens, &cfg).unwrap();
    assert!((stats.mean()[0] - 2.0).abs() < 1e-6);
    assert!((stats.std()[0] - 2.0f32.sqrt()).abs() < 1e-3);
    assert_eq!(w2_distance(&stats, &stats).unwrap(), 0.0);
    assert_eq!(moment_distance(&stats, &stats).unwrap(), 0.0);
}

#[test]
fn forward_and_fisher_work_at_f32() {
    let mut rng = SplitMix64::new(3);
    let stack: FusionStack32 = FusionStack32::seeded(2, 4, &mut rng);
    let rows: Vec<Vec<f32>> = (0..3)
        .map(|_| (0..4).map(|_| rng.next_normal() as f32).collect())
        .collect();
    let instr: Vec<f32> = (0..4).map(|_| rng.next_normal() as f32).collect();
    let obs = Observation32::new(Matrix::from_rows(rows).unwrap(), instr).unwrap();
    let trace = forward(&stack, None, &obs).unwrap();
    let sum: f32 = trace.policy().iter().sum();
    assert!((sum - 1.0).abs() < 1e-5);

    // Final-layer identity at f32 precision.
    let fisher = fisher_trace_per_layer(&stack, &obs).unwrap();
    let pi_sq: f32 = trace.policy().iter().map(|p| p * p).sum();
    let head_sq: f32 = stack.head().iter().map(|h| h * h).sum();
    assert!((fisher[1] - head_sq * (1.0 - pi_sq)).abs() < 1e-5);
}

#[test]
fn bridge_solver_works_at_f32() {
    let mut a = Matrix::<f32>::zeros(2, 2);
    a.set(0, 0, 1.0);
    a.set(1, 1, 1.0);
    let p = BridgeProblem::new(a, vec![1.0f32, 0.0], vec![1.0, 1.0], 1.0).unwrap();
    let sol = solve_closed_form(&p).unwrap();
    assert!((sol.weights_raw[0] - 0.75).abs() < 1e-5);
    assert!((sol.weights_raw[1] - 0.25).abs() < 1e-5);
}
