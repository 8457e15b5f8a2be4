//! Property tests for the metric, simplex, library, and solver invariants.

use proptest::prelude::*;

use idea_core::bridge::{
    assemble_problem, compose_bridge, project_simplex, solve_closed_form, BridgeProblem,
};
use idea_core::library::{Asset, AssetLibrary};
use idea_core::linalg::{matvec, Matrix};
use idea_core::prompt::{update_layer_weights, LayerWeights, SoftPrompt};
use idea_core::stats::{compute_stats, moment_distance, w2_distance, FeatureStats, StatsConfig};

fn stats_strategy(dim: usize) -> impl Strategy<Value = FeatureStats<f64>> {
    (
        prop::collection::vec(-10.0f64..10.0, dim),
        prop::collection::vec(0.0f64..5.0, dim),
    )
        .prop_map(|(mean, std)| FeatureStats::new(mean, std).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn distances_are_symmetric_nonnegative_and_triangular(
        a in stats_strategy(5),
        b in stats_strategy(5),
        c in stats_strategy(5),
    ) {
        let w_ab = w2_distance(&a, &b).unwrap();
        let w_ba = w2_distance(&b, &a).unwrap();
        prop_assert!(w_ab >= 0.0);
        prop_assert!((w_ab - w_ba).abs() < 1e-12);
        let w_ac = w2_distance(&a, &c).unwrap();
        let w_cb = w2_distance(&c, &b).unwrap();
        prop_assert!(w_ab <= w_ac + w_cb + 1e-9);

        let m_ab = moment_distance(&a, &b).unwrap();
        let m_ba = moment_distance(&b, &a).unwrap();
        prop_assert!(m_ab >= 0.0);
        prop_assert!((m_ab - m_ba).abs() < 1e-12);
        let m_ac = moment_distance(&a, &c).unwrap();
        let m_cb = moment_distance(&c, &b).unwrap();
        prop_assert!(m_ab <= m_ac + m_cb + 1e-9);

        prop_assert_eq!(w2_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(moment_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn norm_sandwich_between_the_two_distances(
        a in stats_strategy(6),
        b in stats_strategy(6),
    ) {
        let w = w2_distance(&a, &b).unwrap();
        let m = moment_distance(&a, &b).unwrap();
        prop_assert!(w <= m + 1e-12);
        prop_assert!(m <= 2f64.sqrt() * w + 1e-12);
    }

    #[test]
    fn stats_are_permutation_invariant(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..8),
        seed in 0u64..1000,
    ) {
        let cfg = StatsConfig::with_dim(4).unwrap();
        let base = compute_stats(&Matrix::from_rows(rows.clone()).unwrap(), &cfg).unwrap();
        // Deterministic shuffle from the seed.
        let mut shuffled = rows;
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            shuffled.swap(i, j);
        }
        let permuted = compute_stats(&Matrix::from_rows(shuffled).unwrap(), &cfg).unwrap();
        for (x, y) in base.mean().iter().zip(permuted.mean()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in base.std().iter().zip(permuted.std()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_weight_update_stays_on_the_simplex(
        alpha_raw in prop::collection::vec(0.01f64..1.0, 2..6),
        traces in prop::collection::vec(0.0f64..10.0, 2..6),
        beta in 0.0f64..=1.0,
    ) {
        let m = alpha_raw.len().min(traces.len());
        let total: f64 = alpha_raw[..m].iter().sum();
        let alpha = LayerWeights::new(
            alpha_raw[..m].iter().map(|a| a / total).collect()
        ).unwrap();
        let next = update_layer_weights(&alpha, &traces[..m], beta).unwrap();
        let sum: f64 = next.alpha().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(next.alpha().iter().all(|a| *a >= 0.0));
    }

    #[test]
    fn library_never_exceeds_capacity(
        capacity in 1usize..6,
        inserts in prop::collection::vec(
            (prop::collection::vec(-3.0f64..3.0, 2), 0.0f64..2.0),
            1..40,
        ),
    ) {
        let mut lib = AssetLibrary::new(capacity, 1, 2).unwrap();
        for (mean, u) in inserts {
            let prompt = SoftPrompt::new(
                Matrix::from_rows(vec![vec![mean[0], mean[1]]]).unwrap()
            ).unwrap();
            let coords = FeatureStats::new(mean, vec![1.0, 1.0]).unwrap();
            lib.insert_or_merge(Asset::new(prompt, coords, u).unwrap()).unwrap();
            prop_assert!(lib.len() <= capacity);
        }
    }

    #[test]
    fn serialization_roundtrip_is_identity(
        entries in prop::collection::vec(
            (
                prop::collection::vec(-4.0f64..4.0, 6),
                prop::collection::vec(-2.0f64..2.0, 2),
                prop::collection::vec(0.0f64..3.0, 2),
                0.0f64..2.0,
            ),
            0..6,
        ),
    ) {
        let mut lib = AssetLibrary::new(8, 3, 2).unwrap();
        for (tokens, mean, std, u) in entries {
            let prompt = SoftPrompt::new(Matrix::from_vec(3, 2, tokens).unwrap()).unwrap();
            let coords = FeatureStats::new(mean, std).unwrap();
            lib.insert_or_merge(Asset::new(prompt, coords, u).unwrap()).unwrap();
        }
        let text = idea_core::library::serialize(&lib);
        let back: AssetLibrary<f64> = idea_core::library::deserialize(&text).unwrap();
        prop_assert_eq!(back.len(), lib.len());
        for (a, b) in lib.assets().iter().zip(back.assets()) {
            for (x, y) in a.prompt().tokens().as_slice().iter()
                .zip(b.prompt().tokens().as_slice()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.coords().mean().iter().zip(b.coords().mean()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.coords().std().iter().zip(b.coords().std()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(a.uncertainty().to_bits(), b.uncertainty().to_bits());
        }
    }

    #[test]
    fn raw_weights_satisfy_the_sum_constraint(
        k in 1usize..8,
        c in 2usize..8,
        lambda_pick in 0usize..3,
        seed in 0u64..10_000,
    ) {
        let lambda = [0.0, 0.4, 1.0][lambda_pick];
        let mut rng = idea_core::rng::SplitMix64::new(seed);
        let data: Vec<f64> = (0..2 * c * k).map(|_| rng.next_normal()).collect();
        let a = Matrix::from_vec(2 * c, k, data).unwrap();
        let b: Vec<f64> = (0..2 * c).map(|_| rng.next_normal()).collect();
        let u: Vec<f64> = (0..k).map(|_| rng.next_unit() * 2.0).collect();
        let problem = BridgeProblem::new(a, b, u, lambda).unwrap();
        if let Ok(sol) = solve_closed_form(&problem) {
            let sum: f64 = sol.weights_raw.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "sum {}", sum);
            let psum: f64 = sol.weights.iter().sum();
            prop_assert!((psum - 1.0).abs() <= 1e-12);
            prop_assert!(sol.weights.iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn projection_output_is_on_the_simplex(
        w in prop::collection::vec(-5.0f64..5.0, 1..10),
    ) {
        let p = project_simplex(&w);
        let sum: f64 = p.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(p.weights.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn composed_stats_equal_stat_matrix_times_weights(
        means in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 1..5),
        weights_raw in prop::collection::vec(0.01f64..1.0, 1..5),
    ) {
        let k = means.len().min(weights_raw.len());
        let mut lib = AssetLibrary::new(8, 1, 3).unwrap();
        for mean in &means[..k] {
            let prompt = SoftPrompt::new(Matrix::from_rows(vec![mean.clone()]).unwrap()).unwrap();
            let coords = FeatureStats::new(
                mean.clone(),
                mean.iter().map(|m| m.abs() + 0.3).collect(),
            ).unwrap();
            lib.insert_or_merge(Asset::new(prompt, coords, 0.1).unwrap()).unwrap();
        }
        let total: f64 = weights_raw[..k].iter().sum();
        let w: Vec<f64> = weights_raw[..k].iter().map(|x| x / total).collect();
        let target = FeatureStats::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let problem = assemble_problem(&lib, &target, 0.4).unwrap();
        let (_, stats) = compose_bridge(&lib, &w).unwrap();
        let aw = matvec(problem.stat_matrix(), &w);
        for (j, v) in stats.mean().iter().enumerate() {
            prop_assert_eq!(v.to_bits(), aw[j].to_bits());
        }
        for (j, v) in stats.std().iter().enumerate() {
            prop_assert_eq!(v.to_bits(), aw[3 + j].to_bits());
        }
    }
}
