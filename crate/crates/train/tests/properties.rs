use aot_core::Direction;
use aot_train::parallel::map_jobs;
use aot_train::stats::{spearman, spearman_permutation_test};
use aot_train::trainer::train_pair;
use aot_train::{AdamWConfig, ExperimentSpec, LanguageConfig, LrSchedule, ModelConfig, TrainConfig};
use proptest::prelude::*;

fn schedule() -> impl Strategy<Value = LrSchedule> {
    (1e-5f64..1e-2, 0usize..50, 1usize..200, 1.0f64..2.5, 0.0f64..1.0).prop_map(|(base, warmup, period, mult, f)| {
        LrSchedule { base_lr: base, warmup_steps: warmup, period, period_mult: mult, floor_lr: base * f * 0.5 }
    })
}

/// Steps at which a new cycle begins.
fn restarts(s: &LrSchedule, horizon: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut start, mut len) = (s.warmup_steps, s.period as f64);
    while start < horizon {
        out.push(start);
        start += len.round().max(1.0) as usize;
        len *= s.period_mult;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lr_stays_within_bounds(s in schedule(), step in 0usize..2000) {
        let lr = s.lr_at(step);
        prop_assert!(lr >= 0.0 && lr <= s.base_lr + 1e-15);
        if step >= s.warmup_steps {
            prop_assert!(lr >= s.floor_lr - 1e-15);
        }
    }

    #[test]
    fn lr_jumps_only_at_restarts(s in schedule()) {
        let horizon = 600;
        let starts = restarts(&s, horizon + 1);
        // Largest change a continuous piece can make in one step.
        let shortest = starts.windows(2).map(|w| w[1] - w[0]).chain([s.period]).min().unwrap_or(1).max(1) as f64;
        let cos_step = (s.base_lr - s.floor_lr) * std::f64::consts::PI / (2.0 * shortest);
        let warm_step = if s.warmup_steps > 0 { s.base_lr / s.warmup_steps as f64 } else { 0.0 };
        let bound = cos_step.max(warm_step) * (1.0 + 1e-9) + 1e-15;
        for t in 0..horizon {
            let jump = (s.lr_at(t + 1) - s.lr_at(t)).abs();
            if !starts.contains(&(t + 1)) {
                prop_assert!(jump <= bound, "step {t}: jump {jump} > {bound}");
            }
        }
        for &r in starts.iter().skip(1) {
            prop_assert!((s.lr_at(r) - s.base_lr).abs() < 1e-15);
        }
    }

    #[test]
    fn spearman_is_rank_invariant(xs in prop::collection::vec(-100.0f64..100.0, 3..12)) {
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x + 1.0).collect();
        prop_assert!((spearman(&xs, &ys) - 1.0).abs() < 1e-9 || xs.windows(2).any(|w| w[0] == w[1]));
        let rev: Vec<f64> = ys.iter().map(|y| -y).collect();
        let r = spearman(&xs, &rev);
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&r));
    }

    #[test]
    fn permutation_p_values_are_probabilities(ys in prop::collection::vec(-1.0f64..1.0, 3..7)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
        let t = spearman_permutation_test(&xs, &ys, 1);
        prop_assert!(t.p_value > 0.0 && t.p_value <= 1.0);
        let factorial: usize = (1..=ys.len()).product();
        prop_assert_eq!(t.permutations, factorial);
        prop_assert!(t.p_value >= 1.0 / factorial as f64 - 1e-12);
    }

    #[test]
    fn job_count_does_not_change_results(items in prop::collection::vec(any::<u32>(), 0..40), jobs in 1usize..6) {
        let serial = map_jobs(&items, 1, |&x| Ok(x.wrapping_mul(3))).unwrap();
        let parallel = map_jobs(&items, jobs, |&x| Ok(x.wrapping_mul(3))).unwrap();
        prop_assert_eq!(serial, parallel);
    }
}

fn tiny_spec(m: usize, seed: u64, dropout: f64) -> ExperimentSpec {
    ExperimentSpec {
        schema_version: 1,
        language: LanguageConfig::Linear {
            m,
            nnz_offset: 1,
            matrix_seed: seed,
            noise: 0.05,
            noise_scope: Default::default(),
            pad_count: 2,
        },
        model: ModelConfig::custom(8, 2, 1, dropout),
        train: TrainConfig {
            batch_size: 4,
            steps: 3,
            train_sentences: 24,
            val_sentences: 6,
            eval_every: 2,
            lr: 1e-3,
            warmup_steps: 1,
            restart_period: None,
            restart_mult: 1.0,
            floor_lr: 0.0,
            optimizer: AdamWConfig::default(),
            data_seed: seed,
        },
        seeds: vec![seed],
        directions: Direction::BOTH.to_vec(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn paired_runs_share_streams_and_replay(m in 2usize..5, seed in 0u64..1000, dropout in prop::sample::select(vec![0.0, 0.2])) {
        let spec = tiny_spec(m, seed, dropout);
        let data = spec.dataset().unwrap();
        let a = train_pair(&spec, &data, seed).unwrap();
        prop_assert_eq!(a.forward.stream_checksum, a.backward.stream_checksum);
        let b = train_pair(&spec, &data, seed).unwrap();
        prop_assert_eq!(a.forward.log.to_csv(), b.forward.log.to_csv());
        prop_assert_eq!(a.backward.log.to_csv(), b.backward.log.to_csv());
    }

    #[test]
    fn specs_round_trip_through_json(m in 2usize..30, seed in any::<u64>(), dropout in 0.0f64..0.5) {
        let spec = tiny_spec(m, seed, dropout);
        let back = ExperimentSpec::from_json(&spec.to_json()).unwrap();
        prop_assert_eq!(back.config_hash(), spec.config_hash());
        prop_assert_eq!(back, spec);
    }
}
