mod common;

use common::*;
use proptest::prelude::*;
use uds_core::rng::rng_from_seed;
use uds_core::{backward_induction, information_gain, split_folds, FoldScheme, KernelSpec};

fn check(t: Trial) -> Result<(), TestCaseError> {
    t.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ridge_matches_dense_oracle(seed in any::<u64>(), pick in 0usize..5) {
        check(ridge_oracle_trial(seed, pick))?;
    }

    #[test]
    fn tabular_value_iteration_matches_primal(seed in any::<u64>()) {
        check(tabular_trial(seed))?;
    }

    #[test]
    fn variance_over_lambda_below_zeta(
        seed in any::<u64>(), pick in 0usize..5, n in 0usize..12, lambda in 1.0f64..3.0,
    ) {
        check(zeta_bound_trial(seed, pick, n, lambda))?;
    }

    #[test]
    fn variance_shrinks_with_data(
        seed in any::<u64>(), pick in 0usize..5, n in 0usize..8, extra in 1usize..8,
        ridge in 0.1f64..3.0,
    ) {
        check(variance_monotone_trial(seed, pick, n, extra, ridge))?;
    }

    #[test]
    fn q_hat_stays_in_range(
        seed in any::<u64>(), pick in 0usize..5, n in 3usize..15, bonus in 0.0f64..5.0,
    ) {
        check(q_range_trial(seed, pick, n, bonus))?;
    }

    #[test]
    fn pessimistic_reward_dominated_and_floored(
        seed in any::<u64>(), pick in 0usize..5, n in 1usize..10,
    ) {
        check(dominance_trial(seed, pick, n))?;
    }

    #[test]
    fn dual_and_primal_predictions_agree(
        seed in any::<u64>(), degree in 1u8..=3, n in 1usize..10, lambda in 0.5f64..3.0,
    ) {
        check(representer_trial(seed, degree, n, lambda))?;
    }

    #[test]
    fn finite_feature_gain_bounded(seed in any::<u64>(), n in 1usize..200, lambda in 0.5f64..3.0) {
        use rand::RngExt;
        let mut rng = rng_from_seed(seed);
        let m = rng.random_range(1..=3);
        let spec = KernelSpec::explicit_features(1, m);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let d = (m + 1) as f64;
        let g = information_gain(&spec, &points, lambda).unwrap();
        prop_assert!(g <= 0.5 * d * (1.0 + n as f64 / (lambda * d)).ln() + 1e-10);
    }

    #[test]
    fn larger_bonus_never_raises_last_step(
        seed in any::<u64>(), pick in 0usize..5, b1 in 0.0f64..3.0, db in 0.0f64..3.0,
    ) {
        let mut rng = rng_from_seed(seed);
        let spec = random_spec(&mut rng, 2, pick);
        let d = random_labeled(&mut rng, 6, 1, 2);
        let plan = split_folds(6, 2, FoldScheme::Contiguous).unwrap();
        let scaling = unit_scaling(1, 3);
        let lo = backward_induction(&d, &spec, &scaling, 3, 1.2, b1, &plan).unwrap();
        let hi = backward_induction(&d, &spec, &scaling, 3, 1.2, b1 + db, &plan).unwrap();
        for _ in 0..10 {
            let (s, a) = random_query(&mut rng, 1);
            prop_assert!(hi.q_hat(2, &s, a).unwrap() <= lo.q_hat(2, &s, a).unwrap() + 1e-12);
        }
    }

    #[test]
    fn levels_only_see_their_fold_and_above(seed in any::<u64>(), pick in 0usize..5) {
        let mut rng = rng_from_seed(seed);
        let spec = random_spec(&mut rng, 2, pick);
        let d = random_labeled(&mut rng, 9, 1, 3);
        let plan = split_folds(9, 3, FoldScheme::Shuffled { seed }).unwrap();
        let scaling = unit_scaling(1, 3);
        let fold1 = plan.fold(1).to_vec();
        let changed = d
            .with_rewards(|t| if fold1.contains(&t.episode) { 1.0 - t.r.unwrap() } else { t.r.unwrap() })
            .unwrap();
        let a = backward_induction(&d, &spec, &scaling, 3, 1.1, 0.5, &plan).unwrap();
        let b = backward_induction(&changed, &spec, &scaling, 3, 1.1, 0.5, &plan).unwrap();
        for _ in 0..10 {
            let (s, act) = random_query(&mut rng, 1);
            for h in 2..=3 {
                prop_assert_eq!(a.q_hat(h, &s, act).unwrap(), b.q_hat(h, &s, act).unwrap());
            }
        }
    }
}
