//! Schedule and DDIM properties over random inputs.

mod common;

use common::{chain_error, marginal_error, max_abs_diff, normal_traj};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use truncdiff::schedule::{build_linear_schedule, NoiseSchedule};
use truncdiff::trajectory::Trajectory;

fn clean_strategy() -> impl Strategy<Value = Trajectory<f64>> {
    prop::collection::vec((-40.0f64..40.0, -40.0f64..40.0), 1..=12)
        .prop_map(|v| Trajectory::new(v.into_iter().map(|(x, y)| [x, y]).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn deterministic_ddim_hits_forward_marginal(clean in clean_strategy(), seed in any::<u64>(), i in 1usize..=1000, frac in 0.0f64..1.0) {
        let sched = NoiseSchedule::default();
        let j = ((i as f64) * frac) as usize;
        let eps = normal_traj(&mut ChaCha8Rng::seed_from_u64(seed), clean.horizon());
        prop_assert!(marginal_error(&sched, &clean, &eps, i, j) <= 1e-9);
    }

    #[test]
    fn perfect_prediction_chain_returns_clean(clean in clean_strategy(), seed in any::<u64>(), i in 1usize..=1000, frac in 0.0f64..1.0) {
        let sched = NoiseSchedule::default();
        let j = ((i as f64) * frac) as usize;
        let eps = normal_traj(&mut ChaCha8Rng::seed_from_u64(seed), clean.horizon());
        prop_assert!(chain_error(&sched, &clean, &eps, i, j) <= 1e-9);
    }

    #[test]
    fn linear_schedules_are_monotone_products(total in 1usize..2000, lo in 1e-6f64..0.05, span in 0.0f64..0.5, trunc_frac in 0.0f64..1.0) {
        let hi = (lo + span).min(0.999);
        let trunc = 1 + ((total - 1) as f64 * trunc_frac) as usize;
        let s = build_linear_schedule::<f64>(total, lo, hi, trunc).unwrap();
        prop_assert_eq!(s.alpha_bars.len(), total + 1);
        prop_assert_eq!(s.alpha_bars[0], 1.0);
        let mut product = 1.0;
        for k in 0..total {
            prop_assert!(s.betas[k] > 0.0 && s.betas[k] < 1.0);
            if k > 0 {
                prop_assert!(s.betas[k] >= s.betas[k - 1]);
            }
            product *= 1.0 - s.betas[k];
            prop_assert!((s.alpha_bars[k + 1] - product).abs() <= 1e-12);
            prop_assert!(s.alpha_bars[k + 1] < s.alpha_bars[k]);
        }
    }

    #[test]
    fn zero_noise_scales_clean(clean in clean_strategy(), i in 1usize..=1000) {
        let sched = NoiseSchedule::default();
        let out = sched.diffuse(&clean, i, &Trajectory::zeros(clean.horizon())).unwrap();
        prop_assert!(max_abs_diff(&out, &clean.scale(sched.alpha_bar(i).sqrt())) == 0.0);
    }
}

#[test]
fn every_ladder_pair_composes_for_one_fixed_path() {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let clean = Trajectory::new((1..=8).map(|k| [3.0 * k as f64, 0.2 * (k * k) as f64]).collect());
    let eps = normal_traj(&mut rng, 8);
    for i in (1..=sched.trunc_steps).step_by(7) {
        for j in 0..i {
            assert!(chain_error(&sched, &clean, &eps, i, j) <= 1e-9, "chain {i}->{j}");
        }
    }
}
