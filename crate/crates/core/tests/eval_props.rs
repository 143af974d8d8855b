//! Properties of the diversity score, the mini planning score and candidate selection.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use truncdiff::anchors::{sample_anchored, AnchorSet};
use truncdiff::denoiser::{init_params, DenoiserConfig};
use truncdiff::eval::diversity::diversity;
use truncdiff::eval::metrics::{collision_free, drivable_compliant, mini_pdm};
use truncdiff::plan::{argmax_confidence, plan};
use truncdiff::scene::{generate_scene, RouteIntent};
use truncdiff::schedule::NoiseSchedule;
use truncdiff::trajectory::Trajectory;

/// Paths that advance at least half a meter per waypoint, so no corridor is empty.
fn moving_paths(seed: u64, n: usize) -> Vec<Trajectory<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut p = [0.0, 0.0];
            let heading: f64 = rng.random_range(-1.5..1.5);
            Trajectory::new(
                (0..8)
                    .map(|_| {
                        let step = rng.random_range(0.5..4.0);
                        let h = heading + rng.random_range(-0.4..0.4);
                        p = [p[0] + step * h.cos(), p[1] + step * h.sin()];
                        p
                    })
                    .collect(),
            )
        })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diversity_ignores_order(seed in any::<u64>(), n in 1usize..8, rot in 0usize..8) {
        let paths = moving_paths(seed, n);
        let mut shuffled = paths.clone();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        let a = diversity(&paths).unwrap();
        let b = diversity(&shuffled).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn diversity_ignores_joint_translation(seed in any::<u64>(), n in 1usize..8, dx in -20.0f64..20.0, dy in -20.0f64..20.0) {
        let paths = moving_paths(seed, n);
        let moved: Vec<_> = paths.iter().map(|t| t.translate(dx, dy)).collect();
        let a = diversity(&paths).unwrap();
        let b = diversity(&moved).unwrap();
        prop_assert!((a - b).abs() <= 0.02, "{a} vs {b}");
    }

    #[test]
    fn diversity_is_a_fraction(seed in any::<u64>(), n in 1usize..10) {
        let d = diversity(&moving_paths(seed, n)).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn some_duplicate_never_raises_diversity(seed in any::<u64>(), n in 1usize..8) {
        // appending a copy of an above-average footprint keeps the union and lifts the mean IoU
        let paths = moving_paths(seed, n);
        let base = diversity(&paths).unwrap();
        let best = (0..n)
            .map(|j| {
                let mut with = paths.clone();
                with.push(paths[j].clone());
                diversity(&with).unwrap()
            })
            .fold(f64::INFINITY, f64::min);
        prop_assert!(best <= base + 1e-12, "{best} > {base}");
    }

    #[test]
    fn pdms_is_gated_and_bounded(seed in any::<u64>(), intent in 0u8..5, jitter in 0.0f64..3.0) {
        let scene = generate_scene(RouteIntent::from_code(intent).unwrap(), 0.8, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let noise: Vec<f64> = (0..2 * scene.horizon()).map(|_| rng.random_range(-jitter..=jitter)).collect();
        let traj = Trajectory::from_flat(&scene.gt_trajectory.flat().zip(&noise).map(|(v, n)| v + n).collect::<Vec<_>>()).unwrap();
        let s = mini_pdm(&scene, &traj).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.pdms_mini));
        prop_assert!((0.0..=1.0).contains(&s.ep));
        prop_assert_eq!(s.nc, collision_free(&scene, &traj) as u8 as f64);
        prop_assert_eq!(s.dac, drivable_compliant(&scene, &traj) as u8 as f64);
        if s.nc == 0.0 || s.dac == 0.0 {
            prop_assert_eq!(s.pdms_mini, 0.0);
        }
        let expected = s.nc * s.dac * (5.0 * s.ep + 5.0 * s.ttc + 2.0 * s.comf) / 12.0;
        prop_assert!((s.pdms_mini - expected).abs() < 1e-15);
    }

    #[test]
    fn selection_survives_monotone_transforms(
        raw in prop::collection::vec(-800i32..800, 1..30),
        scale in 0.1f64..3.0,
        shift in -5.0f64..5.0,
    ) {
        let logits: Vec<f64> = raw.iter().map(|&v| v as f64 / 100.0).collect();
        let pick = |f: &dyn Fn(f64) -> f64| argmax_confidence(&logits.iter().map(|&l| sigmoid(f(l))).collect::<Vec<_>>());
        let base = pick(&|l| l);
        prop_assert_eq!(base, pick(&|l| scale * l + shift));
        prop_assert_eq!(base, pick(&|l| l.powi(3) / 30.0));
        prop_assert_eq!(base, pick(&|l| (l / 4.0).sinh()));
        prop_assert_eq!(base, argmax_confidence(&logits));
    }
}

#[test]
fn duplicating_a_short_path_can_raise_diversity() {
    // D rises when the copied footprint is smaller than the mean footprint
    let long = Trajectory::new((1..=8).map(|k| [4.0 * k as f64, 0.0]).collect());
    let short = Trajectory::new((1..=8).map(|k| [0.5 * k as f64, 6.0]).collect());
    let base = diversity(&[long.clone(), short.clone()]).unwrap();
    let with_short = diversity(&[long.clone(), short.clone(), short.clone()]).unwrap();
    let with_long = diversity(&[long.clone(), long, short]).unwrap();
    assert!(with_short > base, "{with_short} <= {base}");
    assert!(with_long <= base);
}

#[test]
fn identity_decoder_plan_is_the_ddim_chain_of_the_anchored_draw() {
    let sched = NoiseSchedule::default();
    let cfg = DenoiserConfig { model_dim: 8, hidden_dim: 16, embed_dim: 4, time_dim: 8, ..DenoiserConfig::default() };
    let params = init_params::<f64>(5, &cfg).unwrap();
    let anchors = AnchorSet::new(moving_paths(3, 4)).unwrap();
    for seed in 0..4 {
        let scene = generate_scene(RouteIntent::LaneChangeLeft, 0.6, seed).unwrap();
        let draws = sample_anchored(&anchors, &sched, 7, 50, seed).unwrap();

        let one = plan(&params, &anchors, &sched, &scene, 7, 1, seed).unwrap();
        for (c, d) in one.candidates.iter().zip(&draws) {
            assert_eq!(c.trajectory, d.trajectory);
            assert_eq!(c.origin_anchor, Some(d.anchor));
        }

        let three = plan(&params, &anchors, &sched, &scene, 7, 3, seed).unwrap();
        let ladder = NoiseSchedule::<f64>::ladder(50, 3).unwrap();
        for (c, d) in three.candidates.iter().zip(&draws) {
            let mut x = d.trajectory.clone();
            for w in ladder.windows(2) {
                x = sched.ddim_step(&x, &x.clone(), w[0], w[1], 0.0, None).unwrap();
            }
            let err = c.trajectory.flat().zip(x.flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "seed {seed}: {err}");
        }
    }
}
