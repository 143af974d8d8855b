//! Helpers shared by integration test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use truncdiff::denoiser::{backward, forward, DenoiserConfig, DenoiserParams, OutputGrads, SceneContext};
use truncdiff::scene::BevGrid;
use truncdiff::schedule::NoiseSchedule;
use truncdiff::trajectory::Trajectory;

pub const H: f64 = 1e-5;
/// Entries smaller than this are compared absolutely; below it central differences are roundoff-limited.
pub const FLOOR: f64 = 1e-5;

/// Max relative error of the backward pass against central differences.
pub fn random_case(seed: u64, cfg: DenoiserConfig, n: usize, n_obstacles: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = DenoiserParams::<f64>::zeros(cfg.clone()).unwrap();
    for v in &mut params.values {
        *v = rng.random_range(-0.5..0.5);
    }
    let mut bev = BevGrid::zeros(cfg.channels, 128, 128);
    for v in &mut bev.data {
        *v = rng.random_range(-1.0..1.0);
    }
    let obstacles = (0..n_obstacles).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let ctx = SceneContext::from_parts(bev, obstacles);
    let noisy: Vec<Trajectory<f64>> = (0..n)
        .map(|_| Trajectory::new((0..cfg.horizon).map(|_| [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)]).collect()))
        .collect();
    let step = rng.random_range(1..50);
    let mut grads = OutputGrads::zeros(cfg.n_stages, n, cfg.horizon);
    for st in &mut grads.stages {
        for t in &mut st.trajectories {
            *t = Trajectory::new((0..cfg.horizon).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect());
        }
        for l in &mut st.logits {
            *l = rng.random_range(-1.0..1.0);
        }
    }
    let objective = |p: &DenoiserParams<f64>| -> f64 {
        let out = forward(p, &noisy, &ctx, step).unwrap();
        out.stages
            .iter()
            .zip(&grads.stages)
            .map(|(o, g)| {
                // the constant input is subtracted so the objective stays small and differences do not cancel
                let traj: f64 = o
                    .trajectories
                    .iter()
                    .zip(&noisy)
                    .zip(&g.trajectories)
                    .flat_map(|((a, x), b)| a.flat().zip(x.flat()).zip(b.flat()).map(|((a, x), b)| (a - x) * b).collect::<Vec<_>>())
                    .sum();
                let logit: f64 = o.logits.iter().zip(&g.logits).map(|(a, b)| a * b).sum();
                traj + logit
            })
            .sum()
    };
    let analytic = backward(&params, &noisy, &ctx, step, &grads).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let orig = params.values[i];
        params.values[i] = orig + H;
        let up = objective(&params);
        params.values[i] = orig - H;
        let down = objective(&params);
        params.values[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let scale = analytic[i].abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

pub fn small(model_dim: usize, hidden_dim: usize, embed_dim: usize, horizon: usize, channels: usize, n_stages: usize) -> DenoiserConfig {
    DenoiserConfig { model_dim, hidden_dim, embed_dim, time_dim: 6, horizon, channels, n_stages, ..DenoiserConfig::default() }
}


/// The three small configurations used for the release gradient check.
pub fn gradient_configs() -> [(u64, DenoiserConfig, usize, usize); 3] {
    [
        (1, small(4, 6, 2, 3, 2, 1), 2, 2),
        (2, small(5, 7, 3, 4, 3, 2), 3, 3),
        (3, small(3, 4, 2, 2, 5, 3), 2, 0),
    ]
}

pub fn normal_traj(rng: &mut ChaCha8Rng, horizon: usize) -> Trajectory<f64> {
    Trajectory::new((0..horizon).map(|_| [StandardNormal.sample(rng), StandardNormal.sample(rng)]).collect())
}

pub fn max_abs_diff(a: &Trajectory<f64>, b: &Trajectory<f64>) -> f64 {
    a.flat().zip(b.flat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Deterministic DDIM from a forward sample with a perfect clean prediction
/// lands on the forward marginal at the target step.
pub fn marginal_error(sched: &NoiseSchedule<f64>, clean: &Trajectory<f64>, eps: &Trajectory<f64>, i: usize, j: usize) -> f64 {
    let xi = sched.diffuse(clean, i, eps).unwrap();
    let xj = sched.ddim_step(&xi, clean, i, j, 0.0, None).unwrap();
    let expected = sched.diffuse_unchecked(clean, j, eps).unwrap();
    max_abs_diff(&xj, &expected)
}

/// A chain i -> j -> 0 with a perfect clean prediction ends at the clean trajectory.
pub fn chain_error(sched: &NoiseSchedule<f64>, clean: &Trajectory<f64>, eps: &Trajectory<f64>, i: usize, j: usize) -> f64 {
    let xi = sched.diffuse(clean, i, eps).unwrap();
    let mut x = xi;
    let mut from = i;
    for to in [j, 0] {
        if to < from {
            x = sched.ddim_step(&x, clean, from, to, 0.0, None).unwrap();
            from = to;
        }
    }
    max_abs_diff(&x, clean)
}

/// One random `(clean, eps, i, j)` case drawn from `seed`, with `j < i`.
pub fn schedule_case(seed: u64, sched: &NoiseSchedule<f64>) -> (Trajectory<f64>, Trajectory<f64>, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.random_range(1..=12);
    let clean = Trajectory::new((0..horizon).map(|_| [rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)]).collect());
    let eps = normal_traj(&mut rng, horizon);
    let i = rng.random_range(1..=sched.total_steps);
    let j = rng.random_range(0..i);
    (clean, eps, i, j)
}
