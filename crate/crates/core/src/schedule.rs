//! Noise schedule, forward noising and the DDIM reverse update.
//!
//! The denoiser predicts the clean trajectory directly; `ddim_step` derives the
//! implied noise from that prediction before jumping to an earlier step.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

pub const DEFAULT_TOTAL_STEPS: usize = 1000;
pub const DEFAULT_TRUNC_STEPS: usize = 50;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<S = f64> {
    pub total_steps: usize,
    pub trunc_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// `betas[s - 1]` is the noise rate of step `s`.
    pub betas: Vec<S>,
    /// `alpha_bars[i]` is the cumulative product up to step `i`; `alpha_bars[0] = 1`.
    pub alpha_bars: Vec<S>,
}

impl<S: Scalar> Default for NoiseSchedule<S> {
    fn default() -> Self {
        build_linear_schedule(
            DEFAULT_TOTAL_STEPS,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
            DEFAULT_TRUNC_STEPS,
        )
        .expect("default schedule parameters are valid")
    }
}

/// Linear betas from `beta_start` to `beta_end` inclusive.
pub fn build_linear_schedule<S: Scalar>(
    total_steps: usize,
    beta_start: f64,
    beta_end: f64,
    trunc_steps: usize,
) -> Result<NoiseSchedule<S>> {
    if total_steps == 0 {
        return Err(Error::ParameterBounds("total_steps must be >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::ParameterBounds(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    if trunc_steps == 0 || trunc_steps > total_steps {
        return Err(Error::ParameterBounds(format!(
            "trunc_steps {trunc_steps} outside [1, {total_steps}]"
        )));
    }
    let betas: Vec<S> = (0..total_steps)
        .map(|k| {
            let frac = if total_steps == 1 { 0.0 } else { k as f64 / (total_steps - 1) as f64 };
            S::lit(beta_start + (beta_end - beta_start) * frac)
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(total_steps + 1);
    alpha_bars.push(S::one());
    let mut acc = S::one();
    for &b in &betas {
        acc *= S::one() - b;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule { total_steps, trunc_steps, beta_start, beta_end, betas, alpha_bars })
}

impl<S: Scalar> NoiseSchedule<S> {
    pub fn alpha_bar(&self, step: usize) -> S {
        self.alpha_bars[step]
    }

    fn check_step(&self, step: usize, min: usize) -> Result<()> {
        if step < min || step > self.total_steps {
            return Err(Error::StepBounds { step, min, max: self.total_steps });
        }
        Ok(())
    }

    /// Samples `q(tau^i | tau^0)` with the supplied standard-normal draw.
    pub fn diffuse(&self, clean: &Trajectory<S>, step: usize, noise: &Trajectory<S>) -> Result<Trajectory<S>> {
        self.check_step(step, 1)?;
        self.diffuse_unchecked(clean, step, noise)
    }

    /// As [`Self::diffuse`] but also admits `step = 0`, where the output is `clean`.
    pub fn diffuse_unchecked(
        &self,
        clean: &Trajectory<S>,
        step: usize,
        noise: &Trajectory<S>,
    ) -> Result<Trajectory<S>> {
        self.check_step(step, 0)?;
        if clean.horizon() != noise.horizon() {
            return Err(Error::Shape(format!(
                "noise has {} waypoints, clean has {}",
                noise.horizon(),
                clean.horizon()
            )));
        }
        let ab = self.alpha_bar(step);
        Ok(clean.axpby(ab.sqrt(), noise, (S::one() - ab).sqrt()))
    }

    /// One DDIM jump from `step_from` to `step_to` given the model's clean prediction.
    pub fn ddim_step(
        &self,
        current: &Trajectory<S>,
        predicted_clean: &Trajectory<S>,
        step_from: usize,
        step_to: usize,
        eta: S,
        noise: Option<&Trajectory<S>>,
    ) -> Result<Trajectory<S>> {
        if step_from == 0 || step_to >= step_from {
            return Err(Error::Sequencing(format!(
                "need 0 <= step_to < step_from, got {step_from} -> {step_to}"
            )));
        }
        self.check_step(step_from, 1)?;
        if eta < S::zero() || eta > S::one() {
            return Err(Error::ParameterBounds(format!("eta {eta} outside [0, 1]")));
        }
        if current.horizon() != predicted_clean.horizon() {
            return Err(Error::Shape("current and predicted horizons differ".into()));
        }
        if step_to == 0 {
            return Ok(predicted_clean.clone());
        }
        let ab_from = self.alpha_bar(step_from);
        let ab_to = self.alpha_bar(step_to);
        let one = S::one();
        let eps_hat = current.axpby(one, predicted_clean, -ab_from.sqrt()).scale(one / (one - ab_from).sqrt());
        let sigma = eta * ((one - ab_to) / (one - ab_from)).sqrt() * (one - ab_from / ab_to).sqrt();
        let dir = (one - ab_to - sigma * sigma).max(S::zero()).sqrt();
        let mut out = predicted_clean.axpby(ab_to.sqrt(), &eps_hat, dir);
        if sigma > S::zero() {
            let z = noise.ok_or_else(|| Error::MissingInput("eta > 0 requires a noise draw".into()))?;
            if z.horizon() != out.horizon() {
                return Err(Error::Shape("noise horizon differs".into()));
            }
            out = out.axpby(one, z, sigma);
        }
        Ok(out)
    }

    /// `n_steps + 1` evenly spaced integers descending from `start` to 0.
    pub fn ladder(start: usize, n_steps: usize) -> Result<Vec<usize>> {
        if n_steps == 0 {
            return Err(Error::ParameterBounds("n_steps must be >= 1".into()));
        }
        if start == 0 {
            return Ok(vec![0]);
        }
        if n_steps > start {
            return Err(Error::ParameterBounds(format!("{n_steps} steps cannot fit below step {start}")));
        }
        Ok((0..=n_steps).map(|k| start * (n_steps - k) / n_steps).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory<f64> {
        Trajectory::new(
            (0..n)
                .map(|_| [StandardNormal.sample(rng), StandardNormal.sample(rng)])
                .collect(),
        )
    }

    #[test]
    fn single_step_schedule() {
        let s = build_linear_schedule::<f64>(1, 0.5, 0.5, 1).unwrap();
        assert_eq!(s.alpha_bars, vec![1.0, 0.5]);
    }

    #[test]
    fn two_step_schedule_by_hand() {
        let s = build_linear_schedule::<f64>(2, 0.1, 0.3, 2).unwrap();
        assert_eq!(s.alpha_bars[0], 1.0);
        assert!((s.alpha_bars[1] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars[2] - 0.63).abs() < 1e-15);
    }

    #[test]
    fn default_alpha_bar_50_matches_product_oracle() {
        // Computed with a 40-digit product loop before this module existed.
        let expected = 0.971_015_722_939_440_4_f64;
        let s = NoiseSchedule::<f64>::default();
        assert!((s.alpha_bars[50] - expected).abs() < 1e-12);
        assert!((s.alpha_bars[25] - 0.991_558_162_878_773_1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_linear_schedule::<f64>(0, 1e-4, 0.02, 1).is_err());
        assert!(build_linear_schedule::<f64>(10, 0.0, 0.02, 1).is_err());
        assert!(build_linear_schedule::<f64>(10, 0.03, 0.02, 1).is_err());
        assert!(build_linear_schedule::<f64>(10, 1e-4, 1.0, 1).is_err());
        assert!(build_linear_schedule::<f64>(10, 1e-4, 0.02, 0).is_err());
        assert!(build_linear_schedule::<f64>(10, 1e-4, 0.02, 11).is_err());
    }

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::<f64>::default();
        assert!(s.betas.windows(2).all(|w| w[0] <= w[1]));
        assert!(s.betas.iter().all(|&b| b > 0.0 && b < 1.0));
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        let mut direct = 1.0;
        for i in 1..=s.total_steps {
            direct *= 1.0 - s.betas[i - 1];
            assert!((s.alpha_bars[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn diffuse_identity_and_zero_noise() {
        let s = NoiseSchedule::<f64>::default();
        let clean = Trajectory::new(vec![[1.0, 2.0], [3.0, -4.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = normal_traj(&mut rng, 2);
        assert_eq!(s.diffuse_unchecked(&clean, 0, &eps).unwrap(), clean);
        assert!(s.diffuse(&clean, 0, &eps).is_err());
        assert!(s.diffuse(&clean, 1001, &eps).is_err());
        let scaled = s.diffuse(&clean, 50, &Trajectory::zeros(2)).unwrap();
        assert_eq!(scaled, clean.scale(s.alpha_bars[50].sqrt()));
    }

    #[test]
    fn diffuse_matches_formula() {
        let s = NoiseSchedule::<f64>::default();
        let square = Trajectory::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let eps = normal_traj(&mut rng, 4);
        let out = s.diffuse(&square, 50, &eps).unwrap();
        let ab = 0.971_015_722_939_440_4_f64;
        for (t, p) in out.waypoints.iter().enumerate() {
            for c in 0..2 {
                let want = ab.sqrt() * square.waypoints[t][c] + (1.0 - ab).sqrt() * eps.waypoints[t][c];
                assert!((p[c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ddim_terminal_and_errors() {
        let s = NoiseSchedule::<f64>::default();
        let cur = Trajectory::new(vec![[1.0, 1.0], [2.0, 2.0]]);
        let pred = Trajectory::new(vec![[0.5, 0.0], [1.5, 0.0]]);
        assert_eq!(s.ddim_step(&cur, &pred, 50, 0, 0.0, None).unwrap(), pred);
        assert!(matches!(s.ddim_step(&cur, &pred, 0, 0, 0.0, None), Err(Error::Sequencing(_))));
        assert!(matches!(s.ddim_step(&cur, &pred, 25, 25, 0.0, None), Err(Error::Sequencing(_))));
        assert!(matches!(s.ddim_step(&cur, &pred, 50, 25, 1.0, None), Err(Error::MissingInput(_))));
    }

    #[test]
    fn deterministic_ddim_is_marginal_consistent() {
        let s = NoiseSchedule::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean = normal_traj(&mut rng, 8).scale(10.0);
        let eps = normal_traj(&mut rng, 8);
        let cur = s.diffuse(&clean, 50, &eps).unwrap();
        let next = s.ddim_step(&cur, &clean, 50, 25, 0.0, None).unwrap();
        let want = s.diffuse(&clean, 25, &eps).unwrap();
        for (a, b) in next.flat().zip(want.flat()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn stochastic_ddim_matches_formula() {
        let s = NoiseSchedule::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cur = normal_traj(&mut rng, 8);
        let pred = normal_traj(&mut rng, 8).scale(5.0);
        let z = normal_traj(&mut rng, 8);
        let out = s.ddim_step(&cur, &pred, 50, 25, 1.0, Some(&z)).unwrap();
        let (ai, aj) = (0.971_015_722_939_440_4_f64, 0.991_558_162_878_773_1_f64);
        let sigma = ((1.0 - aj) / (1.0 - ai)).sqrt() * (1.0 - ai / aj).sqrt();
        for t in 0..8 {
            for c in 0..2 {
                let x = cur.waypoints[t][c];
                let x0 = pred.waypoints[t][c];
                let e = (x - ai.sqrt() * x0) / (1.0 - ai).sqrt();
                let want = aj.sqrt() * x0 + (1.0 - aj - sigma * sigma).sqrt() * e + sigma * z.waypoints[t][c];
                assert!((out.waypoints[t][c] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ladders() {
        assert_eq!(NoiseSchedule::<f64>::ladder(50, 2).unwrap(), vec![50, 25, 0]);
        assert_eq!(NoiseSchedule::<f64>::ladder(50, 1).unwrap(), vec![50, 0]);
        let v = NoiseSchedule::<f64>::ladder(1000, 20).unwrap();
        assert_eq!(v.len(), 21);
        assert_eq!(v[1], 950);
        assert!(NoiseSchedule::<f64>::ladder(3, 4).is_err());
        assert!(NoiseSchedule::<f64>::ladder(3, 0).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let s = NoiseSchedule::<f32>::default();
        let clean = Trajectory::new(vec![[1.0f32, 2.0], [3.0, 4.0]]);
        let out = s.diffuse(&clean, 10, &Trajectory::zeros(2)).unwrap();
        assert!((out.waypoints[0][0] - s.alpha_bars[10].sqrt()).abs() < 1e-6);
    }
}
