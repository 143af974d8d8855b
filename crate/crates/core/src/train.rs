//! Target assignment, the reconstruction plus classification loss, and the
//! optimization loop for every model kind.

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::anchors::{standard_normal, AnchorSet};
use crate::denoiser::{
    backward_from_cache, forward_cached, init_params, Checkpoint, DenoiserConfig, DenoiserOutput, DenoiserParams,
    ModelKind, OutputGrads, SceneContext,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::{scene_seed, Scene};
use crate::schedule::NoiseSchedule;
use crate::trajectory::Trajectory;

const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the classification term.
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Average the loss over every cascade stage instead of supervising only the last.
    pub deep_supervision: bool,
    pub kind: ModelKind,
    /// Validation loss is computed every this many epochs; 0 disables it.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            learning_rate: 6e-4,
            epochs: 60,
            batch_size: 8,
            seed: 0,
            deep_supervision: true,
            kind: ModelKind::Truncated,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::ParameterBounds(format!("lambda {} must be positive", self.lambda)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::ParameterBounds(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::ParameterBounds("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub labels: Vec<u8>,
    pub positive_index: usize,
}

/// Positive is the anchor with the smallest mean waypoint distance to `gt`; ties go to the lower index.
pub fn assign_targets<S: Scalar>(anchors: &AnchorSet<S>, gt: &Trajectory<S>) -> Result<Assignment> {
    if anchors.horizon() != gt.horizon() {
        return Err(Error::Shape(format!("anchors have {} waypoints, gt has {}", anchors.horizon(), gt.horizon())));
    }
    let mut best = 0;
    let mut best_d = S::infinity();
    for (k, a) in anchors.anchors.iter().enumerate() {
        let d = a.mean_l2(gt);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    let labels = (0..anchors.len()).map(|k| (k == best) as u8).collect();
    Ok(Assignment { labels, positive_index: best })
}

/// Loss components for one sample or averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub total: f64,
    pub l1: f64,
    pub bce: f64,
}

impl LossTerms {
    fn add(&mut self, o: &LossTerms) {
        self.total += o.total;
        self.l1 += o.l1;
        self.bce += o.bce;
    }

    fn scaled(&self, k: f64) -> Self {
        Self { total: self.total * k, l1: self.l1 * k, bce: self.bce * k }
    }
}

/// How one sample's outputs are supervised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<S> {
    /// Weight of the positive trajectory's L1 term.
    pub reconstruction: S,
    /// Weight of the per-candidate classification term.
    pub classification: S,
    pub deep_supervision: bool,
}

/// Mean absolute coordinate error between two trajectories.
pub fn l1<S: Scalar>(pred: &Trajectory<S>, gt: &Trajectory<S>) -> S {
    let n = S::from_usize_lossy(2 * gt.horizon());
    pred.flat().zip(gt.flat()).map(|(a, b)| (a - b).abs()).sum::<S>() / n
}

/// Binary cross entropy of `sigmoid(logit)` against `label`, probabilities clamped away from 0 and 1.
/// Returns the loss and its derivative with respect to the logit.
pub fn bce_with_logit<S: Scalar>(logit: S, label: S) -> (S, S) {
    let lo = S::lit(PROB_CLAMP);
    let hi = S::one() - lo;
    let raw = crate::denoiser::sigmoid(logit);
    let p = raw.max(lo).min(hi);
    let loss = -(label * p.ln() + (S::one() - label) * (S::one() - p).ln());
    let grad = if raw < lo || raw > hi { S::zero() } else { p - label };
    (loss, grad)
}

/// Loss of one sample and its gradient with respect to every stage output.
pub fn sample_loss<S: Scalar>(
    output: &DenoiserOutput<S>,
    gt: &Trajectory<S>,
    positive: usize,
    weights: LossWeights<S>,
) -> Result<(LossTerms, OutputGrads<S>)> {
    let n_stages = output.stages.len();
    let n = output.trajectories.len();
    if positive >= n {
        return Err(Error::Cardinality(format!("positive index {positive} with {n} candidates")));
    }
    let mut grads = OutputGrads::zeros(n_stages, n, gt.horizon());
    let supervised: Vec<usize> = if weights.deep_supervision { (0..n_stages).collect() } else { vec![n_stages - 1] };
    let stage_w = S::one() / S::from_usize_lossy(supervised.len());
    let coord_w = S::one() / S::from_usize_lossy(2 * gt.horizon());
    let mut terms = LossTerms::default();
    for &s in &supervised {
        let out = &output.stages[s];
        let g = &mut grads.stages[s];
        if weights.reconstruction != S::zero() {
            let pred = &out.trajectories[positive];
            let rec = l1(pred, gt);
            terms.l1 += (stage_w * rec).as_f64();
            terms.total += (stage_w * weights.reconstruction * rec).as_f64();
            let k = stage_w * weights.reconstruction * coord_w;
            for (gw, (p, t)) in g.trajectories[positive].waypoints.iter_mut().zip(pred.waypoints.iter().zip(&gt.waypoints)) {
                for d in 0..2 {
                    gw[d] = k * sign(p[d] - t[d]);
                }
            }
        }
        if weights.classification != S::zero() {
            for (k, &logit) in out.logits.iter().enumerate() {
                let y = if k == positive { S::one() } else { S::zero() };
                let (loss, dl) = bce_with_logit(logit, y);
                terms.bce += (stage_w * loss).as_f64();
                terms.total += (stage_w * weights.classification * loss).as_f64();
                g.logits[k] = stage_w * weights.classification * dl;
            }
        }
    }
    Ok((terms, grads))
}

fn sign<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Everything a loss evaluation needs besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSetup<'a, S> {
    pub kind: ModelKind,
    pub schedule: &'a NoiseSchedule<S>,
    pub anchors: Option<&'a AnchorSet<S>>,
    pub lambda: S,
    pub deep_supervision: bool,
}

/// Builds the decoder input, step and supervision for one training sample.
fn training_inputs<S: Scalar>(
    setup: &TrainingSetup<'_, S>,
    gt: &Trajectory<S>,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Trajectory<S>>, usize, usize, LossWeights<S>)> {
    let horizon = gt.horizon();
    let anchors = || {
        setup.anchors.ok_or_else(|| Error::Config(format!("{} training needs an anchor set", setup.kind)))
    };
    let deep = setup.deep_supervision;
    match setup.kind {
        ModelKind::Truncated => {
            let anchors = anchors()?;
            let step = rng.random_range(1..=setup.schedule.trunc_steps.max(1));
            let noisy = anchors
                .anchors
                .iter()
                .map(|a| setup.schedule.diffuse(a, step, &standard_normal(rng, horizon)))
                .collect::<Result<Vec<_>>>()?;
            let positive = assign_targets(anchors, gt)?.positive_index;
            let w = LossWeights { reconstruction: S::one(), classification: setup.lambda, deep_supervision: deep };
            Ok((noisy, step, positive, w))
        }
        ModelKind::Vanilla => {
            let step = rng.random_range(1..=setup.schedule.total_steps);
            let noisy = setup.schedule.diffuse(gt, step, &standard_normal(rng, horizon))?;
            let w = LossWeights { reconstruction: S::one(), classification: S::zero(), deep_supervision: deep };
            Ok((vec![noisy], step, 0, w))
        }
        ModelKind::Regression => {
            let w = LossWeights { reconstruction: S::one(), classification: S::zero(), deep_supervision: deep };
            Ok((vec![Trajectory::zeros(horizon)], 0, 0, w))
        }
        ModelKind::Vocabulary => {
            let anchors = anchors()?;
            let positive = assign_targets(anchors, gt)?.positive_index;
            let w = LossWeights { reconstruction: S::zero(), classification: setup.lambda, deep_supervision: deep };
            Ok((anchors.anchors.clone(), 0, positive, w))
        }
    }
}

/// Loss and gradient of one scene.
pub fn scene_loss_and_grad<S: Scalar>(
    params: &DenoiserParams<S>,
    scene: &Scene,
    setup: &TrainingSetup<'_, S>,
    rng: &mut ChaCha8Rng,
) -> Result<(LossTerms, Vec<S>)> {
    let gt: Trajectory<S> = scene.gt_trajectory.cast();
    let (noisy, step, positive, weights) = training_inputs(setup, &gt, rng)?;
    let ctx = SceneContext::<S>::from_scene(scene, params.config.coord_scale);
    let (output, cache) = forward_cached(params, &noisy, &ctx, step)?;
    let (terms, grads) = sample_loss(&output, &gt, positive, weights)?;
    let grad = backward_from_cache(params, &cache, &ctx, &grads)?;
    Ok((terms, grad))
}

fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(scene_seed(seed ^ (epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407), index as u64))
}

/// Mean loss and gradient over a batch. Samples run in parallel; the reduction order is fixed.
pub fn loss_and_grad<S: Scalar>(
    params: &DenoiserParams<S>,
    batch: &[&Scene],
    setup: &TrainingSetup<'_, S>,
    seed: u64,
    epoch: usize,
) -> Result<(LossTerms, Vec<S>)> {
    if batch.is_empty() {
        return Err(Error::Cardinality("empty batch".into()));
    }
    let per_sample: Vec<Result<(LossTerms, Vec<S>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let mut rng = sample_rng(seed, epoch, i);
            scene_loss_and_grad(params, scene, setup, &mut rng)
        })
        .collect();
    let mut total = LossTerms::default();
    let mut grad = vec![S::zero(); params.len()];
    for (i, r) in per_sample.into_iter().enumerate() {
        let (terms, g) = r.map_err(|e| match e {
            Error::NumericInput(_) => Error::NumericFailure { sample: i },
            other => other,
        })?;
        if !terms.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure { sample: i });
        }
        total.add(&terms);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let inv_s = S::lit(inv);
    for v in &mut grad {
        *v *= inv_s;
    }
    Ok((total.scaled(inv), grad))
}

/// Adaptive moment optimizer without weight decay.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, m: vec![S::zero(); n], v: vec![S::zero(); n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [S], grad: &[S]) {
        self.t += 1;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let c1 = S::one() - b1.powi(self.t);
        let c2 = S::one() - b2.powi(self.t);
        let lr = S::lit(self.learning_rate);
        let eps = S::lit(self.epsilon);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (S::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (S::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub l1: f64,
    pub bce: f64,
    /// Largest batch gradient norm seen in the epoch.
    pub grad_norm: f64,
    pub val_loss: Option<f64>,
}

pub const METRICS_HEADER: &str = "# epoch loss l1 bce grad_norm val_loss";

impl EpochMetrics {
    /// One whitespace-separated row; a missing validation loss is written as `-`.
    pub fn to_row(&self) -> String {
        let mut s = format!("{} {:.9e} {:.9e} {:.9e} {:.9e}", self.epoch, self.loss, self.l1, self.bce, self.grad_norm);
        match self.val_loss {
            Some(v) => write!(s, " {v:.9e}").expect("string write"),
            None => s.push_str(" -"),
        }
        s
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let bad = || Error::Parse { record: 0, reason: format!("bad metrics row '{line}'") };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(Self {
            epoch: f[0].parse().map_err(|_| bad())?,
            loss: num(f[1])?,
            l1: num(f[2])?,
            bce: num(f[3])?,
            grad_norm: num(f[4])?,
            val_loss: if f[5] == "-" { None } else { Some(num(f[5])?) },
        })
    }
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochMetrics>> {
    text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).map(EpochMetrics::parse_row).collect()
}

/// Mean loss over `scenes` with a fixed noise stream, for validation snapshots.
pub fn evaluate_loss<S: Scalar>(params: &DenoiserParams<S>, scenes: &[Scene], setup: &TrainingSetup<'_, S>, seed: u64) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::Cardinality("empty validation set".into()));
    }
    let refs: Vec<&Scene> = scenes.iter().collect();
    Ok(loss_and_grad(params, &refs, setup, seed ^ 0x5EED, usize::MAX)?.0.total)
}

/// Optimizes `params` in place over `epochs` passes of shuffled minibatches.
pub fn train_loop<S: Scalar>(
    params: &mut DenoiserParams<S>,
    dataset: &[Scene],
    validation: &[Scene],
    setup: &TrainingSetup<'_, S>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Cardinality("training set is empty".into()));
    }
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut sum = LossTerms::default();
        let mut max_norm: f64 = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Scene> = chunk.iter().map(|&i| &dataset[i]).collect();
            let batch_seed = scene_seed(config.seed, step as u64);
            let (terms, grad) = loss_and_grad(params, &batch, setup, batch_seed, epoch)
                .map_err(|e| Error::Training { epoch, step: b, source: Box::new(e) })?;
            let norm = grad.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
            max_norm = max_norm.max(norm);
            sum.add(&terms.scaled(batch.len() as f64));
            adam.step(&mut params.values, &grad);
            step += 1;
        }
        let mean = sum.scaled(1.0 / dataset.len() as f64);
        let val_loss = if config.eval_every > 0 && !validation.is_empty() && (epoch + 1) % config.eval_every == 0 {
            Some(evaluate_loss(params, validation, setup, config.seed)?)
        } else {
            None
        };
        let m = EpochMetrics { epoch, loss: mean.total, l1: mean.l1, bce: mean.bce, grad_norm: max_norm, val_loss };
        debug!("epoch {epoch}: loss {:.5} l1 {:.5} bce {:.5} |g| {:.3e}", m.loss, m.l1, m.bce, m.grad_norm);
        on_epoch(&m);
        history.push(m);
    }
    if let Some(last) = history.last() {
        info!("{} training finished: {} epochs, final loss {:.5}", setup.kind, history.len(), last.loss);
    }
    Ok(history)
}

/// Initializes a model of `config.kind`, trains it and packages a checkpoint.
pub fn train_model(
    dataset: &[Scene],
    validation: &[Scene],
    anchors: Option<AnchorSet<f64>>,
    schedule: NoiseSchedule<f64>,
    model: &DenoiserConfig,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Checkpoint<f64>, Vec<EpochMetrics>)> {
    model.validate()?;
    if matches!(config.kind, ModelKind::Truncated | ModelKind::Vocabulary) && anchors.is_none() {
        return Err(Error::Config(format!("{} training needs an anchor set", config.kind)));
    }
    if let Some(a) = &anchors {
        if a.horizon() != model.horizon {
            return Err(Error::Shape(format!("anchors have {} waypoints, model expects {}", a.horizon(), model.horizon)));
        }
    }
    let mut params = init_params::<f64>(config.seed, model)?;
    let setup = TrainingSetup {
        kind: config.kind,
        schedule: &schedule,
        anchors: anchors.as_ref(),
        lambda: config.lambda,
        deep_supervision: config.deep_supervision,
    };
    let history = train_loop(&mut params, dataset, validation, &setup, config, on_epoch)?;
    let anchors = match config.kind {
        ModelKind::Truncated | ModelKind::Vocabulary => anchors,
        _ => None,
    };
    Ok((Checkpoint { kind: config.kind, params, schedule, anchors }, history))
}
