//! Inference: draw initial trajectories, run a short DDIM chain through the
//! decoder and rank the results by confidence.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchors::{sample_anchored_with, standard_normal, AnchorSet};
use crate::denoiser::{forward, sigmoid, Checkpoint, DenoiserParams, ModelKind, SceneContext};
use crate::error::{Error, Result};
use crate::eval::metrics::{mini_pdm, MiniScore};
use crate::io_util::write_atomic;
use crate::scalar::Scalar;
use crate::scene::Scene;
use crate::schedule::NoiseSchedule;
use crate::trajectory::{Trajectory, WAYPOINT_DT};

pub const DEFAULT_N_INFER: usize = 20;
pub const DEFAULT_STEPS: usize = 2;
pub const DEFAULT_VANILLA_STEPS: usize = 20;

/// Where the denoising chain starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Anchors diffused to the truncation step.
    Anchored,
    /// Standard normal at the last schedule step.
    Gaussian,
    /// A constant-velocity straight line diffused to the truncation step.
    Extrapolated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<S = f64> {
    pub trajectory: Trajectory<S>,
    pub confidence: f64,
    pub origin_anchor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult<S = f64> {
    pub candidates: Vec<Candidate<S>>,
    pub top1_index: usize,
    pub step_times: Vec<Duration>,
}

impl<S: Scalar> PlanResult<S> {
    pub fn top1(&self) -> &Candidate<S> {
        &self.candidates[self.top1_index]
    }

    /// Candidate indices sorted by descending confidence, ties in original order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.candidates.len()).collect();
        idx.sort_by(|&a, &b| self.candidates[b].confidence.total_cmp(&self.candidates[a].confidence));
        idx
    }

    pub fn total_time(&self) -> Duration {
        self.step_times.iter().sum()
    }

    pub fn trajectories_f64(&self) -> Vec<Trajectory<f64>> {
        self.candidates.iter().map(|c| c.trajectory.cast()).collect()
    }
}

/// First index of the largest confidence.
pub fn argmax_confidence(confidences: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in confidences.iter().enumerate() {
        if c > confidences[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub n_infer: usize,
    pub n_steps: usize,
    pub init: InitMode,
    /// Stochasticity of each DDIM jump; 0 is deterministic.
    pub eta: f64,
    pub seed: u64,
    /// Use decoder scores for ranking; when false every candidate gets equal confidence.
    pub scored: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { n_infer: DEFAULT_N_INFER, n_steps: DEFAULT_STEPS, init: InitMode::Anchored, eta: 0.0, seed: 0, scored: true }
    }
}

/// Straight line at the demonstration's initial speed along +x.
pub fn constant_velocity_prior<S: Scalar>(scene: &Scene, horizon: usize) -> Trajectory<S> {
    let v = scene.ego_speed();
    Trajectory::new((1..=horizon).map(|k| [S::lit(v * k as f64 * WAYPOINT_DT), S::zero()]).collect())
}

/// Truncated planning from the anchored Gaussian with `n_steps` evenly spaced DDIM rungs.
pub fn plan<S: Scalar>(
    params: &DenoiserParams<S>,
    anchors: &AnchorSet<S>,
    sched: &NoiseSchedule<S>,
    scene: &Scene,
    n_infer: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PlanResult<S>> {
    let cfg = PlanConfig { n_infer, n_steps, seed, ..PlanConfig::default() };
    plan_with(params, Some(anchors), sched, scene, &cfg)
}

/// Runs the denoising chain from the configured initialization.
pub fn plan_with<S: Scalar>(
    params: &DenoiserParams<S>,
    anchors: Option<&AnchorSet<S>>,
    sched: &NoiseSchedule<S>,
    scene: &Scene,
    cfg: &PlanConfig,
) -> Result<PlanResult<S>> {
    if cfg.n_infer == 0 {
        return Err(Error::ParameterBounds("n_infer must be >= 1".into()));
    }
    if cfg.n_steps == 0 {
        return Err(Error::ParameterBounds("n_steps must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.eta) {
        return Err(Error::ParameterBounds(format!("eta {} outside [0, 1]", cfg.eta)));
    }
    let horizon = params.config.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut current, origins, start) = match cfg.init {
        InitMode::Anchored => {
            let anchors = anchors.ok_or_else(|| Error::Config("anchored planning needs an anchor set".into()))?;
            if anchors.horizon() != horizon {
                return Err(Error::Shape(format!("anchors have {} waypoints, model expects {horizon}", anchors.horizon())));
            }
            let samples = sample_anchored_with(anchors, sched, cfg.n_infer, sched.trunc_steps, |h| standard_normal(&mut rng, h))?;
            let origins = samples.iter().map(|s| Some(s.anchor)).collect();
            (samples.into_iter().map(|s| s.trajectory).collect::<Vec<_>>(), origins, sched.trunc_steps)
        }
        InitMode::Gaussian => {
            let init = (0..cfg.n_infer).map(|_| standard_normal(&mut rng, horizon)).collect();
            (init, vec![None; cfg.n_infer], sched.total_steps)
        }
        InitMode::Extrapolated => {
            let prior = constant_velocity_prior::<S>(scene, horizon);
            let init = (0..cfg.n_infer)
                .map(|_| sched.diffuse_unchecked(&prior, sched.trunc_steps, &standard_normal(&mut rng, horizon)))
                .collect::<Result<Vec<_>>>()?;
            (init, vec![None; cfg.n_infer], sched.trunc_steps)
        }
    };
    let ladder = NoiseSchedule::<S>::ladder(start, cfg.n_steps)?;
    let ctx = SceneContext::<S>::from_scene(scene, params.config.coord_scale);
    let eta = S::lit(cfg.eta);
    let mut step_times = Vec::with_capacity(cfg.n_steps);
    let mut logits = vec![S::zero(); cfg.n_infer];
    for (r, w) in ladder.windows(2).enumerate() {
        let t0 = Instant::now();
        let out = forward(params, &current, &ctx, w[0]).map_err(|e| match e {
            Error::NumericInput(m) => Error::NumericInput(format!("denoising step {r}: {m}")),
            other => other,
        })?;
        let mut next = Vec::with_capacity(current.len());
        for (x, pred) in current.iter().zip(&out.trajectories) {
            let z = if cfg.eta > 0.0 && w[1] > 0 { Some(standard_normal(&mut rng, horizon)) } else { None };
            next.push(sched.ddim_step(x, pred, w[0], w[1], eta, z.as_ref())?);
        }
        current = next;
        logits = out.logits;
        step_times.push(t0.elapsed());
    }
    let confidences: Vec<f64> =
        if cfg.scored { logits.iter().map(|&l| sigmoid(l).as_f64()).collect() } else { vec![0.5; cfg.n_infer] };
    let top1_index = argmax_confidence(&confidences);
    let candidates = current
        .into_iter()
        .zip(confidences)
        .zip(origins)
        .map(|((trajectory, confidence), origin_anchor)| Candidate { trajectory, confidence, origin_anchor })
        .collect();
    Ok(PlanResult { candidates, top1_index, step_times })
}

/// Single deterministic prediction from a zero trajectory at step 0.
pub fn plan_regression<S: Scalar>(params: &DenoiserParams<S>, scene: &Scene) -> Result<PlanResult<S>> {
    let t0 = Instant::now();
    let ctx = SceneContext::<S>::from_scene(scene, params.config.coord_scale);
    let out = forward(params, &[Trajectory::zeros(params.config.horizon)], &ctx, 0)?;
    let step_times = vec![t0.elapsed()];
    let trajectory = out.trajectories.into_iter().next().expect("one trajectory");
    Ok(PlanResult { candidates: vec![Candidate { trajectory, confidence: 1.0, origin_anchor: None }], top1_index: 0, step_times })
}

/// Scores every vocabulary entry once and returns the entries unchanged, ranked by score.
pub fn plan_vocabulary<S: Scalar>(params: &DenoiserParams<S>, vocabulary: &AnchorSet<S>, scene: &Scene) -> Result<PlanResult<S>> {
    let t0 = Instant::now();
    let ctx = SceneContext::<S>::from_scene(scene, params.config.coord_scale);
    let out = forward(params, &vocabulary.anchors, &ctx, 0)?;
    let step_times = vec![t0.elapsed()];
    let confidences: Vec<f64> = out.logits.iter().map(|&l| sigmoid(l).as_f64()).collect();
    let top1_index = argmax_confidence(&confidences);
    let candidates = vocabulary
        .anchors
        .iter()
        .zip(confidences)
        .enumerate()
        .map(|(k, (a, confidence))| Candidate { trajectory: a.clone(), confidence, origin_anchor: Some(k) })
        .collect();
    Ok(PlanResult { candidates, top1_index, step_times })
}

/// Plans with a checkpoint the way its model kind is meant to be used.
pub fn plan_checkpoint(ck: &Checkpoint<f64>, scene: &Scene, cfg: &PlanConfig) -> Result<PlanResult<f64>> {
    match ck.kind {
        ModelKind::Truncated => plan_with(&ck.params, ck.anchors.as_ref(), &ck.schedule, scene, cfg),
        ModelKind::Vanilla => {
            let cfg = PlanConfig { init: InitMode::Gaussian, scored: false, ..cfg.clone() };
            plan_with(&ck.params, None, &ck.schedule, scene, &cfg)
        }
        ModelKind::Regression => plan_regression(&ck.params, scene),
        ModelKind::Vocabulary => {
            let vocab = ck.anchors.as_ref().ok_or_else(|| Error::Config("vocabulary checkpoint has no anchors".into()))?;
            plan_vocabulary(&ck.params, vocab, scene)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub rank: usize,
    pub index: usize,
    pub confidence: f64,
    pub origin_anchor: Option<usize>,
    pub score: Option<MiniScore>,
}

/// Stable top-`k` candidates by confidence, scored against `scene` when given.
pub fn multi_mode_report<S: Scalar>(result: &PlanResult<S>, k: usize, scene: Option<&Scene>) -> Result<Vec<ReportEntry>> {
    if k > result.candidates.len() {
        return Err(Error::ParameterBounds(format!("k = {k} exceeds {} candidates", result.candidates.len())));
    }
    result
        .ranking()
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(rank, index)| {
            let c = &result.candidates[index];
            let score = scene.map(|s| mini_pdm(s, &c.trajectory.cast())).transpose()?;
            Ok(ReportEntry { rank, index, confidence: c.confidence, origin_anchor: c.origin_anchor, score })
        })
        .collect()
}

/// Text form: `# plan <n> <horizon> <top1>` header, then one
/// `rank confidence origin x1 y1 ... xT yT` row per candidate in ranked order.
/// `origin` is -1 when the candidate did not start from an anchor.
pub fn format_plan<S: Scalar>(result: &PlanResult<S>) -> String {
    let horizon = result.candidates.first().map_or(0, |c| c.trajectory.horizon());
    let mut out = format!("# plan {} {} {}\n", result.candidates.len(), horizon, result.top1_index);
    for (rank, i) in result.ranking().into_iter().enumerate() {
        let c = &result.candidates[i];
        let origin = c.origin_anchor.map_or(-1, |a| a as i64);
        write!(out, "{rank} {:?} {origin}", c.confidence).expect("string write");
        for v in c.trajectory.flat() {
            write!(out, " {:?}", v.as_f64()).expect("string write");
        }
        out.push('\n');
    }
    out
}

/// A ranked plan as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanFile {
    pub horizon: usize,
    /// Candidates in ranked order.
    pub candidates: Vec<Candidate<f64>>,
}

pub fn parse_plan(text: &str) -> Result<PlanFile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |record: usize, reason: &str| Error::Parse { record, reason: reason.to_string() };
    let (_, header) = lines.next().ok_or_else(|| bad(0, "missing plan header"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 || h[0] != "#" || h[1] != "plan" {
        return Err(bad(0, "malformed plan header"));
    }
    let n: usize = h[2].parse().map_err(|_| bad(0, "bad candidate count"))?;
    let horizon: usize = h[3].parse().map_err(|_| bad(0, "bad horizon"))?;
    let mut candidates = Vec::with_capacity(n);
    for (record, (_, line)) in lines.enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 + 2 * horizon {
            return Err(bad(record, "wrong field count"));
        }
        let confidence: f64 = f[1].parse().map_err(|_| bad(record, "bad confidence"))?;
        let origin: i64 = f[2].parse().map_err(|_| bad(record, "bad origin"))?;
        let flat = f[3..].iter().map(|v| v.parse::<f64>().map_err(|_| bad(record, "bad coordinate"))).collect::<Result<Vec<_>>>()?;
        candidates.push(Candidate {
            trajectory: Trajectory::from_flat(&flat)?,
            confidence,
            origin_anchor: usize::try_from(origin).ok(),
        });
    }
    if candidates.len() != n {
        return Err(bad(candidates.len(), &format!("expected {n} candidates")));
    }
    Ok(PlanFile { horizon, candidates })
}

pub fn write_plan<S: Scalar>(path: &Path, result: &PlanResult<S>) -> Result<()> {
    write_atomic(path, format_plan(result).as_bytes())
}

pub fn read_plan(path: &Path) -> Result<PlanFile> {
    parse_plan(&std::fs::read_to_string(path)?)
}
