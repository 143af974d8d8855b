use super::linalg::{affine, matvec, silu};
use super::{DenoiserOutput, DenoiserParams, SceneContext, StageLayout, StageOutput};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

/// Sinusoidal embedding of a diffusion step: sines then cosines over geometric frequencies.
pub fn timestep_embedding<S: Scalar>(step: usize, dim: usize) -> Vec<S> {
    let half = dim / 2;
    let t = step as f64;
    let freq = |j: usize| (-(10000f64.ln()) * j as f64 / half as f64).exp();
    (0..half)
        .map(|j| S::lit((t * freq(j)).sin()))
        .chain((0..half).map(|j| S::lit((t * freq(j)).cos())))
        .collect()
}

/// Per-stage quantities shared by all trajectories of a call.
#[derive(Debug, Clone)]
pub(crate) struct SharedStage<S> {
    pub tokens: Vec<Vec<S>>,
    pub keys: Vec<Vec<S>>,
    pub values: Vec<Vec<S>>,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
}

/// Activations of one trajectory through one stage.
#[derive(Debug, Clone)]
pub(crate) struct TrajCache<S> {
    pub input: Trajectory<S>,
    /// `horizon x channels` BEV samples.
    pub samples: Vec<S>,
    /// d(sample)/d(x, y) for each entry of `samples`.
    pub jac: Vec<[S; 2]>,
    pub features: Vec<S>,
    pub pre_hidden: Vec<S>,
    pub hidden: Vec<S>,
    pub f0: Vec<S>,
    pub query: Vec<S>,
    pub attn: Vec<S>,
    pub f1: Vec<S>,
    pub f2: Vec<S>,
    pub pre_off: Vec<S>,
    pub off_hidden: Vec<S>,
    pub pre_score: Vec<S>,
    pub score_hidden: Vec<S>,
}

/// Everything `backward_from_cache` needs to replay a forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache<S = f64> {
    pub(crate) n: usize,
    pub(crate) embedding: Vec<S>,
    pub(crate) shared: Vec<SharedStage<S>>,
    pub(crate) stages: Vec<Vec<TrajCache<S>>>,
}

/// Bilinear sample of every channel at `(x, y)`, zero outside the grid, with its spatial Jacobian.
pub(crate) fn sample_bev<S: Scalar>(ctx: &SceneContext<S>, x: S, y: S, vals: &mut [S], jac: &mut [[S; 2]]) {
    let bev = &ctx.bev;
    let inv = S::lit(1.0 / ctx.cell);
    let u = (x - S::lit(ctx.origin[0])) * inv - S::lit(0.5);
    let v = (y - S::lit(ctx.origin[1])) * inv - S::lit(0.5);
    let (c0, r0) = (u.floor(), v.floor());
    let (fu, fv) = (u - c0, v - r0);
    let (c0, r0) = (c0.as_f64() as i64, r0.as_f64() as i64);
    let one = S::one();
    let at = |ch: usize, r: i64, c: i64| -> S {
        if r < 0 || c < 0 || r >= bev.rows as i64 || c >= bev.cols as i64 {
            S::zero()
        } else {
            S::lit(bev.get(ch, r as usize, c as usize))
        }
    };
    for ch in 0..bev.channels {
        let v00 = at(ch, r0, c0);
        let v01 = at(ch, r0, c0 + 1);
        let v10 = at(ch, r0 + 1, c0);
        let v11 = at(ch, r0 + 1, c0 + 1);
        vals[ch] = (one - fv) * ((one - fu) * v00 + fu * v01) + fv * ((one - fu) * v10 + fu * v11);
        let du = (one - fv) * (v01 - v00) + fv * (v11 - v10);
        let dv = (one - fu) * (v10 - v00) + fu * (v11 - v01);
        jac[ch] = [du * inv, dv * inv];
    }
}

fn check_inputs<S: Scalar>(params: &DenoiserParams<S>, noisy: &[Trajectory<S>], ctx: &SceneContext<S>) -> Result<()> {
    let cfg = &params.config;
    if ctx.bev.channels != cfg.channels {
        return Err(Error::Shape(format!("BEV has {} channels, model expects {}", ctx.bev.channels, cfg.channels)));
    }
    for (k, t) in noisy.iter().enumerate() {
        if t.horizon() != cfg.horizon {
            return Err(Error::Shape(format!(
                "trajectory {k} has {} waypoints, model expects {}",
                t.horizon(),
                cfg.horizon
            )));
        }
        if !t.is_finite() {
            return Err(Error::NumericInput(format!("trajectory {k} is not finite")));
        }
    }
    if ctx.obstacles.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("obstacle features are not finite".into()));
    }
    Ok(())
}

fn shared_stage<S: Scalar>(p: &[S], st: &StageLayout, params: &DenoiserParams<S>, ctx: &SceneContext<S>, emb: &[S]) -> SharedStage<S> {
    let cfg = &params.config;
    let d = cfg.model_dim;
    let dt = cfg.time_dim;
    let of = super::OBSTACLE_FEATURES;
    let mut shared = SharedStage {
        tokens: Vec::new(),
        keys: Vec::new(),
        values: Vec::new(),
        gamma: vec![S::zero(); d],
        beta: vec![S::zero(); d],
    };
    if cfg.agent {
        for feat in &ctx.obstacles {
            let mut tok = vec![S::zero(); d];
            affine(&p[st.obs_w..st.obs_w + d * of], &p[st.obs_b..st.obs_b + d], feat, &mut tok);
            let mut k = vec![S::zero(); d];
            let mut v = vec![S::zero(); d];
            matvec(&p[st.k_w..st.k_w + d * d], &tok, &mut k);
            matvec(&p[st.v_w..st.v_w + d * d], &tok, &mut v);
            shared.tokens.push(tok);
            shared.keys.push(k);
            shared.values.push(v);
        }
    }
    if cfg.time_modulation {
        affine(&p[st.scale_w..st.scale_w + d * dt], &p[st.scale_b..st.scale_b + d], emb, &mut shared.gamma);
        affine(&p[st.shift_w..st.shift_w + d * dt], &p[st.shift_b..st.shift_b + d], emb, &mut shared.beta);
    }
    shared
}

fn stage_traj<S: Scalar>(
    p: &[S],
    st: &StageLayout,
    params: &DenoiserParams<S>,
    ctx: &SceneContext<S>,
    shared: &SharedStage<S>,
    input: &Trajectory<S>,
) -> (Trajectory<S>, S, TrajCache<S>) {
    let cfg = &params.config;
    let (d, h, e, c, t) = (cfg.model_dim, cfg.hidden_dim, cfg.embed_dim, cfg.channels, cfg.horizon);
    let zero = S::zero();
    let inv_scale = S::lit(1.0 / cfg.coord_scale);

    let mut samples = vec![zero; t * c];
    let mut jac = vec![[zero; 2]; t * c];
    let mut features = vec![zero; cfg.feature_len()];
    for (k, wp) in input.waypoints.iter().enumerate() {
        let f = &mut features[k * 2 * e..(k + 1) * 2 * e];
        let (fb, fc) = f.split_at_mut(e);
        if cfg.spatial {
            sample_bev(ctx, wp[0], wp[1], &mut samples[k * c..(k + 1) * c], &mut jac[k * c..(k + 1) * c]);
            affine(&p[st.bev_w..st.bev_w + e * c], &p[st.bev_b..st.bev_b + e], &samples[k * c..(k + 1) * c], fb);
        } else {
            fb.copy_from_slice(&p[st.bev_b..st.bev_b + e]);
        }
        let xy = [wp[0] * inv_scale, wp[1] * inv_scale];
        affine(&p[st.coord_w..st.coord_w + e * 2], &p[st.coord_b..st.coord_b + e], &xy, fc);
    }

    let fl = cfg.feature_len();
    let mut pre_hidden = vec![zero; h];
    affine(&p[st.mlp1_w..st.mlp1_w + h * fl], &p[st.mlp1_b..st.mlp1_b + h], &features, &mut pre_hidden);
    let hidden: Vec<S> = pre_hidden.iter().map(|&a| silu(a)).collect();
    let mut f0 = vec![zero; d];
    affine(&p[st.mlp2_w..st.mlp2_w + d * h], &p[st.mlp2_b..st.mlp2_b + d], &hidden, &mut f0);

    let mut query = Vec::new();
    let mut attn = Vec::new();
    let mut f1 = f0.clone();
    if !shared.keys.is_empty() {
        query = vec![zero; d];
        matvec(&p[st.q_w..st.q_w + d * d], &f0, &mut query);
        let norm = S::lit(1.0 / (d as f64).sqrt());
        let logits: Vec<S> = shared
            .keys
            .iter()
            .map(|k| k.iter().zip(&query).map(|(a, b)| *a * *b).sum::<S>() * norm)
            .collect();
        let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: S = exps.iter().copied().sum();
        attn = exps.into_iter().map(|x| x / total).collect();
        for (a, v) in attn.iter().zip(&shared.values) {
            for (o, vi) in f1.iter_mut().zip(v) {
                *o += *a * *vi;
            }
        }
    }

    let f2: Vec<S> = f1
        .iter()
        .zip(shared.gamma.iter().zip(&shared.beta))
        .map(|(&x, (&g, &b))| x * (S::one() + g) + b)
        .collect();

    let mut pre_off = vec![zero; d];
    affine(&p[st.off1_w..st.off1_w + d * d], &p[st.off1_b..st.off1_b + d], &f2, &mut pre_off);
    let off_hidden: Vec<S> = pre_off.iter().map(|&a| silu(a)).collect();
    let mut offset = vec![zero; 2 * t];
    affine(&p[st.off2_w..st.off2_w + 2 * t * d], &p[st.off2_b..st.off2_b + 2 * t], &off_hidden, &mut offset);

    let mut pre_score = vec![zero; d];
    affine(&p[st.score1_w..st.score1_w + d * d], &p[st.score1_b..st.score1_b + d], &f2, &mut pre_score);
    let score_hidden: Vec<S> = pre_score.iter().map(|&a| silu(a)).collect();
    let logit = p[st.score2_w..st.score2_w + d].iter().zip(&score_hidden).map(|(a, b)| *a * *b).sum::<S>()
        + p[st.score2_b];

    let out = Trajectory::new(
        input
            .waypoints
            .iter()
            .enumerate()
            .map(|(k, wp)| [wp[0] + offset[2 * k], wp[1] + offset[2 * k + 1]])
            .collect(),
    );
    let cache = TrajCache {
        input: input.clone(),
        samples,
        jac,
        features,
        pre_hidden,
        hidden,
        f0,
        query,
        attn,
        f1,
        f2,
        pre_off,
        off_hidden,
        pre_score,
        score_hidden,
    };
    (out, logit, cache)
}

/// Runs every cascade stage and keeps the activations for a backward pass.
pub fn forward_cached<S: Scalar>(
    params: &DenoiserParams<S>,
    noisy: &[Trajectory<S>],
    ctx: &SceneContext<S>,
    step: usize,
) -> Result<(DenoiserOutput<S>, ForwardCache<S>)> {
    check_inputs(params, noisy, ctx)?;
    let cfg = &params.config;
    let p = &params.values;
    let embedding = timestep_embedding::<S>(step, cfg.time_dim);
    let mut current: Vec<Trajectory<S>> = noisy.to_vec();
    let mut stage_outputs = Vec::with_capacity(cfg.n_stages);
    let mut shared_all = Vec::with_capacity(cfg.n_stages);
    let mut caches = Vec::with_capacity(cfg.n_stages);
    for st in &params.layout.stages {
        let shared = shared_stage(p, st, params, ctx, &embedding);
        let mut trajs = Vec::with_capacity(current.len());
        let mut logits = Vec::with_capacity(current.len());
        let mut stage_cache = Vec::with_capacity(current.len());
        for input in &current {
            let (out, logit, cache) = stage_traj(p, st, params, ctx, &shared, input);
            trajs.push(out);
            logits.push(logit);
            stage_cache.push(cache);
        }
        current = trajs.clone();
        stage_outputs.push(StageOutput { trajectories: trajs, logits });
        shared_all.push(shared);
        caches.push(stage_cache);
    }
    let last = stage_outputs.last().expect("at least one stage").clone();
    if last.logits.iter().any(|l| !l.is_finite()) || last.trajectories.iter().any(|t| !t.is_finite()) {
        return Err(Error::NumericInput("denoiser produced non-finite output".into()));
    }
    let output = DenoiserOutput { trajectories: last.trajectories, logits: last.logits, stages: stage_outputs };
    let cache = ForwardCache { n: noisy.len(), embedding, shared: shared_all, stages: caches };
    Ok((output, cache))
}

pub fn forward<S: Scalar>(
    params: &DenoiserParams<S>,
    noisy: &[Trajectory<S>],
    ctx: &SceneContext<S>,
    step: usize,
) -> Result<DenoiserOutput<S>> {
    forward_cached(params, noisy, ctx, step).map(|(o, _)| o)
}
