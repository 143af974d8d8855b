use super::forward::{forward_cached, ForwardCache, SharedStage, TrajCache};
use super::linalg::{add_acc, matvec_t_acc, outer_acc, silu_grad};
use super::{DenoiserParams, OutputGrads, SceneContext, StageLayout, OBSTACLE_FEATURES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

/// Gradient of `<output_grads, forward(...)>` with respect to every parameter.
pub fn backward<S: Scalar>(
    params: &DenoiserParams<S>,
    noisy: &[Trajectory<S>],
    ctx: &SceneContext<S>,
    step: usize,
    output_grads: &OutputGrads<S>,
) -> Result<Vec<S>> {
    let (_, cache) = forward_cached(params, noisy, ctx, step)?;
    backward_from_cache(params, &cache, ctx, output_grads)
}

fn check_grads<S: Scalar>(params: &DenoiserParams<S>, cache: &ForwardCache<S>, g: &OutputGrads<S>) -> Result<()> {
    let cfg = &params.config;
    if g.stages.len() != cfg.n_stages {
        return Err(Error::Shape(format!("{} stage gradients for {} stages", g.stages.len(), cfg.n_stages)));
    }
    for (s, sg) in g.stages.iter().enumerate() {
        if sg.trajectories.len() != cache.n || sg.logits.len() != cache.n {
            return Err(Error::Shape(format!("stage {s} gradients do not cover {} trajectories", cache.n)));
        }
        if sg.trajectories.iter().any(|t| t.horizon() != cfg.horizon) {
            return Err(Error::Shape(format!("stage {s} gradient horizon differs from {}", cfg.horizon)));
        }
    }
    Ok(())
}

pub fn backward_from_cache<S: Scalar>(
    params: &DenoiserParams<S>,
    cache: &ForwardCache<S>,
    ctx: &SceneContext<S>,
    output_grads: &OutputGrads<S>,
) -> Result<Vec<S>> {
    check_grads(params, cache, output_grads)?;
    let mut grad = vec![S::zero(); params.len()];
    let n_stages = params.config.n_stages;
    let mut d_current: Vec<Vec<S>> =
        output_grads.stages[n_stages - 1].trajectories.iter().map(Trajectory::to_flat).collect();
    for s in (0..n_stages).rev() {
        let st = &params.layout.stages[s];
        let shared = &cache.shared[s];
        let mut acc = SharedGrads::new(params.config.model_dim, shared.keys.len());
        let mut d_inputs = Vec::with_capacity(cache.n);
        for (k, tc) in cache.stages[s].iter().enumerate() {
            let d_logit = output_grads.stages[s].logits[k];
            d_inputs.push(stage_traj_backward(params, st, shared, tc, &d_current[k], d_logit, &mut acc, &mut grad));
        }
        shared_backward(params, st, shared, ctx, &cache.embedding, &acc, &mut grad);
        if s > 0 {
            for (d, prev) in d_inputs.iter_mut().zip(&output_grads.stages[s - 1].trajectories) {
                for (a, b) in d.iter_mut().zip(prev.flat()) {
                    *a += b;
                }
            }
        }
        d_current = d_inputs;
    }
    Ok(grad)
}

struct SharedGrads<S> {
    gamma: Vec<S>,
    beta: Vec<S>,
    keys: Vec<Vec<S>>,
    values: Vec<Vec<S>>,
}

impl<S: Scalar> SharedGrads<S> {
    fn new(d: usize, m: usize) -> Self {
        Self {
            gamma: vec![S::zero(); d],
            beta: vec![S::zero(); d],
            keys: vec![vec![S::zero(); d]; m],
            values: vec![vec![S::zero(); d]; m],
        }
    }
}

/// Returns the gradient with respect to the stage's input trajectory (flat).
#[allow(clippy::too_many_arguments)]
fn stage_traj_backward<S: Scalar>(
    params: &DenoiserParams<S>,
    st: &StageLayout,
    shared: &SharedStage<S>,
    tc: &TrajCache<S>,
    d_out: &[S],
    d_logit: S,
    acc: &mut SharedGrads<S>,
    grad: &mut [S],
) -> Vec<S> {
    let cfg = &params.config;
    let p = &params.values;
    let (d, h, e, c, t) = (cfg.model_dim, cfg.hidden_dim, cfg.embed_dim, cfg.channels, cfg.horizon);
    let zero = S::zero();
    let fl = cfg.feature_len();

    // output = input + offset, so the offset gradient equals d_out
    let mut d_input = d_out.to_vec();

    let mut d_f2 = vec![zero; d];
    // offset head
    outer_acc(&mut grad[st.off2_w..st.off2_w + 2 * t * d], d_out, &tc.off_hidden);
    add_acc(&mut grad[st.off2_b..st.off2_b + 2 * t], d_out);
    let mut d_off_hidden = vec![zero; d];
    matvec_t_acc(&p[st.off2_w..st.off2_w + 2 * t * d], d_out, &mut d_off_hidden);
    let d_pre_off: Vec<S> = d_off_hidden.iter().zip(&tc.pre_off).map(|(g, &a)| *g * silu_grad(a)).collect();
    outer_acc(&mut grad[st.off1_w..st.off1_w + d * d], &d_pre_off, &tc.f2);
    add_acc(&mut grad[st.off1_b..st.off1_b + d], &d_pre_off);
    matvec_t_acc(&p[st.off1_w..st.off1_w + d * d], &d_pre_off, &mut d_f2);

    // score head
    if d_logit != zero {
        for (g, r) in grad[st.score2_w..st.score2_w + d].iter_mut().zip(&tc.score_hidden) {
            *g += d_logit * *r;
        }
        grad[st.score2_b] += d_logit;
        let d_pre_score: Vec<S> = p[st.score2_w..st.score2_w + d]
            .iter()
            .zip(&tc.pre_score)
            .map(|(&w, &a)| d_logit * w * silu_grad(a))
            .collect();
        outer_acc(&mut grad[st.score1_w..st.score1_w + d * d], &d_pre_score, &tc.f2);
        add_acc(&mut grad[st.score1_b..st.score1_b + d], &d_pre_score);
        matvec_t_acc(&p[st.score1_w..st.score1_w + d * d], &d_pre_score, &mut d_f2);
    }

    // f2 = f1 * (1 + gamma) + beta
    let mut d_f1 = vec![zero; d];
    for i in 0..d {
        d_f1[i] = d_f2[i] * (S::one() + shared.gamma[i]);
        acc.gamma[i] += d_f2[i] * tc.f1[i];
        acc.beta[i] += d_f2[i];
    }

    // f1 = f0 + sum_j attn_j v_j
    let mut d_f0 = d_f1.clone();
    if !tc.attn.is_empty() {
        let norm = S::lit(1.0 / (d as f64).sqrt());
        let d_attn: Vec<S> = shared
            .values
            .iter()
            .map(|v| v.iter().zip(&d_f1).map(|(a, b)| *a * *b).sum::<S>())
            .collect();
        for (j, &a) in tc.attn.iter().enumerate() {
            for (dv, g) in acc.values[j].iter_mut().zip(&d_f1) {
                *dv += a * *g;
            }
        }
        let weighted: S = tc.attn.iter().zip(&d_attn).map(|(a, g)| *a * *g).sum();
        let mut d_query = vec![zero; d];
        for (j, &a) in tc.attn.iter().enumerate() {
            let d_score = a * (d_attn[j] - weighted) * norm;
            for i in 0..d {
                d_query[i] += d_score * shared.keys[j][i];
                acc.keys[j][i] += d_score * tc.query[i];
            }
        }
        outer_acc(&mut grad[st.q_w..st.q_w + d * d], &d_query, &tc.f0);
        matvec_t_acc(&p[st.q_w..st.q_w + d * d], &d_query, &mut d_f0);
    }

    // trajectory MLP
    outer_acc(&mut grad[st.mlp2_w..st.mlp2_w + d * h], &d_f0, &tc.hidden);
    add_acc(&mut grad[st.mlp2_b..st.mlp2_b + d], &d_f0);
    let mut d_hidden = vec![zero; h];
    matvec_t_acc(&p[st.mlp2_w..st.mlp2_w + d * h], &d_f0, &mut d_hidden);
    let d_pre: Vec<S> = d_hidden.iter().zip(&tc.pre_hidden).map(|(g, &a)| *g * silu_grad(a)).collect();
    outer_acc(&mut grad[st.mlp1_w..st.mlp1_w + h * fl], &d_pre, &tc.features);
    add_acc(&mut grad[st.mlp1_b..st.mlp1_b + h], &d_pre);
    let mut d_features = vec![zero; fl];
    matvec_t_acc(&p[st.mlp1_w..st.mlp1_w + h * fl], &d_pre, &mut d_features);

    // per-waypoint BEV projection and coordinate embedding
    let inv_scale = S::lit(1.0 / cfg.coord_scale);
    for (k, wp) in tc.input.waypoints.iter().enumerate() {
        let df = &d_features[k * 2 * e..(k + 1) * 2 * e];
        let (dfb, dfc) = df.split_at(e);
        add_acc(&mut grad[st.bev_b..st.bev_b + e], dfb);
        if cfg.spatial {
            let samples = &tc.samples[k * c..(k + 1) * c];
            outer_acc(&mut grad[st.bev_w..st.bev_w + e * c], dfb, samples);
            let mut d_samples = vec![zero; c];
            matvec_t_acc(&p[st.bev_w..st.bev_w + e * c], dfb, &mut d_samples);
            for (ch, ds) in d_samples.iter().enumerate() {
                let j = tc.jac[k * c + ch];
                d_input[2 * k] += *ds * j[0];
                d_input[2 * k + 1] += *ds * j[1];
            }
        }
        let xy = [wp[0] * inv_scale, wp[1] * inv_scale];
        outer_acc(&mut grad[st.coord_w..st.coord_w + e * 2], dfc, &xy);
        add_acc(&mut grad[st.coord_b..st.coord_b + e], dfc);
        let mut d_xy = [zero; 2];
        matvec_t_acc(&p[st.coord_w..st.coord_w + e * 2], dfc, &mut d_xy);
        d_input[2 * k] += d_xy[0] * inv_scale;
        d_input[2 * k + 1] += d_xy[1] * inv_scale;
    }
    d_input
}

fn shared_backward<S: Scalar>(
    params: &DenoiserParams<S>,
    st: &StageLayout,
    shared: &SharedStage<S>,
    ctx: &SceneContext<S>,
    embedding: &[S],
    acc: &SharedGrads<S>,
    grad: &mut [S],
) {
    let cfg = &params.config;
    let p = &params.values;
    let (d, dt) = (cfg.model_dim, cfg.time_dim);
    if cfg.time_modulation {
        outer_acc(&mut grad[st.scale_w..st.scale_w + d * dt], &acc.gamma, embedding);
        add_acc(&mut grad[st.scale_b..st.scale_b + d], &acc.gamma);
        outer_acc(&mut grad[st.shift_w..st.shift_w + d * dt], &acc.beta, embedding);
        add_acc(&mut grad[st.shift_b..st.shift_b + d], &acc.beta);
    }
    for (j, tok) in shared.tokens.iter().enumerate() {
        outer_acc(&mut grad[st.k_w..st.k_w + d * d], &acc.keys[j], tok);
        outer_acc(&mut grad[st.v_w..st.v_w + d * d], &acc.values[j], tok);
        let mut d_tok = vec![S::zero(); d];
        matvec_t_acc(&p[st.k_w..st.k_w + d * d], &acc.keys[j], &mut d_tok);
        matvec_t_acc(&p[st.v_w..st.v_w + d * d], &acc.values[j], &mut d_tok);
        let of = OBSTACLE_FEATURES;
        outer_acc(&mut grad[st.obs_w..st.obs_w + d * of], &d_tok, &ctx.obstacles[j]);
        add_acc(&mut grad[st.obs_b..st.obs_b + d], &d_tok);
    }
}
