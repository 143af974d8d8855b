//! Cascade conditional decoder: refines a set of noisy trajectories given BEV
//! features, obstacle tokens and the diffusion step, and scores each one.
//!
//! Every stage samples the BEV grid at its input waypoints, encodes the
//! trajectory with an MLP, attends over obstacle tokens, applies a step
//! dependent scale/shift and emits an additive waypoint offset plus a logit.
//! The same parameters serve every diffusion step; stages do not share weights.

mod backward;
mod checkpoint;
mod forward;
mod linalg;

pub use backward::{backward, backward_from_cache};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, ModelKind,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use forward::{forward, forward_cached, timestep_embedding, ForwardCache};
pub use linalg::sigmoid;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scene::{BevGrid, Scene, BEV_CHANNELS, CELL_SIZE, GRID_EXTENT};
use crate::trajectory::{Trajectory, DEFAULT_HORIZON};

/// Features per obstacle token: center, half extent, velocity.
pub const OBSTACLE_FEATURES: usize = 6;
const VELOCITY_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    /// Width `d` of the trajectory feature and attention.
    pub model_dim: usize,
    /// Hidden width of the trajectory-feature MLP.
    pub hidden_dim: usize,
    /// Per-waypoint width of each of the BEV projection and coordinate embedding.
    pub embed_dim: usize,
    /// Length of the sinusoidal step embedding.
    pub time_dim: usize,
    pub horizon: usize,
    pub channels: usize,
    pub n_stages: usize,
    /// Meters mapped to unit input for coordinates and obstacle geometry.
    pub coord_scale: f64,
    pub spatial: bool,
    pub agent: bool,
    pub time_modulation: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            hidden_dim: 128,
            embed_dim: 8,
            time_dim: 64,
            horizon: DEFAULT_HORIZON,
            channels: BEV_CHANNELS,
            n_stages: 2,
            coord_scale: 4.0,
            spatial: true,
            agent: true,
            time_modulation: true,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("model_dim", self.model_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("n_stages", self.n_stages),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::ParameterBounds(format!("{name} must be positive")));
            }
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::ParameterBounds("time_dim must be a positive even number".into()));
        }
        if !(self.coord_scale > 0.0) {
            return Err(Error::ParameterBounds("coord_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        2 * self.embed_dim * self.horizon
    }
}

/// A named weight or bias block inside the flat parameter vector (row-major `rows x cols`).
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub rows: usize,
    pub cols: usize,
    /// Fan-in of the layer the block belongs to.
    pub fan_in: usize,
}

impl Block {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.rows * self.cols
    }
}

/// Offsets of one stage's blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StageLayout {
    pub bev_w: usize,
    pub bev_b: usize,
    pub coord_w: usize,
    pub coord_b: usize,
    pub mlp1_w: usize,
    pub mlp1_b: usize,
    pub mlp2_w: usize,
    pub mlp2_b: usize,
    pub obs_w: usize,
    pub obs_b: usize,
    pub q_w: usize,
    pub k_w: usize,
    pub v_w: usize,
    pub scale_w: usize,
    pub scale_b: usize,
    pub shift_w: usize,
    pub shift_b: usize,
    pub off1_w: usize,
    pub off1_b: usize,
    pub off2_w: usize,
    pub off2_b: usize,
    pub score1_w: usize,
    pub score1_b: usize,
    pub score2_w: usize,
    pub score2_b: usize,
}

/// Stable name-to-range map of the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub blocks: Vec<Block>,
    pub(crate) stages: Vec<StageLayout>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let (d, h, e, dt) = (cfg.model_dim, cfg.hidden_dim, cfg.embed_dim, cfg.time_dim);
        let t2 = 2 * cfg.horizon;
        let mut blocks = Vec::new();
        let mut len = 0;
        let mut push = |name: String, rows: usize, cols: usize, fan_in: usize| {
            let start = len;
            blocks.push(Block { name, start, rows, cols, fan_in });
            len += rows * cols;
            start
        };
        let mut stages = Vec::with_capacity(cfg.n_stages);
        for s in 0..cfg.n_stages {
            let n = |b: &str| format!("stage{s}.{b}");
            let bev_w = push(n("bev_proj.w"), e, cfg.channels, cfg.channels);
            let bev_b = push(n("bev_proj.b"), e, 1, cfg.channels);
            let coord_w = push(n("coord_embed.w"), e, 2, 2);
            let coord_b = push(n("coord_embed.b"), e, 1, 2);
            let mlp1_w = push(n("traj_mlp1.w"), h, cfg.feature_len(), cfg.feature_len());
            let mlp1_b = push(n("traj_mlp1.b"), h, 1, cfg.feature_len());
            let mlp2_w = push(n("traj_mlp2.w"), d, h, h);
            let mlp2_b = push(n("traj_mlp2.b"), d, 1, h);
            let obs_w = push(n("obstacle_enc.w"), d, OBSTACLE_FEATURES, OBSTACLE_FEATURES);
            let obs_b = push(n("obstacle_enc.b"), d, 1, OBSTACLE_FEATURES);
            let q_w = push(n("attn_q.w"), d, d, d);
            let k_w = push(n("attn_k.w"), d, d, d);
            let v_w = push(n("attn_v.w"), d, d, d);
            let scale_w = push(n("film_scale.w"), d, dt, dt);
            let scale_b = push(n("film_scale.b"), d, 1, dt);
            let shift_w = push(n("film_shift.w"), d, dt, dt);
            let shift_b = push(n("film_shift.b"), d, 1, dt);
            let off1_w = push(n("offset_hidden.w"), d, d, d);
            let off1_b = push(n("offset_hidden.b"), d, 1, d);
            let off2_w = push(n("offset_out.w"), t2, d, d);
            let off2_b = push(n("offset_out.b"), t2, 1, d);
            let score1_w = push(n("score_hidden.w"), d, d, d);
            let score1_b = push(n("score_hidden.b"), d, 1, d);
            let score2_w = push(n("score_out.w"), 1, d, d);
            let score2_b = push(n("score_out.b"), 1, 1, d);
            stages.push(StageLayout {
                bev_w,
                bev_b,
                coord_w,
                coord_b,
                mlp1_w,
                mlp1_b,
                mlp2_w,
                mlp2_b,
                obs_w,
                obs_b,
                q_w,
                k_w,
                v_w,
                scale_w,
                scale_b,
                shift_w,
                shift_b,
                off1_w,
                off1_b,
                off2_w,
                off2_b,
                score1_w,
                score1_b,
                score2_w,
                score2_b,
            });
        }
        Self { blocks, stages, len }
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<S = f64> {
    pub config: DenoiserConfig,
    pub layout: ParamLayout,
    pub values: Vec<S>,
}

impl<S: Scalar> DenoiserParams<S> {
    pub fn zeros(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let values = vec![S::zero(); layout.len];
        Ok(Self { config, layout, values })
    }

    pub fn from_values(config: DenoiserConfig, values: Vec<S>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if values.len() != layout.len {
            return Err(Error::Shape(format!("expected {} parameters, got {}", layout.len, values.len())));
        }
        Ok(Self { config, layout, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[S]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [S]> {
        let range = self.layout.block(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn cast<T: Scalar>(&self) -> DenoiserParams<T> {
        DenoiserParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            values: self.values.iter().map(|v| T::lit(v.as_f64())).collect(),
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` initialization; the offset output layer starts at zero.
pub fn init_params<S: Scalar>(seed: u64, config: &DenoiserConfig) -> Result<DenoiserParams<S>> {
    let mut params = DenoiserParams::<S>::zeros(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for block in &params.layout.blocks {
        if block.name.ends_with("offset_out.w") || block.name.ends_with("offset_out.b") {
            continue;
        }
        let bound = 1.0 / (block.fan_in as f64).sqrt();
        for v in &mut params.values[block.range()] {
            *v = S::lit(rng.random_range(-bound..=bound));
        }
    }
    Ok(params)
}

/// Conditioning shared by every trajectory of one scene.
#[derive(Debug, Clone)]
pub struct SceneContext<S = f64> {
    pub bev: BevGrid,
    /// Metric position of the grid's lower-left corner.
    pub origin: [f64; 2],
    pub cell: f64,
    pub obstacles: Vec<[S; OBSTACLE_FEATURES]>,
}

impl<S: Scalar> SceneContext<S> {
    pub fn from_scene(scene: &Scene, coord_scale: f64) -> Self {
        let obstacles = scene
            .obstacles
            .iter()
            .map(|o| {
                [
                    S::lit(o.center[0] / coord_scale),
                    S::lit(o.center[1] / coord_scale),
                    S::lit(o.half_extent[0] / coord_scale),
                    S::lit(o.half_extent[1] / coord_scale),
                    S::lit(o.velocity[0] / VELOCITY_SCALE),
                    S::lit(o.velocity[1] / VELOCITY_SCALE),
                ]
            })
            .collect();
        Self { bev: scene.bev_features(), origin: [-GRID_EXTENT, -GRID_EXTENT], cell: CELL_SIZE, obstacles }
    }

    /// Context over an explicit feature grid laid out like the scene BEV.
    pub fn from_parts(bev: BevGrid, obstacles: Vec<[S; OBSTACLE_FEATURES]>) -> Self {
        Self { bev, origin: [-GRID_EXTENT, -GRID_EXTENT], cell: CELL_SIZE, obstacles }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput<S = f64> {
    pub trajectories: Vec<Trajectory<S>>,
    pub logits: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput<S = f64> {
    /// Final-stage trajectories.
    pub trajectories: Vec<Trajectory<S>>,
    /// Final-stage logits.
    pub logits: Vec<S>,
    /// Every stage's output, final stage last.
    pub stages: Vec<StageOutput<S>>,
}

/// Loss gradients with respect to each stage's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads<S = f64> {
    pub stages: Vec<StageOutput<S>>,
}

impl<S: Scalar> OutputGrads<S> {
    pub fn zeros(n_stages: usize, n: usize, horizon: usize) -> Self {
        Self {
            stages: (0..n_stages)
                .map(|_| StageOutput { trajectories: vec![Trajectory::zeros(horizon); n], logits: vec![S::zero(); n] })
                .collect(),
        }
    }
}
