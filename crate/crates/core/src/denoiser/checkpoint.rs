//! Binary model checkpoint: `TDPW` magic, u16 version, model kind, config
//! block, flat f64 parameters, then the anchor set. All little-endian.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::{DenoiserConfig, DenoiserParams};
use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::io_util::{write_atomic, Reader};
use crate::scalar::Scalar;
use crate::schedule::{build_linear_schedule, NoiseSchedule};
use crate::trajectory::Trajectory;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TDPW";
pub const CHECKPOINT_VERSION: u16 = 1;

/// How a checkpoint was trained and therefore how it plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Anchored Gaussian, truncated schedule, scored candidates.
    Truncated,
    /// Standard Gaussian over the full schedule.
    Vanilla,
    /// One deterministic prediction from a zero trajectory.
    Regression,
    /// Scores a fixed anchor vocabulary without refinement.
    Vocabulary,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Truncated, ModelKind::Vanilla, ModelKind::Regression, ModelKind::Vocabulary];

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Truncated => "truncated",
            ModelKind::Vanilla => "vanilla",
            ModelKind::Regression => "regression",
            ModelKind::Vocabulary => "vocabulary",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<S = f64> {
    pub kind: ModelKind,
    pub params: DenoiserParams<S>,
    pub schedule: NoiseSchedule<S>,
    pub anchors: Option<AnchorSet<S>>,
}

pub fn encode_checkpoint<S: Scalar>(ck: &Checkpoint<S>) -> Vec<u8> {
    let cfg = &ck.params.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(ck.kind.code());
    for v in [cfg.model_dim, cfg.hidden_dim, cfg.embed_dim, cfg.time_dim, cfg.horizon, cfg.channels, cfg.n_stages] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.coord_scale.to_le_bytes());
    out.push(cfg.spatial as u8 | (cfg.agent as u8) << 1 | (cfg.time_modulation as u8) << 2);
    out.extend_from_slice(&(ck.schedule.total_steps as u32).to_le_bytes());
    out.extend_from_slice(&(ck.schedule.trunc_steps as u32).to_le_bytes());
    out.extend_from_slice(&ck.schedule.beta_start.to_le_bytes());
    out.extend_from_slice(&ck.schedule.beta_end.to_le_bytes());
    let n_anchor = ck.anchors.as_ref().map_or(0, AnchorSet::len);
    out.extend_from_slice(&(n_anchor as u32).to_le_bytes());
    out.extend_from_slice(&(ck.params.values.len() as u64).to_le_bytes());
    for v in &ck.params.values {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    if let Some(a) = &ck.anchors {
        for v in a.anchors.iter().flat_map(|t| t.flat()) {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<Checkpoint<S>> {
    let mut r = Reader::new(bytes);
    let bad = |reason: &str| Error::Parse { record: 0, reason: format!("checkpoint: {reason}") };
    if r.take(4) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    let version = r.u16().ok_or_else(|| bad("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let kind = ModelKind::from_code(r.u8().ok_or_else(|| bad("truncated header"))?).ok_or_else(|| bad("unknown model kind"))?;
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32().ok_or_else(|| bad("truncated config"))? as usize;
    }
    let coord_scale = r.f64().ok_or_else(|| bad("truncated config"))?;
    let flags = r.u8().ok_or_else(|| bad("truncated config"))?;
    let config = DenoiserConfig {
        model_dim: dims[0],
        hidden_dim: dims[1],
        embed_dim: dims[2],
        time_dim: dims[3],
        horizon: dims[4],
        channels: dims[5],
        n_stages: dims[6],
        coord_scale,
        spatial: flags & 1 != 0,
        agent: flags & 2 != 0,
        time_modulation: flags & 4 != 0,
    };
    let total = r.u32().ok_or_else(|| bad("truncated schedule"))? as usize;
    let trunc = r.u32().ok_or_else(|| bad("truncated schedule"))? as usize;
    let beta_start = r.f64().ok_or_else(|| bad("truncated schedule"))?;
    let beta_end = r.f64().ok_or_else(|| bad("truncated schedule"))?;
    let schedule = build_linear_schedule(total, beta_start, beta_end, trunc)?;
    let n_anchor = r.u32().ok_or_else(|| bad("truncated anchor count"))? as usize;
    let n_params = r.u64().ok_or_else(|| bad("truncated parameter count"))? as usize;
    if n_params.saturating_mul(8) > r.remaining() {
        return Err(bad("truncated parameters"));
    }
    let values = (0..n_params).map(|_| S::lit(r.f64().expect("length checked"))).collect();
    let params = DenoiserParams::from_values(config, values)?;
    let anchors = if n_anchor == 0 {
        None
    } else {
        let per = params.config.horizon * 2;
        if n_anchor.saturating_mul(per * 8) != r.remaining() {
            return Err(bad("anchor block size mismatch"));
        }
        let anchors = (0..n_anchor)
            .map(|_| {
                let flat: Vec<S> = (0..per).map(|_| S::lit(r.f64().expect("length checked"))).collect();
                Trajectory::from_flat(&flat)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(AnchorSet::new(anchors)?)
    };
    if r.remaining() != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { kind, params, schedule, anchors })
}

pub fn write_checkpoint<S: Scalar>(path: &Path, ck: &Checkpoint<S>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn read_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    decode_checkpoint(&std::fs::read(path)?)
}
