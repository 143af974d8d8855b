//! Side-by-side comparison of planning paradigms on a held-out scene set.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use log::info;

use super::diversity::diversity;
use super::metrics::mini_pdm;
use crate::denoiser::{Checkpoint, ModelKind};
use crate::error::{Error, Result};
use crate::plan::{plan_checkpoint, InitMode, PlanConfig, PlanResult, DEFAULT_N_INFER, DEFAULT_STEPS, DEFAULT_VANILLA_STEPS};
use crate::scene::{scene_seed, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Paradigm {
    Truncated,
    VanillaFullSchedule,
    SingleModeRegression,
    FixedVocabulary,
    ExtrapolatedPrior,
}

impl Paradigm {
    pub const ALL: [Paradigm; 5] = [
        Paradigm::Truncated,
        Paradigm::VanillaFullSchedule,
        Paradigm::SingleModeRegression,
        Paradigm::FixedVocabulary,
        Paradigm::ExtrapolatedPrior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Truncated => "truncated",
            Paradigm::VanillaFullSchedule => "vanilla_full_schedule",
            Paradigm::SingleModeRegression => "single_mode_regression",
            Paradigm::FixedVocabulary => "fixed_vocabulary",
            Paradigm::ExtrapolatedPrior => "extrapolated_prior",
        }
    }

    /// Kind of checkpoint this paradigm plans with.
    pub fn model_kind(self) -> ModelKind {
        match self {
            Paradigm::Truncated | Paradigm::ExtrapolatedPrior => ModelKind::Truncated,
            Paradigm::VanillaFullSchedule => ModelKind::Vanilla,
            Paradigm::SingleModeRegression => ModelKind::Regression,
            Paradigm::FixedVocabulary => ModelKind::Vocabulary,
        }
    }

    /// Comma-separated list; short aliases such as `vanilla` are accepted.
    pub fn parse_list(s: &str) -> Result<Vec<Paradigm>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let p: Paradigm = part.parse()?;
            if !out.contains(&p) {
                out.push(p);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no paradigms requested".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let p = match s {
            "truncated" => Paradigm::Truncated,
            "vanilla" | "vanilla_full_schedule" => Paradigm::VanillaFullSchedule,
            "regression" | "single_mode_regression" => Paradigm::SingleModeRegression,
            "vocabulary" | "fixed_vocabulary" => Paradigm::FixedVocabulary,
            "extrapolated" | "extrapolated_prior" => Paradigm::ExtrapolatedPrior,
            other => return Err(Error::Config(format!("unknown paradigm '{other}'"))),
        };
        Ok(p)
    }
}

/// A paradigm and the checkpoint it plans with.
#[derive(Debug, Clone, Copy)]
pub struct PlannerEntry<'a> {
    pub paradigm: Paradigm,
    pub checkpoint: Option<&'a Checkpoint<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub n_infer: usize,
    pub truncated_steps: usize,
    pub vanilla_steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { n_infer: DEFAULT_N_INFER, truncated_steps: DEFAULT_STEPS, vanilla_steps: DEFAULT_VANILLA_STEPS, eta: 0.0, seed: 0 }
    }
}

impl BenchmarkConfig {
    pub fn plan_config(&self, paradigm: Paradigm, scene_index: usize) -> PlanConfig {
        let seed = scene_seed(self.seed, scene_index as u64);
        let (init, n_steps) = match paradigm {
            Paradigm::VanillaFullSchedule => (InitMode::Gaussian, self.vanilla_steps),
            Paradigm::ExtrapolatedPrior => (InitMode::Extrapolated, self.truncated_steps),
            _ => (InitMode::Anchored, self.truncated_steps),
        };
        PlanConfig { n_infer: self.n_infer, n_steps, init, eta: self.eta, seed, scored: true }
    }
}

/// Aggregates of one paradigm. Times are wall-clock milliseconds per scene.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub paradigm: Paradigm,
    pub n_scenes: usize,
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comf: f64,
    pub ep: f64,
    pub pdms_mini: f64,
    pub diversity: f64,
    /// Mean distance between the top-1 final waypoint and the demonstration's.
    pub l2_final: f64,
    pub steps: usize,
    pub step_time_ms: f64,
    pub total_time_ms: f64,
}

pub const ROW_COLUMNS: [&str; 13] = [
    "paradigm",
    "n_scenes",
    "nc",
    "dac",
    "ttc",
    "comf",
    "ep",
    "pdms_mini",
    "diversity",
    "l2_final",
    "steps",
    "step_time_ms",
    "total_time_ms",
];

impl BenchmarkRow {
    fn values(&self) -> [String; 13] {
        [
            self.paradigm.to_string(),
            self.n_scenes.to_string(),
            format!("{:.6}", self.nc),
            format!("{:.6}", self.dac),
            format!("{:.6}", self.ttc),
            format!("{:.6}", self.comf),
            format!("{:.6}", self.ep),
            format!("{:.6}", self.pdms_mini),
            format!("{:.6}", self.diversity),
            format!("{:.6}", self.l2_final),
            self.steps.to_string(),
            format!("{:.4}", self.step_time_ms),
            format!("{:.4}", self.total_time_ms),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn row(&self, p: Paradigm) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.paradigm == p)
    }

    /// Column-aligned table for terminals.
    pub fn to_table(&self) -> String {
        let cells: Vec<[String; 13]> = self.rows.iter().map(BenchmarkRow::values).collect();
        let widths: Vec<usize> =
            (0..13).map(|c| cells.iter().map(|r| r[c].len()).chain([ROW_COLUMNS[c].len()]).max().unwrap_or(0)).collect();
        let mut out = String::new();
        let line = |out: &mut String, vals: &[&str]| {
            for (c, v) in vals.iter().enumerate() {
                if c == 0 {
                    write!(out, "{v:<w$}", w = widths[c]).expect("string write");
                } else {
                    write!(out, "  {v:>w$}", w = widths[c]).expect("string write");
                }
            }
            out.push('\n');
        };
        line(&mut out, &ROW_COLUMNS);
        for r in &cells {
            let v: Vec<&str> = r.iter().map(String::as_str).collect();
            line(&mut out, &v);
        }
        out
    }

    /// Tab-separated rows under a header, one paradigm per row, columns as in [`ROW_COLUMNS`].
    pub fn to_tsv(&self) -> String {
        let mut out = ROW_COLUMNS.join("\t");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.values().join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |record: usize, reason: &str| Error::Parse { record, reason: reason.to_string() };
        let header = lines.next().ok_or_else(|| bad(0, "missing header"))?;
        if header.split('\t').collect::<Vec<_>>() != ROW_COLUMNS {
            return Err(bad(0, "unexpected columns"));
        }
        let rows = lines
            .enumerate()
            .map(|(i, l)| {
                let f: Vec<&str> = l.split('\t').collect();
                if f.len() != ROW_COLUMNS.len() {
                    return Err(bad(i, "wrong field count"));
                }
                let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i, ROW_COLUMNS[k]));
                let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(i, ROW_COLUMNS[k]));
                Ok(BenchmarkRow {
                    paradigm: f[0].parse()?,
                    n_scenes: int(1)?,
                    nc: num(2)?,
                    dac: num(3)?,
                    ttc: num(4)?,
                    comf: num(5)?,
                    ep: num(6)?,
                    pdms_mini: num(7)?,
                    diversity: num(8)?,
                    l2_final: num(9)?,
                    steps: int(10)?,
                    step_time_ms: num(11)?,
                    total_time_ms: num(12)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }
}

/// Outcome of one paradigm on one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneOutcome {
    pub pdms_mini: f64,
    pub diversity: f64,
    pub l2_final: f64,
}

/// Plans one scene the way the paradigm prescribes.
pub fn plan_scene(paradigm: Paradigm, ck: &Checkpoint<f64>, scene: &Scene, cfg: &BenchmarkConfig, index: usize) -> Result<PlanResult<f64>> {
    if ck.kind != paradigm.model_kind() {
        return Err(Error::Config(format!("{paradigm} needs a {} checkpoint, got {}", paradigm.model_kind(), ck.kind)));
    }
    plan_checkpoint(ck, scene, &cfg.plan_config(paradigm, index))
}

/// Candidates whose spread is measured: the whole set, or the top `n_infer` of a scored vocabulary.
fn diversity_of(paradigm: Paradigm, result: &PlanResult<f64>, n_infer: usize) -> Result<f64> {
    let trajs = result.trajectories_f64();
    if paradigm == Paradigm::FixedVocabulary {
        let top: Vec<_> = result.ranking().into_iter().take(n_infer).map(|i| trajs[i].clone()).collect();
        return diversity(&top);
    }
    diversity(&trajs)
}

/// Evaluates every requested paradigm over `scenes`; rows follow the request order.
pub fn run_benchmark(scenes: &[Scene], planners: &[PlannerEntry<'_>], config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    if scenes.is_empty() {
        return Err(Error::Cardinality("benchmark needs at least one scene".into()));
    }
    let mut rows = Vec::with_capacity(planners.len());
    for entry in planners {
        let ck = entry
            .checkpoint
            .ok_or_else(|| Error::Config(format!("no checkpoint supplied for paradigm {}", entry.paradigm)))?;
        let (row, _) = evaluate_paradigm(entry.paradigm, ck, scenes, config)?;
        info!("{}: pdms_mini {:.4} D {:.4} total {:.3} ms", row.paradigm, row.pdms_mini, row.diversity, row.total_time_ms);
        rows.push(row);
    }
    Ok(BenchmarkReport { rows })
}

/// One paradigm's aggregate row plus its per-scene outcomes.
pub fn evaluate_paradigm(
    paradigm: Paradigm,
    ck: &Checkpoint<f64>,
    scenes: &[Scene],
    config: &BenchmarkConfig,
) -> Result<(BenchmarkRow, Vec<SceneOutcome>)> {
    let mut sums = [0.0f64; 6];
    let mut outcomes = Vec::with_capacity(scenes.len());
    let (mut steps, mut step_time, mut total_time) = (0, 0.0, 0.0);
    for (i, scene) in scenes.iter().enumerate() {
        let result = plan_scene(paradigm, ck, scene, config, i)?;
        let top = result.top1().trajectory.clone();
        let m = mini_pdm(scene, &top)?;
        let d = diversity_of(paradigm, &result, config.n_infer)?;
        let last = top.last();
        let gt = scene.gt_trajectory.last();
        let l2 = (last[0] - gt[0]).hypot(last[1] - gt[1]);
        for (s, v) in sums.iter_mut().zip([m.nc, m.dac, m.ttc, m.comf, m.ep, m.pdms_mini]) {
            *s += v;
        }
        steps = result.step_times.len();
        let total = result.total_time().as_secs_f64() * 1e3;
        total_time += total;
        step_time += total / steps as f64;
        outcomes.push(SceneOutcome { pdms_mini: m.pdms_mini, diversity: d, l2_final: l2 });
    }
    let n = scenes.len() as f64;
    let mean = |k: usize| sums[k] / n;
    let row = BenchmarkRow {
        paradigm,
        n_scenes: scenes.len(),
        nc: mean(0),
        dac: mean(1),
        ttc: mean(2),
        comf: mean(3),
        ep: mean(4),
        pdms_mini: mean(5),
        diversity: outcomes.iter().map(|o| o.diversity).sum::<f64>() / n,
        l2_final: outcomes.iter().map(|o| o.l2_final).sum::<f64>() / n,
        steps,
        step_time_ms: step_time / n,
        total_time_ms: total_time / n,
    };
    Ok((row, outcomes))
}
