//! Anchor trajectories: k-means clustering of demonstrations and sampling of
//! the anchored Gaussian around them.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::trajectory::{check_horizon, Trajectory};

pub const DEFAULT_N_ANCHOR: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet<S = f64> {
    pub anchors: Vec<Trajectory<S>>,
}

impl<S: Scalar> AnchorSet<S> {
    pub fn new(anchors: Vec<Trajectory<S>>) -> Result<Self> {
        let first = anchors.first().ok_or_else(|| Error::Cardinality("anchor set is empty".into()))?;
        check_horizon(&anchors, first.horizon())?;
        Ok(Self { anchors })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.anchors[0].horizon()
    }

    pub fn cast<T: Scalar>(&self) -> AnchorSet<T> {
        AnchorSet { anchors: self.anchors.iter().map(Trajectory::cast).collect() }
    }
}

/// Per-iteration diagnostics of a clustering run.
#[derive(Debug, Clone)]
pub struct KMeansTrace {
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn kmeans_cluster<S: Scalar>(
    demos: &[Trajectory<S>],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<AnchorSet<S>> {
    kmeans_cluster_traced(demos, k, max_iters, seed).map(|(a, _)| a)
}

/// Lloyd's algorithm on flattened waypoints with k-means++ seeding.
pub fn kmeans_cluster_traced<S: Scalar>(
    demos: &[Trajectory<S>],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(AnchorSet<S>, KMeansTrace)> {
    if k == 0 {
        return Err(Error::Cardinality("k must be >= 1".into()));
    }
    if demos.len() < k {
        return Err(Error::Cardinality(format!("{} demonstrations cannot form {k} clusters", demos.len())));
    }
    let horizon = demos[0].horizon();
    check_horizon(demos, horizon)?;
    let points: Vec<Vec<f64>> = demos.iter().map(|d| d.flat().map(Scalar::as_f64).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(&points, k, &mut rng);

    let mut assign = vec![usize::MAX; points.len()];
    let mut trace = KMeansTrace { objective: Vec::new(), iterations: 0, converged: false };
    for _ in 0..max_iters.max(1) {
        trace.iterations += 1;
        let mut changed = false;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (best, d) = nearest(p, &centers);
            objective += d;
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        trace.objective.push(objective);
        if !changed {
            trace.converged = true;
            break;
        }
        update_centers(&points, &assign, &mut centers);
    }

    let anchors = centers
        .iter()
        .map(|c| Trajectory::from_flat(&c.iter().map(|&v| S::lit(v)).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    Ok((AnchorSet { anchors }, trace))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center; ties go to the lowest index.
fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            // every point coincides with an existing center
            rng.random_range(0..points.len())
        };
        centers.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn update_centers(points: &[Vec<f64>], assign: &[usize], centers: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centers.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            let n = counts[j] as f64;
            centers[j] = sums[j].iter().map(|s| s / n).collect();
        }
    }
    for j in 0..k {
        if counts[j] == 0 {
            // re-seed at the point farthest from its own (updated) center
            let far = points
                .iter()
                .zip(assign)
                .map(|(p, &a)| sq_dist(p, &centers[a]))
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc })
                .0;
            centers[j] = points[far].clone();
        }
    }
}

/// A noisy sample drawn around one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredSample<S = f64> {
    pub trajectory: Trajectory<S>,
    pub anchor: usize,
}

/// Draws `n_infer` samples from the anchored Gaussian at `step`, assigning anchors round-robin.
pub fn sample_anchored<S: Scalar>(
    anchors: &AnchorSet<S>,
    sched: &NoiseSchedule<S>,
    n_infer: usize,
    step: usize,
    seed: u64,
) -> Result<Vec<AnchoredSample<S>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_anchored_with(anchors, sched, n_infer, step, |h| standard_normal(&mut rng, h))
}

/// As [`sample_anchored`] with a caller-supplied noise source.
pub fn sample_anchored_with<S: Scalar>(
    anchors: &AnchorSet<S>,
    sched: &NoiseSchedule<S>,
    n_infer: usize,
    step: usize,
    mut noise: impl FnMut(usize) -> Trajectory<S>,
) -> Result<Vec<AnchoredSample<S>>> {
    if step > sched.trunc_steps {
        return Err(Error::TruncationViolation { step, trunc: sched.trunc_steps });
    }
    if n_infer == 0 {
        return Err(Error::ParameterBounds("n_infer must be >= 1".into()));
    }
    if anchors.is_empty() {
        return Err(Error::Cardinality("anchor set is empty".into()));
    }
    (0..n_infer)
        .map(|m| {
            let anchor = m % anchors.len();
            let eps = noise(anchors.horizon());
            let trajectory = sched.diffuse_unchecked(&anchors.anchors[anchor], step, &eps)?;
            Ok(AnchoredSample { trajectory, anchor })
        })
        .collect()
}

pub fn standard_normal<S: Scalar, R: Rng + ?Sized>(rng: &mut R, horizon: usize) -> Trajectory<S> {
    Trajectory::new(
        (0..horizon)
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                let y: f64 = StandardNormal.sample(rng);
                [S::lit(x), S::lit(y)]
            })
            .collect(),
    )
}

/// Text form: `# anchors <n> <horizon>` header, then one `index x1 y1 ... xT yT` row per anchor.
pub fn format_anchor_file<S: Scalar>(set: &AnchorSet<S>) -> String {
    let mut out = format!("# anchors {} {}\n", set.len(), set.horizon());
    for (i, a) in set.anchors.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in a.flat() {
            let _ = write!(out, " {}", v.as_f64());
        }
        out.push('\n');
    }
    out
}

pub fn parse_anchor_file<S: Scalar>(text: &str) -> Result<AnchorSet<S>> {
    let mut anchors = Vec::new();
    let mut horizon = None;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record = anchors.len();
        let bad = |reason: String| Error::Parse { record, reason: format!("line {}: {reason}", line_no + 1) };
        let mut fields = line.split_whitespace();
        let index: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("missing index".into()))?;
        if index != record {
            return Err(bad(format!("index {index} out of order")));
        }
        let values = fields
            .map(|f| f.parse::<f64>().map(S::lit).map_err(|e| bad(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let traj = Trajectory::from_flat(&values).map_err(|e| bad(e.to_string()))?;
        match horizon {
            None => horizon = Some(traj.horizon()),
            Some(h) if h != traj.horizon() => return Err(bad(format!("expected {h} waypoints"))),
            _ => {}
        }
        anchors.push(traj);
    }
    AnchorSet::new(anchors)
}

pub fn write_anchor_file<S: Scalar>(path: &Path, set: &AnchorSet<S>) -> Result<()> {
    crate::io_util::write_atomic(path, format_anchor_file(set).as_bytes())
}

pub fn read_anchor_file<S: Scalar>(path: &Path) -> Result<AnchorSet<S>> {
    parse_anchor_file(&std::fs::read_to_string(path)?)
}
