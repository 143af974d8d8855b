//! Mode-diversity score: one minus the mean IoU between each trajectory's
//! corridor and the union of all corridors.

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

pub const DEFAULT_CORRIDOR_WIDTH: f64 = 2.0;
pub const DEFAULT_RASTER_RESOLUTION: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct DiversityInput<'a> {
    pub trajectories: &'a [Trajectory<f64>],
    pub corridor_width: f64,
    pub raster_resolution: f64,
}

impl<'a> DiversityInput<'a> {
    pub fn new(trajectories: &'a [Trajectory<f64>]) -> Self {
        Self {
            trajectories,
            corridor_width: DEFAULT_CORRIDOR_WIDTH,
            raster_resolution: DEFAULT_RASTER_RESOLUTION,
        }
    }
}

/// Rasterized corridor footprints on a grid anchored at the joint bounding box.
struct Footprints {
    cells: usize,
    masks: Vec<Vec<bool>>,
}

fn footprints(input: &DiversityInput<'_>) -> Footprints {
    let half = input.corridor_width / 2.0;
    let res = input.raster_resolution;
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for t in input.trajectories {
        for p in &t.waypoints {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
    }
    let origin = [lo[0] - half - res, lo[1] - half - res];
    let nx = ((hi[0] - lo[0] + 2.0 * half + 2.0 * res) / res).ceil() as usize + 1;
    let ny = ((hi[1] - lo[1] + 2.0 * half + 2.0 * res) / res).ceil() as usize + 1;
    let masks = input
        .trajectories
        .iter()
        .map(|t| {
            let mut mask = vec![false; nx * ny];
            for w in t.waypoints.windows(2) {
                let (a, b) = (w[0], w[1]);
                let d = [b[0] - a[0], b[1] - a[1]];
                let len2 = d[0] * d[0] + d[1] * d[1];
                if len2 == 0.0 {
                    continue;
                }
                let idx = |v: f64, o: f64| ((v - o) / res).floor().max(0.0) as usize;
                let (x0, x1) = (idx(a[0].min(b[0]) - half, origin[0]), idx(a[0].max(b[0]) + half, origin[0]).min(nx - 1));
                let (y0, y1) = (idx(a[1].min(b[1]) - half, origin[1]), idx(a[1].max(b[1]) + half, origin[1]).min(ny - 1));
                for iy in y0..=y1 {
                    for ix in x0..=x1 {
                        let c = [origin[0] + (ix as f64 + 0.5) * res, origin[1] + (iy as f64 + 0.5) * res];
                        let t = ((c[0] - a[0]) * d[0] + (c[1] - a[1]) * d[1]) / len2;
                        if !(0.0..=1.0).contains(&t) {
                            continue;
                        }
                        let cross = ((c[0] - a[0]) * d[1] - (c[1] - a[1]) * d[0]).abs() / len2.sqrt();
                        if cross <= half {
                            mask[iy * nx + ix] = true;
                        }
                    }
                }
            }
            mask
        })
        .collect();
    Footprints { cells: nx * ny, masks }
}

pub fn diversity_score(input: &DiversityInput<'_>) -> Result<f64> {
    if input.trajectories.is_empty() {
        return Err(Error::Cardinality("diversity needs at least one trajectory".into()));
    }
    if !(input.corridor_width > 0.0 && input.raster_resolution > 0.0) {
        return Err(Error::ParameterBounds("corridor width and resolution must be positive".into()));
    }
    if input.trajectories.iter().any(|t| !t.is_finite()) {
        return Err(Error::NumericInput("non-finite trajectory".into()));
    }
    let fp = footprints(input);
    let union: Vec<bool> = (0..fp.cells).map(|i| fp.masks.iter().any(|m| m[i])).collect();
    let mut iou_sum = 0.0;
    for (k, m) in fp.masks.iter().enumerate() {
        let area = m.iter().filter(|&&c| c).count();
        if area == 0 {
            return Err(Error::Degenerate(format!("trajectory {k} rasterizes to zero area")));
        }
        let inter = m.iter().zip(&union).filter(|(&a, &u)| a && u).count();
        let uni = m.iter().zip(&union).filter(|(&a, &u)| a || u).count();
        iou_sum += inter as f64 / uni as f64;
    }
    Ok(1.0 - iou_sum / input.trajectories.len() as f64)
}

/// Convenience wrapper with default corridor width and resolution.
pub fn diversity(trajectories: &[Trajectory<f64>]) -> Result<f64> {
    diversity_score(&DiversityInput::new(trajectories))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(y: f64) -> Trajectory<f64> {
        Trajectory::new((1..=8).map(|k| [k as f64 * 2.0, y]).collect())
    }

    #[test]
    fn single_trajectory_has_zero_diversity() {
        assert_eq!(diversity(&[straight(0.0)]).unwrap(), 0.0);
    }

    #[test]
    fn duplicates_have_zero_diversity() {
        assert_eq!(diversity(&vec![straight(1.0); 5]).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_pair_is_one_half() {
        let d = diversity(&[straight(0.0), straight(10.0)]).unwrap();
        assert!((d - 0.5).abs() <= 0.02, "{d}");
    }

    #[test]
    fn degenerate_point_errors() {
        let point = Trajectory::new(vec![[1.0, 1.0]; 8]);
        assert!(matches!(diversity(&[point]), Err(Error::Degenerate(_))));
        assert!(diversity(&[]).is_err());
    }
}
