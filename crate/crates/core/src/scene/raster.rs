use super::{cell_center, Scene, GRID_CELLS};
use crate::trajectory::WAYPOINT_DT;

/// Drivable, occupancy now, occupancy at the horizon, cos and sin of the route heading.
pub const BEV_CHANNELS: usize = 5;

/// Channel-major BEV feature stack over the scene grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl BevGrid {
    pub fn zeros(channels: usize, rows: usize, cols: usize) -> Self {
        Self { channels, rows, cols, data: vec![0.0; channels * rows * cols] }
    }

    #[inline]
    pub fn get(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[(ch * self.rows + row) * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, row: usize, col: usize, v: f64) {
        self.data[(ch * self.rows + row) * self.cols + col] = v;
    }

    pub fn channel_sum(&self, ch: usize) -> f64 {
        self.data[ch * self.rows * self.cols..(ch + 1) * self.rows * self.cols].iter().sum()
    }
}

/// Renders the scene into `BEV_CHANNELS` planes; geometry outside the grid is dropped.
pub fn rasterize(scene: &Scene) -> BevGrid {
    let (rows, cols) = (scene.drivable.rows, scene.drivable.cols);
    debug_assert_eq!((rows, cols), (GRID_CELLS, GRID_CELLS));
    let mut bev = BevGrid::zeros(BEV_CHANNELS, rows, cols);
    let heading = scene.intent.goal_heading();
    let (cos_g, sin_g) = (heading.cos(), heading.sin());
    for r in 0..rows {
        for c in 0..cols {
            bev.set(0, r, c, if scene.drivable.get(r, c) { 1.0 } else { 0.0 });
            bev.set(3, r, c, cos_g);
            bev.set(4, r, c, sin_g);
        }
    }
    let horizon_t = scene.horizon() as f64 * WAYPOINT_DT;
    for o in &scene.obstacles {
        for (ch, t) in [(1, 0.0), (2, horizon_t)] {
            let center = o.center_at(t);
            let (lo_x, hi_x) = (center[0] - o.half_extent[0], center[0] + o.half_extent[0]);
            let (lo_y, hi_y) = (center[1] - o.half_extent[1], center[1] + o.half_extent[1]);
            let to_idx = |v: f64| ((v + super::GRID_EXTENT) / super::CELL_SIZE).floor();
            let c0 = to_idx(lo_x).max(0.0) as usize;
            let c1 = (to_idx(hi_x).min(cols as f64 - 1.0)).max(-1.0);
            let r0 = to_idx(lo_y).max(0.0) as usize;
            let r1 = (to_idx(hi_y).min(rows as f64 - 1.0)).max(-1.0);
            if c1 < 0.0 || r1 < 0.0 {
                continue;
            }
            for r in r0..=r1 as usize {
                for c in c0..=c1 as usize {
                    let (x, y) = cell_center(r, c);
                    if x >= lo_x && x <= hi_x && y >= lo_y && y <= hi_y {
                        bev.set(ch, r, c, 1.0);
                    }
                }
            }
        }
    }
    bev
}
