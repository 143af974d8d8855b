//! Synthetic driving scenes: road layouts, obstacles and scripted demonstrations.

mod dataset;
mod raster;

pub use dataset::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use raster::{rasterize, BevGrid, BEV_CHANNELS};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::eval::metrics::{collision_free, drivable_compliant, ttc_ok};
use crate::trajectory::{Trajectory, DEFAULT_HORIZON, WAYPOINT_DT};

/// Half side of the square BEV region around the ego vehicle, meters.
pub const GRID_EXTENT: f64 = 32.0;
/// BEV cell size, meters.
pub const CELL_SIZE: f64 = 0.5;
/// Cells per side.
pub const GRID_CELLS: usize = 128;
pub const LANE_WIDTH: f64 = 3.5;
/// Half width of a three-lane road.
pub const ROAD_HALF_WIDTH: f64 = 1.5 * LANE_WIDTH;
pub const MAX_OBSTACLES: usize = 6;
pub const MAX_OBSTACLE_SPEED: f64 = 15.0;
pub const MAX_GENERATION_RETRIES: usize = 100;
pub const LABEL_NOISE_STD: f64 = 0.1;
/// Reference speed on straight roads, m/s.
pub const CRUISE_SPEED: f64 = 6.5;
/// Lateral acceleration the reference planner holds through a turn, m/s².
pub const TURN_LAT_ACCEL: f64 = 2.0;
/// Distance before the arc starts, meters.
const TURN_START: f64 = 2.0;
const LANE_CHANGE_START: f64 = 4.0;
const LANE_CHANGE_SPAN: f64 = 20.0;
/// Range of the stopped vehicle ahead that motivates a lane change, meters.
const BLOCKER_RANGE: std::ops::Range<f64> = 22.0..27.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RouteIntent {
    Straight,
    LeftTurn,
    RightTurn,
    LaneChangeLeft,
    LaneChangeRight,
}

impl RouteIntent {
    pub const ALL: [RouteIntent; 5] = [
        RouteIntent::Straight,
        RouteIntent::LeftTurn,
        RouteIntent::RightTurn,
        RouteIntent::LaneChangeLeft,
        RouteIntent::LaneChangeRight,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Route heading at the goal, radians (left positive). Lane changes end
    /// parallel to the start, so they share the straight heading.
    pub fn goal_heading(self) -> f64 {
        match self {
            RouteIntent::LeftTurn => PI / 2.0,
            RouteIntent::RightTurn => -PI / 2.0,
            _ => 0.0,
        }
    }

    pub fn is_lane_change(self) -> bool {
        matches!(self, RouteIntent::LaneChangeLeft | RouteIntent::LaneChangeRight)
    }

    pub fn name(self) -> &'static str {
        match self {
            RouteIntent::Straight => "straight",
            RouteIntent::LeftTurn => "left_turn",
            RouteIntent::RightTurn => "right_turn",
            RouteIntent::LaneChangeLeft => "lane_change_left",
            RouteIntent::LaneChangeRight => "lane_change_right",
        }
    }
}

impl fmt::Display for RouteIntent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RouteIntent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown intent '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub half_extent: [f64; 2],
    pub velocity: [f64; 2],
}

impl Obstacle {
    pub fn center_at(&self, t: f64) -> [f64; 2] {
        [self.center[0] + self.velocity[0] * t, self.center[1] + self.velocity[1] * t]
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

/// Boolean occupancy-style grid over the BEV region; row index follows `y`, column follows `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivableMask {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
}

impl DrivableMask {
    pub fn from_fn(f: impl Fn(f64, f64) -> bool) -> Self {
        let mut cells = Vec::with_capacity(GRID_CELLS * GRID_CELLS);
        for r in 0..GRID_CELLS {
            for c in 0..GRID_CELLS {
                let (x, y) = cell_center(r, c);
                cells.push(f(x, y));
            }
        }
        Self { rows: GRID_CELLS, cols: GRID_CELLS, cells }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    /// Cell containing `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x + GRID_EXTENT) / CELL_SIZE).floor();
        let r = ((y + GRID_EXTENT) / CELL_SIZE).floor();
        if c < 0.0 || r < 0.0 || c >= self.cols as f64 || r >= self.rows as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }
}

/// Metric center of cell `(row, col)`.
pub fn cell_center(row: usize, col: usize) -> (f64, f64) {
    (-GRID_EXTENT + (col as f64 + 0.5) * CELL_SIZE, -GRID_EXTENT + (row as f64 + 0.5) * CELL_SIZE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub intent: RouteIntent,
    pub seed: u64,
    pub drivable: DrivableMask,
    pub obstacles: Vec<Obstacle>,
    pub gt_trajectory: Trajectory<f64>,
}

impl Scene {
    pub fn horizon(&self) -> usize {
        self.gt_trajectory.horizon()
    }

    /// Ego speed at `t = 0` estimated from the first demonstrated waypoint.
    pub fn ego_speed(&self) -> f64 {
        let p = self.gt_trajectory.waypoints[0];
        p[0].hypot(p[1]) / WAYPOINT_DT
    }

    pub fn bev_features(&self) -> BevGrid {
        rasterize(self)
    }
}

/// Road layout and reference path chosen for a scene.
struct Layout {
    drivable: DrivableMask,
    /// Dense centerline the reference planner follows, starting at the origin.
    route: Vec<[f64; 2]>,
    /// Lane centerlines with their travel direction, used to place traffic.
    lanes: Vec<([f64; 2], [f64; 2])>,
    speed: f64,
}

fn layout(intent: RouteIntent, rng: &mut ChaCha8Rng) -> Layout {
    let ego_lanes: Vec<([f64; 2], [f64; 2])> =
        [-LANE_WIDTH, 0.0, LANE_WIDTH].iter().map(|&y| ([0.0, y], [1.0, 0.0])).collect();
    let step = 0.1;
    let len = 80.0;
    let n = (len / step) as usize;
    match intent {
        RouteIntent::Straight | RouteIntent::LaneChangeLeft | RouteIntent::LaneChangeRight => {
            let speed = CRUISE_SPEED;
            let side = match intent {
                RouteIntent::LaneChangeLeft => 1.0,
                RouteIntent::LaneChangeRight => -1.0,
                _ => 0.0,
            };
            let (start, span) = (LANE_CHANGE_START, LANE_CHANGE_SPAN);
            let route = (0..=n)
                .map(|k| {
                    let x = k as f64 * step;
                    let u = ((x - start) / span).clamp(0.0, 1.0);
                    [x, side * LANE_WIDTH * 0.5 * (1.0 - (PI * u).cos())]
                })
                .collect();
            let drivable = DrivableMask::from_fn(|_, y| y.abs() <= ROAD_HALF_WIDTH);
            Layout { drivable, route, lanes: ego_lanes, speed }
        }
        RouteIntent::LeftTurn | RouteIntent::RightTurn => {
            let side = if intent == RouteIntent::LeftTurn { 1.0 } else { -1.0 };
            let start = TURN_START;
            let radius = rng.random_range(8.0..11.0);
            let speed = (TURN_LAT_ACCEL * radius).sqrt();
            let cross_x = start + radius;
            let mut route: Vec<[f64; 2]> = Vec::new();
            let mut x = 0.0;
            while x < start {
                route.push([x, 0.0]);
                x += step;
            }
            let arc_steps = ((PI / 2.0) * radius / step).ceil() as usize;
            for k in 0..=arc_steps {
                let phi = (PI / 2.0) * k as f64 / arc_steps as f64;
                route.push([start + radius * phi.sin(), side * radius * (1.0 - phi.cos())]);
            }
            let mut y = radius + step;
            while y < len {
                route.push([cross_x, side * y]);
                y += step;
            }
            let drivable = DrivableMask::from_fn(|x, y| {
                let ego_road = y.abs() <= ROAD_HALF_WIDTH && x <= cross_x + ROAD_HALF_WIDTH;
                let cross_road = (x - cross_x).abs() <= ROAD_HALF_WIDTH;
                ego_road || cross_road
            });
            let mut lanes = ego_lanes;
            for dx in [-LANE_WIDTH, 0.0, LANE_WIDTH] {
                let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                lanes.push(([cross_x + dx, 0.0], [0.0, dir]));
            }
            Layout { drivable, route, lanes, speed }
        }
    }
}

/// Constant-speed reference planner: waypoints at equal arc-length spacing along the route.
fn reference_waypoints(route: &[[f64; 2]], speed: f64, horizon: usize) -> Vec<[f64; 2]> {
    (1..=horizon)
        .map(|k| {
            let t = k as f64 * WAYPOINT_DT;
            crate::geometry::point_at_arc_length(route, speed * t)
        })
        .collect()
}

fn random_obstacles(layout: &Layout, difficulty: f64, rng: &mut ChaCha8Rng) -> Vec<Obstacle> {
    let max_count = (MAX_OBSTACLES as f64 * difficulty).round() as usize;
    let count = rng.random_range(0..=max_count);
    (0..count)
        .map(|_| {
            let (origin, dir) = layout.lanes[rng.random_range(0..layout.lanes.len())];
            let along = rng.random_range(-20.0..30.0);
            let speed = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(1.0..10.0) };
            let half = if dir[0] != 0.0 { [2.25, 0.95] } else { [0.95, 2.25] };
            Obstacle {
                center: [origin[0] + dir[0] * along, origin[1] + dir[1] * along],
                half_extent: half,
                velocity: [dir[0] * speed, dir[1] * speed],
            }
        })
        .collect()
}

/// Generates one scene; obstacles are redrawn until the demonstration is collision free.
pub fn generate_scene(intent: RouteIntent, difficulty: f64, seed: u64) -> Result<Scene> {
    generate_scene_with_horizon(intent, difficulty, seed, DEFAULT_HORIZON)
}

pub fn generate_scene_with_horizon(
    intent: RouteIntent,
    difficulty: f64,
    seed: u64,
    horizon: usize,
) -> Result<Scene> {
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::ParameterBounds(format!("difficulty {difficulty} outside [0, 1]")));
    }
    if horizon < 2 {
        return Err(Error::ParameterBounds("horizon must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = layout(intent, &mut rng);
    let noise = Normal::new(0.0, LABEL_NOISE_STD).expect("valid std");
    let gt = Trajectory::new(
        reference_waypoints(&layout.route, layout.speed, horizon)
            .into_iter()
            .map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)])
            .collect(),
    );
    for _ in 0..MAX_GENERATION_RETRIES {
        let mut obstacles = random_obstacles(&layout, difficulty, &mut rng);
        if intent.is_lane_change() {
            obstacles.push(Obstacle {
                center: [rng.random_range(BLOCKER_RANGE), 0.0],
                half_extent: [2.25, 0.95],
                velocity: [0.0, 0.0],
            });
        }
        let scene = Scene {
            intent,
            seed,
            drivable: layout.drivable.clone(),
            obstacles,
            gt_trajectory: gt.clone(),
        };
        if collision_free(&scene, &gt) && drivable_compliant(&scene, &gt) && ttc_ok(&scene, &gt) {
            return Ok(scene);
        }
    }
    Err(Error::GenerationFailure { intent: intent.to_string(), seed, retries: MAX_GENERATION_RETRIES })
}

/// Per-scene seed derived from a base seed and an index.
pub fn scene_seed(base: u64, index: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9)) ^ index
}

/// Scenes over a uniform intent mixture; seeds that fail generation are skipped
/// and counted.
pub fn generate_dataset(count: usize, difficulty: f64, seed: u64, intent: Option<RouteIntent>) -> Result<(Vec<Scene>, usize)> {
    let mut scenes = Vec::with_capacity(count);
    let mut failures = 0;
    let mut index = 0u64;
    while scenes.len() < count {
        let s = scene_seed(seed, index);
        let which = intent.unwrap_or(RouteIntent::ALL[(index % 5) as usize]);
        index += 1;
        match generate_scene(which, difficulty, s) {
            Ok(scene) => scenes.push(scene),
            Err(Error::GenerationFailure { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
        if failures > count + 100 {
            return Err(Error::GenerationFailure { intent: "mixture".into(), seed, retries: failures });
        }
    }
    Ok((scenes, failures))
}
