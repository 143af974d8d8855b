//! Planning-quality subscores against a synthetic scene.

use crate::error::{Error, Result};
use crate::geometry::{arc_length_projection, dist, lerp, point_box_distance, point_polyline_distance, polyline_length};
use crate::scene::{cell_center, Scene, CELL_SIZE, GRID_EXTENT};
use crate::trajectory::{Trajectory, WAYPOINT_DT};

/// Half width of the ego corridor (vehicle footprint), meters.
pub const EGO_HALF_WIDTH: f64 = 1.0;
pub const TTC_THRESHOLD: f64 = 1.0;
pub const MAX_JERK: f64 = 10.0;
pub const MAX_LAT_ACCEL: f64 = 4.0;
/// Spacing of collision probes along each segment, meters.
const PROBE_SPACING: f64 = 0.25;
const TTC_PROBE_DT: f64 = 0.1;
/// Straight extension of the reference route used when projecting progress.
const ROUTE_EXTENSION: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiniScore {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comf: f64,
    pub ep: f64,
    pub pdms_mini: f64,
}

impl MiniScore {
    pub fn aggregate(nc: f64, dac: f64, ttc: f64, comf: f64, ep: f64) -> Self {
        let pdms_mini = nc * dac * (5.0 * ep + 5.0 * ttc + 2.0 * comf) / 12.0;
        Self { nc, dac, ttc, comf, ep, pdms_mini }
    }
}

/// Origin followed by the waypoints, with their timestamps.
fn timed_path(traj: &Trajectory<f64>) -> Vec<([f64; 2], f64)> {
    std::iter::once(([0.0, 0.0], 0.0))
        .chain(traj.waypoints.iter().enumerate().map(|(k, &p)| (p, (k + 1) as f64 * WAYPOINT_DT)))
        .collect()
}

fn with_origin(traj: &Trajectory<f64>) -> Vec<[f64; 2]> {
    std::iter::once([0.0, 0.0]).chain(traj.waypoints.iter().copied()).collect()
}

/// No overlap between the swept ego corridor and any obstacle at matching times.
pub fn collision_free(scene: &Scene, traj: &Trajectory<f64>) -> bool {
    let path = timed_path(traj);
    for w in path.windows(2) {
        let ((a, ta), (b, tb)) = (w[0], w[1]);
        let n = ((dist(a, b) / PROBE_SPACING).ceil() as usize).max(1);
        for i in 0..=n {
            let f = i as f64 / n as f64;
            let p = lerp(a, b, f);
            let t = ta + (tb - ta) * f;
            for o in &scene.obstacles {
                if point_box_distance(p, o.center_at(t), o.half_extent) < EGO_HALF_WIDTH {
                    return false;
                }
            }
        }
    }
    true
}

/// Every grid cell whose center lies in the corridor is drivable; leaving the grid fails.
pub fn drivable_compliant(scene: &Scene, traj: &Trajectory<f64>) -> bool {
    let line = with_origin(traj);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &line {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d] - EGO_HALF_WIDTH);
            hi[d] = hi[d].max(p[d] + EGO_HALF_WIDTH);
        }
    }
    if lo[0] < -GRID_EXTENT || lo[1] < -GRID_EXTENT || hi[0] > GRID_EXTENT || hi[1] > GRID_EXTENT {
        return false;
    }
    let mask = &scene.drivable;
    let idx = |v: f64| (((v + GRID_EXTENT) / CELL_SIZE).floor().max(0.0) as usize).min(mask.cols - 1);
    for r in idx(lo[1])..=idx(hi[1]) {
        for c in idx(lo[0])..=idx(hi[0]) {
            let (x, y) = cell_center(r, c);
            if point_polyline_distance([x, y], &line) <= EGO_HALF_WIDTH && !mask.get(r, c) {
                return false;
            }
        }
    }
    true
}

/// Constant-velocity look-ahead from every waypoint finds no obstacle ahead within `TTC_THRESHOLD`.
pub fn ttc_ok(scene: &Scene, traj: &Trajectory<f64>) -> bool {
    let path = timed_path(traj);
    let n = path.len();
    for k in 0..n {
        let (p, t) = path[k];
        let v = if k + 1 < n {
            [(path[k + 1].0[0] - p[0]) / WAYPOINT_DT, (path[k + 1].0[1] - p[1]) / WAYPOINT_DT]
        } else {
            [(p[0] - path[k - 1].0[0]) / WAYPOINT_DT, (p[1] - path[k - 1].0[1]) / WAYPOINT_DT]
        };
        let probes = (TTC_THRESHOLD / TTC_PROBE_DT).round() as usize;
        for i in 1..=probes {
            let tau = i as f64 * TTC_PROBE_DT;
            let q = [p[0] + v[0] * tau, p[1] + v[1] * tau];
            for o in &scene.obstacles {
                let c = o.center_at(t + tau);
                let ahead = (c[0] - p[0]) * v[0] + (c[1] - p[1]) * v[1] > 0.0;
                if ahead && point_box_distance(q, c, o.half_extent) < EGO_HALF_WIDTH {
                    return false;
                }
            }
        }
    }
    true
}

/// Largest absolute jerk and lateral acceleration from finite differences of the timed path.
pub fn comfort_extremes(traj: &Trajectory<f64>) -> (f64, f64) {
    let p = with_origin(traj);
    let dt = WAYPOINT_DT;
    let mut max_jerk: f64 = 0.0;
    for k in 0..p.len().saturating_sub(3) {
        for d in 0..2 {
            let j = (p[k + 3][d] - 3.0 * p[k + 2][d] + 3.0 * p[k + 1][d] - p[k][d]) / (dt * dt * dt);
            max_jerk = max_jerk.max(j.abs());
        }
    }
    let mut max_lat: f64 = 0.0;
    for k in 1..p.len().saturating_sub(1) {
        let v = [(p[k + 1][0] - p[k - 1][0]) / (2.0 * dt), (p[k + 1][1] - p[k - 1][1]) / (2.0 * dt)];
        let a = [
            (p[k + 1][0] - 2.0 * p[k][0] + p[k - 1][0]) / (dt * dt),
            (p[k + 1][1] - 2.0 * p[k][1] + p[k - 1][1]) / (dt * dt),
        ];
        let speed = v[0].hypot(v[1]);
        if speed > 0.5 {
            max_lat = max_lat.max((v[0] * a[1] - v[1] * a[0]).abs() / speed);
        }
    }
    (max_jerk, max_lat)
}

/// Route progress relative to the demonstration, clamped to `[0, 1]`.
pub fn ego_progress(scene: &Scene, traj: &Trajectory<f64>) -> f64 {
    let mut route = with_origin(&scene.gt_trajectory);
    let reference = polyline_length(&route);
    if reference <= 0.0 {
        return 1.0;
    }
    let n = route.len();
    let (a, b) = (route[n - 2], route[n - 1]);
    let len = dist(a, b);
    if len > 0.0 {
        route.push([b[0] + (b[0] - a[0]) / len * ROUTE_EXTENSION, b[1] + (b[1] - a[1]) / len * ROUTE_EXTENSION]);
    }
    (arc_length_projection(traj.last(), &route) / reference).clamp(0.0, 1.0)
}

pub fn mini_pdm(scene: &Scene, traj: &Trajectory<f64>) -> Result<MiniScore> {
    if traj.horizon() != scene.horizon() || traj.horizon() < 2 {
        return Err(Error::Shape(format!(
            "trajectory has {} waypoints, scene expects {}",
            traj.horizon(),
            scene.horizon()
        )));
    }
    if !traj.is_finite() {
        return Err(Error::NumericInput("trajectory has non-finite waypoints".into()));
    }
    let nc = collision_free(scene, traj) as u8 as f64;
    let dac = drivable_compliant(scene, traj) as u8 as f64;
    let ttc = ttc_ok(scene, traj) as u8 as f64;
    let (jerk, lat) = comfort_extremes(traj);
    let comf = (jerk <= MAX_JERK && lat <= MAX_LAT_ACCEL) as u8 as f64;
    let ep = ego_progress(scene, traj);
    Ok(MiniScore::aggregate(nc, dac, ttc, comf, ep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, Obstacle, RouteIntent};

    #[test]
    fn demonstration_scores_clean() {
        for (k, intent) in RouteIntent::ALL.into_iter().enumerate() {
            let s = generate_scene(intent, 0.5, 40 + k as u64).unwrap();
            let m = mini_pdm(&s, &s.gt_trajectory).unwrap();
            assert_eq!((m.nc, m.dac), (1.0, 1.0), "{intent}");
            assert!((m.ep - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn driving_through_obstacle_zeroes_score() {
        let mut s = generate_scene(RouteIntent::Straight, 0.0, 2).unwrap();
        let p = s.gt_trajectory.waypoints[3];
        s.obstacles.push(Obstacle { center: p, half_extent: [0.5, 0.5], velocity: [0.0, 0.0] });
        let m = mini_pdm(&s, &s.gt_trajectory).unwrap();
        assert_eq!(m.nc, 0.0);
        assert_eq!(m.pdms_mini, 0.0);
    }

    #[test]
    fn zigzag_is_uncomfortable() {
        // third difference of y = 2(-1)^k is 16 m -> 128 m/s^3
        let traj = Trajectory::new((1..=8).map(|k| [k as f64 * 3.0, if k % 2 == 0 { 2.0 } else { -2.0 }]).collect());
        let (jerk, _) = comfort_extremes(&traj);
        assert!((jerk - 128.0).abs() < 1e-9);
        let s = generate_scene(RouteIntent::Straight, 0.0, 2).unwrap();
        assert_eq!(mini_pdm(&s, &traj).unwrap().comf, 0.0);
    }

    #[test]
    fn leaving_road_fails_dac() {
        let s = generate_scene(RouteIntent::Straight, 0.0, 2).unwrap();
        let traj = Trajectory::new((1..=8).map(|k| [k as f64 * 3.0, k as f64 * 1.5]).collect());
        let m = mini_pdm(&s, &traj).unwrap();
        assert_eq!(m.dac, 0.0);
        assert_eq!(m.pdms_mini, 0.0);
    }

    #[test]
    fn short_trajectory_has_low_progress() {
        let s = generate_scene(RouteIntent::Straight, 0.0, 2).unwrap();
        let half = s.gt_trajectory.scale(0.5);
        let ep = mini_pdm(&s, &half).unwrap().ep;
        assert!((ep - 0.5).abs() < 0.05, "{ep}");
    }

    #[test]
    fn shape_mismatch() {
        let s = generate_scene(RouteIntent::Straight, 0.0, 2).unwrap();
        assert!(matches!(mini_pdm(&s, &Trajectory::zeros(3)), Err(Error::Shape(_))));
    }
}
