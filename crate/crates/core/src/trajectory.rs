//! Planar waypoint sequences in the ego frame.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Waypoint spacing of every planned trajectory, seconds.
pub const WAYPOINT_DT: f64 = 0.5;
/// Default number of waypoints (4 s horizon).
pub const DEFAULT_HORIZON: usize = 8;
/// Largest admissible coordinate magnitude, meters.
pub const MAX_COORD: f64 = 64.0;

/// Ordered waypoints `(x, y)` in meters, at `WAYPOINT_DT` spacing starting at `t = WAYPOINT_DT`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory<S = f64> {
    pub waypoints: Vec<[S; 2]>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn new(waypoints: Vec<[S; 2]>) -> Self {
        Self { waypoints }
    }

    pub fn zeros(horizon: usize) -> Self {
        Self { waypoints: vec![[S::zero(); 2]; horizon] }
    }

    /// Builds a trajectory from `[x0, y0, x1, y1, ...]`.
    pub fn from_flat(flat: &[S]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::Shape(format!("flat trajectory has odd length {}", flat.len())));
        }
        Ok(Self { waypoints: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect() })
    }

    pub fn horizon(&self) -> usize {
        self.waypoints.len()
    }

    pub fn flat(&self) -> impl Iterator<Item = S> + '_ {
        self.waypoints.iter().flat_map(|p| p.iter().copied())
    }

    pub fn to_flat(&self) -> Vec<S> {
        self.flat().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(|v| v.is_finite())
    }

    pub fn last(&self) -> [S; 2] {
        *self.waypoints.last().expect("trajectory has waypoints")
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self { waypoints: self.waypoints.iter().map(|p| [f(p[0]), f(p[1])]).collect() }
    }

    /// `a * self + b * other`, elementwise.
    pub fn axpby(&self, a: S, other: &Self, b: S) -> Self {
        debug_assert_eq!(self.horizon(), other.horizon());
        Self {
            waypoints: self
                .waypoints
                .iter()
                .zip(&other.waypoints)
                .map(|(p, q)| [a * p[0] + b * q[0], a * p[1] + b * q[1]])
                .collect(),
        }
    }

    pub fn translate(&self, dx: S, dy: S) -> Self {
        Self { waypoints: self.waypoints.iter().map(|p| [p[0] + dx, p[1] + dy]).collect() }
    }

    /// Mean Euclidean distance between corresponding waypoints.
    pub fn mean_l2(&self, other: &Self) -> S {
        let n = S::from_usize_lossy(self.horizon().max(1));
        self.waypoints
            .iter()
            .zip(&other.waypoints)
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .sum::<S>()
            / n
    }

    pub fn squared_distance(&self, other: &Self) -> S {
        self.flat().zip(other.flat()).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Trajectory<T> {
        Trajectory {
            waypoints: self
                .waypoints
                .iter()
                .map(|p| [T::lit(p[0].as_f64()), T::lit(p[1].as_f64())])
                .collect(),
        }
    }

    /// Checks the horizon, finiteness and coordinate-range invariants.
    pub fn validate(&self) -> Result<()> {
        if self.horizon() < 2 {
            return Err(Error::Shape(format!("trajectory needs at least 2 waypoints, got {}", self.horizon())));
        }
        let limit = S::lit(MAX_COORD);
        for (t, p) in self.waypoints.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::NumericInput(format!("waypoint {t} is not finite")));
            }
            if p[0].abs() > limit || p[1].abs() > limit {
                return Err(Error::ParameterBounds(format!("waypoint {t} exceeds {MAX_COORD} m")));
            }
        }
        Ok(())
    }
}

/// Ensures every trajectory has `horizon` waypoints.
pub fn check_horizon<S: Scalar>(trajs: &[Trajectory<S>], horizon: usize) -> Result<()> {
    for (i, t) in trajs.iter().enumerate() {
        if t.horizon() != horizon {
            return Err(Error::Shape(format!(
                "trajectory {i} has {} waypoints, expected {horizon}",
                t.horizon()
            )));
        }
    }
    Ok(())
}
