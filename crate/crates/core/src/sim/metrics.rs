use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::voxel_grid::WorldModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    AgentPair { a: usize, b: usize, distance: f64 },
    Obstacle { agent: usize, obstacle: usize },
}

/// Every pair closer than `2 * d_rad` and every center strictly inside an
/// obstacle box.
pub fn check_collisions(positions: &[Vec3], world: &WorldModel, d_rad: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for a in 0..positions.len() {
        for b in a + 1..positions.len() {
            let distance = (positions[a] - positions[b]).norm();
            if distance < 2.0 * d_rad {
                out.push(Violation::AgentPair { a, b, distance });
            }
        }
        for (obstacle, o) in world.obstacles.iter().enumerate() {
            if o.contains_strict(&positions[a]) {
                out.push(Violation::Obstacle { agent: a, obstacle });
            }
        }
    }
    out
}

/// `(integral of |a|^2, integral of |j|^2)` over a piecewise-constant jerk
/// sequence starting from acceleration `a0`.
pub fn accumulate_costs(a0: Vec3, jerks: &[Vec3], h: f64) -> (f64, f64) {
    let mut a = a0;
    let mut acc = 0.0;
    let mut jerk = 0.0;
    for j in jerks {
        acc += a.norm_squared() * h + a.dot(j) * h * h + j.norm_squared() * h * h * h / 3.0;
        jerk += j.norm_squared() * h;
        a += j * h;
    }
    (acc, jerk)
}

/// Number of times the speed drops below `v_stop` and stays there for at
/// least `min_dwell` samples, once the agent has started moving.
///
/// The trace should end at goal arrival so the final halt is not counted.
pub fn count_stops(speeds: &[f64], v_stop: f64, min_dwell: usize) -> usize {
    let Some(first) = speeds.iter().position(|&v| v >= v_stop) else {
        return 0;
    };
    let mut stops = 0;
    let mut run = 0;
    for &v in &speeds[first..] {
        if v < v_stop {
            run += 1;
            if run == min_dwell {
                stops += 1;
            }
        } else {
            run = 0;
        }
    }
    stops
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub arrived: bool,
    /// Time of the last entry into the goal region (s).
    pub flight_time: Option<f64>,
    pub distance: f64,
    pub mean_velocity: Option<f64>,
    pub accel_cost: f64,
    pub jerk_cost: f64,
    pub stops: usize,
    pub plans: usize,
    pub recommits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub collision_occurred: bool,
    pub violations: usize,
    pub min_separation: f64,
    pub num_stops: usize,
    pub timed_out: bool,
    pub end_time: f64,
    pub mean_flight_time: Option<f64>,
    pub max_flight_time: Option<f64>,
    pub mean_distance: f64,
    pub mean_velocity: Option<f64>,
    pub accel_cost: f64,
    pub jerk_cost: f64,
    pub compute_time_mean: f64,
    pub compute_time_max: f64,
    /// Per-plan computation times (s).
    pub compute_times: Vec<f64>,
    pub agents: Vec<AgentMetrics>,
    /// First recorded violations, for diagnosis.
    pub first_violations: Vec<(f64, Violation)>,
}

pub(crate) fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl MetricsReport {
    /// Key-value text form.
    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("metrics serialize")
    }

    pub fn from_document(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }
}
