use crate::geometry::Vec3;
use crate::global_path::Path;

use super::DiscreteTrajectory;

/// Reference positions for states `1..=N` of the next trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalReference {
    pub points: Vec<Vec3>,
}

impl LocalReference {
    pub fn last(&self) -> Vec3 {
        *self.points.last().expect("reference has points")
    }

    /// The same reference `periods` steps later: the oldest points are
    /// dropped and the end is held.
    pub fn advanced(&self, periods: usize) -> Self {
        let n = self.points.len();
        let end = self.last();
        let mut points: Vec<Vec3> = self.points[periods.min(n)..].to_vec();
        points.resize(n, end);
        Self { points }
    }
}

/// Samples `n` points at arc lengths `v_samp * h, 2 * v_samp * h, ...` from
/// the start of `path`, holding the path end once it is reached.
///
/// When the last planned trajectory ended more than `d_thresh` away from
/// the end of the previous reference, the previous reference is returned
/// unchanged.
pub fn sample_reference(
    path: &Path,
    v_samp: f64,
    n: usize,
    h: f64,
    prev_ref: Option<&LocalReference>,
    last_mpc: Option<&DiscreteTrajectory>,
    d_thresh: f64,
) -> LocalReference {
    debug_assert!(v_samp > 0.0 && h > 0.0 && d_thresh > 0.0);
    if let (Some(prev), Some(last)) = (prev_ref, last_mpc) {
        if (last.final_position() - prev.last()).norm() > d_thresh {
            return prev.clone();
        }
    }
    let spacing = v_samp * h;
    LocalReference {
        points: (1..=n).map(|i| path.point_at(i as f64 * spacing)).collect(),
    }
}
