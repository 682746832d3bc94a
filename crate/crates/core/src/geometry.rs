//! Small geometric primitives shared by the grid, corridor and solver modules.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Tolerance used by inclusive containment tests (metres).
pub const CONTAINS_TOL: f64 = 1e-9;

/// Closed halfspace `{x : normal . x <= offset}` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Halfspace {
    pub normal: Vec3,
    pub offset: f64,
}

impl Halfspace {
    /// Builds a halfspace from an arbitrary (non-zero) normal, normalizing it.
    pub fn new(normal: Vec3, offset: f64) -> Self {
        let n = normal.norm();
        debug_assert!(n > 0.0, "halfspace normal must be non-zero");
        Self {
            normal: normal / n,
            offset: offset / n,
        }
    }

    /// Signed distance of `p` past the boundary; positive means outside.
    pub fn violation(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn contains(&self, p: &Vec3, tol: f64) -> bool {
        self.violation(p) <= tol
    }
}

/// Axis-aligned box given by its min and max corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self {
            min: [min.x, min.y, min.z],
            max: [max.x, max.y, max.z],
        }
    }

    pub fn from_center_size(center: Vec3, size: Vec3) -> Self {
        Self::new(center - size / 2.0, center + size / 2.0)
    }

    pub fn min_v(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn max_v(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn center(&self) -> Vec3 {
        (self.min_v() + self.max_v()) / 2.0
    }

    /// Inclusive point test.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Strict point test (boundary excluded).
    pub fn contains_strict(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    /// True when the boxes share a region of positive volume.
    pub fn overlaps_open(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    /// True when the closed boxes intersect (touching counts).
    pub fn intersects(&self, other: &Aabb, tol: f64) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] + tol && other.min[i] <= self.max[i] + tol)
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        for i in 0..3 {
            out.min[i] = out.min[i].min(other.min[i]);
            out.max[i] = out.max[i].max(other.max[i]);
        }
        out
    }

    /// The six faces as outward halfspaces, ordered +x, -x, +y, -y, +z, -z.
    pub fn halfspaces(&self) -> Vec<Halfspace> {
        let mut out = Vec::with_capacity(6);
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = 1.0;
            out.push(Halfspace {
                normal: e,
                offset: self.max[axis],
            });
            out.push(Halfspace {
                normal: -e,
                offset: -self.min[axis],
            });
        }
        out
    }
}
