//! Convex free-space cells and the rolling corridor built from them.
//!
//! Cells are grown as axis-aligned boxes from a seed voxel but are exposed as
//! generic halfspace polyhedra, which is all the solver relies on.

use crate::geometry::{Aabb, Halfspace, Vec3, CONTAINS_TOL};
use crate::global_path::Path;
use crate::voxel_grid::{VoxelGrid, VoxelIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub halfspaces: Vec<Halfspace>,
    pub seed: Vec3,
    /// Set when the cell is an axis-aligned box; enables cheap overlap tests.
    pub aabb: Option<Aabb>,
}

impl Polyhedron {
    pub fn from_box(aabb: Aabb, seed: Vec3) -> Self {
        Self {
            halfspaces: aabb.halfspaces(),
            seed,
            aabb: Some(aabb),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.contains_tol(p, CONTAINS_TOL)
    }

    pub fn contains_tol(&self, p: &Vec3, tol: f64) -> bool {
        self.halfspaces.iter().all(|h| h.contains(p, tol))
    }

    /// Largest halfspace violation of `p` (non-positive when inside).
    pub fn max_violation(&self, p: &Vec3) -> f64 {
        self.halfspaces
            .iter()
            .map(|h| h.violation(p))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether two cells can share a point. Exact for boxes; conservative
    /// (always true) otherwise.
    pub fn may_intersect(&self, other: &Polyhedron) -> bool {
        match (&self.aabb, &other.aabb) {
            (Some(a), Some(b)) => a.intersects(b, CONTAINS_TOL),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SafeCorridor {
    pub polyhedra: Vec<Polyhedron>,
    /// For each consecutive pair, a point inside both cells when one exists.
    pub overlap_witnesses: Vec<Option<Vec3>>,
}

impl SafeCorridor {
    pub fn new(polyhedra: Vec<Polyhedron>) -> Self {
        let overlap_witnesses = polyhedra.windows(2).map(|w| overlap_witness(&w[0], &w[1])).collect();
        Self {
            polyhedra,
            overlap_witnesses,
        }
    }

    pub fn len(&self) -> usize {
        self.polyhedra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polyhedra.is_empty()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.polyhedra.iter().any(|poly| poly.contains(p))
    }
}

fn overlap_witness(a: &Polyhedron, b: &Polyhedron) -> Option<Vec3> {
    let (ba, bb) = (a.aabb?, b.aabb?);
    let mut lo = Vec3::zeros();
    let mut hi = Vec3::zeros();
    for i in 0..3 {
        lo[i] = ba.min[i].max(bb.min[i]);
        hi[i] = ba.max[i].min(bb.max[i]);
        if lo[i] > hi[i] + CONTAINS_TOL {
            return None;
        }
    }
    Some((lo + hi) / 2.0)
}

/// Grows a box from `seed_voxel`, one voxel layer per face in the order
/// +x, -x, +y, -y, +z, -z, while every newly covered voxel is Free and in
/// the grid.
pub fn gen_polyhedron(grid: &VoxelGrid, seed_voxel: VoxelIndex) -> Polyhedron {
    debug_assert!(grid.is_free(seed_voxel), "seed voxel must be free");
    let counts = grid.counts();
    let mut lo = seed_voxel;
    let mut hi = seed_voxel;
    let mut blocked = [false; 6];
    while blocked.iter().any(|b| !b) {
        for face in 0..6 {
            if blocked[face] {
                continue;
            }
            let axis = face / 2;
            let positive = face % 2 == 0;
            let layer = if positive {
                if hi[axis] + 1 >= counts[axis] {
                    blocked[face] = true;
                    continue;
                }
                hi[axis] + 1
            } else {
                if lo[axis] == 0 {
                    blocked[face] = true;
                    continue;
                }
                lo[axis] - 1
            };
            if layer_free(grid, lo, hi, axis, layer) {
                if positive {
                    hi[axis] = layer;
                } else {
                    lo[axis] = layer;
                }
            } else {
                blocked[face] = true;
            }
        }
    }
    let min = grid.voxel_box(lo).min_v();
    let max = grid.voxel_box(hi).max_v();
    Polyhedron::from_box(Aabb::new(min, max), grid.center_of(seed_voxel))
}

fn layer_free(grid: &VoxelGrid, lo: VoxelIndex, hi: VoxelIndex, axis: usize, layer: usize) -> bool {
    let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
    for u in lo[a1]..=hi[a1] {
        for v in lo[a2]..=hi[a2] {
            let mut idx = [0usize; 3];
            idx[axis] = layer;
            idx[a1] = u;
            idx[a2] = v;
            if !grid.is_free(idx) {
                return false;
            }
        }
    }
    true
}

/// Rolls the corridor forward.
///
/// Cells of `prev` that contain at least one point of `trajectory` are kept
/// in order. New cells are then seeded at the first voxel-size sample of
/// `global_path` lying outside every current cell (samples in Occupied or
/// out-of-grid voxels are skipped) until the corridor holds `p_hor` cells or
/// the path is used up.
pub fn update_corridor(
    prev: &SafeCorridor,
    trajectory: &[Vec3],
    global_path: &Path,
    grid: &VoxelGrid,
    p_hor: usize,
) -> SafeCorridor {
    assert!(p_hor >= 1);
    let mut polys: Vec<Polyhedron> = prev
        .polyhedra
        .iter()
        .filter(|poly| trajectory.iter().any(|p| poly.contains(p)))
        .cloned()
        .collect();
    let samples = global_path.sample(grid.voxel_size());
    let mut cursor = 0;
    while polys.len() < p_hor {
        let mut seed = None;
        while cursor < samples.len() {
            let s = samples[cursor];
            cursor += 1;
            if polys.iter().any(|poly| poly.contains(&s)) {
                continue;
            }
            match grid.index_of(&s) {
                Some(idx) if grid.is_free(idx) => {
                    seed = Some(idx);
                    break;
                }
                _ => continue,
            }
        }
        match seed {
            Some(idx) => polys.push(gen_polyhedron(grid, idx)),
            None => break,
        }
    }
    SafeCorridor::new(polys)
}
