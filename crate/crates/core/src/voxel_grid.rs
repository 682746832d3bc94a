//! Agent-centred occupancy grid.
//!
//! Every agent keeps a fixed-size grid that moves with it. Grid origins are
//! snapped to the global `voxel_size` lattice so that grids rasterized around
//! different agents agree voxel-for-voxel where they overlap.

use crate::geometry::{Aabb, Vec3};
use serde::{Deserialize, Serialize};

/// Integer voxel coordinates `(ix, iy, iz)`.
pub type VoxelIndex = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Occupancy {
    Free,
    Occupied,
}

/// Ground-truth environment that agent grids are rasterized from.
///
/// Space outside `bounds` is treated as solid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub obstacles: Vec<Aabb>,
    pub bounds: Aabb,
}

impl WorldModel {
    pub fn empty(bounds: Aabb) -> Self {
        Self {
            obstacles: Vec::new(),
            bounds,
        }
    }

    /// True if `p` lies strictly inside one of the obstacle boxes.
    pub fn point_in_obstacle(&self, p: &Vec3) -> bool {
        self.obstacles.iter().any(|b| b.contains_strict(p))
    }

    pub fn obstacles_within_bounds(&self) -> bool {
        self.obstacles.iter().all(|o| self.bounds.contains_box(o))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    origin: Vec3,
    counts: [usize; 3],
    voxel_size: f64,
    cells: Vec<Occupancy>,
}

impl VoxelGrid {
    /// An all-free grid with the given min corner.
    pub fn new_free(origin: Vec3, counts: [usize; 3], voxel_size: f64) -> Self {
        assert!(counts.iter().all(|&c| c >= 1), "grid counts must be >= 1");
        assert!(voxel_size > 0.0);
        Self {
            origin,
            counts,
            voxel_size,
            cells: vec![Occupancy::Free; counts[0] * counts[1] * counts[2]],
        }
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn extent(&self) -> Aabb {
        let size = Vec3::new(self.counts[0] as f64, self.counts[1] as f64, self.counts[2] as f64) * self.voxel_size;
        Aabb::new(self.origin, self.origin + size)
    }

    #[inline]
    pub fn linear(&self, idx: VoxelIndex) -> usize {
        (idx[2] * self.counts[1] + idx[1]) * self.counts[0] + idx[0]
    }

    #[inline]
    pub fn unlinear(&self, lin: usize) -> VoxelIndex {
        let x = lin % self.counts[0];
        let rest = lin / self.counts[0];
        [x, rest % self.counts[1], rest / self.counts[1]]
    }

    pub fn in_bounds(&self, idx: [i64; 3]) -> bool {
        (0..3).all(|i| idx[i] >= 0 && (idx[i] as usize) < self.counts[i])
    }

    pub fn get(&self, idx: VoxelIndex) -> Occupancy {
        self.cells[self.linear(idx)]
    }

    pub fn set(&mut self, idx: VoxelIndex, value: Occupancy) {
        let lin = self.linear(idx);
        self.cells[lin] = value;
    }

    pub fn is_free(&self, idx: VoxelIndex) -> bool {
        self.get(idx) == Occupancy::Free
    }

    /// Free test for signed coordinates; out-of-grid cells count as blocked.
    #[inline]
    pub fn is_free_signed(&self, idx: [i64; 3]) -> bool {
        self.in_bounds(idx)
            && self.cells[self.linear([idx[0] as usize, idx[1] as usize, idx[2] as usize])] == Occupancy::Free
    }

    /// Unclamped lattice coordinates of `p` relative to this grid.
    pub fn signed_index_of(&self, p: &Vec3) -> [i64; 3] {
        let mut out = [0i64; 3];
        for i in 0..3 {
            out[i] = ((p[i] - self.origin[i]) / self.voxel_size).floor() as i64;
        }
        out
    }

    pub fn index_of(&self, p: &Vec3) -> Option<VoxelIndex> {
        let s = self.signed_index_of(p);
        self.in_bounds(s).then(|| [s[0] as usize, s[1] as usize, s[2] as usize])
    }

    /// A Free voxel whose closed box contains `p`, preferring the one `p`
    /// maps to. Points on a face, edge or corner touch up to eight voxels.
    pub fn free_index_touching(&self, p: &Vec3, tol: f64) -> Option<VoxelIndex> {
        let base = self.signed_index_of(p);
        let mut options: [Vec<i64>; 3] = Default::default();
        for i in 0..3 {
            let lower = self.origin[i] + base[i] as f64 * self.voxel_size;
            options[i].push(0);
            if p[i] - lower <= tol {
                options[i].push(-1);
            }
            if lower + self.voxel_size - p[i] <= tol {
                options[i].push(1);
            }
        }
        for dx in &options[0] {
            for dy in &options[1] {
                for dz in &options[2] {
                    let idx = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if self.is_free_signed(idx) {
                        return Some([idx[0] as usize, idx[1] as usize, idx[2] as usize]);
                    }
                }
            }
        }
        None
    }

    /// Index of `p`, clamped into the grid.
    pub fn clamped_index_of(&self, p: &Vec3) -> VoxelIndex {
        let s = self.signed_index_of(p);
        let mut out = [0usize; 3];
        for i in 0..3 {
            out[i] = s[i].clamp(0, self.counts[i] as i64 - 1) as usize;
        }
        out
    }

    pub fn center_of(&self, idx: VoxelIndex) -> Vec3 {
        Vec3::new(
            self.origin.x + (idx[0] as f64 + 0.5) * self.voxel_size,
            self.origin.y + (idx[1] as f64 + 0.5) * self.voxel_size,
            self.origin.z + (idx[2] as f64 + 0.5) * self.voxel_size,
        )
    }

    pub fn voxel_box(&self, idx: VoxelIndex) -> Aabb {
        let corner = |k: usize| {
            Vec3::new(
                self.origin.x + (idx[0] + k) as f64 * self.voxel_size,
                self.origin.y + (idx[1] + k) as f64 * self.voxel_size,
                self.origin.z + (idx[2] + k) as f64 * self.voxel_size,
            )
        };
        Aabb::new(corner(0), corner(1))
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        self.index_of(p).is_some()
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|c| **c == Occupancy::Occupied).count()
    }

    pub fn iter_indices(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        (0..self.cells.len()).map(move |lin| self.unlinear(lin))
    }

    pub fn is_border(&self, idx: VoxelIndex) -> bool {
        (0..3).any(|i| idx[i] == 0 || idx[i] + 1 == self.counts[i])
    }
}

/// Number of voxels along each axis for a requested metric extent.
pub fn counts_for_extent(extent: Vec3, voxel_size: f64) -> [usize; 3] {
    let mut counts = [1usize; 3];
    for i in 0..3 {
        counts[i] = ((extent[i] / voxel_size).round() as usize).max(1);
    }
    counts
}

/// Rasterizes `world` into a grid whose centre voxel contains `center`.
///
/// A voxel is Occupied when its box overlaps an obstacle with positive volume
/// or when its centre lies outside the world bounds.
pub fn rasterize(world: &WorldModel, center: Vec3, extent: Vec3, voxel_size: f64) -> VoxelGrid {
    let counts = counts_for_extent(extent, voxel_size);
    let mut origin = Vec3::zeros();
    for i in 0..3 {
        let lattice = (center[i] / voxel_size).floor();
        origin[i] = (lattice - (counts[i] / 2) as f64) * voxel_size;
    }
    let mut grid = VoxelGrid::new_free(origin, counts, voxel_size);

    let bounds = world.bounds;
    for lin in 0..grid.cells.len() {
        let c = grid.center_of(grid.unlinear(lin));
        if !bounds.contains(&c) {
            grid.cells[lin] = Occupancy::Occupied;
        }
    }

    for obstacle in &world.obstacles {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut empty = false;
        for i in 0..3 {
            let a = ((obstacle.min[i] - origin[i]) / voxel_size).floor() as i64 - 1;
            let b = ((obstacle.max[i] - origin[i]) / voxel_size).ceil() as i64 + 1;
            let a = a.max(0);
            let b = b.min(counts[i] as i64 - 1);
            if a > b {
                empty = true;
                break;
            }
            lo[i] = a as usize;
            hi[i] = b as usize;
        }
        if empty {
            continue;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let idx = [x, y, z];
                    if grid.voxel_box(idx).overlaps_open(obstacle) {
                        grid.set(idx, Occupancy::Occupied);
                    }
                }
            }
        }
    }
    grid
}

/// Marks every voxel whose centre is within `radius` (Euclidean, inclusive) of
/// an Occupied voxel centre as Occupied.
pub fn inflate(grid: &VoxelGrid, radius: f64) -> VoxelGrid {
    assert!(radius >= 0.0, "inflation radius must be non-negative");
    let reach = radius / grid.voxel_size;
    let r = reach.floor() as i64;
    if r == 0 {
        return grid.clone();
    }
    let limit = reach * reach + 1e-9;
    let mut offsets = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if (dx * dx + dy * dy + dz * dz) as f64 <= limit {
                    offsets.push([dx, dy, dz]);
                }
            }
        }
    }
    let mut out = grid.clone();
    for lin in 0..grid.cells.len() {
        if grid.cells[lin] != Occupancy::Occupied {
            continue;
        }
        let idx = grid.unlinear(lin);
        for off in &offsets {
            let n = [idx[0] as i64 + off[0], idx[1] as i64 + off[1], idx[2] as i64 + off[2]];
            if grid.in_bounds(n) {
                out.set([n[0] as usize, n[1] as usize, n[2] as usize], Occupancy::Occupied);
            }
        }
    }
    out
}

/// Forces every border voxel Free; interior voxels are untouched.
pub fn clear_borders(grid: &VoxelGrid) -> VoxelGrid {
    let mut out = grid.clone();
    for lin in 0..out.cells.len() {
        if out.is_border(out.unlinear(lin)) {
            out.cells[lin] = Occupancy::Free;
        }
    }
    out
}

/// Goal to plan towards inside the grid.
///
/// Returns `goal` itself when it lies in the grid, otherwise the centre of the
/// border voxel where the segment `agent_pos -> goal` leaves the grid.
pub fn intermediate_goal(grid: &VoxelGrid, agent_pos: Vec3, goal: Vec3) -> Vec3 {
    if grid.contains_point(&goal) {
        return goal;
    }
    let ext = grid.extent();
    let dir = goal - agent_pos;
    // slab exit parameter of the ray from inside the box
    let mut t_exit = f64::INFINITY;
    for i in 0..3 {
        if dir[i] > 0.0 {
            t_exit = t_exit.min((ext.max[i] - agent_pos[i]) / dir[i]);
        } else if dir[i] < 0.0 {
            t_exit = t_exit.min((ext.min[i] - agent_pos[i]) / dir[i]);
        }
    }
    if !t_exit.is_finite() {
        return agent_pos;
    }
    let t = t_exit.clamp(0.0, 1.0);
    let exit = agent_pos + dir * t;
    let mut idx = grid.clamped_index_of(&exit);
    // the exit point sits on a face; make sure the voxel is on that face
    for i in 0..3 {
        let on_max = dir[i] > 0.0 && ((ext.max[i] - agent_pos[i]) / dir[i] - t_exit).abs() < 1e-12;
        let on_min = dir[i] < 0.0 && ((ext.min[i] - agent_pos[i]) / dir[i] - t_exit).abs() < 1e-12;
        if on_max {
            idx[i] = grid.counts[i] - 1;
        } else if on_min {
            idx[i] = 0;
        }
    }
    grid.center_of(idx)
}
