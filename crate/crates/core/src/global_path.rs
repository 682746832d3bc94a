//! Global path search on the agent grid.
//!
//! Paths are 26-connected with Euclidean step costs. Jump point search is the
//! default; plain A* is kept as a selectable mode and is what JPS is checked
//! against.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::geometry::Vec3;
use crate::voxel_grid::{VoxelGrid, VoxelIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("goal voxel is unreachable from the start voxel")]
    NoPath,
    #[error("start point {0:?} lies outside the grid")]
    StartOutsideGrid([f64; 3]),
    #[error("goal point {0:?} lies outside the grid")]
    GoalOutsideGrid([f64; 3]),
    #[error("path does not start at the previous reference end (gap {0} m)")]
    JunctionMismatch(f64),
}

/// Ordered waypoints in metres.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub waypoints: Vec<Vec3>,
}

impl Path {
    pub fn new(waypoints: Vec<Vec3>) -> Self {
        let mut out: Vec<Vec3> = Vec::with_capacity(waypoints.len());
        for w in waypoints {
            if out.last().is_none_or(|l| *l != w) {
                out.push(w);
            }
        }
        Self { waypoints: out }
    }

    pub fn start(&self) -> Vec3 {
        self.waypoints[0]
    }

    pub fn end(&self) -> Vec3 {
        *self.waypoints.last().expect("path has at least one waypoint")
    }

    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Vec3 {
        let mut remaining = s.max(0.0);
        for w in self.waypoints.windows(2) {
            let seg = (w[1] - w[0]).norm();
            if remaining <= seg {
                if seg == 0.0 {
                    return w[1];
                }
                return w[0] + (w[1] - w[0]) * (remaining / seg);
            }
            remaining -= seg;
        }
        self.end()
    }

    /// Samples at `0, step, 2*step, ...` up to and including the end point.
    pub fn sample(&self, step: f64) -> Vec<Vec3> {
        let len = self.length();
        let n = (len / step).floor() as usize;
        let mut out: Vec<Vec3> = (0..=n).map(|i| self.point_at(i as f64 * step)).collect();
        if out.last().is_none_or(|l| (*l - self.end()).norm() > 1e-12) {
            out.push(self.end());
        }
        out
    }

    /// The part of the path from arc length `s` onwards.
    pub fn trimmed_front(&self, s: f64) -> Path {
        if s <= 0.0 {
            return self.clone();
        }
        let mut acc = 0.0;
        for (i, w) in self.waypoints.windows(2).enumerate() {
            let seg = (w[1] - w[0]).norm();
            if acc + seg > s {
                let mut pts = vec![self.point_at(s)];
                pts.extend_from_slice(&self.waypoints[i + 1..]);
                return Path::new(pts);
            }
            acc += seg;
        }
        Path::new(vec![self.end()])
    }
}

/// Move counts of a grid path: straight, planar-diagonal and cubic-diagonal.
///
/// Two optimal paths have the same counts, so comparing counts is an exact
/// cost comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MoveCounts {
    pub straight: usize,
    pub diag2: usize,
    pub diag3: usize,
}

impl MoveCounts {
    pub fn cost(&self) -> f64 {
        self.straight as f64 + self.diag2 as f64 * std::f64::consts::SQRT_2 + self.diag3 as f64 * 3f64.sqrt()
    }

    pub fn of(voxels: &[VoxelIndex]) -> Self {
        let mut out = MoveCounts::default();
        for w in voxels.windows(2) {
            let k: usize = (0..3).filter(|&i| w[0][i] != w[1][i]).count();
            match k {
                1 => out.straight += 1,
                2 => out.diag2 += 1,
                3 => out.diag3 += 1,
                _ => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchAlgorithm {
    #[default]
    Jps,
    AStar,
}

/// Voxel sequence found by a grid search, plus its cost in voxel units.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub voxels: Vec<VoxelIndex>,
    pub moves: MoveCounts,
}

const DIRECTIONS: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut k = 0;
    let mut dz = -1;
    while dz <= 1 {
        let mut dy = -1;
        while dy <= 1 {
            let mut dx = -1;
            while dx <= 1 {
                if !(dx == 0 && dy == 0 && dz == 0) {
                    out[k] = [dx, dy, dz];
                    k += 1;
                }
                dx += 1;
            }
            dy += 1;
        }
        dz += 1;
    }
    out
};

fn step_len(d: [i64; 3]) -> f64 {
    match d.iter().filter(|c| **c != 0).count() {
        1 => 1.0,
        2 => std::f64::consts::SQRT_2,
        _ => 3f64.sqrt(),
    }
}

fn octile(a: [i64; 3], b: [i64; 3]) -> f64 {
    let mut d = [(a[0] - b[0]).abs(), (a[1] - b[1]).abs(), (a[2] - b[2]).abs()];
    d.sort_unstable();
    let (lo, mid, hi) = (d[0] as f64, d[1] as f64, d[2] as f64);
    3f64.sqrt() * lo + std::f64::consts::SQRT_2 * (mid - lo) + (hi - mid)
}

fn add(a: [i64; 3], d: [i64; 3]) -> [i64; 3] {
    [a[0] + d[0], a[1] + d[1], a[2] + d[2]]
}

fn to_u(a: [i64; 3]) -> VoxelIndex {
    [a[0] as usize, a[1] as usize, a[2] as usize]
}

fn to_i(a: VoxelIndex) -> [i64; 3] {
    [a[0] as i64, a[1] as i64, a[2] as i64]
}

#[derive(Debug, Clone, Copy)]
struct OpenEntry {
    f: f64,
    g: f64,
    lin: usize,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    // min-heap on f, ties prefer larger g, then lower index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.lin.cmp(&self.lin))
    }
}

/// Plain 26-connected A*.
pub fn astar(grid: &VoxelGrid, start: VoxelIndex, goal: VoxelIndex) -> Option<GridSearch> {
    if !grid.is_free(start) || !grid.is_free(goal) {
        return None;
    }
    let n = grid.len();
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let goal_i = to_i(goal);
    let s = grid.linear(start);
    let goal_lin = grid.linear(goal);
    g[s] = 0.0;
    let mut open = BinaryHeap::new();
    open.push(OpenEntry {
        f: octile(to_i(start), goal_i),
        g: 0.0,
        lin: s,
    });
    while let Some(OpenEntry { lin, g: gc, .. }) = open.pop() {
        if closed[lin] || gc > g[lin] {
            continue;
        }
        closed[lin] = true;
        if lin == goal_lin {
            return Some(reconstruct(grid, &parent, goal_lin, false));
        }
        let x = to_i(grid.unlinear(lin));
        for d in DIRECTIONS {
            let y = add(x, d);
            if !grid.is_free_signed(y) {
                continue;
            }
            let yl = grid.linear(to_u(y));
            if closed[yl] {
                continue;
            }
            let ng = gc + step_len(d);
            if ng < g[yl] {
                g[yl] = ng;
                parent[yl] = lin;
                open.push(OpenEntry {
                    f: ng + octile(y, goal_i),
                    g: ng,
                    lin: yl,
                });
            }
        }
    }
    None
}

fn reconstruct(grid: &VoxelGrid, parent: &[usize], goal: usize, expand_jumps: bool) -> GridSearch {
    let mut chain = vec![goal];
    let mut cur = goal;
    while parent[cur] != usize::MAX {
        cur = parent[cur];
        chain.push(cur);
    }
    chain.reverse();
    let mut voxels: Vec<VoxelIndex> = Vec::new();
    for (k, lin) in chain.iter().enumerate() {
        let v = grid.unlinear(*lin);
        if expand_jumps && k > 0 {
            let from = to_i(*voxels.last().unwrap());
            let to = to_i(v);
            let d = [
                (to[0] - from[0]).signum(),
                (to[1] - from[1]).signum(),
                (to[2] - from[2]).signum(),
            ];
            let mut p = from;
            while p != to {
                p = add(p, d);
                voxels.push(to_u(p));
            }
        } else {
            voxels.push(v);
        }
    }
    let moves = MoveCounts::of(&voxels);
    GridSearch { voxels, moves }
}

/// Jump point search specialised for 26-connected grids.
struct Jps<'a> {
    grid: &'a VoxelGrid,
    goal: [i64; 3],
}

impl Jps<'_> {
    /// Any blocked or out-of-grid cell around `x` may force a neighbour;
    /// such nodes are treated as jump points and expanded in all directions.
    fn near_obstacle(&self, x: [i64; 3]) -> bool {
        DIRECTIONS.iter().any(|d| !self.grid.is_free_signed(add(x, *d)))
    }

    fn jump(&self, mut x: [i64; 3], d: [i64; 3]) -> Option<[i64; 3]> {
        let dims = d.iter().filter(|c| **c != 0).count();
        loop {
            let n = add(x, d);
            if !self.grid.is_free_signed(n) {
                return None;
            }
            if n == self.goal || self.near_obstacle(n) {
                return Some(n);
            }
            if dims > 1 {
                for sub in sub_directions(d) {
                    if self.jump(n, sub).is_some() {
                        return Some(n);
                    }
                }
            }
            x = n;
        }
    }
}

/// Proper non-zero sub-vectors of a diagonal direction.
fn sub_directions(d: [i64; 3]) -> impl Iterator<Item = [i64; 3]> {
    (1u8..7).filter_map(move |mask| {
        let mut s = [0i64; 3];
        for i in 0..3 {
            if mask & (1 << i) != 0 {
                if d[i] == 0 {
                    return None;
                }
                s[i] = d[i];
            }
        }
        (s != d).then_some(s)
    })
}

/// Directions kept when arriving at a node via `d` in obstacle-free
/// surroundings: `d` and all of its sub-vectors.
fn natural_directions(d: [i64; 3]) -> impl Iterator<Item = [i64; 3]> {
    std::iter::once(d).chain(sub_directions(d))
}

pub fn jps(grid: &VoxelGrid, start: VoxelIndex, goal: VoxelIndex) -> Option<GridSearch> {
    if !grid.is_free(start) || !grid.is_free(goal) {
        return None;
    }
    let n = grid.len();
    let goal_i = to_i(goal);
    let searcher = Jps { grid, goal: goal_i };
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut dir_in = vec![[0i64; 3]; n];
    let mut closed = vec![false; n];
    let s = grid.linear(start);
    let goal_lin = grid.linear(goal);
    g[s] = 0.0;
    let mut open = BinaryHeap::new();
    open.push(OpenEntry {
        f: octile(to_i(start), goal_i),
        g: 0.0,
        lin: s,
    });
    let mut candidates: Vec<[i64; 3]> = Vec::with_capacity(26);
    while let Some(OpenEntry { lin, g: gc, .. }) = open.pop() {
        if closed[lin] || gc > g[lin] {
            continue;
        }
        closed[lin] = true;
        if lin == goal_lin {
            return Some(reconstruct(grid, &parent, goal_lin, true));
        }
        let x = to_i(grid.unlinear(lin));
        candidates.clear();
        if lin == s || searcher.near_obstacle(x) {
            candidates.extend_from_slice(&DIRECTIONS);
        } else {
            candidates.extend(natural_directions(dir_in[lin]));
        }
        for &d in &candidates {
            let Some(y) = searcher.jump(x, d) else {
                continue;
            };
            let yl = grid.linear(to_u(y));
            if closed[yl] {
                continue;
            }
            let steps = (0..3).map(|i| (y[i] - x[i]).abs()).max().unwrap() as f64;
            let ng = gc + steps * step_len(d);
            if ng < g[yl] {
                g[yl] = ng;
                parent[yl] = lin;
                dir_in[yl] = d;
                open.push(OpenEntry {
                    f: ng + octile(y, goal_i),
                    g: ng,
                    lin: yl,
                });
            }
        }
    }
    None
}

pub fn search(grid: &VoxelGrid, start: VoxelIndex, goal: VoxelIndex, algorithm: SearchAlgorithm) -> Option<GridSearch> {
    match algorithm {
        SearchAlgorithm::Jps => jps(grid, start, goal),
        SearchAlgorithm::AStar => astar(grid, start, goal),
    }
}

/// Shortest 26-connected path from `start` to `goal` as metric waypoints.
///
/// Interior waypoints are voxel centres; the endpoints are the exact query
/// points. When both points share a voxel the path is just `[goal]`.
pub fn find_path(grid: &VoxelGrid, start: Vec3, goal: Vec3) -> Result<Path, PathError> {
    find_path_with(grid, start, goal, SearchAlgorithm::Jps)
}

pub fn find_path_with(
    grid: &VoxelGrid,
    start: Vec3,
    goal: Vec3,
    algorithm: SearchAlgorithm,
) -> Result<Path, PathError> {
    let s = grid.index_of(&start).ok_or(PathError::StartOutsideGrid(start.into()))?;
    let g = grid.index_of(&goal).ok_or(PathError::GoalOutsideGrid(goal.into()))?;
    if s == g {
        return Ok(Path::new(vec![goal]));
    }
    let found = search(grid, s, g, algorithm).ok_or(PathError::NoPath)?;
    let mut pts: Vec<Vec3> = found.voxels.iter().map(|v| grid.center_of(*v)).collect();
    pts[0] = start;
    *pts.last_mut().unwrap() = goal;
    Ok(Path::new(pts))
}

/// Distance from `p` to the nearest Occupied voxel centre within `radius`,
/// together with that centre.
pub fn nearest_occupied(grid: &VoxelGrid, p: &Vec3, radius: f64) -> Option<(f64, Vec3)> {
    let base = grid.signed_index_of(p);
    let r = (radius / grid.voxel_size()).ceil() as i64 + 1;
    let mut best: Option<(f64, Vec3)> = None;
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let idx = [base[0] + dx, base[1] + dy, base[2] + dz];
                if !grid.in_bounds(idx) || grid.is_free_signed(idx) {
                    continue;
                }
                let c = grid.center_of(to_u(idx));
                let d = (c - p).norm();
                if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, c));
                }
            }
        }
    }
    best
}

/// Number of repulsion sweeps applied by [`push_away`].
pub const PUSH_SWEEPS: usize = 5;

/// Pushes interior waypoints away from nearby obstacles.
///
/// The repulsive potential `(1/d - 1/R)^2` is active for `d < R`; its
/// gradient points away from the nearest Occupied voxel centre. Each sweep
/// moves a waypoint `step_gain * voxel_size` along that direction, and a move
/// is only kept if the new point is in a Free voxel with strictly larger
/// clearance. Endpoints never move.
pub fn push_away(grid: &VoxelGrid, path: &Path, influence_radius: f64, step_gain: f64) -> Path {
    let mut pts = path.waypoints.clone();
    if pts.len() <= 2 {
        return path.clone();
    }
    let step = step_gain * grid.voxel_size();
    for _ in 0..PUSH_SWEEPS {
        let mut moved = false;
        for i in 1..pts.len() - 1 {
            let p = pts[i];
            let Some((d, nearest)) = nearest_occupied(grid, &p, influence_radius) else {
                continue;
            };
            if d <= 0.0 || d >= influence_radius {
                continue;
            }
            let dir = (p - nearest) / d;
            let cand = p + dir * step;
            let Some(idx) = grid.index_of(&cand) else {
                continue;
            };
            if !grid.is_free(idx) {
                continue;
            }
            let new_d = nearest_occupied(grid, &cand, influence_radius).map_or(f64::INFINITY, |(d, _)| d);
            if new_d > d {
                pts[i] = cand;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    Path::new(pts)
}

/// Prepends the previous local reference to `new_path`.
///
/// `new_path` must start at the last reference point; the junction appears
/// once in the result.
pub fn stitch(prev_ref: Option<&[Vec3]>, new_path: &Path) -> Result<Path, PathError> {
    let Some(prev) = prev_ref.filter(|p| !p.is_empty()) else {
        return Ok(new_path.clone());
    };
    let junction = *prev.last().unwrap();
    let gap = (new_path.start() - junction).norm();
    if gap > 1e-9 {
        return Err(PathError::JunctionMismatch(gap));
    }
    let mut pts = prev.to_vec();
    pts.extend_from_slice(&new_path.waypoints[1..]);
    Ok(Path { waypoints: pts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel_grid::Occupancy;

    fn free_grid(counts: [usize; 3]) -> VoxelGrid {
        VoxelGrid::new_free(Vec3::zeros(), counts, 1.0)
    }

    #[test]
    fn same_voxel_is_single_waypoint() {
        let g = free_grid([5, 5, 5]);
        let p = find_path(&g, Vec3::new(2.2, 2.3, 2.4), Vec3::new(2.6, 2.7, 2.8)).unwrap();
        assert_eq!(p.waypoints.len(), 1);
    }

    #[test]
    fn diagonal_run_in_empty_grid() {
        let g = VoxelGrid::new_free(Vec3::zeros(), [10, 10, 1], 0.3);
        for algo in [SearchAlgorithm::AStar, SearchAlgorithm::Jps] {
            let s = search(&g, [0, 0, 0], [9, 9, 0], algo).unwrap();
            assert!((s.moves.cost() * 0.3 - 9.0 * std::f64::consts::SQRT_2 * 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn wall_with_gap() {
        let mut g = free_grid([9, 9, 1]);
        for y in 0..9 {
            if y != 6 {
                g.set([4, y, 0], Occupancy::Occupied);
            }
        }
        let a = astar(&g, [0, 1, 0], [8, 1, 0]).unwrap();
        let j = jps(&g, [0, 1, 0], [8, 1, 0]).unwrap();
        assert_eq!(a.moves, j.moves);
        assert!(j.voxels.contains(&[4, 6, 0]));
        assert!(a.voxels.contains(&[4, 6, 0]));
        for v in &j.voxels {
            assert!(g.is_free(*v));
        }
        // consecutive voxels are 26-adjacent
        for w in j.voxels.windows(2) {
            assert!((0..3).all(|i| w[0][i].abs_diff(w[1][i]) <= 1));
        }
    }

    #[test]
    fn unreachable_goal() {
        let mut g = free_grid([5, 5, 1]);
        for y in 0..5 {
            g.set([2, y, 0], Occupancy::Occupied);
        }
        assert_eq!(
            find_path(&g, Vec3::new(0.5, 0.5, 0.5), Vec3::new(4.5, 0.5, 0.5)),
            Err(PathError::NoPath)
        );
    }

    #[test]
    fn endpoints_substituted() {
        let g = free_grid([6, 6, 3]);
        let s = Vec3::new(0.3, 0.2, 1.1);
        let e = Vec3::new(5.7, 4.1, 1.9);
        let p = find_path(&g, s, e).unwrap();
        assert_eq!(p.start(), s);
        assert_eq!(p.end(), e);
    }

    #[test]
    fn push_away_far_from_obstacles_is_noop() {
        let mut g = free_grid([20, 20, 1]);
        g.set([19, 19, 0], Occupancy::Occupied);
        let path = Path::new((0..8).map(|i| Vec3::new(i as f64 + 0.5, 0.5, 0.5)).collect());
        assert_eq!(push_away(&g, &path, 3.0, 0.3), path);
    }

    #[test]
    fn push_away_increases_clearance_near_wall() {
        let mut g = free_grid([20, 9, 1]);
        for x in 0..20 {
            g.set([x, 3, 0], Occupancy::Occupied);
        }
        let path = Path::new((1..19).map(|i| Vec3::new(i as f64 + 0.5, 4.5, 0.5)).collect());
        let clearance = |p: &Path| {
            // brute-force distance transform oracle
            p.waypoints
                .iter()
                .map(|w| {
                    g.iter_indices()
                        .filter(|i| !g.is_free(*i))
                        .map(|i| (g.center_of(i) - w).norm())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::INFINITY, f64::min)
        };
        let before = clearance(&path);
        let out = push_away(&g, &path, 3.0, 0.3);
        assert_eq!(out.start(), path.start());
        assert_eq!(out.end(), path.end());
        // endpoints are fixed, so compare interior clearance
        let interior = |p: &Path| Path::new(p.waypoints[1..p.waypoints.len() - 1].to_vec());
        assert!(clearance(&interior(&out)) > clearance(&interior(&path)));
        assert!(clearance(&out) >= before);
        for w in &out.waypoints {
            assert!(g.is_free(g.index_of(w).unwrap()));
        }
    }

    #[test]
    fn stitch_cases() {
        let path = Path::new(vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
        ]);
        assert_eq!(stitch(None, &path).unwrap(), path);
        let prev: Vec<Vec3> = (0..=9).map(|i| Vec3::new(i as f64 / 9.0, 0.0, 0.0)).collect();
        let out = stitch(Some(&prev), &path).unwrap();
        assert_eq!(out.waypoints.len(), 10 + 3 - 1);
        let bad: Vec<Vec3> = vec![Vec3::zeros(), Vec3::new(0.5, 0.0, 0.0)];
        assert!(matches!(stitch(Some(&bad), &path), Err(PathError::JunctionMismatch(_))));
    }

    #[test]
    fn path_sampling() {
        let p = Path::new(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0)]);
        assert!((p.length() - 2.0).abs() < 1e-12);
        let s = p.sample(0.3);
        assert_eq!(s.len(), 8);
        assert!((s[4] - Vec3::new(1.0, 0.2, 0.0)).norm() < 1e-12);
        let t = p.trimmed_front(1.5);
        assert!((t.start() - Vec3::new(1.0, 0.5, 0.0)).norm() < 1e-12);
        assert!((t.length() - 0.5).abs() < 1e-12);
    }
}
