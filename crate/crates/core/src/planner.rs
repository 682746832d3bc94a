//! One agent's planning pipeline: grid, global path, corridor, time-aware
//! corridor, reference and MIQP.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};
use crate::global_path::{find_path_with, push_away, stitch, Path, PathError, SearchAlgorithm};
use crate::mpc::{
    sample_reference, solve_miqp, DiscreteTrajectory, Limits, LocalReference, MiqpOptions, MpcError, SearchMode,
    Weights,
};
use crate::safe_corridor::{update_corridor, SafeCorridor};
use crate::tasc::{build_tasc, PeerPrediction, Perturbation, TascError};
use crate::voxel_grid::{clear_borders, inflate, intermediate_goal, rasterize, Occupancy, VoxelGrid, WorldModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Number of MPC segments.
    pub n: usize,
    /// Discretization step (s).
    pub h: f64,
    pub v_samp: f64,
    pub p_hor: usize,
    pub d_thresh: f64,
    /// Agent radius (m).
    pub d_rad: f64,
    /// Extra clearance added to the radius in the inter-agent constraints,
    /// covering motion between discretization points (m).
    pub clearance_margin: f64,
    /// Constant normal tilt.
    pub c: f64,
    /// Amplitude of the time-varying tilt.
    pub m_amp: f64,
    /// Period of the time-varying tilt, in steps.
    pub m_period: u64,
    pub limits: Limits,
    pub weights: Weights,
    /// Local grid size (m).
    pub grid_extent: [f64; 3],
    pub voxel_size: f64,
    /// Obstacle inflation applied to the local grid (m).
    pub inflation: f64,
    pub push_radius: f64,
    pub push_gain: f64,
    /// New cells are only seeded this far inside the local grid (m).
    pub seed_margin: f64,
    pub search: SearchAlgorithm,
    pub exhaustive_miqp: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            n: 9,
            h: 0.1,
            v_samp: 4.5,
            p_hor: 3,
            d_thresh: 0.4,
            d_rad: 0.125,
            clearance_margin: 0.02,
            c: 0.3,
            m_amp: 0.2,
            m_period: 20,
            limits: Limits::default(),
            weights: Weights {
                q_ref: 1.0,
                r_jerk: 1.5e-3,
            },
            grid_extent: [15.0, 15.0, 3.3],
            voxel_size: 0.3,
            inflation: 0.125,
            push_radius: 0.6,
            push_gain: 0.5,
            seed_margin: 3.0,
            search: SearchAlgorithm::Jps,
            exhaustive_miqp: false,
        }
    }
}

impl PlannerConfig {
    pub fn perturbation(&self) -> Perturbation {
        Perturbation {
            c: self.c,
            m_amp: self.m_amp,
            period: self.m_period,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("time-aware corridor: {0}")]
    Tasc(#[from] TascError),
    #[error("solver: {0}")]
    Mpc(#[from] MpcError),
    #[error("path: {0}")]
    Path(#[from] PathError),
}

/// Intermediate products of one planning iteration, kept for inspection.
#[derive(Debug, Clone)]
pub struct PlanDetails {
    pub global_path: Path,
    pub reference: LocalReference,
    pub corridor: SafeCorridor,
    pub assignment: Vec<usize>,
    pub cost: f64,
    pub qp_solves: usize,
}

/// Persistent planner state of one agent.
const STALL_DISTANCE: f64 = 0.01;
const FACE_TOLERANCE: f64 = 1e-6;
const RECOVERY_SPEED: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct AgentPlanner {
    pub config: PlannerConfig,
    pub goal: Vec3,
    corridor: SafeCorridor,
    prev_ref: Option<LocalReference>,
    last_plan: Option<i64>,
    /// Periods the current reference has been held by the gate.
    held: usize,
    /// Seeds of the cells chosen per segment last time.
    prev_assignment: Vec<Vec3>,
}

impl AgentPlanner {
    pub fn new(config: PlannerConfig, goal: Vec3) -> Self {
        Self {
            config,
            goal,
            corridor: SafeCorridor::default(),
            prev_ref: None,
            last_plan: None,
            held: 0,
            prev_assignment: Vec::new(),
        }
    }

    pub fn corridor(&self) -> &SafeCorridor {
        &self.corridor
    }

    /// Plans the trajectory for iteration `k`, starting where `own_last`
    /// is at absolute step `k`.
    pub fn plan(
        &mut self,
        k: i64,
        own_last: &DiscreteTrajectory,
        peers: &[PeerPrediction<'_>],
        world: &WorldModel,
    ) -> Result<(DiscreteTrajectory, PlanDetails), PlanError> {
        let cfg = self.config.clone();
        let x0 = own_last.state_at_abs(k);
        let p0 = x0.position;

        let raw = rasterize(world, p0, Vec3::from(cfg.grid_extent), cfg.voxel_size);
        let grid = inflate(&raw, cfg.inflation);
        let mut search_grid = clear_borders(&grid);
        for lin in 0..search_grid.len() {
            let idx = search_grid.unlinear(lin);
            if !world.bounds.contains(&search_grid.center_of(idx)) {
                search_grid.set(idx, Occupancy::Occupied);
            }
        }

        // a reference held for a whole horizon while the agent sits still has
        // collapsed to a point the corridor cannot reach; start over from here
        let stalled = self.held >= cfg.n && (own_last.final_position() - p0).norm() < STALL_DISTANCE;
        let prev_pts = self.prev_ref.as_ref().filter(|_| !stalled).map(|r| r.points.clone());
        let start = match &prev_pts {
            Some(pts)
                if search_grid
                    .index_of(pts.last().unwrap())
                    .is_some_and(|i| search_grid.is_free(i)) =>
            {
                *pts.last().unwrap()
            }
            _ => p0,
        };
        let stitch_from = if start == p0 { None } else { prev_pts.as_deref() };
        let path = self.global_path(&mut search_grid, start)?;
        let stitched = stitch(stitch_from, &path)?;

        // the stitched path starts one period behind; skip any further
        // periods that elapsed without planning
        let elapsed = match self.last_plan {
            Some(prev_k) if stitch_from.is_some() => (k - prev_k - 1).max(0),
            _ => 0,
        };
        let ref_path = stitched.trimmed_front(elapsed as f64 * cfg.v_samp * cfg.h);
        let prev_ref = if stitch_from.is_some() {
            self.prev_ref.as_ref()
        } else {
            None
        };
        // after a stall, a slower reference follows detours the horizon can reach
        let v_samp = if stalled {
            cfg.v_samp * RECOVERY_SPEED
        } else {
            cfg.v_samp
        };
        let mut reference = sample_reference(&ref_path, v_samp, cfg.n, cfg.h, prev_ref, Some(own_last), cfg.d_thresh);
        let kept = prev_ref == Some(&reference);
        if kept {
            // a kept reference keeps its timing
            reference = reference.advanced(elapsed as usize + 1);
        }

        let remaining: Vec<Vec3> = (k..=own_last.iteration + own_last.horizon() as i64)
            .map(|a| own_last.state_at_abs(a).position)
            .collect();
        let mut seeds = vec![p0];
        seeds.extend_from_slice(&stitched.waypoints);
        let interior = shrink_horizontally(&grid.extent(), cfg.seed_margin);
        let seed_path = clip_prefix(&Path::new(seeds), &interior, cfg.voxel_size / 2.0);
        let corridor = update_corridor(&self.corridor, &remaining, &seed_path, &grid, cfg.p_hor);
        self.corridor = corridor.clone();

        let tasc = build_tasc(
            &corridor,
            k,
            own_last,
            peers,
            cfg.n,
            cfg.d_rad + cfg.clearance_margin,
            cfg.perturbation(),
        )?;
        let warm = self.warm_start(&corridor);
        let options = MiqpOptions {
            mode: if cfg.exhaustive_miqp {
                SearchMode::Exhaustive
            } else {
                SearchMode::BranchAndBound
            },
            warm_start: warm,
        };
        let sol = solve_miqp(&tasc, x0, &reference, cfg.limits, cfg.weights, cfg.h, &options)?;

        self.prev_assignment = sol.assignment.iter().map(|&j| corridor.polyhedra[j].seed).collect();
        self.prev_ref = Some(reference.clone());
        self.last_plan = Some(k);
        self.held = if kept { self.held + elapsed as usize + 1 } else { 0 };
        let mut traj = sol.trajectory;
        traj.iteration = k;
        Ok((
            traj,
            PlanDetails {
                global_path: stitched,
                reference,
                corridor,
                assignment: sol.assignment,
                cost: sol.cost,
                qp_solves: sol.qp_solves,
            },
        ))
    }

    fn global_path(&self, search_grid: &mut VoxelGrid, start: Vec3) -> Result<Path, PathError> {
        let cfg = &self.config;
        // a start resting on a voxel face may round into a blocked voxel
        let touching = search_grid.free_index_touching(&start, FACE_TOLERANCE);
        let search_start = match touching {
            Some(idx) if search_grid.index_of(&start) != Some(idx) => search_grid.center_of(idx),
            _ => {
                if let Some(idx) = search_grid.index_of(&start) {
                    search_grid.set(idx, Occupancy::Free);
                }
                start
            }
        };
        let local_goal = intermediate_goal(search_grid, start, self.goal);
        if let Some(idx) = search_grid.index_of(&local_goal) {
            search_grid.set(idx, Occupancy::Free);
        }
        match find_path_with(search_grid, search_start, local_goal, cfg.search) {
            Ok(p) => {
                let mut pts = push_away(search_grid, &p, cfg.push_radius, cfg.push_gain).waypoints;
                if search_start == start {
                    pts[0] = start;
                } else {
                    pts[0] = search_start;
                    pts.insert(0, start);
                }
                if pts.len() > 1 {
                    *pts.last_mut().unwrap() = local_goal;
                } else if local_goal != start {
                    pts.push(local_goal);
                }
                Ok(Path::new(pts))
            }
            // boxed in: hold the current reference end
            Err(PathError::NoPath) => Ok(Path::new(vec![start])),
            Err(e) => Err(e),
        }
    }

    /// Previous assignment shifted by one segment, mapped onto the cells of
    /// `corridor` by seed.
    fn warm_start(&self, corridor: &SafeCorridor) -> Option<Vec<usize>> {
        if self.prev_assignment.is_empty() {
            return None;
        }
        let n = self.config.n;
        let mut out = Vec::with_capacity(n);
        for s in 0..n {
            let seed = self.prev_assignment[(s + 1).min(self.prev_assignment.len() - 1)];
            out.push(corridor.polyhedra.iter().position(|p| p.seed == seed)?);
        }
        Some(out)
    }
}

fn shrink_horizontally(b: &Aabb, margin: f64) -> Aabb {
    let m = Vec3::new(margin, margin, 0.0);
    let (lo, hi) = (b.min_v() + m, b.max_v() - m);
    let mid = (b.min_v() + b.max_v()) / 2.0;
    Aabb::new(lo.zip_map(&mid, f64::min), hi.zip_map(&mid, f64::max))
}

/// Longest prefix of `path` inside `region`, sampled at `step`.
fn clip_prefix(path: &Path, region: &Aabb, step: f64) -> Path {
    let mut pts = vec![path.start()];
    for q in path.sample(step).into_iter().skip(1) {
        if !region.contains(&q) {
            break;
        }
        pts.push(q);
    }
    Path::new(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::AgentState;

    #[test]
    fn clipping_keeps_start_and_inside_prefix() {
        let region = Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
        let p = Path::new(vec![
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.0, 5.0, 0.0),
        ]);
        assert_eq!(clip_prefix(&p, &region, 0.5).waypoints, vec![Vec3::new(5.0, 0.0, 0.0)]);
        let q = Path::new(vec![Vec3::zeros(), Vec3::new(3.0, 0.0, 0.0)]);
        let c = clip_prefix(&q, &region, 0.25);
        assert!(c.waypoints.iter().all(|w| region.contains(w)));
        assert!((c.end().x - 1.0).abs() < 1e-12);
        let s = shrink_horizontally(&region, 5.0);
        assert_eq!((s.min_v().x, s.max_v().x, s.min_v().z), (0.0, 0.0, -1.0));
    }

    fn world() -> WorldModel {
        WorldModel::empty(Aabb::new(Vec3::new(-20.0, -20.0, 0.0), Vec3::new(20.0, 20.0, 3.0)))
    }

    #[test]
    fn first_plan_heads_to_goal_and_stops() {
        let start = Vec3::new(0.0, 0.0, 1.0);
        let mut p = AgentPlanner::new(PlannerConfig::default(), Vec3::new(10.0, 0.0, 1.0));
        let own = DiscreteTrajectory::hover(AgentState::at_rest(start), 9, 0.1, 0, 0);
        let (t, d) = p.plan(0, &own, &[], &world()).unwrap();
        assert_eq!(t.states.len(), 10);
        assert_eq!(t.states[0], own.states[0]);
        assert!(t.final_position().x > 0.05);
        assert!(t.final_state().velocity.norm() < 1e-6);
        assert!(t.dynamics_residual() < 1e-9);
        assert!(!d.corridor.is_empty());
        for (i, s) in t.states.iter().enumerate().skip(1) {
            assert!(d.corridor.polyhedra[d.assignment[i - 1]].contains_tol(&s.position, 1e-6));
        }
    }

    #[test]
    fn repeated_plans_reach_goal() {
        let goal = Vec3::new(6.0, 2.0, 1.0);
        let mut p = AgentPlanner::new(PlannerConfig::default(), goal);
        let mut own = DiscreteTrajectory::hover(AgentState::at_rest(Vec3::new(0.0, 0.0, 1.0)), 9, 0.1, 0, 0);
        for k in 0..60 {
            let (t, _) = p.plan(k, &own, &[], &world()).unwrap();
            own = t;
        }
        let end = own.state_at_abs(60);
        assert!((end.position - goal).norm() < 0.05, "{:?}", end.position);
    }

    #[test]
    fn goal_in_start_voxel_is_reached() {
        let start = Vec3::new(0.05, 0.05, 1.0);
        let goal = Vec3::new(-0.1, 0.1, 1.0);
        let mut p = AgentPlanner::new(PlannerConfig::default(), goal);
        let mut own = DiscreteTrajectory::hover(AgentState::at_rest(start), 9, 0.1, 0, 0);
        for k in 0..20 {
            own = p.plan(k, &own, &[], &world()).unwrap().0;
        }
        assert!(
            (own.final_position() - goal).norm() < 0.01,
            "{:?}",
            own.final_position()
        );
    }
}
