//! Discrete-event simulation of a team of planning agents on a shared clock.
//!
//! Period boundaries fall at multiples of `h`. At each boundary every agent
//! first executes its committed trajectory over the coming period (perfect
//! control, sampled at `h / 10`) and then consults its scheduler. A planned
//! trajectory is committed and broadcast when its computation finishes; it
//! reaches each peer after the pair latency. Events at equal times are
//! processed as deliveries, then completions, then boundaries.

mod logs;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::mpc::{micros_to_secs, propagate, secs_to_micros, AgentState, DiscreteTrajectory, Micros};
use crate::planner::{AgentPlanner, PlanError, PlannerConfig};
use crate::scheduler::{
    broadcast, Decision, DecisionRecord, PlanOutcome, Scheduler, SchedulerError, TrajectoryMessage,
};
use crate::tasc::{AgentId, PeerPrediction, TascError};
use crate::voxel_grid::WorldModel;

pub use logs::{decision_log, obstacles_csv, TrajectoryRow, TRAJECTORY_HEADER};
pub use metrics::{accumulate_costs, check_collisions, count_stops, AgentMetrics, MetricsReport, Violation};

pub(crate) use metrics::mean;

/// Samples per period for execution, logging and collision checks.
pub const SUBSTEPS: usize = 10;

/// Symmetric pairwise latency and communication range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkModel {
    /// Latency of every pair without an override (s).
    pub latency: f64,
    /// `(i, j, latency)` overrides; apply in both directions.
    pub pair_latency: Vec<(AgentId, AgentId, f64)>,
    /// Agents further apart than this do not communicate or constrain each
    /// other (m).
    pub comm_range: f64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            latency: 0.0,
            pair_latency: Vec::new(),
            comm_range: f64::INFINITY,
        }
    }
}

impl NetworkModel {
    pub fn constant(latency: f64) -> Self {
        Self {
            latency,
            ..Self::default()
        }
    }

    pub fn latency(&self, a: AgentId, b: AgentId) -> f64 {
        self.pair_latency
            .iter()
            .rev()
            .find(|&&(i, j, _)| (i, j) == (a, b) || (i, j) == (b, a))
            .map_or(self.latency, |&(_, _, l)| l)
    }

    fn latency_us(&self, a: AgentId, b: AgentId) -> Micros {
        secs_to_micros(self.latency(a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComputeModel {
    /// Fixed computation time per agent (s); the last entry covers the rest.
    Synthetic { durations: Vec<f64> },
    /// Wall-clock time of the actual computation.
    Measured,
}

impl Default for ComputeModel {
    fn default() -> Self {
        ComputeModel::Synthetic { durations: vec![0.01] }
    }
}

impl ComputeModel {
    fn synthetic(&self, agent: AgentId) -> Option<f64> {
        match self {
            ComputeModel::Synthetic { durations } => Some(durations[agent.min(durations.len() - 1)]),
            ComputeModel::Measured => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    /// Simulated time limit (s).
    pub timeout: f64,
    /// Distance to the goal counted as arrival (m).
    pub goal_tolerance: f64,
    pub v_stop: f64,
    pub min_dwell: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            timeout: 60.0,
            goal_tolerance: 0.1,
            v_stop: 0.05,
            min_dwell: 3,
        }
    }
}

/// One fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub starts: Vec<Vec3>,
    pub goals: Vec<Vec3>,
    pub world: WorldModel,
    pub network: NetworkModel,
    pub compute: ComputeModel,
    pub planner: PlannerConfig,
    pub settings: SimSettings,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("agent {agent}: {source}")]
    Scheduler { agent: AgentId, source: SchedulerError },
    #[error("agents {0} and {1} coincide")]
    Coincident(AgentId, AgentId),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trajectory: Vec<TrajectoryRow>,
    pub decisions: Vec<DecisionRecord>,
}

impl RunOutput {
    pub fn trajectory_csv(&self) -> String {
        logs::trajectory_csv(&self.trajectory)
    }

    pub fn decision_log(&self) -> String {
        decision_log(&self.decisions)
    }
}

#[derive(Debug)]
enum Event {
    Delivery {
        to: AgentId,
        msg: TrajectoryMessage,
    },
    ComputeDone {
        agent: AgentId,
        iteration: i64,
        result: Box<PlanResult>,
    },
}

#[derive(Debug)]
enum PlanResult {
    Plan(DiscreteTrajectory),
    Failed,
    Overrun,
}

impl Event {
    fn class(&self) -> u8 {
        match self {
            Event::Delivery { .. } => 0,
            Event::ComputeDone { .. } => 1,
        }
    }
}

struct Agent {
    planner: AgentPlanner,
    scheduler: Scheduler,
    own_last: DiscreteTrajectory,
    state: AgentState,
    goal: Vec3,
    /// Speed and goal distance per sample.
    speeds: Vec<f64>,
    in_goal: Vec<bool>,
    jerks: Vec<Vec3>,
    distance: f64,
    plans: usize,
    recommits: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.starts.is_empty() || self.starts.len() != self.goals.len() {
            return bad(format!("{} starts for {} goals", self.starts.len(), self.goals.len()));
        }
        let p = &self.planner;
        if p.n == 0 || p.p_hor == 0 || p.m_period == 0 {
            return bad("n, p_hor and m_period must be positive".into());
        }
        for (name, v) in [
            ("h", p.h),
            ("v_samp", p.v_samp),
            ("d_thresh", p.d_thresh),
            ("d_rad", p.d_rad),
            ("voxel_size", p.voxel_size),
            ("v_max", p.limits.v_max),
            ("a_max", p.limits.a_max),
            ("j_max", p.limits.j_max),
            ("q_ref", p.weights.q_ref),
            ("timeout", self.settings.timeout),
            ("goal_tolerance", self.settings.goal_tolerance),
            ("v_stop", self.settings.v_stop),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if p.weights.r_jerk < 0.0 || p.inflation < 0.0 || p.c < 0.0 || p.m_amp < 0.0 {
            return bad("r_jerk, inflation, c and m_amp must be non-negative".into());
        }
        if secs_to_micros(p.h) % SUBSTEPS as Micros != 0 {
            return bad(format!(
                "h = {} s is not a whole number of {SUBSTEPS} us sub-steps",
                p.h
            ));
        }
        let lat = std::iter::once(self.network.latency).chain(self.network.pair_latency.iter().map(|l| l.2));
        for l in lat {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("latency must be non-negative, got {l}"));
            }
        }
        if self.network.comm_range.is_nan() || self.network.comm_range <= 0.0 {
            return bad("comm_range must be positive".into());
        }
        if let ComputeModel::Synthetic { durations } = &self.compute {
            if durations.is_empty() {
                return bad("synthetic compute needs at least one duration".into());
            }
            if let Some(d) = durations.iter().find(|d| !(**d >= 0.0 && **d < p.h)) {
                return bad(format!("synthetic compute time {d} s must lie in [0, h)"));
            }
        }
        for (i, q) in self.starts.iter().chain(&self.goals).enumerate() {
            if !self.world.bounds.contains(q) {
                return bad(format!("start/goal #{i} {q:?} is outside the world bounds"));
            }
        }
        Ok(())
    }

    /// Runs to arrival of every agent or to the timeout.
    pub fn run(&self) -> Result<RunOutput, SimError> {
        self.validate()?;
        Runner::new(self).run()
    }
}

struct Runner<'a> {
    sc: &'a Scenario,
    h_us: Micros,
    agents: Vec<Agent>,
    events: BTreeMap<(Micros, u8, u64), Event>,
    seq: u64,
    in_range: BTreeSet<(AgentId, AgentId)>,
    rows: Vec<TrajectoryRow>,
    violations: usize,
    first_violations: Vec<(f64, Violation)>,
    min_sep: f64,
    compute_times: Vec<f64>,
}

impl<'a> Runner<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let cfg = &sc.planner;
        let agents = sc
            .starts
            .iter()
            .zip(&sc.goals)
            .enumerate()
            .map(|(i, (&s, &g))| {
                let rest = AgentState::at_rest(s);
                Agent {
                    planner: AgentPlanner::new(cfg.clone(), g),
                    scheduler: Scheduler::new(i),
                    own_last: DiscreteTrajectory::hover(rest, cfg.n, cfg.h, 0, 0),
                    state: rest,
                    goal: g,
                    speeds: Vec::new(),
                    in_goal: Vec::new(),
                    jerks: Vec::new(),
                    distance: 0.0,
                    plans: 0,
                    recommits: 0,
                }
            })
            .collect();
        Self {
            sc,
            h_us: secs_to_micros(cfg.h),
            agents,
            events: BTreeMap::new(),
            seq: 0,
            in_range: BTreeSet::new(),
            rows: Vec::new(),
            violations: 0,
            first_violations: Vec::new(),
            min_sep: f64::INFINITY,
            compute_times: Vec::new(),
        }
    }

    fn push(&mut self, t: Micros, ev: Event) {
        self.events.insert((t, ev.class(), self.seq), ev);
        self.seq += 1;
    }

    fn run(mut self) -> Result<RunOutput, SimError> {
        let limit = secs_to_micros(self.sc.settings.timeout);
        let mut k: i64 = 0;
        let mut timed_out = false;
        loop {
            let t = k * self.h_us;
            while let Some(entry) = self.events.first_entry() {
                if entry.key().0 > t {
                    break;
                }
                let ((te, _, _), ev) = entry.remove_entry();
                self.handle(te, ev)?;
            }
            self.execute_period(k);
            if self.all_arrived() {
                break;
            }
            if t >= limit {
                timed_out = true;
                break;
            }
            self.boundary(k, t)?;
            k += 1;
        }
        Ok(self.finish(timed_out, k))
    }

    fn handle(&mut self, t: Micros, ev: Event) -> Result<(), SimError> {
        match ev {
            Event::Delivery { to, msg } => self.agents[to]
                .scheduler
                .receive(msg, t)
                .map_err(|source| SimError::Scheduler { agent: to, source }),
            Event::ComputeDone {
                agent,
                iteration,
                result,
            } => {
                let a = &mut self.agents[agent];
                let outcome = match *result {
                    PlanResult::Plan(mut traj) => {
                        traj.gen_start = iteration * self.h_us;
                        a.own_last = traj;
                        PlanOutcome::Committed
                    }
                    PlanResult::Failed => {
                        a.own_last = a.own_last.recommitted(iteration, iteration * self.h_us);
                        a.recommits += 1;
                        PlanOutcome::Recommitted
                    }
                    PlanResult::Overrun => {
                        a.own_last = a.own_last.recommitted(iteration, iteration * self.h_us);
                        a.recommits += 1;
                        PlanOutcome::Overrun
                    }
                };
                a.scheduler.set_outcome(iteration, outcome);
                let msg = broadcast(agent, a.own_last.clone(), t);
                a.own_last.gen_end = t;
                for peer in self.peers_of(agent) {
                    let arrive = t + self.sc.network.latency_us(agent, peer);
                    self.push(
                        arrive,
                        Event::Delivery {
                            to: peer,
                            msg: msg.clone(),
                        },
                    );
                }
                Ok(())
            }
        }
    }

    fn peers_of(&self, agent: AgentId) -> Vec<AgentId> {
        (0..self.agents.len())
            .filter(|&j| j != agent && self.in_range.contains(&(agent.min(j), agent.max(j))))
            .collect()
    }

    /// Moves every agent through `[k h, (k + 1) h)` along the trajectory
    /// committed before `k h`, sampling at `h / SUBSTEPS`.
    fn execute_period(&mut self, k: i64) {
        let h = self.sc.planner.h;
        let dt = h / SUBSTEPS as f64;
        let tol = self.sc.settings.goal_tolerance;
        let jerks: Vec<Vec3> = self.agents.iter().map(|a| a.own_last.jerk_at_abs(k - 1)).collect();
        for s in 0..SUBSTEPS {
            let time_us = k * self.h_us + s as Micros * self.h_us / SUBSTEPS as Micros;
            let states: Vec<AgentState> = self
                .agents
                .iter()
                .zip(&jerks)
                .map(|(a, j)| propagate(&a.state, j, s as f64 * dt))
                .collect();
            let positions: Vec<Vec3> = states.iter().map(|x| x.position).collect();
            for (i, (a, x)) in self.agents.iter_mut().zip(&states).enumerate() {
                a.speeds.push(x.velocity.norm());
                a.in_goal.push((x.position - a.goal).norm() < tol);
                self.rows.push(TrajectoryRow {
                    time: time_us,
                    agent: i,
                    state: *x,
                    jerk: jerks[i],
                });
            }
            for i in 0..positions.len() {
                for j in i + 1..positions.len() {
                    self.min_sep = self.min_sep.min((positions[i] - positions[j]).norm());
                }
            }
            for v in check_collisions(&positions, &self.sc.world, self.sc.planner.d_rad) {
                self.violations += 1;
                if self.first_violations.len() < 10 {
                    self.first_violations.push((micros_to_secs(time_us), v));
                }
            }
        }
        for (a, j) in self.agents.iter_mut().zip(&jerks) {
            let next = propagate(&a.state, j, h);
            a.distance += (next.position - a.state.position).norm();
            a.jerks.push(*j);
            a.state = next;
        }
    }

    fn all_arrived(&self) -> bool {
        let tol = self.sc.settings.goal_tolerance;
        self.agents.iter().all(|a| {
            (a.state.position - a.goal).norm() < tol
                && a.state.velocity.norm() < self.sc.settings.v_stop
                && (a.own_last.final_position() - a.goal).norm() < tol
        })
    }

    fn update_range(&mut self, t: Micros) {
        let range = self.sc.network.comm_range;
        let n = self.agents.len();
        for i in 0..n {
            for j in i + 1..n {
                let d = (self.agents[i].state.position - self.agents[j].state.position).norm();
                let now = d <= range;
                let was = self.in_range.contains(&(i, j));
                if now && !was {
                    self.in_range.insert((i, j));
                    if t > 0 {
                        // fresh contact: exchange the current commitments
                        for (a, b) in [(i, j), (j, i)] {
                            let msg = broadcast(a, self.agents[a].own_last.clone(), t);
                            let arrive = t + self.sc.network.latency_us(a, b);
                            self.push(arrive, Event::Delivery { to: b, msg });
                        }
                    }
                } else if !now && was {
                    self.in_range.remove(&(i, j));
                    self.agents[i].scheduler.forget(j);
                    self.agents[j].scheduler.forget(i);
                }
            }
        }
    }

    fn boundary(&mut self, k: i64, t: Micros) -> Result<(), SimError> {
        self.update_range(t);
        for i in 0..self.agents.len() {
            let peers = self.peers_of(i);
            let a = &mut self.agents[i];
            let decision = a.scheduler.gate(k, &peers, &a.own_last, t);
            let Decision::Plan { consumed } = decision else {
                continue;
            };
            a.plans += 1;
            let predictions: Vec<PeerPrediction<'_>> = consumed
                .iter()
                .map(|m| PeerPrediction {
                    peer: m.sender,
                    trajectory: &m.payload,
                })
                .collect();
            let backup = self.sc.compute.synthetic(i).is_none().then(|| a.planner.clone());
            let clock = Instant::now();
            let planned = a.planner.plan(k, &a.own_last, &predictions, &self.sc.world);
            let wall = clock.elapsed().as_secs_f64();
            let duration = self.sc.compute.synthetic(i).unwrap_or(wall);
            self.compute_times.push(duration);
            let mut result = match planned {
                Ok((traj, _)) => PlanResult::Plan(traj),
                Err(PlanError::Tasc(TascError::CoincidentAgents)) => {
                    let other = consumed
                        .iter()
                        .find(|m| {
                            (m.payload.state_at_abs(k).position - a.own_last.state_at_abs(k).position).norm() == 0.0
                        })
                        .map_or(i, |m| m.sender);
                    return Err(SimError::Coincident(i, other));
                }
                Err(_) => PlanResult::Failed,
            };
            let mut done = t + secs_to_micros(duration);
            if done >= t + self.h_us {
                if let Some(b) = backup {
                    a.planner = b;
                }
                result = PlanResult::Overrun;
                done = t + self.h_us - 1;
            }
            self.push(
                done,
                Event::ComputeDone {
                    agent: i,
                    iteration: k,
                    result: Box::new(result),
                },
            );
        }
        Ok(())
    }

    fn finish(self, timed_out: bool, periods: i64) -> RunOutput {
        let h = self.sc.planner.h;
        let dt = h / SUBSTEPS as f64;
        let st = &self.sc.settings;
        let agents: Vec<AgentMetrics> = self
            .agents
            .iter()
            .map(|a| {
                let arrived = a.in_goal.last().copied().unwrap_or(false);
                let entry = arrived.then(|| a.in_goal.iter().rposition(|g| !g).map_or(0, |i| i + 1));
                let flight_time = entry.map(|e| e as f64 * dt);
                let trace = &a.speeds[..entry.unwrap_or(a.speeds.len())];
                let (accel_cost, jerk_cost) = accumulate_costs(Vec3::zeros(), &a.jerks, h);
                AgentMetrics {
                    arrived,
                    flight_time,
                    distance: a.distance,
                    mean_velocity: flight_time.filter(|&f| f > 0.0).map(|f| a.distance / f),
                    accel_cost,
                    jerk_cost,
                    stops: count_stops(trace, st.v_stop, st.min_dwell),
                    plans: a.plans,
                    recommits: a.recommits,
                }
            })
            .collect();
        let flights: Vec<f64> = agents.iter().filter_map(|a| a.flight_time).collect();
        let report = MetricsReport {
            collision_occurred: self.violations > 0,
            violations: self.violations,
            min_separation: self.min_sep,
            num_stops: agents.iter().map(|a| a.stops).sum(),
            timed_out: timed_out || agents.iter().any(|a| !a.arrived),
            end_time: micros_to_secs(periods * self.h_us),
            mean_flight_time: mean(flights.iter().copied()),
            max_flight_time: flights.iter().copied().reduce(f64::max),
            mean_distance: mean(agents.iter().map(|a| a.distance)).unwrap_or(0.0),
            mean_velocity: mean(agents.iter().filter_map(|a| a.mean_velocity)),
            accel_cost: mean(agents.iter().map(|a| a.accel_cost)).unwrap_or(0.0),
            jerk_cost: mean(agents.iter().map(|a| a.jerk_cost)).unwrap_or(0.0),
            compute_time_mean: mean(self.compute_times.iter().copied()).unwrap_or(0.0),
            compute_time_max: self.compute_times.iter().copied().fold(0.0, f64::max),
            compute_times: self.compute_times,
            agents,
            first_violations: self.first_violations,
        };
        let mut decisions: Vec<DecisionRecord> = self.agents.into_iter().flat_map(|a| a.scheduler.log).collect();
        decisions.sort_by_key(|d| (d.iteration, d.agent));
        RunOutput {
            report,
            trajectory: self.rows,
            decisions,
        }
    }
}
