//! Local reference sampling and the jerk-input MPC over the time-aware
//! corridor.
//!
//! The model is a per-axis triple integrator with piecewise-constant jerk.
//! The optimization is condensed onto the jerk inputs and solved by a dense
//! dual active-set QP solver; the choice of corridor cell per segment is
//! searched by branch-and-bound (or exhaustively, for reference).

mod miqp;
mod problem;
pub mod qp;
mod reference;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;

pub use miqp::{solve_miqp, MiqpOptions, MiqpSolution, SearchMode};
pub use problem::{solve_qp, MpcProblem, QpOutcome, Region};
pub use reference::{sample_reference, LocalReference};

/// Timestamps on the shared simulation clock, in integer microseconds.
pub type Micros = i64;

pub fn micros_to_secs(t: Micros) -> f64 {
    t as f64 * 1e-6
}

pub fn secs_to_micros(t: f64) -> Micros {
    (t * 1e6).round() as Micros
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error("no assignment admits a feasible trajectory")]
    Infeasible,
    #[error("QP iteration budget exhausted")]
    MaxIter,
    #[error("QP solution failed its optimality certificate")]
    NotCertified,
    #[error("initial state is outside the assigned cell")]
    StartOutsideCell,
    #[error("corridor has no cells")]
    EmptyCorridor,
    #[error("problem dimensions are inconsistent: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

impl AgentState {
    pub fn at_rest(position: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.velocity.iter())
            .chain(self.acceleration.iter())
            .all(|v| v.is_finite())
    }
}

/// One exact triple-integrator step under constant jerk.
pub fn propagate(x0: &AgentState, jerk: &Vec3, h: f64) -> AgentState {
    let h2 = h * h;
    let h3 = h2 * h;
    AgentState {
        position: x0.position + x0.velocity * h + x0.acceleration * (h2 / 2.0) + jerk * (h3 / 6.0),
        velocity: x0.velocity + x0.acceleration * h + jerk * (h2 / 2.0),
        acceleration: x0.acceleration + jerk * h,
    }
}

/// Per-axis bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub v_max: f64,
    pub a_max: f64,
    pub j_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            v_max: 10.0,
            a_max: 20.0,
            j_max: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub q_ref: f64,
    pub r_jerk: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            q_ref: 1.0,
            r_jerk: 0.01,
        }
    }
}

/// Planned states at spacing `step`.
///
/// State `i` of a trajectory generated at iteration `k` describes the agent
/// at time `(k + 1 + i) * step`; its absolute step index is `k + i`. State 0
/// is the committed start state, which the previous trajectory reaches at
/// the end of the planning period.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTrajectory {
    pub states: Vec<AgentState>,
    /// `jerks[i]` drives `states[i]` to `states[i + 1]`.
    pub jerks: Vec<Vec3>,
    pub step: f64,
    pub iteration: i64,
    pub gen_start: Micros,
    pub gen_end: Micros,
}

impl DiscreteTrajectory {
    /// Trajectory holding `state` for `n` steps.
    pub fn hover(state: AgentState, n: usize, step: f64, iteration: i64, stamp: Micros) -> Self {
        Self {
            states: vec![state; n + 1],
            jerks: vec![Vec3::zeros(); n],
            step,
            iteration,
            gen_start: stamp,
            gen_end: stamp,
        }
    }

    /// Rolls `jerks` out from `x0`.
    pub fn from_jerks(x0: AgentState, jerks: Vec<Vec3>, step: f64, iteration: i64) -> Self {
        let mut states = Vec::with_capacity(jerks.len() + 1);
        states.push(x0);
        for j in &jerks {
            let next = propagate(states.last().unwrap(), j, step);
            states.push(next);
        }
        Self {
            states,
            jerks,
            step,
            iteration,
            gen_start: 0,
            gen_end: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.jerks.len()
    }

    pub fn final_state(&self) -> AgentState {
        *self.states.last().expect("trajectory has states")
    }

    pub fn final_position(&self) -> Vec3 {
        self.final_state().position
    }

    /// State at absolute step `abs`; the final (resting) state is held after
    /// the horizon and the first state before it.
    pub fn state_at_abs(&self, abs: i64) -> AgentState {
        let i = (abs - self.iteration).clamp(0, self.states.len() as i64 - 1);
        self.states[i as usize]
    }

    /// Jerk applied during absolute step `abs` (zero outside the horizon).
    pub fn jerk_at_abs(&self, abs: i64) -> Vec3 {
        let i = abs - self.iteration;
        if i < 0 || i >= self.jerks.len() as i64 {
            Vec3::zeros()
        } else {
            self.jerks[i as usize]
        }
    }

    /// Same motion re-expressed from absolute step `iteration` onwards,
    /// padded with the resting final state.
    pub fn recommitted(&self, iteration: i64, stamp: Micros) -> Self {
        let n = self.horizon();
        let x0 = self.state_at_abs(iteration);
        let jerks = (0..n as i64).map(|i| self.jerk_at_abs(iteration + i)).collect();
        let mut out = Self::from_jerks(x0, jerks, self.step, iteration);
        // keep positions bit-identical to the source where it is defined
        for (i, s) in out.states.iter_mut().enumerate() {
            *s = self.state_at_abs(iteration + i as i64);
        }
        out.gen_start = stamp;
        out.gen_end = stamp;
        out
    }

    /// Largest mismatch between consecutive states and the propagated jerk.
    pub fn dynamics_residual(&self) -> f64 {
        self.states
            .windows(2)
            .zip(&self.jerks)
            .map(|(w, j)| {
                let p = propagate(&w[0], j, self.step);
                (p.position - w[1].position)
                    .amax()
                    .max((p.velocity - w[1].velocity).amax())
                    .max((p.acceleration - w[1].acceleration).amax())
            })
            .fold(0.0, f64::max)
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.states.iter().map(|s| s.position).collect()
    }
}
