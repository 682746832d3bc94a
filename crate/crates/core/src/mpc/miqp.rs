//! Search over the cell assigned to each trajectory segment.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::problem::{MpcProblem, QpOutcome, Region, START_TOL};
use super::{AgentState, DiscreteTrajectory, Limits, LocalReference, MpcError, Weights};
use crate::tasc::TimeAwareSafeCorridor;

/// Slack allowed when checking that a relaxed solution fits a cell.
const COMPLETION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    #[default]
    BranchAndBound,
    /// Solves every assignment; reference mode.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MiqpOptions {
    pub mode: SearchMode,
    /// Assignment tried first to seed the incumbent.
    pub warm_start: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqpSolution {
    /// Iteration and timestamps are left for the caller to stamp.
    pub trajectory: DiscreteTrajectory,
    pub cost: f64,
    pub assignment: Vec<usize>,
    pub qp_solves: usize,
}

pub fn solve_miqp(
    tasc: &TimeAwareSafeCorridor,
    x0: AgentState,
    reference: &LocalReference,
    limits: Limits,
    weights: Weights,
    step: f64,
    options: &MiqpOptions,
) -> Result<MiqpSolution, MpcError> {
    let problem = MpcProblem::new(tasc, x0, reference, limits, weights, step)?;
    match options.mode {
        SearchMode::Exhaustive => exhaustive(&problem),
        SearchMode::BranchAndBound => branch_and_bound(&problem, options.warm_start.as_deref()),
    }
}

fn exhaustive(problem: &MpcProblem<'_>) -> Result<MiqpSolution, MpcError> {
    let n = problem.horizon();
    let p = problem.cell_count();
    let mut assignment = vec![0usize; n];
    let mut best: Option<(QpOutcome, Vec<usize>)> = None;
    let mut solves = 0;
    loop {
        let regions: Vec<Region> = assignment.iter().map(|&j| Region::Cell(j)).collect();
        solves += 1;
        if let Ok(out) = problem.solve(&regions) {
            if best.as_ref().is_none_or(|(b, _)| out.cost < b.cost) {
                best = Some((out, assignment.clone()));
            }
        }
        // odometer increment, last segment fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                return finish(best, solves);
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < p {
                break;
            }
            assignment[pos] = 0;
        }
    }
}

fn finish(best: Option<(QpOutcome, Vec<usize>)>, qp_solves: usize) -> Result<MiqpSolution, MpcError> {
    let (out, assignment) = best.ok_or(MpcError::Infeasible)?;
    Ok(MiqpSolution {
        trajectory: out.trajectory,
        cost: out.cost,
        assignment,
        qp_solves,
    })
}

struct Node {
    bound: f64,
    prefix: Vec<usize>,
    outcome: QpOutcome,
    seq: usize,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    /// Max-heap order: lowest bound first, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.prefix.len().cmp(&other.prefix.len()))
            .then(other.seq.cmp(&self.seq))
    }
}

fn regions_for(prefix: &[usize], n: usize) -> Vec<Region> {
    (0..n)
        .map(|s| prefix.get(s).map_or(Region::Hull, |&j| Region::Cell(j)))
        .collect()
}

/// Completes `prefix` with, per free segment, the first cell holding both
/// endpoints of the relaxed solution.
fn completion(
    problem: &MpcProblem<'_>,
    tasc: &TimeAwareSafeCorridor,
    prefix: &[usize],
    out: &QpOutcome,
) -> Option<Vec<usize>> {
    let states = &out.trajectory.states;
    let mut full = prefix.to_vec();
    for s in prefix.len()..problem.horizon() {
        let cell = tasc.corridor.polyhedra.iter().position(|c| {
            let start_ok = if s == 0 {
                c.contains_tol(&problem.x0().position, START_TOL)
            } else {
                c.contains_tol(&states[s].position, COMPLETION_TOL)
            };
            start_ok && c.contains_tol(&states[s + 1].position, COMPLETION_TOL)
        })?;
        full.push(cell);
    }
    Some(full)
}

fn branch_and_bound(problem: &MpcProblem<'_>, warm: Option<&[usize]>) -> Result<MiqpSolution, MpcError> {
    let n = problem.horizon();
    let p = problem.cell_count();
    let tasc = problem.tasc();
    let mut solves = 0;
    let mut best: Option<(QpOutcome, Vec<usize>)> = None;

    if let Some(w) = warm.filter(|w| w.len() == n && w.iter().all(|&j| j < p)) {
        solves += 1;
        if let Ok(out) = problem.solve(&regions_for(w, n)) {
            best = Some((out, w.to_vec()));
        }
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    solves += 1;
    if let Ok(out) = problem.solve(&regions_for(&[], n)) {
        heap.push(Node {
            bound: out.cost,
            prefix: Vec::new(),
            outcome: out,
            seq,
        });
    }
    while let Some(node) = heap.pop() {
        if let Some((b, _)) = &best {
            if node.bound >= b.cost - 1e-12 * (1.0 + b.cost.abs()) {
                break;
            }
        }
        if let Some(full) = completion(problem, tasc, &node.prefix, &node.outcome) {
            best = Some((node.outcome, full));
            continue;
        }
        let d = node.prefix.len();
        for j in 0..p {
            let cell = &tasc.corridor.polyhedra[j];
            if d == 0 {
                if !problem.start_in(Region::Cell(j)) {
                    continue;
                }
            } else if !tasc.corridor.polyhedra[node.prefix[d - 1]].may_intersect(cell) {
                continue;
            }
            let mut prefix = node.prefix.clone();
            prefix.push(j);
            solves += 1;
            let Ok(out) = problem.solve(&regions_for(&prefix, n)) else {
                continue;
            };
            if best.as_ref().is_some_and(|(b, _)| out.cost >= b.cost) {
                continue;
            }
            seq += 1;
            heap.push(Node {
                bound: out.cost,
                prefix,
                outcome: out,
                seq,
            });
        }
    }
    finish(best, solves)
}
