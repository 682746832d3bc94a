//! Condensed QP for a fixed choice of corridor cell per segment.

use std::io::{self, Write};

use nalgebra::DMatrix;

use super::qp::{Constraints, DenseQp, KktResiduals, QpError};
use super::{AgentState, DiscreteTrajectory, Limits, LocalReference, MpcError, Weights};
use crate::geometry::{Aabb, Halfspace, Vec3};
use crate::tasc::TimeAwareSafeCorridor;

/// Tolerance for the fixed start state lying in its segment's cell.
pub const START_TOL: f64 = 1e-6;
/// Residual bound (scaled) a QP solution must meet to be accepted.
pub const KKT_TOL: f64 = 1e-6;

/// Where a segment's endpoints must lie.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Cell `j` of the corridor.
    Cell(usize),
    /// Bounding box of all cells (relaxation used while branching).
    Hull,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOutcome {
    pub trajectory: DiscreteTrajectory,
    pub cost: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

/// Everything about one MPC solve that does not depend on the cell
/// assignment: condensed dynamics, cost, limits and separating planes.
pub struct MpcProblem<'a> {
    tasc: &'a TimeAwareSafeCorridor,
    x0: AgentState,
    reference: &'a LocalReference,
    weights: Weights,
    n: usize,
    step: f64,
    /// `coef[i][k]`: effect of a unit jerk in step `k` on the position,
    /// velocity and acceleration of state `i` (same on every axis).
    coef: Vec<Vec<[f64; 3]>>,
    /// Zero-input rollout from `x0`.
    free: Vec<AgentState>,
    qp: DenseQp,
    g: Vec<f64>,
    base: Constraints,
    hull: Option<Aabb>,
}

impl<'a> MpcProblem<'a> {
    pub fn new(
        tasc: &'a TimeAwareSafeCorridor,
        x0: AgentState,
        reference: &'a LocalReference,
        limits: Limits,
        weights: Weights,
        step: f64,
    ) -> Result<Self, MpcError> {
        let n = tasc.horizon();
        if n == 0 || reference.points.len() != n {
            return Err(MpcError::Dimension(format!(
                "{} slices, {} reference points",
                n,
                reference.points.len()
            )));
        }
        if tasc.corridor.is_empty() {
            return Err(MpcError::EmptyCorridor);
        }
        let h = step;
        let mut coef: Vec<Vec<[f64; 3]>> = vec![Vec::new(); n + 1];
        for i in 1..=n {
            let mut row: Vec<[f64; 3]> = coef[i - 1]
                .iter()
                .map(|&[p, v, a]| [p + h * v + h * h / 2.0 * a, v + h * a, a])
                .collect();
            row.push([h * h * h / 6.0, h * h / 2.0, h]);
            coef[i] = row;
        }
        let mut free = vec![x0];
        for i in 0..n {
            let next = super::propagate(&free[i], &Vec3::zeros(), h);
            free.push(next);
        }

        let nv = 3 * n;
        let mut hess = DMatrix::zeros(nv, nv);
        let mut g = vec![0.0; nv];
        for i in 1..=n {
            let target = reference.points[i - 1];
            for k in 0..i {
                let ck = coef[i][k][0];
                for a in 0..3 {
                    g[3 * k + a] += 2.0 * weights.q_ref * ck * (free[i].position[a] - target[a]);
                }
                for l in 0..i {
                    let v = 2.0 * weights.q_ref * ck * coef[i][l][0];
                    for a in 0..3 {
                        hess[(3 * k + a, 3 * l + a)] += v;
                    }
                }
            }
        }
        for d in 0..nv {
            hess[(d, d)] += 2.0 * weights.r_jerk;
        }
        let qp = DenseQp::new(hess).map_err(|_| MpcError::Dimension("cost is not strictly convex".into()))?;

        let mut p = Self {
            tasc,
            x0,
            reference,
            weights,
            n,
            step,
            coef,
            free,
            qp,
            g,
            base: Constraints::new(nv),
            hull: None,
        };
        p.hull = tasc
            .corridor
            .polyhedra
            .iter()
            .map(|c| c.aabb)
            .collect::<Option<Vec<Aabb>>>()
            .and_then(|boxes| boxes.into_iter().reduce(|a, b| a.union(&b)));
        p.base = p.base_constraints(limits);
        Ok(p)
    }

    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn cell_count(&self) -> usize {
        self.tasc.corridor.len()
    }

    pub fn tasc(&self) -> &'a TimeAwareSafeCorridor {
        self.tasc
    }

    pub fn x0(&self) -> &AgentState {
        &self.x0
    }

    fn var(k: usize, axis: usize) -> usize {
        3 * k + axis
    }

    /// Row and constant of `e . (quantity of state i)` where `order` selects
    /// position (0), velocity (1) or acceleration (2).
    fn linear_in_state(&self, i: usize, order: usize, e: &Vec3) -> (Vec<f64>, f64) {
        let mut row = vec![0.0; 3 * self.n];
        for k in 0..i {
            let c = self.coef[i][k][order];
            for a in 0..3 {
                row[Self::var(k, a)] = e[a] * c;
            }
        }
        let s = &self.free[i];
        let base = match order {
            0 => s.position,
            1 => s.velocity,
            _ => s.acceleration,
        };
        (row, e.dot(&base))
    }

    fn push_halfspace(&self, cons: &mut Constraints, i: usize, hs: &Halfspace) {
        let (row, c) = self.linear_in_state(i, 0, &hs.normal);
        cons.push_le(&row, hs.offset - c);
    }

    fn base_constraints(&self, limits: Limits) -> Constraints {
        let n = self.n;
        let mut cons = Constraints::new(3 * n);
        for order in [1, 2] {
            for a in 0..3 {
                let (row, c) = self.linear_in_state(n, order, &unit(a));
                cons.push_eq(&row, -c);
            }
        }
        for i in 1..n {
            for (order, bound) in [(1, limits.v_max), (2, limits.a_max)] {
                for a in 0..3 {
                    let (row, c) = self.linear_in_state(i, order, &unit(a));
                    cons.push_le(&row, bound - c);
                    cons.push_ge(&row, -bound - c);
                }
            }
        }
        for k in 0..n {
            for a in 0..3 {
                let mut row = vec![0.0; 3 * n];
                row[Self::var(k, a)] = 1.0;
                cons.push_le(&row, limits.j_max);
                cons.push_ge(&row, -limits.j_max);
            }
        }
        // separating planes bind both endpoints of their segment; the start
        // state is fixed, so only states 1..=N are constrained
        for i in 1..=n {
            for s in [i - 1, i] {
                if s >= n {
                    continue;
                }
                for plane in &self.tasc.slices[s] {
                    self.push_halfspace(&mut cons, i, &plane.plane);
                }
            }
        }
        cons
    }

    fn region_halfspaces(&self, r: Region) -> Vec<Halfspace> {
        match r {
            Region::Cell(j) => self.tasc.corridor.polyhedra[j].halfspaces.clone(),
            Region::Hull => self.hull.map(|b| b.halfspaces()).unwrap_or_default(),
        }
    }

    /// Whether the fixed start state lies in `r`.
    pub fn start_in(&self, r: Region) -> bool {
        match r {
            Region::Cell(j) => self.tasc.corridor.polyhedra[j].contains_tol(&self.x0.position, START_TOL),
            Region::Hull => self
                .hull
                .is_none_or(|b| b.halfspaces().iter().all(|h| h.contains(&self.x0.position, START_TOL))),
        }
    }

    /// Full constraint set for one region per segment.
    pub fn constraints(&self, regions: &[Region]) -> Constraints {
        assert_eq!(regions.len(), self.n);
        let mut cons = self.base.clone();
        for i in 1..=self.n {
            let before = regions[i - 1];
            for hs in self.region_halfspaces(before) {
                self.push_halfspace(&mut cons, i, &hs);
            }
            if i < self.n && regions[i] != before {
                for hs in self.region_halfspaces(regions[i]) {
                    self.push_halfspace(&mut cons, i, &hs);
                }
            }
        }
        cons
    }

    pub fn solve(&self, regions: &[Region]) -> Result<QpOutcome, MpcError> {
        if regions.len() != self.n {
            return Err(MpcError::Dimension(format!(
                "{} regions for {} segments",
                regions.len(),
                self.n
            )));
        }
        for r in regions {
            if let Region::Cell(j) = *r {
                if j >= self.cell_count() {
                    return Err(MpcError::Dimension(format!("cell {j} out of range")));
                }
            }
        }
        if !self.start_in(regions[0]) {
            return Err(MpcError::StartOutsideCell);
        }
        let cons = self.constraints(regions);
        let max_iter = 20 * (3 * self.n + cons.len());
        let sol = self.qp.solve(&self.g, &cons, max_iter).map_err(|e| match e {
            QpError::Infeasible | QpError::NotPositiveDefinite => MpcError::Infeasible,
            QpError::MaxIter => MpcError::MaxIter,
        })?;
        let scale = self.g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if !sol.kkt.certified(scale, KKT_TOL) {
            return Err(MpcError::NotCertified);
        }
        let jerks: Vec<Vec3> = (0..self.n)
            .map(|k| Vec3::new(sol.x[3 * k], sol.x[3 * k + 1], sol.x[3 * k + 2]))
            .collect();
        let trajectory = DiscreteTrajectory::from_jerks(self.x0, jerks, self.step, 0);
        let cost = trajectory_cost(&trajectory, self.reference, self.weights);
        Ok(QpOutcome {
            trajectory,
            cost,
            kkt: sol.kkt,
            iterations: sol.iterations,
        })
    }

    /// Plain-text dump of the QP for `regions`.
    ///
    /// Format: a header line `qp <n_var> <n_rows> <n_eq>`, then `n_var`
    /// lines of the Hessian, one line with the linear term, then one line
    /// per constraint row holding the coefficients followed by the
    /// right-hand side. Equality rows come first; the rest read `a'x >= b`.
    pub fn dump(&self, regions: &[Region], out: &mut dyn Write) -> io::Result<()> {
        let cons = self.constraints(regions);
        let nv = 3 * self.n;
        writeln!(out, "qp {} {} {}", nv, cons.len(), cons.n_eq())?;
        let line = |vals: &mut dyn Iterator<Item = f64>| -> String {
            vals.map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" ")
        };
        let h = self.qp.hessian();
        for r in 0..nv {
            writeln!(out, "{}", line(&mut (0..nv).map(|c| h[(r, c)])))?;
        }
        writeln!(out, "{}", line(&mut self.g.iter().copied()))?;
        for i in 0..cons.len() {
            let row = cons.row(i);
            writeln!(
                out,
                "{}",
                line(&mut row.iter().copied().chain(std::iter::once(cons.rhs(i))))
            )?;
        }
        Ok(())
    }
}

fn unit(axis: usize) -> Vec3 {
    let mut e = Vec3::zeros();
    e[axis] = 1.0;
    e
}

/// `sum q |p_{i+1} - ref_i|^2 + r |j_i|^2`.
pub fn trajectory_cost(t: &DiscreteTrajectory, reference: &LocalReference, w: Weights) -> f64 {
    let track: f64 = t.states[1..]
        .iter()
        .zip(&reference.points)
        .map(|(s, r)| (s.position - r).norm_squared())
        .sum();
    let effort: f64 = t.jerks.iter().map(|j| j.norm_squared()).sum();
    w.q_ref * track + w.r_jerk * effort
}

/// One QP solve for a fixed cell per segment.
pub fn solve_qp(
    assignment: &[usize],
    tasc: &TimeAwareSafeCorridor,
    x0: AgentState,
    reference: &LocalReference,
    limits: Limits,
    weights: Weights,
    step: f64,
) -> Result<QpOutcome, MpcError> {
    let problem = MpcProblem::new(tasc, x0, reference, limits, weights, step)?;
    let regions: Vec<Region> = assignment.iter().map(|&j| Region::Cell(j)).collect();
    problem.solve(&regions)
}
