//! Dense strictly convex QP solver.
//!
//! Solves `min 1/2 x'Hx + g'x` subject to `a_i'x = b_i` (first `n_eq`
//! rows) and `a_i'x >= b_i` with the Goldfarb-Idnani dual active-set
//! method. `H` is factored once per [`DenseQp`], so problems that share the
//! Hessian but differ in `g` or constraints reuse the factorization.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Slack below which a constraint counts as violated (rows are unit norm).
pub const FEAS_TOL: f64 = 1e-9;
const RATIO_EPS: f64 = 1e-12;
const DEPENDENT_EPS: f64 = 1e-20;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration limit reached")]
    MaxIter,
}

/// Constraint rows, normalized to unit length on insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    n: usize,
    rows: Vec<f64>,
    rhs: Vec<f64>,
    n_eq: usize,
    /// Set when a zero row with a positive right-hand side was pushed.
    trivially_infeasible: bool,
}

impl Constraints {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: Vec::new(),
            rhs: Vec::new(),
            n_eq: 0,
            trivially_infeasible: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    pub fn n_eq(&self) -> usize {
        self.n_eq
    }

    /// `a'x = b`. Equalities must precede all inequalities.
    pub fn push_eq(&mut self, a: &[f64], b: f64) {
        assert_eq!(self.n_eq, self.len(), "equalities must come first");
        if self.push(a, b, true) {
            self.n_eq += 1;
        }
    }

    /// `a'x >= b`.
    pub fn push_ge(&mut self, a: &[f64], b: f64) {
        self.push(a, b, false);
    }

    /// `a'x <= b`.
    pub fn push_le(&mut self, a: &[f64], b: f64) {
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        self.push(&neg, -b, false);
    }

    fn push(&mut self, a: &[f64], b: f64, eq: bool) -> bool {
        assert_eq!(a.len(), self.n);
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            let ok = if eq { b == 0.0 } else { b <= 0.0 };
            if !ok {
                self.trivially_infeasible = true;
            }
            return false;
        }
        self.rows.extend(a.iter().map(|v| v / norm));
        self.rhs.push(b / norm);
        true
    }

    /// Drops rows past `len` (used to reuse a shared prefix of rows).
    pub fn truncate(&mut self, len: usize) {
        assert!(len >= self.n_eq);
        self.rows.truncate(len * self.n);
        self.rhs.truncate(len);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    pub fn rhs(&self, i: usize) -> f64 {
        self.rhs[i]
    }

    pub fn slack(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.row(i), x) - self.rhs[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `max |Hx + g - A'u|`.
    pub stationarity: f64,
    /// Largest constraint violation.
    pub primal: f64,
    /// Largest negative inequality multiplier magnitude.
    pub dual: f64,
    /// `max |u_i s_i|`, which bounds the duality gap per constraint.
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn certified(&self, scale: f64, tol: f64) -> bool {
        let bound = tol * (1.0 + scale);
        self.stationarity <= bound && self.primal <= bound && self.dual <= bound && self.complementarity <= bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per constraint row (zero when inactive).
    pub multipliers: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

/// Factored Hessian, reusable across right-hand sides and constraint sets.
#[derive(Debug, Clone)]
pub struct DenseQp {
    h: DMatrix<f64>,
    /// `L^{-T}` with `H = L L'`.
    j0: DMatrix<f64>,
}

impl DenseQp {
    pub fn new(h: DMatrix<f64>) -> Result<Self, QpError> {
        assert!(h.is_square());
        let n = h.nrows();
        let chol = h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
        let lt = chol.l().transpose();
        let j0 = lt
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .ok_or(QpError::NotPositiveDefinite)?;
        Ok(Self { h, j0 })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn solve(&self, g: &[f64], cons: &Constraints, max_iter: usize) -> Result<QpSolution, QpError> {
        let n = self.dim();
        assert_eq!(g.len(), n);
        assert_eq!(cons.dim(), n);
        if cons.trivially_infeasible {
            return Err(QpError::Infeasible);
        }
        let gv = DVector::from_column_slice(g);
        let x0 = -(&self.j0 * (self.j0.transpose() * &gv));
        let mut st = State {
            n,
            j: self.j0.clone(),
            r: DMatrix::zeros(n, n),
            x: x0.as_slice().to_vec(),
            active: Vec::new(),
            signs: Vec::new(),
            u: Vec::new(),
            is_active: vec![false; cons.len()],
            iterations: 0,
            max_iter,
            n_eq: cons.n_eq(),
        };
        for p in 0..cons.n_eq() {
            let sign = if cons.slack(p, &st.x) > 0.0 { -1.0 } else { 1.0 };
            st.add(cons, p, sign)?;
        }
        loop {
            let mut worst = -FEAS_TOL;
            let mut pick = None;
            for i in cons.n_eq()..cons.len() {
                if st.is_active[i] {
                    continue;
                }
                let s = cons.slack(i, &st.x);
                if s < worst {
                    worst = s;
                    pick = Some(i);
                }
            }
            match pick {
                Some(p) => st.add(cons, p, 1.0)?,
                None => break,
            }
        }
        Ok(self.finish(g, cons, st))
    }

    fn finish(&self, g: &[f64], cons: &Constraints, st: State) -> QpSolution {
        let n = self.dim();
        let x = st.x;
        let xv = DVector::from_column_slice(&x);
        let hx = &self.h * &xv;
        let objective = 0.5 * xv.dot(&hx) + dot(g, &x);
        let mut multipliers = vec![0.0; cons.len()];
        for ((&c, &u), &s) in st.active.iter().zip(&st.u).zip(&st.signs) {
            multipliers[c] = u * s;
        }
        let mut grad: Vec<f64> = (0..n).map(|i| hx[i] + g[i]).collect();
        let mut kkt = KktResiduals::default();
        for (i, &mu) in multipliers.iter().enumerate() {
            if mu != 0.0 {
                for (gk, rk) in grad.iter_mut().zip(cons.row(i)) {
                    *gk -= mu * rk;
                }
            }
            let s = cons.slack(i, &x);
            if i < cons.n_eq() {
                kkt.primal = kkt.primal.max(s.abs());
            } else {
                kkt.primal = kkt.primal.max(-s);
                kkt.dual = kkt.dual.max(-mu);
            }
            kkt.complementarity = kkt.complementarity.max((mu * s).abs());
        }
        kkt.stationarity = grad.iter().fold(0.0, |a, v| a.max(v.abs()));
        QpSolution {
            x,
            objective,
            multipliers,
            active: st.active,
            iterations: st.iterations,
            kkt,
        }
    }
}

struct State {
    n: usize,
    /// `L^{-T} Q` for the QR factorization of the active normals.
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    x: Vec<f64>,
    active: Vec<usize>,
    signs: Vec<f64>,
    u: Vec<f64>,
    is_active: Vec<bool>,
    iterations: usize,
    max_iter: usize,
    n_eq: usize,
}

impl State {
    /// Moves primal and dual iterates until constraint `p` (scaled by
    /// `sign`) becomes active, dropping blocking constraints on the way.
    fn add(&mut self, cons: &Constraints, p: usize, sign: f64) -> Result<(), QpError> {
        let n = self.n;
        let np: Vec<f64> = cons.row(p).iter().map(|v| v * sign).collect();
        let bp = cons.rhs(p) * sign;
        let is_eq = p < self.n_eq;
        let mut u_p = 0.0;
        loop {
            self.iterations += 1;
            if self.iterations > self.max_iter {
                return Err(QpError::MaxIter);
            }
            let q = self.active.len();
            let s = dot(&np, &self.x) - bp;
            let mut d = vec![0.0; n];
            for (c, dc) in d.iter_mut().enumerate() {
                *dc = (0..n).map(|row| self.j[(row, c)] * np[row]).sum();
            }
            let dnorm2: f64 = d.iter().map(|v| v * v).sum();
            let d2sq: f64 = d[q..].iter().map(|v| v * v).sum();
            let dependent = d2sq <= DEPENDENT_EPS.max(1e-24 * dnorm2);
            if is_eq && dependent && s.abs() <= FEAS_TOL {
                // redundant equality
                return Ok(());
            }
            let rr = self.back_substitute(&d[..q]);
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for l in 0..q {
                if self.active[l] < self.n_eq || rr[l] <= RATIO_EPS {
                    continue;
                }
                let ratio = self.u[l] / rr[l];
                if ratio < t1 {
                    t1 = ratio;
                    drop_at = Some(l);
                }
            }
            let t2 = if dependent { f64::INFINITY } else { -s / d2sq };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(QpError::Infeasible);
            }
            if t2.is_infinite() {
                for l in 0..q {
                    self.u[l] -= t1 * rr[l];
                }
                u_p += t1;
                self.drop(drop_at.unwrap());
                continue;
            }
            let t = t1.min(t2);
            for row in 0..n {
                let z: f64 = (q..n).map(|c| self.j[(row, c)] * d[c]).sum();
                self.x[row] += t * z;
            }
            for l in 0..q {
                self.u[l] -= t * rr[l];
            }
            u_p += t;
            if t2 <= t1 {
                self.push_active(p, sign, u_p, d);
                return Ok(());
            }
            self.drop(drop_at.unwrap());
        }
    }

    fn back_substitute(&self, d: &[f64]) -> Vec<f64> {
        let q = d.len();
        let mut out = vec![0.0; q];
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in i + 1..q {
                acc -= self.r[(i, k)] * out[k];
            }
            out[i] = acc / self.r[(i, i)];
        }
        out
    }

    fn push_active(&mut self, p: usize, sign: f64, u_p: f64, mut d: Vec<f64>) {
        let n = self.n;
        let q = self.active.len();
        for i in (q + 1..n).rev() {
            let (c, s, rho) = givens(d[i - 1], d[i]);
            if rho == 0.0 {
                continue;
            }
            d[i - 1] = rho;
            d[i] = 0.0;
            self.rotate_j(i - 1, i, c, s);
        }
        if d[q] < 0.0 {
            d[q] = -d[q];
            for row in 0..n {
                self.j[(row, q)] = -self.j[(row, q)];
            }
        }
        for (i, di) in d.iter().enumerate().take(q + 1) {
            self.r[(i, q)] = *di;
        }
        self.active.push(p);
        self.signs.push(sign);
        self.u.push(u_p);
        self.is_active[p] = true;
    }

    fn drop(&mut self, k: usize) {
        let q = self.active.len();
        let c = self.active.remove(k);
        self.signs.remove(k);
        self.u.remove(k);
        self.is_active[c] = false;
        for col in k..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for col in k..q - 1 {
            let (cs, sn, rho) = givens(self.r[(col, col)], self.r[(col + 1, col)]);
            if rho == 0.0 {
                continue;
            }
            for cc in col..q - 1 {
                let a = self.r[(col, cc)];
                let b = self.r[(col + 1, cc)];
                self.r[(col, cc)] = cs * a + sn * b;
                self.r[(col + 1, cc)] = -sn * a + cs * b;
            }
            self.r[(col + 1, col)] = 0.0;
            self.rotate_j(col, col + 1, cs, sn);
        }
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in 0..self.n {
            let ja = self.j[(row, a)];
            let jb = self.j[(row, b)];
            self.j[(row, a)] = c * ja + s * jb;
            self.j[(row, b)] = -s * ja + c * jb;
        }
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let rho = a.hypot(b);
    if rho == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / rho, b / rho, rho)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
