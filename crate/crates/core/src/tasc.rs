//! Time-aware safe corridor construction.
//!
//! Each future step of the new trajectory gets the static corridor plus one
//! separating plane per peer, built from the positions that the agent's own
//! previous trajectory and the peer's trajectory predict for the same
//! absolute time step.

use thiserror::Error;

use crate::geometry::{Halfspace, Vec3};
use crate::mpc::DiscreteTrajectory;
use crate::safe_corridor::SafeCorridor;

pub type AgentId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TascError {
    #[error("trajectories share no common time step")]
    NoOverlap,
    #[error("agent positions coincide; separation is undefined")]
    CoincidentAgents,
    #[error("plane normal is zero")]
    ZeroNormal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparatingHyperplane {
    /// Satisfied by the owning agent.
    pub plane: Halfspace,
    pub step: usize,
    pub peer: AgentId,
}

/// Normal tilt parameters: constant `c` plus a time-varying `m` following a
/// triangular wave of amplitude `m_amp` and period `period` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub c: f64,
    pub m_amp: f64,
    pub period: u64,
}

impl Perturbation {
    pub const NONE: Perturbation = Perturbation {
        c: 0.0,
        m_amp: 0.0,
        period: 1,
    };

    /// `m` at absolute time step `step`; identical for every agent.
    pub fn m_at(&self, step: i64) -> f64 {
        if self.period <= 1 || self.m_amp == 0.0 {
            return 0.0;
        }
        let k = self.period as f64;
        let phase = step.rem_euclid(self.period as i64) as f64;
        self.m_amp * (1.0 - (2.0 * phase / k - 1.0).abs())
    }
}

const Z_W: Vec3 = Vec3::new(0.0, 0.0, 1.0);
const Y_W: Vec3 = Vec3::new(0.0, 1.0, 0.0);
const X_W: Vec3 = Vec3::new(1.0, 0.0, 0.0);

/// Tilted plane normal with a sign-symmetric perturbation.
///
/// `perturb_normal(-n) == -perturb_normal(n)` holds exactly, so two agents
/// building a plane from the same pair of positions get collinear normals.
pub fn perturb_normal(n_hyp: Vec3, c: f64, m: f64) -> Result<Vec3, TascError> {
    let len = n_hyp.norm();
    if len == 0.0 || !len.is_finite() {
        return Err(TascError::ZeroNormal);
    }
    let n = n_hyp / len;
    let mut right = n.cross(&Z_W) + n.cross(&Y_W);
    if right.norm() < 1e-12 {
        // n is parallel to (0, 1, 1); any axis orthogonal to it that flips
        // sign with n keeps the symmetry
        right = n.cross(&X_W);
    }
    let right = right / right.norm();
    let pert = right * (c + m) + Z_W.cross(&n) * c;
    let fin = n + pert;
    Ok(fin / fin.norm())
}

/// Plane between `p_own` and `p_peer`; the owner keeps `d_rad` clearance on
/// its side of the midpoint plane.
pub fn separating_hyperplane(p_own: Vec3, p_peer: Vec3, d_rad: f64, c: f64, m: f64) -> Result<Halfspace, TascError> {
    let raw = p_peer - p_own;
    if raw.norm() == 0.0 {
        return Err(TascError::CoincidentAgents);
    }
    let normal = perturb_normal(raw, c, m)?;
    let mid = (p_own + p_peer) / 2.0;
    Ok(Halfspace {
        normal,
        offset: normal.dot(&mid) - d_rad,
    })
}

/// Index pairs `(own, peer)` of states that describe the same absolute time
/// step, in increasing time order.
pub fn align(
    own_iter: i64,
    own: &DiscreteTrajectory,
    peer_iter: i64,
    peer: &DiscreteTrajectory,
) -> Result<Vec<(usize, usize)>, TascError> {
    let first = own_iter.max(peer_iter);
    let last = (own_iter + own.states.len() as i64 - 1).min(peer_iter + peer.states.len() as i64 - 1);
    if first > last {
        return Err(TascError::NoOverlap);
    }
    Ok((first..=last)
        .map(|abs| ((abs - own_iter) as usize, (abs - peer_iter) as usize))
        .collect())
}

/// Static corridor plus per-step separating planes.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAwareSafeCorridor {
    pub corridor: SafeCorridor,
    /// `slices[s]` holds the planes constraining segment `s` (one per peer).
    pub slices: Vec<Vec<SeparatingHyperplane>>,
}

impl TimeAwareSafeCorridor {
    pub fn static_only(corridor: SafeCorridor, n: usize) -> Self {
        Self {
            corridor,
            slices: vec![Vec::new(); n],
        }
    }

    pub fn horizon(&self) -> usize {
        self.slices.len()
    }
}

/// Peer trajectory handed to [`build_tasc`].
#[derive(Debug, Clone, Copy)]
pub struct PeerPrediction<'a> {
    pub peer: AgentId,
    pub trajectory: &'a DiscreteTrajectory,
}

/// Builds the time-aware corridor for a trajectory that starts at absolute
/// step `current_iter` and has `n` segments.
///
/// Slice `s` uses the plane built from positions at absolute step
/// `current_iter + s`. Positions without a counterpart in the other
/// trajectory are ignored and the remaining slices repeat the last plane.
/// When the two predictions share no step at all, the plane is built from
/// their final (resting) positions.
pub fn build_tasc(
    corridor: &SafeCorridor,
    current_iter: i64,
    own_last: &DiscreteTrajectory,
    peers: &[PeerPrediction<'_>],
    n: usize,
    d_rad: f64,
    perturbation: Perturbation,
) -> Result<TimeAwareSafeCorridor, TascError> {
    let mut slices: Vec<Vec<SeparatingHyperplane>> = vec![Vec::with_capacity(peers.len()); n];
    for pred in peers {
        let planes = peer_planes(current_iter, own_last, pred.trajectory, n, d_rad, perturbation)?;
        for (s, plane) in planes.into_iter().enumerate() {
            slices[s].push(SeparatingHyperplane {
                plane,
                step: s,
                peer: pred.peer,
            });
        }
    }
    Ok(TimeAwareSafeCorridor {
        corridor: corridor.clone(),
        slices,
    })
}

fn peer_planes(
    current_iter: i64,
    own_last: &DiscreteTrajectory,
    peer: &DiscreteTrajectory,
    n: usize,
    d_rad: f64,
    pert: Perturbation,
) -> Result<Vec<Halfspace>, TascError> {
    let own_iter = own_last.iteration;
    let peer_iter = peer.iteration;
    let plane_at =
        |abs: i64, p_own: Vec3, p_peer: Vec3| separating_hyperplane(p_own, p_peer, d_rad, pert.c, pert.m_at(abs));
    let pairs = match align(own_iter, own_last, peer_iter, peer) {
        Ok(p) => p,
        Err(TascError::NoOverlap) => {
            let abs = (own_iter + own_last.states.len() as i64).max(peer_iter + peer.states.len() as i64) - 1;
            let plane = plane_at(abs, own_last.final_position(), peer.final_position())?;
            return Ok(vec![plane; n]);
        }
        Err(e) => return Err(e),
    };
    let mut fresh: Vec<(i64, Halfspace)> = Vec::with_capacity(n);
    for &(i, j) in &pairs {
        let abs = own_iter + i as i64;
        if abs < current_iter {
            continue;
        }
        if abs >= current_iter + n as i64 {
            break;
        }
        let plane = plane_at(abs, own_last.states[i].position, peer.states[j].position)?;
        fresh.push((abs - current_iter, plane));
    }
    if fresh.is_empty() {
        // every common step lies in the past: reuse the latest one
        let &(i, j) = pairs.last().unwrap();
        let abs = own_iter + i as i64;
        let plane = plane_at(abs, own_last.states[i].position, peer.states[j].position)?;
        return Ok(vec![plane; n]);
    }
    let mut out = Vec::with_capacity(n);
    let mut next = 0;
    for s in 0..n {
        while next + 1 < fresh.len() && fresh[next + 1].0 <= s as i64 {
            next += 1;
        }
        out.push(fresh[next].1);
    }
    Ok(out)
}
