//! Per-agent planning gate under communication latency.
//!
//! At every period boundary an agent either plans, consuming the oldest
//! unused trajectory of each peer, or skips the period. It skips when some
//! peer has no unused trajectory, or when, going by the latest observed
//! delay from that peer, the peer cannot have received the agent's own last
//! trajectory yet.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::mpc::{micros_to_secs, DiscreteTrajectory, Micros};
use crate::tasc::AgentId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("message from agent {sender} received at {t_rec} us before it was sent at {gen_end} us")]
    ClockSkew {
        sender: AgentId,
        gen_end: Micros,
        t_rec: Micros,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMessage {
    pub sender: AgentId,
    pub payload: DiscreteTrajectory,
}

/// Stamps `own` as sent now and wraps it for the network.
pub fn broadcast(sender: AgentId, mut own: DiscreteTrajectory, t_send: Micros) -> TrajectoryMessage {
    own.gen_end = t_send;
    debug_assert!(own.gen_end >= own.gen_start);
    TrajectoryMessage { sender, payload: own }
}

pub fn estimate_delay(msg: &TrajectoryMessage, t_rec: Micros) -> Result<Micros, SchedulerError> {
    let d = t_rec - msg.payload.gen_end;
    if d < 0 {
        return Err(SchedulerError::ClockSkew {
            sender: msg.sender,
            gen_end: msg.payload.gen_end,
            t_rec,
        });
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeerBuffer {
    /// Unused messages, oldest first.
    pub queue: VecDeque<TrajectoryMessage>,
    pub last_delay: Option<Micros>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// Every trajectory received from `peer` has been used.
    EmptyBuffer { peer: AgentId },
    /// `peer` is not expected to hold our last trajectory before `eta`.
    PeerPending { peer: AgentId, eta: Micros },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Plan with these messages (one per peer, ordered by sender).
    Plan {
        consumed: Vec<TrajectoryMessage>,
    },
    Skip(SkipReason),
}

/// What became of a Plan decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanOutcome {
    Committed,
    /// The solver failed; the previous trajectory was re-sent.
    Recommitted,
    /// Computation overran the period; the previous trajectory was re-sent.
    Overrun,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoggedDecision {
    Plan {
        consumed: Vec<(AgentId, i64)>,
        outcome: Option<PlanOutcome>,
    },
    Skip(SkipReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub iteration: i64,
    pub time: Micros,
    pub agent: AgentId,
    pub decision: LoggedDecision,
}

impl DecisionRecord {
    pub fn is_plan(&self) -> bool {
        matches!(self.decision, LoggedDecision::Plan { .. })
    }
}

/// Header of the decision log.
pub const DECISION_LOG_HEADER: &str = "# iteration time_s agent decision details";

impl fmt::Display for DecisionRecord {
    /// `<k> <t> <agent> PLAN <outcome> <peer>@<iter>...` or
    /// `<k> <t> <agent> SKIP empty_buffer peer=<j>` or
    /// `<k> <t> <agent> SKIP peer_pending peer=<j> eta=<t>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:.6} {} ", self.iteration, micros_to_secs(self.time), self.agent)?;
        match &self.decision {
            LoggedDecision::Plan { consumed, outcome } => {
                let tag = match outcome {
                    None => "pending",
                    Some(PlanOutcome::Committed) => "committed",
                    Some(PlanOutcome::Recommitted) => "recommitted",
                    Some(PlanOutcome::Overrun) => "overrun",
                };
                write!(f, "PLAN {tag}")?;
                for (peer, k) in consumed {
                    write!(f, " {peer}@{k}")?;
                }
                Ok(())
            }
            LoggedDecision::Skip(SkipReason::EmptyBuffer { peer }) => write!(f, "SKIP empty_buffer peer={peer}"),
            LoggedDecision::Skip(SkipReason::PeerPending { peer, eta }) => {
                write!(f, "SKIP peer_pending peer={peer} eta={:.6}", micros_to_secs(*eta))
            }
        }
    }
}

/// Buffers and decision history of one agent.
#[derive(Debug, Clone, Default)]
pub struct Scheduler {
    pub agent: AgentId,
    buffers: BTreeMap<AgentId, PeerBuffer>,
    pub log: Vec<DecisionRecord>,
}

impl Scheduler {
    pub fn new(agent: AgentId) -> Self {
        Self {
            agent,
            buffers: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn buffer(&self, peer: AgentId) -> Option<&PeerBuffer> {
        self.buffers.get(&peer)
    }

    /// Drops everything buffered from `peer`.
    pub fn forget(&mut self, peer: AgentId) {
        self.buffers.remove(&peer);
    }

    /// Queues `msg` and updates the delay estimate for its sender.
    pub fn receive(&mut self, msg: TrajectoryMessage, t_rec: Micros) -> Result<(), SchedulerError> {
        let d = estimate_delay(&msg, t_rec)?;
        let buf = self.buffers.entry(msg.sender).or_default();
        buf.last_delay = Some(d);
        buf.queue.push_back(msg);
        Ok(())
    }

    /// Decision at the boundary of `iteration` (time `t_cur`) given the
    /// peers currently in range.
    pub fn gate(
        &mut self,
        iteration: i64,
        peers: &[AgentId],
        own_last: &DiscreteTrajectory,
        t_cur: Micros,
    ) -> Decision {
        let decision = self.decide(iteration, peers, own_last, t_cur);
        let logged = match &decision {
            Decision::Plan { consumed } => LoggedDecision::Plan {
                consumed: consumed.iter().map(|m| (m.sender, m.payload.iteration)).collect(),
                outcome: None,
            },
            Decision::Skip(r) => LoggedDecision::Skip(*r),
        };
        self.log.push(DecisionRecord {
            iteration,
            time: t_cur,
            agent: self.agent,
            decision: logged,
        });
        decision
    }

    fn decide(&mut self, iteration: i64, peers: &[AgentId], own_last: &DiscreteTrajectory, t_cur: Micros) -> Decision {
        if iteration == 0 {
            return Decision::Plan { consumed: Vec::new() };
        }
        let mut sorted = peers.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &peer in &sorted {
            if self.buffers.get(&peer).is_none_or(|b| b.queue.is_empty()) {
                return Decision::Skip(SkipReason::EmptyBuffer { peer });
            }
        }
        for &peer in &sorted {
            let delay = self.buffers[&peer].last_delay.unwrap_or(0);
            let eta = own_last.gen_end + delay;
            if eta > t_cur {
                return Decision::Skip(SkipReason::PeerPending { peer, eta });
            }
        }
        let consumed = sorted
            .iter()
            .map(|p| self.buffers.get_mut(p).unwrap().queue.pop_front().unwrap())
            .collect();
        Decision::Plan { consumed }
    }

    /// Records what came of the latest Plan decision.
    pub fn set_outcome(&mut self, iteration: i64, outcome: PlanOutcome) {
        if let Some(rec) = self.log.iter_mut().rev().find(|r| r.iteration == iteration) {
            if let LoggedDecision::Plan { outcome: o, .. } = &mut rec.decision {
                *o = Some(outcome);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::mpc::AgentState;
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    fn traj(iteration: i64, gen_start: Micros, gen_end: Micros) -> DiscreteTrajectory {
        let mut t = DiscreteTrajectory::hover(AgentState::at_rest(Vec3::zeros()), 3, 0.1, iteration, gen_start);
        t.gen_end = gen_end;
        t
    }

    #[test]
    fn delay_is_reception_minus_send() {
        let m = TrajectoryMessage {
            sender: 1,
            payload: traj(0, 0, 1_000_000),
        };
        assert_eq!(estimate_delay(&m, 1_050_000), Ok(50_000));
        assert_eq!(estimate_delay(&m, 1_000_000), Ok(0));
        assert!(matches!(
            estimate_delay(&m, 999_999),
            Err(SchedulerError::ClockSkew { .. })
        ));
    }

    #[test]
    fn no_peers_always_plans() {
        let mut s = Scheduler::new(0);
        for k in 0..5 {
            assert!(matches!(
                s.gate(k, &[], &traj(0, 0, 0), k * 100_000),
                Decision::Plan { .. }
            ));
        }
    }

    #[test]
    fn broadcast_stamps_send_time() {
        let m = broadcast(4, traj(2, 200_000, 200_000), 215_000);
        assert_eq!(m.payload.gen_end, 215_000);
        assert_eq!(m.sender, 4);
    }

    #[test]
    fn consumes_oldest_first() {
        let mut s = Scheduler::new(0);
        s.receive(
            TrajectoryMessage {
                sender: 1,
                payload: traj(0, 0, 10),
            },
            20,
        )
        .unwrap();
        s.receive(
            TrajectoryMessage {
                sender: 1,
                payload: traj(1, 100, 110),
            },
            120,
        )
        .unwrap();
        let Decision::Plan { consumed } = s.gate(2, &[1], &traj(0, 0, 10), 200) else {
            panic!()
        };
        assert_eq!(consumed[0].payload.iteration, 0);
        let Decision::Plan { consumed } = s.gate(3, &[1], &traj(0, 0, 10), 300) else {
            panic!()
        };
        assert_eq!(consumed[0].payload.iteration, 1);
        assert_eq!(
            s.gate(4, &[1], &traj(0, 0, 10), 400),
            Decision::Skip(SkipReason::EmptyBuffer { peer: 1 })
        );
    }

    #[test]
    fn log_line_format() {
        let rec = DecisionRecord {
            iteration: 3,
            time: 300_000,
            agent: 2,
            decision: LoggedDecision::Plan {
                consumed: vec![(1, 1), (3, 2)],
                outcome: Some(PlanOutcome::Committed),
            },
        };
        assert_eq!(rec.to_string(), "3 0.300000 2 PLAN committed 1@1 3@2");
        let skip = DecisionRecord {
            iteration: 4,
            time: 400_000,
            agent: 2,
            decision: LoggedDecision::Skip(SkipReason::PeerPending { peer: 3, eta: 450_000 }),
        };
        assert_eq!(skip.to_string(), "4 0.400000 2 SKIP peer_pending peer=3 eta=0.450000");
    }

    /// Scheduler-only world: fixed links, synthetic compute, latency per
    /// link. Returns every agent's log.
    fn run_links(
        agents: usize,
        links: &[(AgentId, AgentId, Micros)],
        compute: Micros,
        h: Micros,
        periods: i64,
    ) -> Vec<Vec<DecisionRecord>> {
        let peers_of = |a: AgentId| -> Vec<(AgentId, Micros)> {
            links
                .iter()
                .filter_map(|&(i, j, l)| {
                    if i == a {
                        Some((j, l))
                    } else if j == a {
                        Some((i, l))
                    } else {
                        None
                    }
                })
                .collect()
        };
        let mut sched: Vec<Scheduler> = (0..agents).map(Scheduler::new).collect();
        let mut own: Vec<DiscreteTrajectory> = (0..agents).map(|_| traj(-1, 0, 0)).collect();
        // (time, class, seq) with class 0 = delivery, 1 = compute done
        let mut events: BinaryHeap<Reverse<(Micros, u8, usize, AgentId, AgentId, i64)>> = BinaryHeap::new();
        let mut msgs: Vec<TrajectoryMessage> = Vec::new();
        let mut seq = 0;
        for k in 0..periods {
            let t = k * h;
            while let Some(Reverse((te, class, idx, a, _, it))) = events.peek().copied() {
                if te > t {
                    break;
                }
                events.pop();
                if class == 0 {
                    sched[a].receive(msgs[idx].clone(), te).unwrap();
                } else {
                    let mut tr = traj(it, it * h, te);
                    tr.gen_end = te;
                    own[a] = tr.clone();
                    for (p, l) in peers_of(a) {
                        msgs.push(broadcast(a, tr.clone(), te));
                        seq += 1;
                        events.push(Reverse((te + l, 0, msgs.len() - 1, p, a, it)));
                    }
                }
            }
            for a in 0..agents {
                let peers: Vec<AgentId> = peers_of(a).iter().map(|p| p.0).collect();
                if let Decision::Plan { .. } = sched[a].gate(k, &peers, &own[a], t) {
                    seq += 1;
                    events.push(Reverse((t + compute, 1, seq, a, a, k)));
                }
            }
        }
        sched.into_iter().map(|s| s.log).collect()
    }

    fn summary(log: &[DecisionRecord]) -> String {
        log.iter()
            .map(|r| match &r.decision {
                LoggedDecision::Plan { consumed, .. } => {
                    let c: Vec<String> = consumed.iter().map(|(p, k)| format!("{p}@{k}")).collect();
                    format!("P[{}]", c.join(","))
                }
                LoggedDecision::Skip(SkipReason::EmptyBuffer { peer }) => format!("E{peer}"),
                LoggedDecision::Skip(SkipReason::PeerPending { peer, .. }) => format!("W{peer}"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Three-agent chain: 0 - 1 - 2 with latencies 30 ms and 130 ms,
    /// compute 20 ms, h = 100 ms. Expected decisions worked out by hand.
    #[test]
    fn three_agent_chain() {
        let logs = run_links(3, &[(0, 1, 30_000), (1, 2, 130_000)], 20_000, 100_000, 6);
        assert_eq!(summary(&logs[0]), "P[] P[1@0] E1 P[1@2] E1 P[1@4]");
        assert_eq!(summary(&logs[1]), "P[] E2 P[0@0,2@0] E2 P[0@1,2@2] E2");
        assert_eq!(summary(&logs[2]), "P[] E1 P[1@0] E1 P[1@2] E1");
    }

    /// A pending skip: the peer's trajectories keep arriving but ours reaches
    /// it late.
    #[test]
    fn pending_skip_when_own_trajectory_in_flight() {
        let mut s = Scheduler::new(0);
        // own last sent at 120 ms; the peer's messages take 90 ms
        s.receive(
            TrajectoryMessage {
                sender: 1,
                payload: traj(0, 0, 10_000),
            },
            100_000,
        )
        .unwrap();
        let own = traj(1, 100_000, 120_000);
        assert_eq!(
            s.gate(2, &[1], &own, 200_000),
            Decision::Skip(SkipReason::PeerPending { peer: 1, eta: 210_000 })
        );
        assert!(matches!(s.gate(3, &[1], &own, 300_000), Decision::Plan { .. }));
    }

    #[test]
    fn latency_equal_to_period_halves_rate() {
        let logs = run_links(2, &[(0, 1, 100_000)], 10_000, 100_000, 12);
        for log in &logs {
            let plans: Vec<i64> = log.iter().filter(|r| r.is_plan()).map(|r| r.iteration).collect();
            assert_eq!(plans, vec![0, 2, 4, 6, 8, 10]);
        }
    }

    #[test]
    fn short_latency_plans_every_period() {
        let logs = run_links(2, &[(0, 1, 90_000)], 10_000, 100_000, 8);
        for log in &logs {
            assert!(log.iter().all(|r| r.is_plan()));
        }
    }
}
