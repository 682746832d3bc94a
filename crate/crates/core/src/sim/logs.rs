use std::fmt::Write;

use crate::geometry::Aabb;
use crate::mpc::{micros_to_secs, AgentState, Micros};
use crate::scheduler::{DecisionRecord, DECISION_LOG_HEADER};
use crate::tasc::AgentId;

use crate::geometry::Vec3;

pub const TRAJECTORY_HEADER: &str = "time,agent,px,py,pz,vx,vy,vz,ax,ay,az,jx,jy,jz";

/// One executed sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub time: Micros,
    pub agent: AgentId,
    pub state: AgentState,
    pub jerk: Vec3,
}

pub(crate) fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 160);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.state;
        write!(out, "{:.6},{}", micros_to_secs(r.time), r.agent).unwrap();
        for v in [&s.position, &s.velocity, &s.acceleration, &r.jerk] {
            for c in v.iter() {
                write!(out, ",{c:.9}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub fn decision_log(records: &[DecisionRecord]) -> String {
    let mut out = String::from(DECISION_LOG_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{r}").unwrap();
    }
    out
}

pub fn obstacles_csv(obstacles: &[Aabb]) -> String {
    let mut out = String::from("min_x,min_y,min_z,max_x,max_y,max_z\n");
    for o in obstacles {
        let (a, b) = (o.min_v(), o.max_v());
        writeln!(out, "{},{},{},{},{},{}", a.x, a.y, a.z, b.x, b.y, b.z).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = [TrajectoryRow {
            time: 150_000,
            agent: 3,
            state: AgentState::at_rest(Vec3::new(1.0, 2.0, 3.0)),
            jerk: Vec3::new(0.5, 0.0, -0.5),
        }];
        let csv = trajectory_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 14);
        assert_eq!(fields[0], "0.150000");
        assert_eq!(fields[1], "3");
        assert_eq!(fields[4].parse::<f64>().unwrap(), 3.0);
        assert_eq!(fields[13].parse::<f64>().unwrap(), -0.5);
    }

    #[test]
    fn obstacle_rows() {
        let csv = obstacles_csv(&[Aabb::new(Vec3::zeros(), Vec3::new(0.2, 0.2, 1.5))]);
        assert_eq!(csv.lines().nth(1), Some("0,0,0,0.2,0.2,1.5"));
    }
}
