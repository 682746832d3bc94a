//! Scenario files, per-run scenario generation and batch aggregation.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path as FsPath, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};
use crate::planner::PlannerConfig;
use crate::sim::{
    mean, obstacles_csv, ComputeModel, MetricsReport, NetworkModel, RunOutput, Scenario, SimError, SimSettings,
};
use crate::voxel_grid::WorldModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentLayout {
    /// Agents on a horizontal circle, each flying to the antipodal point.
    Circle {
        count: usize,
        radius: f64,
        height: f64,
        /// Uniform per-run offset applied to every start and goal (m).
        #[serde(default)]
        jitter: f64,
    },
    Explicit {
        starts: Vec<[f64; 3]>,
        goals: Vec<[f64; 3]>,
    },
}

/// Boxes standing on the ground, placed uniformly at random per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleField {
    pub count: usize,
    pub size: [f64; 3],
    /// Horizontal placement area for box centers, `[x_min, y_min, x_max, y_max]`.
    pub area: [f64; 4],
    /// Minimum horizontal distance from any start or goal to a box (m).
    #[serde(default = "default_clearance")]
    pub clearance: f64,
}

fn default_clearance() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// World box `[x_min, y_min, z_min, x_max, y_max, z_max]`.
    pub bounds: [f64; 6],
    pub agents: AgentLayout,
    #[serde(default)]
    pub obstacles: Option<ObstacleField>,
    #[serde(default)]
    pub network: NetworkModel,
    #[serde(default)]
    pub compute: ComputeModel,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub sim: SimSettings,
}

fn one() -> usize {
    1
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        let b = self.bounds;
        if !(b[0] < b[3] && b[1] < b[4] && b[2] < b[5]) {
            return bad(format!("bounds {b:?} are empty"));
        }
        match &self.agents {
            AgentLayout::Circle {
                count, radius, jitter, ..
            } => {
                if *count == 0 || !(*radius > 0.0) || !(*jitter >= 0.0) {
                    return bad("circle needs count >= 1, radius > 0 and jitter >= 0".into());
                }
            }
            AgentLayout::Explicit { starts, goals } => {
                if starts.is_empty() || starts.len() != goals.len() {
                    return bad(format!("{} starts for {} goals", starts.len(), goals.len()));
                }
            }
        }
        if let Some(o) = &self.obstacles {
            if o.size.iter().any(|s| !(*s > 0.0)) || o.area[0] > o.area[2] || o.area[1] > o.area[3] {
                return bad("obstacle size must be positive and area non-empty".into());
            }
        }
        // everything else is checked on a generated instance
        self.scenario(0)?.validate()?;
        Ok(())
    }

    fn rng(&self, run: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(run as u64);
        rng
    }

    /// The concrete scenario of run `run`.
    pub fn scenario(&self, run: usize) -> Result<Scenario, ConfigError> {
        let mut rng = self.rng(run);
        let (starts, goals) = match &self.agents {
            AgentLayout::Circle {
                count,
                radius,
                height,
                jitter,
            } => {
                let mut starts = Vec::with_capacity(*count);
                let mut goals = Vec::with_capacity(*count);
                for i in 0..*count {
                    let th = 2.0 * PI * i as f64 / *count as f64;
                    let dir = Vec3::new(th.cos(), th.sin(), 0.0);
                    let mut off = || {
                        if *jitter > 0.0 {
                            Vec3::new(
                                rng.random_range(-jitter..*jitter),
                                rng.random_range(-jitter..*jitter),
                                0.0,
                            )
                        } else {
                            Vec3::zeros()
                        }
                    };
                    let centre = Vec3::new(0.0, 0.0, *height);
                    starts.push(centre + dir * *radius + off());
                    goals.push(centre - dir * *radius + off());
                }
                (starts, goals)
            }
            AgentLayout::Explicit { starts, goals } => (
                starts.iter().map(|p| Vec3::from(*p)).collect(),
                goals.iter().map(|p| Vec3::from(*p)).collect(),
            ),
        };
        let b = self.bounds;
        let bounds = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]));
        let mut world = WorldModel::empty(bounds);
        if let Some(field) = &self.obstacles {
            world.obstacles = place_obstacles(field, &starts, &goals, bounds.min_v().z, &mut rng)?;
        }
        Ok(Scenario {
            starts,
            goals,
            world,
            network: self.network.clone(),
            compute: self.compute.clone(),
            planner: self.planner.clone(),
            settings: self.sim.clone(),
        })
    }
}

fn place_obstacles(
    field: &ObstacleField,
    starts: &[Vec3],
    goals: &[Vec3],
    ground: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Aabb>, ConfigError> {
    let size = Vec3::from(field.size);
    let keep_clear = |c: &Vec3| {
        starts.iter().chain(goals).all(|p| {
            let dx = (p.x - c.x).abs() - size.x / 2.0;
            let dy = (p.y - c.y).abs() - size.y / 2.0;
            dx.max(0.0).hypot(dy.max(0.0)) >= field.clearance
        })
    };
    let mut out = Vec::with_capacity(field.count);
    let mut tries = 0;
    while out.len() < field.count {
        tries += 1;
        if tries > 1000 * field.count.max(1) {
            return Err(ConfigError::Invalid(
                "cannot place obstacles clear of starts and goals".into(),
            ));
        }
        let c = Vec3::new(
            rng.random_range(field.area[0]..=field.area[2]),
            rng.random_range(field.area[1]..=field.area[3]),
            ground + size.z / 2.0,
        );
        if keep_clear(&c) {
            out.push(Aabb::from_center_size(c, size));
        }
    }
    Ok(out)
}

/// Summary statistics of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub max: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        let m = mean(xs.iter().copied())?;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        Some(Stat {
            mean: m,
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub collision_percent: f64,
    pub timeouts: usize,
    /// Stops per run.
    pub stops: Option<Stat>,
    /// Per-agent values pooled over runs.
    pub distance: Option<Stat>,
    pub velocity: Option<Stat>,
    pub flight_time: Option<Stat>,
    /// Per-plan times in ms.
    pub compute_ms: Option<Stat>,
    pub accel_cost: Option<Stat>,
    pub jerk_cost: Option<Stat>,
}

impl BatchSummary {
    pub fn from_reports(reports: &[MetricsReport]) -> Self {
        let per_agent = |f: &dyn Fn(&crate::sim::AgentMetrics) -> Option<f64>| -> Option<Stat> {
            let xs: Vec<f64> = reports.iter().flat_map(|r| r.agents.iter().filter_map(f)).collect();
            Stat::of(&xs)
        };
        let collided = reports.iter().filter(|r| r.collision_occurred).count();
        let compute: Vec<f64> = reports
            .iter()
            .flat_map(|r| r.compute_times.iter().map(|t| t * 1e3))
            .collect();
        let stops: Vec<f64> = reports.iter().map(|r| r.num_stops as f64).collect();
        Self {
            runs: reports.len(),
            collision_percent: if reports.is_empty() {
                0.0
            } else {
                100.0 * collided as f64 / reports.len() as f64
            },
            timeouts: reports.iter().filter(|r| r.timed_out).count(),
            stops: Stat::of(&stops),
            distance: per_agent(&|a| Some(a.distance)),
            velocity: per_agent(&|a| a.mean_velocity),
            flight_time: per_agent(&|a| a.flight_time),
            compute_ms: Stat::of(&compute),
            accel_cost: per_agent(&|a| Some(a.accel_cost)),
            jerk_cost: per_agent(&|a| Some(a.jerk_cost)),
        }
    }

    /// Plain-text table, `mean / max / std` per metric.
    pub fn table(&self) -> String {
        let cell = |s: &Option<Stat>| {
            s.map_or("-".to_string(), |s| {
                format!("{:.3} / {:.3} / {:.3}", s.mean, s.max, s.std)
            })
        };
        let mut out = String::new();
        writeln!(out, "runs            {}", self.runs).unwrap();
        writeln!(out, "collision %     {:.1}", self.collision_percent).unwrap();
        writeln!(out, "timeouts        {}", self.timeouts).unwrap();
        for (name, s) in [
            ("stops", &self.stops),
            ("distance m", &self.distance),
            ("velocity m/s", &self.velocity),
            ("flight time s", &self.flight_time),
            ("compute ms", &self.compute_ms),
            ("accel cost", &self.accel_cost),
            ("jerk cost", &self.jerk_cost),
        ] {
            writeln!(out, "{name:<15} {}", cell(s)).unwrap();
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.collision_percent == 0.0 && self.timeouts == 0
    }
}

pub struct BatchResult {
    pub reports: Vec<MetricsReport>,
    pub summary: BatchSummary,
}

/// Runs every run of `cfg`, writing logs under `cfg.output_dir` when set.
pub fn run_batch(
    cfg: &ScenarioConfig,
    mut progress: impl FnMut(usize, &MetricsReport),
) -> Result<BatchResult, ConfigError> {
    let mut reports = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let sc = cfg.scenario(run)?;
        let out = sc.run()?;
        if let Some(dir) = &cfg.output_dir {
            write_run(&dir.join(format!("run_{run:03}")), &sc, &out)?;
        }
        progress(run, &out.report);
        reports.push(out.report);
    }
    let summary = BatchSummary::from_reports(&reports);
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("summary.txt"), summary.table())?;
        std::fs::write(
            dir.join("summary.toml"),
            toml::to_string(&summary).expect("summary serializes"),
        )?;
    }
    Ok(BatchResult { reports, summary })
}

pub fn write_run(dir: &FsPath, sc: &Scenario, out: &RunOutput) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trajectory.csv"), out.trajectory_csv())?;
    std::fs::write(dir.join("decisions.log"), out.decision_log())?;
    std::fs::write(dir.join("metrics.toml"), out.report.to_document())?;
    std::fs::write(dir.join("obstacles.csv"), obstacles_csv(&sc.world.obstacles))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CIRCLE: &str = r#"
name = "pair"
runs = 2
seed = 7
bounds = [-6.0, -6.0, 0.0, 6.0, 6.0, 3.0]

[agents]
kind = "circle"
count = 2
radius = 4.0
height = 1.0
jitter = 0.05

[network]
latency = 0.05

[compute]
mode = "synthetic"
durations = [0.01]

[planner]
n = 9
c = 0.2
"#;

    #[test]
    fn parses_and_fills_defaults() {
        let c = ScenarioConfig::from_toml(CIRCLE).unwrap();
        assert_eq!(c.runs, 2);
        assert_eq!(c.planner.h, 0.1);
        assert_eq!(c.network.comm_range, f64::INFINITY);
        assert_eq!(c.sim.timeout, 60.0);
    }

    #[test]
    fn unknown_field_is_reported() {
        let e = ScenarioConfig::from_toml(&CIRCLE.replace("c = 0.2", "cc = 0.2")).unwrap_err();
        assert!(e.to_string().contains("cc"), "{e}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ScenarioConfig::from_toml(&CIRCLE.replace("runs = 2", "runs = 0")).is_err());
        assert!(ScenarioConfig::from_toml(&CIRCLE.replace("latency = 0.05", "latency = -1.0")).is_err());
        assert!(ScenarioConfig::from_toml(&CIRCLE.replace("radius = 4.0", "radius = 40.0")).is_err());
    }

    #[test]
    fn circle_is_antipodal_and_seeded() {
        let c = ScenarioConfig::from_toml(CIRCLE).unwrap();
        let a = c.scenario(0).unwrap();
        let b = c.scenario(0).unwrap();
        let other = c.scenario(1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.starts, other.starts);
        for (s, g) in a.starts.iter().zip(&a.goals) {
            assert!(((s - g).norm() - 8.0).abs() < 0.2);
        }
    }

    #[test]
    fn obstacles_are_placed_clear_and_grounded() {
        let mut c = ScenarioConfig::from_toml(CIRCLE).unwrap();
        c.obstacles = Some(ObstacleField {
            count: 30,
            size: [0.2, 0.2, 1.5],
            area: [-3.0, -3.0, 3.0, 3.0],
            clearance: 1.0,
        });
        let sc = c.scenario(3).unwrap();
        assert_eq!(sc.world.obstacles.len(), 30);
        for o in &sc.world.obstacles {
            assert_eq!(o.min_v().z, 0.0);
            assert!((o.max_v().z - 1.5).abs() < 1e-12);
            for p in sc.starts.iter().chain(&sc.goals) {
                assert!(!o.contains(p));
            }
        }
        assert_ne!(sc.world.obstacles, c.scenario(4).unwrap().world.obstacles);
    }

    #[test]
    fn single_run_summary_equals_report() {
        let mut c = ScenarioConfig::from_toml(CIRCLE).unwrap();
        c.runs = 1;
        let res = run_batch(&c, |_, _| {}).unwrap();
        let r = &res.reports[0];
        let s = &res.summary;
        assert_eq!(s.runs, 1);
        assert_eq!(s.collision_percent, if r.collision_occurred { 100.0 } else { 0.0 });
        assert_eq!(s.stops.unwrap().mean, r.num_stops as f64);
        assert!((s.flight_time.unwrap().mean - r.mean_flight_time.unwrap()).abs() < 1e-12);
        assert!((s.jerk_cost.unwrap().mean - r.jerk_cost).abs() < 1e-9);
        assert!(s.passed());
    }

    #[test]
    fn stats() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.max), (2.0, 3.0));
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn writes_run_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ScenarioConfig::from_toml(CIRCLE).unwrap();
        c.runs = 1;
        c.output_dir = Some(dir.path().to_owned());
        run_batch(&c, |_, _| {}).unwrap();
        for f in ["trajectory.csv", "decisions.log", "metrics.toml", "obstacles.csv"] {
            assert!(dir.path().join("run_000").join(f).is_file(), "{f}");
        }
        let doc = std::fs::read_to_string(dir.path().join("run_000/metrics.toml")).unwrap();
        assert!(MetricsReport::from_document(&doc).is_ok());
        assert!(dir.path().join("summary.txt").is_file());
    }
}
