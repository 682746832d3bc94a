use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use tasc_planner::config::{run_batch, ScenarioConfig};
use tasc_planner::sim::ComputeModel;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ComputeMode {
    Synthetic,
    Measured,
}

/// Run a multi-agent planning scenario and report safety and efficiency
/// metrics. Exits non-zero if any run had a collision or timed out.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Directory for per-run logs and the batch summary.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Number of runs.
    #[arg(short, long)]
    runs: Option<usize>,
    /// Pairwise communication latency in milliseconds.
    #[arg(short, long)]
    latency_ms: Option<f64>,
    /// Master seed.
    #[arg(short, long)]
    seed: Option<u64>,
    /// How computation time is accounted for.
    #[arg(short, long, value_enum)]
    compute: Option<ComputeMode>,
    /// Synthetic computation time in milliseconds (all agents).
    #[arg(long)]
    compute_ms: Option<f64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match ScenarioConfig::load(&args.scenario) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(o) = args.output {
        cfg.output_dir = Some(o);
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(l) = args.latency_ms {
        cfg.network.latency = l * 1e-3;
        cfg.network.pair_latency.clear();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    match args.compute {
        Some(ComputeMode::Measured) => cfg.compute = ComputeModel::Measured,
        Some(ComputeMode::Synthetic) if !matches!(cfg.compute, ComputeModel::Synthetic { .. }) => {
            cfg.compute = ComputeModel::default()
        }
        _ => {}
    }
    if let Some(ms) = args.compute_ms {
        cfg.compute = ComputeModel::Synthetic {
            durations: vec![ms * 1e-3],
        };
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    let result = run_batch(&cfg, |run, r| {
        println!(
            "run {run:>3}: collision={} stops={} timeout={} flight_time={} min_sep={:.3}",
            r.collision_occurred,
            r.num_stops,
            r.timed_out,
            r.mean_flight_time.map_or("-".into(), |t| format!("{t:.2}")),
            r.min_separation,
        );
    });
    match result {
        Ok(res) => {
            print!("{}", res.summary.table());
            if res.summary.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
