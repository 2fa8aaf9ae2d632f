use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;

use roundabout_core::experiments::{penetration_grid, run_sweep, SweepSpec};
use roundabout_core::sequencing::Policy;
use roundabout_core::simulator::{Demand, KindFilter, ScenarioConfig, TraceLevel};

/// Mixed-traffic roundabout simulator and experiment runner.
#[derive(Debug, Parser)]
#[command(name = "roundabout", version)]
struct Args {
    /// Scenario JSON file, or a demand preset: balanced, unbalanced, heavy.
    /// Repeat or comma-separate to sweep several.
    #[arg(long, value_delimiter = ',', default_value = "balanced")]
    scenario: Vec<String>,

    /// Sequencing policy: ss, bs or hdv. Comma-separated for several.
    #[arg(long, value_delimiter = ',', default_value = "ss")]
    policy: Vec<Policy>,

    /// Automated-vehicle share in [0, 1], a comma-separated list, or
    /// `sweep` for 0, 0.2, ..., 1.0. Defaults to the scenario's own value.
    #[arg(long)]
    penetration: Option<String>,

    /// Seeds, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seed: Vec<u64>,

    /// Runs per listed seed; replication k of seed s uses seed s + k.
    #[arg(long, default_value_t = 1)]
    replications: u64,

    /// Seconds during which vehicles arrive.
    #[arg(long)]
    duration: Option<f64>,

    /// Prediction horizon in steps, comma-separated for several.
    #[arg(long, value_delimiter = ',')]
    horizon: Vec<usize>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Trace detail: off, summary or full.
    #[arg(long)]
    trace: Option<TraceLevel>,

    /// Number of worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn load_scenario(spec: &str, trace: Option<TraceLevel>) -> Result<(String, ScenarioConfig)> {
    let (name, mut config) = match Demand::from_name(spec) {
        Some(demand) => (demand.name().to_string(), ScenarioConfig::preset(demand)),
        None => {
            let path = Path::new(spec);
            let config =
                ScenarioConfig::from_path(path).with_context(|| format!("loading scenario `{}`", path.display()))?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| config.name.clone());
            (stem, config)
        }
    };
    if let Some(level) = trace {
        config.trace = level;
    }
    Ok((name, config))
}

fn parse_penetrations(text: &str) -> Result<Vec<f64>> {
    if text.eq_ignore_ascii_case("sweep") {
        return Ok(penetration_grid());
    }
    text.split(',')
        .map(|p| {
            let value: f64 = p.trim().parse().with_context(|| format!("invalid penetration `{p}`"))?;
            if !(0.0..=1.0).contains(&value) {
                bail!("penetration {value} is outside [0, 1]");
            }
            Ok(value)
        })
        .collect()
}

fn build_spec(args: &Args) -> Result<SweepSpec> {
    let scenarios = args
        .scenario
        .iter()
        .map(|s| load_scenario(s, args.trace))
        .collect::<Result<Vec<_>>>()?;
    let penetrations = match &args.penetration {
        Some(text) => parse_penetrations(text)?,
        None => {
            let mut own: Vec<f64> = scenarios.iter().map(|(_, c)| c.cav_penetration).collect();
            own.sort_by(f64::total_cmp);
            own.dedup();
            own
        }
    };
    if args.replications == 0 {
        bail!("--replications must be at least 1");
    }
    let mut seeds: Vec<u64> = args
        .seed
        .iter()
        .flat_map(|&s| (0..args.replications).map(move |k| s + k))
        .collect();
    seeds.sort_unstable();
    seeds.dedup();
    if let Some(d) = args.duration {
        if !(d >= 0.0 && d.is_finite()) {
            bail!("--duration must be finite and non-negative");
        }
    }
    if args.horizon.contains(&0) {
        bail!("--horizon must be at least 1");
    }
    Ok(SweepSpec {
        scenarios,
        policies: args.policy.clone(),
        penetrations,
        seeds,
        horizons: args.horizon.clone(),
        duration: args.duration,
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(args: &Args) -> Result<bool> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let spec = build_spec(args)?;
    let result = run_sweep(&spec, Some(&args.out)).with_context(|| format!("writing to {}", args.out.display()))?;

    for cell in &result.cells {
        let get = |metric: &str| {
            cell.stat(metric, KindFilter::All)
                .map(|s| format!("{:.3}", s.mean))
                .unwrap_or_else(|| "-".into())
        };
        println!(
            "{} {} p={} H={} seeds={}: energy {} time {} unsafe {} hard-decel {}",
            cell.key.scenario,
            cell.key.policy.label(),
            cell.key.penetration_label(),
            cell.key.horizon,
            cell.ledgers.len(),
            get("Avg. Energy"),
            get("Avg. Time"),
            get("Avg. Unsafe Cnt."),
            get("Avg. Hard Deceleration Cnt."),
        );
    }
    for f in &result.failures {
        eprintln!(
            "failed: {} {} p={} seed {}: {}",
            f.cell.scenario,
            f.cell.policy.label(),
            f.cell.penetration_label(),
            f.seed,
            f.error
        );
    }
    println!("results in {}", args.out.display());
    Ok(result.failures.is_empty())
}
