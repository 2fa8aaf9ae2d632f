//! Seeded batch sweeps over scenarios, policies, penetration rates and
//! horizons, with Table-style summaries.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::sequencing::Policy;
use crate::simulator::metrics::{fmt, METRIC_LABELS};
use crate::simulator::{run, KindFilter, MetricsLedger, ScenarioConfig};

/// The standard penetration grid `0, 0.2, …, 1.0`.
pub fn penetration_grid() -> Vec<f64> {
    (0..=5).map(|k| k as f64 / 5.0).collect()
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Named base scenarios (for example one per demand pattern).
    pub scenarios: Vec<(String, ScenarioConfig)>,
    pub policies: Vec<Policy>,
    pub penetrations: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Horizon overrides; empty keeps each scenario's own.
    pub horizons: Vec<usize>,
    /// Simulated duration override.
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CellKey {
    pub scenario: String,
    pub policy: Policy,
    /// Penetration in thousandths, so keys order and compare exactly.
    pub penetration_milli: u32,
    pub horizon: usize,
}

impl CellKey {
    pub fn penetration(&self) -> f64 {
        self.penetration_milli as f64 / 1000.0
    }

    pub fn penetration_label(&self) -> String {
        format!("{:.2}", self.penetration())
    }

    /// `<scenario>/<policy>/<penetration>` below the output root.
    pub fn relative_dir(&self) -> PathBuf {
        PathBuf::from(&self.scenario)
            .join(self.policy.label())
            .join(self.penetration_label())
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub key: CellKey,
    pub config: ScenarioConfig,
}

impl SweepSpec {
    /// Expands the spec into cells. The human-only policy has no automated
    /// vehicles, so it gets a single cell at penetration 0.
    pub fn cells(&self) -> Vec<Cell> {
        let horizons: Vec<Option<usize>> = if self.horizons.is_empty() {
            vec![None]
        } else {
            self.horizons.iter().copied().map(Some).collect()
        };
        let multi_horizon = horizons.len() > 1;
        let mut cells = BTreeMap::new();
        for (name, base) in &self.scenarios {
            for &policy in &self.policies {
                let penetrations = if policy == Policy::Hdv {
                    vec![0.0]
                } else {
                    self.penetrations.clone()
                };
                for &penetration in &penetrations {
                    for &horizon in &horizons {
                        let mut config = base.clone();
                        config.policy = policy;
                        config.cav_penetration = penetration;
                        if let Some(h) = horizon {
                            config.controller.horizon = h;
                        }
                        if let Some(d) = self.duration {
                            config.duration = d;
                        }
                        let scenario = if multi_horizon {
                            format!("{name}_h{}", config.controller.horizon)
                        } else {
                            name.clone()
                        };
                        config.name = scenario.clone();
                        let key = CellKey {
                            scenario,
                            policy,
                            penetration_milli: (penetration * 1000.0).round() as u32,
                            horizon: config.controller.horizon,
                        };
                        cells.entry(key.clone()).or_insert(Cell { key, config });
                    }
                }
            }
        }
        cells.into_values().collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub cell: CellKey,
    pub seed: u64,
    pub error: String,
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub key: CellKey,
    pub ledgers: BTreeMap<u64, MetricsLedger>,
}

impl CellResult {
    pub fn stat(&self, metric: &str, kind: KindFilter) -> Option<Stat> {
        let values: Vec<f64> = self
            .ledgers
            .values()
            .filter_map(|l| l.average(metric, kind))
            .collect();
        Stat::from_values(&values)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub cells: Vec<CellResult>,
    pub failures: Vec<Failure>,
}

impl SweepResult {
    pub fn cell(&self, key: &CellKey) -> Option<&CellResult> {
        self.cells.iter().find(|c| &c.key == key)
    }

    /// Long form: one row per cell, metric and vehicle class.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("scenario,policy,penetration,horizon,metric,vehicles,mean,std,n\n");
        for cell in &self.cells {
            for metric in METRIC_LABELS {
                for kind in KindFilter::ALL {
                    let stat = cell.stat(metric, kind);
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{}\n",
                        cell.key.scenario,
                        cell.key.policy.label(),
                        fmt(cell.key.penetration()),
                        cell.key.horizon,
                        metric,
                        kind.label(),
                        stat.map(|s| fmt(s.mean)).unwrap_or_default(),
                        stat.map(|s| fmt(s.std)).unwrap_or_default(),
                        stat.map_or(0, |s| s.n),
                    ));
                }
            }
        }
        out
    }

    /// Wide form per scenario, policy and horizon: metrics down, penetration
    /// rates across. Human-only cells fill the penetration-0 column of every
    /// policy that has no cell of its own there.
    pub fn table_csv(&self) -> String {
        let mut groups: BTreeMap<(String, Policy, usize), Vec<&CellResult>> = BTreeMap::new();
        for cell in &self.cells {
            if cell.key.policy != Policy::Hdv {
                groups
                    .entry((cell.key.scenario.clone(), cell.key.policy, cell.key.horizon))
                    .or_default()
                    .push(cell);
            }
        }
        for cell in &self.cells {
            if cell.key.policy == Policy::Hdv {
                let mut placed = false;
                for ((scenario, _, horizon), cells) in groups.iter_mut() {
                    if *scenario == cell.key.scenario
                        && *horizon == cell.key.horizon
                        && !cells.iter().any(|c| c.key.penetration_milli == 0)
                    {
                        cells.push(cell);
                        placed = true;
                    }
                }
                if !placed {
                    groups
                        .entry((cell.key.scenario.clone(), Policy::Hdv, cell.key.horizon))
                        .or_default()
                        .push(cell);
                }
            }
        }

        let mut out = String::new();
        for ((scenario, policy, horizon), mut cells) in groups {
            cells.sort_by_key(|c| c.key.penetration_milli);
            out.push_str(&format!("# scenario={scenario} policy={} horizon={horizon}\n", policy.label()));
            out.push_str("metric,vehicles");
            for c in &cells {
                out.push_str(&format!(",{}", fmt(c.key.penetration())));
            }
            out.push('\n');
            for metric in METRIC_LABELS {
                for kind in KindFilter::ALL {
                    out.push_str(&format!("{metric},{}", kind.label()));
                    for c in &cells {
                        out.push(',');
                        if let Some(s) = c.stat(metric, kind) {
                            out.push_str(&fmt(s.mean));
                        }
                    }
                    out.push('\n');
                }
            }
            out.push('\n');
        }
        out
    }

    /// All-vehicle means divided by the human-only baseline of the same
    /// scenario and horizon.
    pub fn normalized_csv(&self) -> String {
        let mut out = String::from("scenario,policy,penetration,horizon,metric,value\n");
        for cell in &self.cells {
            let Some(base) = self.baseline_for(&cell.key) else { continue };
            for metric in METRIC_LABELS {
                let value = match (cell.stat(metric, KindFilter::All), base.stat(metric, KindFilter::All)) {
                    (Some(v), Some(b)) if b.mean != 0.0 => fmt(v.mean / b.mean),
                    _ => String::new(),
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    cell.key.scenario,
                    cell.key.policy.label(),
                    fmt(cell.key.penetration()),
                    cell.key.horizon,
                    metric,
                    value
                ));
            }
        }
        out
    }

    fn baseline_for(&self, key: &CellKey) -> Option<&CellResult> {
        let same = |c: &&CellResult| {
            c.key.scenario == key.scenario && c.key.horizon == key.horizon && c.key.penetration_milli == 0
        };
        self.cells
            .iter()
            .filter(same)
            .find(|c| c.key.policy == Policy::Hdv)
            .or_else(|| self.cells.iter().filter(same).find(|c| c.key.policy == key.policy))
    }

    pub fn failures_json(&self) -> String {
        serde_json::to_string_pretty(&self.failures).expect("failures serialize")
    }
}

/// Output of one seed of one cell.
struct SeedRun {
    cell: usize,
    seed: u64,
    outcome: Result<MetricsLedger, String>,
}

/// Runs every cell for every seed in parallel. When `out` is given, each
/// run writes `ledger.csv`, `trace.jsonl` and `config.json` under
/// `<out>/<scenario>/<policy>/<penetration>/<seed>/`, and the summaries go
/// to `<out>`. A failed seed drops its whole cell from the summaries.
pub fn run_sweep(spec: &SweepSpec, out: Option<&Path>) -> io::Result<SweepResult> {
    let cells = spec.cells();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();

    let runs: Vec<SeedRun> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let cell = &cells[c];
            let config = ScenarioConfig {
                seed,
                ..cell.config.clone()
            };
            SeedRun {
                cell: c,
                seed,
                outcome: run_one(&config, out.map(|o| o.join(cell.key.relative_dir()).join(seed.to_string()))),
            }
        })
        .collect();

    let mut result = SweepResult::default();
    let mut by_cell: Vec<BTreeMap<u64, MetricsLedger>> = vec![BTreeMap::new(); cells.len()];
    let mut failed = vec![false; cells.len()];
    for r in runs {
        match r.outcome {
            Ok(ledger) => {
                by_cell[r.cell].insert(r.seed, ledger);
            }
            Err(error) => {
                failed[r.cell] = true;
                result.failures.push(Failure {
                    cell: cells[r.cell].key.clone(),
                    seed: r.seed,
                    error,
                });
            }
        }
    }
    for ((cell, ledgers), failed) in cells.into_iter().zip(by_cell).zip(failed) {
        if !failed {
            result.cells.push(CellResult { key: cell.key, ledgers });
        }
    }

    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join("summary.csv"), result.summary_csv())?;
        fs::write(out.join("table.csv"), result.table_csv())?;
        fs::write(out.join("normalized.csv"), result.normalized_csv())?;
        fs::write(out.join("failures.json"), result.failures_json())?;
    }
    Ok(result)
}

fn run_one(config: &ScenarioConfig, dir: Option<PathBuf>) -> Result<MetricsLedger, String> {
    let output = catch_unwind(AssertUnwindSafe(|| run(config)))
        .map_err(|panic| {
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "run panicked".into())
        })?
        .map_err(|e| e.to_string())?;
    if let Some(dir) = dir {
        let write = || -> io::Result<()> {
            fs::create_dir_all(&dir)?;
            fs::write(dir.join("ledger.csv"), output.ledger.to_csv())?;
            fs::write(dir.join("trace.jsonl"), &output.trace)?;
            fs::write(dir.join("config.json"), config.to_json())?;
            Ok(())
        };
        write().map_err(|e| format!("cannot write run output: {e}"))?;
    }
    Ok(output.ledger)
}
