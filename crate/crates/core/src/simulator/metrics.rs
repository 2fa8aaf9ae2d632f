//! Efficiency and safety bookkeeping per vehicle and per run.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::geometry::SegmentRole;
use crate::vehicle::{VehicleId, VehicleKind, VehicleLimits};

/// Counts episodes (rising edges) and total steps of a condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EpisodeCounter {
    pub episodes: u64,
    pub steps: u64,
    #[serde(skip)]
    active: bool,
}

impl EpisodeCounter {
    /// Returns true when a new episode starts.
    pub fn update(&mut self, condition: bool) -> bool {
        let onset = condition && !self.active;
        if condition {
            self.steps += 1;
        }
        if onset {
            self.episodes += 1;
        }
        self.active = condition;
        onset
    }

    pub fn is_active(&self) -> bool {
        self.active
    }
}

/// Rear-end condition: the gap must be at least `φ v + δ`. Shortfalls up
/// to `tolerance` are treated as rounding.
pub fn is_unsafe(gap: f64, v: f64, limits: &VehicleLimits, tolerance: f64) -> bool {
    gap < limits.phi * v + limits.delta - tolerance
}

pub fn is_hard_decel(u: f64, limits: &VehicleLimits) -> bool {
    u <= limits.u_min + 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    pub time: f64,
    pub vehicle: VehicleId,
    pub role: SegmentRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PetEvent {
    pub mp: usize,
    pub leader: VehicleId,
    pub follower: VehicleId,
    pub pet: f64,
    pub critical: bool,
}

/// Post-encroachment times between consecutive crossings of a merging
/// point by vehicles from different roads.
#[derive(Debug, Clone, PartialEq)]
pub struct PetTracker {
    pub threshold: f64,
    pub critical_below: bool,
    last: BTreeMap<usize, Crossing>,
}

impl PetTracker {
    pub fn new(threshold: f64, critical_below: bool) -> Self {
        Self {
            threshold,
            critical_below,
            last: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, mp: usize, crossing: Crossing) -> Option<PetEvent> {
        let previous = self.last.insert(mp, crossing);
        let leader = previous.filter(|p| p.role != crossing.role)?;
        let pet = crossing.time - leader.time;
        let critical = if self.critical_below {
            pet < self.threshold
        } else {
            pet > self.threshold
        };
        Some(PetEvent {
            mp,
            leader: leader.vehicle,
            follower: crossing.vehicle,
            pet,
            critical,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub origin: usize,
    pub exit: usize,
    pub t0: f64,
    pub tf: Option<f64>,
    pub distance: f64,
    /// `∫ ½ u² dt`
    pub energy: f64,
    /// `∫ κ v² dt`
    pub discomfort: f64,
    pub objective_sum: f64,
    pub objective_steps: u64,
    pub unsafe_: EpisodeCounter,
    pub hard_decel: EpisodeCounter,
    pub infeasible: EpisodeCounter,
    pub pet_critical: u64,
    pub speed_clamps: u64,
    pub overlaps: u64,
}

impl VehicleRecord {
    pub fn new(id: VehicleId, kind: VehicleKind, origin: usize, exit: usize, t0: f64) -> Self {
        Self {
            id,
            kind,
            origin,
            exit,
            t0,
            tf: None,
            distance: 0.0,
            energy: 0.0,
            discomfort: 0.0,
            objective_sum: 0.0,
            objective_steps: 0,
            unsafe_: EpisodeCounter::default(),
            hard_decel: EpisodeCounter::default(),
            infeasible: EpisodeCounter::default(),
            pet_critical: 0,
            speed_clamps: 0,
            overlaps: 0,
        }
    }

    /// Adds one step of control effort and ride discomfort.
    pub fn accumulate(&mut self, u: f64, v: f64, kappa: f64, dt: f64) {
        self.energy += 0.5 * u * u * dt;
        self.discomfort += kappa * v * v * dt;
    }

    pub fn add_objective(&mut self, value: f64) {
        self.objective_sum += value;
        self.objective_steps += 1;
    }

    pub fn is_complete(&self) -> bool {
        self.tf.is_some()
    }

    pub fn travel_time(&self) -> Option<f64> {
        self.tf.map(|tf| tf - self.t0)
    }

    pub fn mean_speed(&self) -> Option<f64> {
        self.travel_time().filter(|t| *t > 0.0).map(|t| self.distance / t)
    }

    pub fn mean_objective(&self) -> f64 {
        if self.objective_steps == 0 {
            0.0
        } else {
            self.objective_sum / self.objective_steps as f64
        }
    }
}

pub const METRIC_LABELS: [&str; 9] = [
    "Avg. Obj.",
    "Avg. Energy",
    "Avg. Time",
    "Avg. Speed",
    "Avg. Discomfort",
    "Avg. Unsafe Cnt.",
    "Avg. Hard Deceleration Cnt.",
    "Avg. PET Critical Cnt.",
    "Avg. Infeasible Cnt.",
];

/// Value of metric `label` for one completed vehicle; `None` where the
/// metric does not apply.
pub fn metric_value(record: &VehicleRecord, label: &str) -> Option<f64> {
    match label {
        "Avg. Obj." => Some(record.mean_objective()),
        "Avg. Energy" => Some(record.energy),
        "Avg. Time" => record.travel_time(),
        "Avg. Speed" => record.mean_speed(),
        "Avg. Discomfort" => Some(record.discomfort),
        "Avg. Unsafe Cnt." => Some(record.unsafe_.episodes as f64),
        "Avg. Hard Deceleration Cnt." => Some(record.hard_decel.episodes as f64),
        "Avg. PET Critical Cnt." => Some(record.pet_critical as f64),
        "Avg. Infeasible Cnt." => (record.kind == VehicleKind::Cav).then_some(record.infeasible.episodes as f64),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KindFilter {
    Cav,
    Hdv,
    All,
}

impl KindFilter {
    pub const ALL: [KindFilter; 3] = [KindFilter::Cav, KindFilter::Hdv, KindFilter::All];

    pub fn label(self) -> &'static str {
        match self {
            KindFilter::Cav => "CAV",
            KindFilter::Hdv => "HDV",
            KindFilter::All => "all",
        }
    }

    pub fn matches(self, kind: VehicleKind) -> bool {
        match self {
            KindFilter::Cav => kind == VehicleKind::Cav,
            KindFilter::Hdv => kind == VehicleKind::Hdv,
            KindFilter::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: &'static str,
    pub cav: Option<f64>,
    pub hdv: Option<f64>,
    pub all: Option<f64>,
}

impl SummaryRow {
    pub fn get(&self, kind: KindFilter) -> Option<f64> {
        match kind {
            KindFilter::Cav => self.cav,
            KindFilter::Hdv => self.hdv,
            KindFilter::All => self.all,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsLedger {
    pub vehicles: BTreeMap<VehicleId, VehicleRecord>,
    pub pet_events: u64,
    pub pet_critical: u64,
    pub resequences: u64,
    pub relaxed_filters: u64,
    pub all_infeasible_selections: u64,
}

impl MetricsLedger {
    pub fn completed(&self) -> impl Iterator<Item = &VehicleRecord> {
        self.vehicles.values().filter(|r| r.is_complete())
    }

    pub fn entered(&self) -> usize {
        self.vehicles.len()
    }

    pub fn exited(&self) -> usize {
        self.completed().count()
    }

    /// Mean of `label` over completed vehicles of `kind`.
    pub fn average(&self, label: &str, kind: KindFilter) -> Option<f64> {
        let values: Vec<f64> = self
            .completed()
            .filter(|r| kind.matches(r.kind))
            .filter_map(|r| metric_value(r, label))
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        METRIC_LABELS
            .iter()
            .map(|&metric| SummaryRow {
                metric,
                cav: self.average(metric, KindFilter::Cav),
                hdv: self.average(metric, KindFilter::Hdv),
                all: self.average(metric, KindFilter::All),
            })
            .collect()
    }

    pub fn summary_value(&self, label: &str, kind: KindFilter) -> Option<f64> {
        self.average(label, kind)
    }

    /// Per-vehicle rows, a blank line, then the summary block.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&csv_line(&VEHICLE_COLUMNS.map(String::from)));
        for r in self.vehicles.values() {
            out.push_str(&csv_line(&[
                r.id.to_string(),
                r.kind.label().to_string(),
                r.origin.to_string(),
                r.exit.to_string(),
                fmt(r.t0),
                r.tf.map(fmt).unwrap_or_default(),
                r.travel_time().map(fmt).unwrap_or_default(),
                fmt(r.distance),
                r.mean_speed().map(fmt).unwrap_or_default(),
                fmt(r.energy),
                fmt(r.discomfort),
                fmt(r.mean_objective()),
                r.unsafe_.episodes.to_string(),
                r.unsafe_.steps.to_string(),
                r.hard_decel.episodes.to_string(),
                r.hard_decel.steps.to_string(),
                r.pet_critical.to_string(),
                r.infeasible.episodes.to_string(),
                r.infeasible.steps.to_string(),
                r.speed_clamps.to_string(),
            ]));
        }
        out.push('\n');
        out.push_str(&csv_line(&["metric", "CAV", "HDV", "all"].map(String::from)));
        for row in self.summary() {
            out.push_str(&csv_line(&[
                row.metric.to_string(),
                row.cav.map(fmt).unwrap_or_default(),
                row.hdv.map(fmt).unwrap_or_default(),
                row.all.map(fmt).unwrap_or_default(),
            ]));
        }
        out
    }
}

pub const VEHICLE_COLUMNS: [&str; 20] = [
    "id",
    "kind",
    "origin",
    "exit",
    "t0",
    "tf",
    "travel_time",
    "distance",
    "mean_speed",
    "energy",
    "discomfort",
    "avg_obj",
    "unsafe_count",
    "unsafe_steps",
    "hard_decel_count",
    "hard_decel_steps",
    "pet_critical",
    "infeasible_count",
    "infeasible_steps",
    "speed_clamps",
];

/// Shortest representation that parses back to the same value.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

fn csv_line(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}
