use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerParams;
use crate::geometry::{GeometryError, LayoutConfig, RoundaboutLayout};
use crate::sequencing::{Policy, SafePolicyParams};
use crate::vehicle::{IdmParams, VehicleLimits};

use super::trace::TraceLevel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid layout: {0}")]
    Layout(#[from] GeometryError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Uniform range the human-driver aggressiveness is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggressivenessRange {
    pub min: f64,
    pub max: f64,
}

impl Default for AggressivenessRange {
    fn default() -> Self {
        Self { min: -1.0, max: 1.0 }
    }
}

/// Demand presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demand {
    Balanced,
    Unbalanced,
    Heavy,
}

impl Demand {
    pub fn rates(self) -> Vec<f64> {
        match self {
            Demand::Balanced => vec![396.0; 3],
            Demand::Unbalanced => vec![108.0, 540.0, 540.0],
            Demand::Heavy => vec![576.0; 3],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Demand::Balanced => "balanced",
            Demand::Unbalanced => "unbalanced",
            Demand::Heavy => "heavy",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "balanced" => Some(Demand::Balanced),
            "unbalanced" => Some(Demand::Unbalanced),
            "heavy" => Some(Demand::Heavy),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub layout: LayoutConfig,
    pub limits: VehicleLimits,
    pub idm: IdmParams,
    pub controller: ControllerParams,
    pub safe_policy: SafePolicyParams,
    pub policy: Policy,
    /// Most candidate orders scored per control zone.
    pub max_candidates: usize,
    /// Vehicles per hour at each origin.
    pub arrival_rates: Vec<f64>,
    pub cav_penetration: f64,
    /// Seconds during which new vehicles arrive.
    pub duration: f64,
    /// Extra seconds allowed for the remaining traffic to leave.
    pub drain_limit: f64,
    pub seed: u64,
    pub resequence_timeout: f64,
    pub spawn_speed: f64,
    pub aggressiveness: AggressivenessRange,
    /// Rear-end shortfall below which a gap still counts as safe.
    pub unsafe_tolerance: f64,
    pub pet_threshold: f64,
    /// Critical when post-encroachment time is below the threshold; when
    /// false, when it is above.
    pub pet_critical_below: bool,
    pub trace: TraceLevel,
    /// Record solver wall time in the trace (makes traces run-dependent).
    pub trace_wall_time: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "balanced".into(),
            layout: LayoutConfig::default(),
            limits: VehicleLimits::default(),
            idm: IdmParams::default(),
            controller: ControllerParams::default(),
            safe_policy: SafePolicyParams::default(),
            policy: Policy::Ss,
            max_candidates: 64,
            arrival_rates: Demand::Balanced.rates(),
            cav_penetration: 0.0,
            duration: 1000.0,
            drain_limit: 300.0,
            seed: 0,
            resequence_timeout: 1.0,
            spawn_speed: 10.0,
            aggressiveness: AggressivenessRange::default(),
            unsafe_tolerance: 1e-6,
            pet_threshold: 1.0,
            pet_critical_below: true,
            trace: TraceLevel::Summary,
            trace_wall_time: false,
        }
    }
}

impl ScenarioConfig {
    pub fn preset(demand: Demand) -> Self {
        Self {
            name: demand.name().into(),
            arrival_rates: demand.rates(),
            ..Self::default()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Penetration actually used: the human-only policy has no CAVs.
    pub fn effective_penetration(&self) -> f64 {
        match self.policy {
            Policy::Hdv => 0.0,
            _ => self.cav_penetration,
        }
    }

    pub fn build_layout(&self) -> Result<RoundaboutLayout, ConfigError> {
        Ok(RoundaboutLayout::new(&self.layout)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let layout = self.build_layout()?;
        self.limits.validate().map_err(ConfigError::Invalid)?;
        self.controller.validate().map_err(ConfigError::Invalid)?;
        if self.arrival_rates.len() != layout.num_entries() {
            return invalid("arrival_rates needs one rate per entry");
        }
        if self.arrival_rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return invalid("arrival rates must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.cav_penetration) {
            return invalid("cav_penetration must lie in [0, 1]");
        }
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return invalid("duration must be finite and non-negative");
        }
        if !(self.drain_limit >= 0.0 && self.drain_limit.is_finite()) {
            return invalid("drain_limit must be finite and non-negative");
        }
        if !(self.resequence_timeout > 0.0) {
            return invalid("resequence_timeout must be positive");
        }
        if !(self.spawn_speed >= self.limits.v_min && self.spawn_speed <= self.limits.v_max) {
            return invalid("spawn_speed must lie within the speed limits");
        }
        let a = self.aggressiveness;
        if !(-1.0 <= a.min && a.min <= a.max && a.max <= 1.0) {
            return invalid("aggressiveness range must satisfy -1 <= min <= max <= 1");
        }
        if self.max_candidates == 0 {
            return invalid("max_candidates must be at least 1");
        }
        if !(self.unsafe_tolerance >= 0.0) {
            return invalid("unsafe_tolerance must be non-negative");
        }
        if !(self.pet_threshold >= 0.0) {
            return invalid("pet_threshold must be non-negative");
        }
        if self.safe_policy.delta_j < 0.0 || self.safe_policy.eta < 0.0 {
            return invalid("delta_j and eta must be non-negative");
        }
        let idm = &self.idm;
        if !(idm.time_headway > 0.0 && idm.min_gap >= 0.0 && idm.max_accel > 0.0 && idm.comfortable_decel > 0.0) {
            return invalid("IDM parameters must be positive");
        }
        if !(idm.crawl_speed > 0.0 && idm.accepted_gap >= 0.0) {
            return invalid("gap acceptance parameters must be positive");
        }
        Ok(())
    }
}
