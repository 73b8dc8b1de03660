//! Scenario configuration files.
//!
//! A scenario is a JSON object with a `schema` field equal to
//! [`SCHEMA`]. Unknown keys are rejected at every level.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::CheckpointPolicy;
use crate::coordinator::{CoordinatorConfig, JobSpec};
use crate::fleet::{default_fleet, sample_churn, ChurnEvent, DeviceProfile, TelemetryModel};
use crate::rng::{labels, stream};
use crate::scheduler::StrategyRegistry;
use crate::sim::SimSetup;
use crate::transport::LinkModel;
use crate::workloads::WorkloadSpec;

pub const SCHEMA: &str = "crowd-scenario/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema {found:?}, expected {SCHEMA:?}")]
    Schema { found: String },
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("unknown fleet {0:?}")]
    UnknownFleet(String),
    #[error("unknown worker {0:?}")]
    UnknownWorker(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Sim,
    Tcp,
}

/// Quantity fed to Jain's index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessBasis {
    #[default]
    Tasks,
    BusySeconds,
}

/// `"default6"` or an explicit list of profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FleetSpec {
    Named(String),
    Profiles(Vec<DeviceProfile>),
}

impl Default for FleetSpec {
    fn default() -> Self {
        FleetSpec::Named("default6".into())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChurnSpec {
    #[default]
    None,
    Scripted { events: Vec<ChurnEvent> },
    /// Poisson disconnects per device. Missing values fall back to the
    /// profile's own churn settings.
    Sampled {
        rate_per_min: Option<f64>,
        reconnect_delay_s: Option<(f64, f64)>,
        horizon_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub fleet: FleetSpec,
    /// Per-device background load overrides, by worker id.
    #[serde(default)]
    pub background_load: BTreeMap<String, f64>,
    pub workload: WorkloadSpec,
    pub tasks: u64,
    pub strategy: String,
    #[serde(default)]
    pub checkpoint: CheckpointPolicy,
    #[serde(default)]
    pub churn: ChurnSpec,
    #[serde(default)]
    pub link: LinkModel,
    /// Per-worker link overrides.
    #[serde(default)]
    pub links: BTreeMap<String, LinkModel>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: u32,
    #[serde(default)]
    pub coordinator: CoordinatorConfig,
    #[serde(default)]
    pub telemetry: TelemetryModel,
    #[serde(default)]
    pub fairness: FairnessBasis,
    /// Multiplier on device throughput.
    #[serde(default = "unit")]
    pub unit_scale: f64,
    /// Wall-clock seconds per simulated second in TCP mode.
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    #[serde(default = "default_max_time")]
    pub max_time_s: f64,
}

fn default_name() -> String {
    "scenario".into()
}

fn one() -> u32 {
    1
}

fn unit() -> f64 {
    1.0
}

fn default_time_scale() -> f64 {
    0.02
}

fn default_max_time() -> f64 {
    100_000.0
}

impl ScenarioConfig {
    /// A minimal valid scenario on the default fleet.
    pub fn new(workload: WorkloadSpec, tasks: u64, strategy: &str) -> Self {
        Self {
            schema: SCHEMA.into(),
            name: default_name(),
            fleet: FleetSpec::default(),
            background_load: BTreeMap::new(),
            workload,
            tasks,
            strategy: strategy.into(),
            checkpoint: CheckpointPolicy::default(),
            churn: ChurnSpec::None,
            link: LinkModel::default(),
            links: BTreeMap::new(),
            mode: Mode::Sim,
            seed: 0,
            repetitions: 1,
            coordinator: CoordinatorConfig::default(),
            telemetry: TelemetryModel::default(),
            fairness: FairnessBasis::Tasks,
            unit_scale: 1.0,
            time_scale: default_time_scale(),
            max_time_s: default_max_time(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        // Check the schema first so version mismatches get a clear message.
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(SCHEMA) => {}
            Some(other) => return Err(ConfigError::Schema { found: other.into() }),
            None => return Err(ConfigError::Invalid("missing \"schema\" field".into())),
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Profiles with overrides applied, in fleet order.
    pub fn profiles(&self) -> Result<Vec<DeviceProfile>, ConfigError> {
        let mut profiles = match &self.fleet {
            FleetSpec::Named(name) if name == "default6" => default_fleet(),
            FleetSpec::Named(name) => return Err(ConfigError::UnknownFleet(name.clone())),
            FleetSpec::Profiles(list) => list.clone(),
        };
        for (id, load) in &self.background_load {
            let p = profiles
                .iter_mut()
                .find(|p| &p.id == id)
                .ok_or_else(|| ConfigError::UnknownWorker(id.clone()))?;
            p.background_load = *load;
        }
        if let ChurnSpec::Sampled { rate_per_min, reconnect_delay_s, .. } = &self.churn {
            for p in &mut profiles {
                if let Some(r) = rate_per_min {
                    p.churn_rate_per_min = *r;
                }
                if let Some(d) = reconnect_delay_s {
                    p.reconnect_delay_s = *d;
                }
            }
        }
        Ok(profiles)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.schema != SCHEMA {
            return Err(ConfigError::Schema { found: self.schema.clone() });
        }
        if !StrategyRegistry::default().contains(&self.strategy) {
            return Err(ConfigError::UnknownStrategy(self.strategy.clone()));
        }
        if self.repetitions < 1 {
            return invalid("repetitions must be >= 1".into());
        }
        let profiles = self.profiles()?;
        if profiles.is_empty() {
            return invalid("fleet is empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &profiles {
            p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !seen.insert(p.id.as_str()) {
                return invalid(format!("duplicate worker id {:?}", p.id));
            }
        }
        self.job_spec(&self.strategy, self.checkpoint.clone(), self.seed)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.coordinator
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.link.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (id, link) in &self.links {
            if !seen.contains(id.as_str()) {
                return Err(ConfigError::UnknownWorker(id.clone()));
            }
            link.validate().map_err(|e| ConfigError::Invalid(format!("{id}: {e}")))?;
        }
        match &self.churn {
            ChurnSpec::None => {}
            ChurnSpec::Scripted { events } => {
                for e in events {
                    if !seen.contains(e.worker_id.as_str()) {
                        return Err(ConfigError::UnknownWorker(e.worker_id.clone()));
                    }
                    if !(e.at_s.is_finite() && e.at_s >= 0.0) {
                        return invalid(format!("churn time {} must be >= 0", e.at_s));
                    }
                }
            }
            ChurnSpec::Sampled { horizon_s, .. } => {
                if !(horizon_s.is_finite() && *horizon_s > 0.0) {
                    return invalid("churn horizon must be positive".into());
                }
            }
        }
        if self.mode == Mode::Tcp && self.churn != ChurnSpec::None {
            return invalid("churn injection is only available in sim mode".into());
        }
        if self.mode == Mode::Tcp && (!self.links.is_empty() || self.link != LinkModel::default()) {
            return invalid("link models are only available in sim mode".into());
        }
        for (name, v) in [("unit_scale", self.unit_scale), ("time_scale", self.time_scale), ("max_time_s", self.max_time_s)] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive"));
            }
        }
        if !(self.telemetry.step_s.is_finite() && self.telemetry.step_s > 0.0) {
            return invalid("telemetry step must be positive".into());
        }
        Ok(())
    }

    pub fn job_spec(&self, strategy: &str, checkpoint: CheckpointPolicy, seed: u64) -> JobSpec {
        JobSpec {
            job_id: self.name.clone(),
            workload: self.workload.clone(),
            task_count: self.tasks,
            strategy: strategy.into(),
            checkpoint,
            seed,
        }
    }

    /// Churn schedule for one repetition.
    pub fn churn_events(&self, seed: u64) -> Result<Vec<ChurnEvent>, ConfigError> {
        match &self.churn {
            ChurnSpec::None => Ok(Vec::new()),
            ChurnSpec::Scripted { events } => Ok(events.clone()),
            ChurnSpec::Sampled { horizon_s, .. } => {
                sample_churn(&self.profiles()?, *horizon_s, &mut stream(seed, labels::CHURN))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }

    /// Builds a simulation of this scenario for one strategy, policy and seed.
    pub fn sim_setup(
        &self,
        registry: &StrategyRegistry,
        strategy: &str,
        checkpoint: CheckpointPolicy,
        seed: u64,
    ) -> Result<SimSetup, ConfigError> {
        let strategy_impl = registry
            .create(strategy)
            .map_err(|_| ConfigError::UnknownStrategy(strategy.into()))?;
        let mut setup = SimSetup::new(
            self.profiles()?,
            self.job_spec(strategy, checkpoint, seed),
            strategy_impl,
        );
        setup.coordinator = self.coordinator.clone();
        setup.telemetry = self.telemetry.clone();
        setup.link = self.link.clone();
        setup.link_overrides = self.links.clone();
        setup.churn = self.churn_events(seed)?;
        setup.unit_scale = self.unit_scale;
        setup.max_time_s = self.max_time_s;
        Ok(setup)
    }
}
