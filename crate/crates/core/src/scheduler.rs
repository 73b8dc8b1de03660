//! Pluggable worker-selection strategies.
//!
//! The dispatch loop asks a [`Strategy`] which of the currently available
//! workers should receive the next task. Strategies are created by name
//! from a [`StrategyRegistry`]; the five built-ins are always present and
//! new ones can be added without touching the dispatch loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{entropy_weights, Criterion, DecisionError, DecisionMatrix, McdmMethod};
use crate::fleet::{DeviceProfile, TelemetrySnapshot, WorkerId};
use crate::rng::SimRng;

/// Lower clamp applied to decision-matrix entries.
pub const MATRIX_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("no workers available")]
    NoWorkers,
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("strategy {0:?} is already registered")]
    DuplicateStrategy(String),
    #[error(transparent)]
    Decision(#[from] DecisionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Fifo,
    Wrr,
    Edas,
    Aras,
    Mabac,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Fifo,
        StrategyKind::Wrr,
        StrategyKind::Edas,
        StrategyKind::Aras,
        StrategyKind::Mabac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Fifo => "fifo",
            StrategyKind::Wrr => "wrr",
            StrategyKind::Edas => "edas",
            StrategyKind::Aras => "aras",
            StrategyKind::Mabac => "mabac",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SchedulerError::UnknownStrategy(s.to_string()))
    }
}

/// How tasks are bound to workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchMode {
    /// Tasks are split round-robin into per-worker queues at submission.
    Static,
    /// A task is bound to a worker only when a dispatch decision fires.
    Dynamic,
}

pub fn dispatch_mode(kind: StrategyKind) -> DispatchMode {
    match kind {
        StrategyKind::Fifo => DispatchMode::Static,
        _ => DispatchMode::Dynamic,
    }
}

/// Static WRR weight of a device: `cores * freq_ghz`.
pub fn capability_weight(profile: &DeviceProfile) -> f64 {
    profile.capacity()
}

/// A worker that may receive the next task.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub profile: &'a DeviceProfile,
    pub telemetry: &'a TelemetrySnapshot,
}

impl Candidate<'_> {
    pub fn id(&self) -> &str {
        &self.profile.id
    }
}

pub trait Strategy: Send {
    fn name(&self) -> &str;

    fn mode(&self) -> DispatchMode {
        DispatchMode::Dynamic
    }

    /// Picks one of `candidates` (never empty; given in registration order).
    fn choose(
        &mut self,
        candidates: &[Candidate<'_>],
        rng: &mut SimRng,
    ) -> Result<WorkerId, SchedulerError>;
}

/// Validates the candidate list and asks `strategy` for a worker.
pub fn select_worker(
    strategy: &mut dyn Strategy,
    candidates: &[Candidate<'_>],
    rng: &mut SimRng,
) -> Result<WorkerId, SchedulerError> {
    match candidates {
        [] => Err(SchedulerError::NoWorkers),
        _ => strategy.choose(candidates, rng),
    }
}

/// Registration-order rotation that ignores telemetry.
#[derive(Debug, Default, Clone)]
pub struct FifoStrategy {
    order: Vec<WorkerId>,
    cursor: usize,
}

impl Strategy for FifoStrategy {
    fn name(&self) -> &str {
        "fifo"
    }

    fn mode(&self) -> DispatchMode {
        DispatchMode::Static
    }

    fn choose(
        &mut self,
        candidates: &[Candidate<'_>],
        _rng: &mut SimRng,
    ) -> Result<WorkerId, SchedulerError> {
        for c in candidates {
            if !self.order.iter().any(|id| id == c.id()) {
                self.order.push(c.id().to_string());
            }
        }
        let len = self.order.len();
        for step in 0..len {
            let idx = (self.cursor + step) % len;
            if candidates.iter().any(|c| c.id() == self.order[idx]) {
                self.cursor = (idx + 1) % len;
                return Ok(self.order[idx].clone());
            }
        }
        Err(SchedulerError::NoWorkers)
    }
}

/// Smooth (credit-based) weighted round-robin over capability weights.
#[derive(Debug, Default, Clone)]
pub struct WrrStrategy {
    credits: BTreeMap<WorkerId, f64>,
}

impl WrrStrategy {
    pub fn credits(&self) -> &BTreeMap<WorkerId, f64> {
        &self.credits
    }
}

impl Strategy for WrrStrategy {
    fn name(&self) -> &str {
        "wrr"
    }

    fn choose(
        &mut self,
        candidates: &[Candidate<'_>],
        _rng: &mut SimRng,
    ) -> Result<WorkerId, SchedulerError> {
        let mut total = 0.0;
        let mut best: Option<(&str, f64)> = None;
        for c in candidates {
            let weight = capability_weight(c.profile);
            total += weight;
            let credit = self.credits.entry(c.id().to_string()).or_insert(0.0);
            *credit += weight;
            let better = match best {
                None => true,
                Some((id, top)) => *credit > top || (*credit == top && c.id() < id),
            };
            if better {
                best = Some((c.id(), *credit));
            }
        }
        let (winner, _) = best.ok_or(SchedulerError::NoWorkers)?;
        let winner = winner.to_string();
        *self.credits.get_mut(&winner).expect("winner has credit") -= total;
        Ok(winner)
    }
}

/// Criteria of the scheduling decision matrix, in column order.
pub fn decision_criteria() -> Vec<Criterion> {
    vec![
        Criterion::benefit("capability"),
        Criterion::benefit("free_mem_gb"),
        Criterion::benefit("battery"),
        Criterion::cost("cpu_util"),
        Criterion::cost("latency_ms"),
        Criterion::cost("thermal"),
    ]
}

/// Builds the workers x criteria matrix from live telemetry.
pub fn decision_matrix(candidates: &[Candidate<'_>]) -> Result<DecisionMatrix, DecisionError> {
    let rows = candidates
        .iter()
        .map(|c| {
            let t = c.telemetry;
            [
                capability_weight(c.profile),
                t.free_mem_gb,
                t.battery,
                t.cpu_util,
                t.latency_ms,
                t.thermal,
            ]
            .into_iter()
            .map(|x| x.max(MATRIX_FLOOR))
            .collect()
        })
        .collect();
    DecisionMatrix::new(
        candidates.iter().map(|c| c.id().to_string()).collect(),
        decision_criteria(),
        rows,
    )
}

/// Entropy-weighted MCDM ranking over the candidates' telemetry.
#[derive(Debug, Clone)]
pub struct McdmStrategy {
    method: McdmMethod,
}

impl McdmStrategy {
    pub fn new(method: McdmMethod) -> Self {
        Self { method }
    }
}

impl Strategy for McdmStrategy {
    fn name(&self) -> &str {
        match self.method {
            McdmMethod::Edas => "edas",
            McdmMethod::Aras => "aras",
            McdmMethod::Mabac => "mabac",
        }
    }

    fn choose(
        &mut self,
        candidates: &[Candidate<'_>],
        _rng: &mut SimRng,
    ) -> Result<WorkerId, SchedulerError> {
        if let [only] = candidates {
            return Ok(only.id().to_string());
        }
        let matrix = decision_matrix(candidates)?;
        let weights = entropy_weights(&matrix)?;
        let ranking = self.method.rank(&matrix, &weights)?;
        Ok(ranking.best().to_string())
    }
}

pub fn builtin(kind: StrategyKind) -> Box<dyn Strategy> {
    match kind {
        StrategyKind::Fifo => Box::new(FifoStrategy::default()),
        StrategyKind::Wrr => Box::new(WrrStrategy::default()),
        StrategyKind::Edas => Box::new(McdmStrategy::new(McdmMethod::Edas)),
        StrategyKind::Aras => Box::new(McdmStrategy::new(McdmMethod::Aras)),
        StrategyKind::Mabac => Box::new(McdmStrategy::new(McdmMethod::Mabac)),
    }
}

type Factory = Box<dyn Fn() -> Box<dyn Strategy> + Send + Sync>;

/// Name to strategy-factory mapping.
pub struct StrategyRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut registry = Self {
            factories: BTreeMap::new(),
        };
        for kind in StrategyKind::ALL {
            registry
                .register(kind.name(), move || builtin(kind))
                .expect("built-in names are unique");
        }
        registry
    }
}

impl StrategyRegistry {
    pub fn register<F>(&mut self, name: &str, factory: F) -> Result<(), SchedulerError>
    where
        F: Fn() -> Box<dyn Strategy> + Send + Sync + 'static,
    {
        if self.factories.contains_key(name) {
            return Err(SchedulerError::DuplicateStrategy(name.to_string()));
        }
        self.factories.insert(name.to_string(), Box::new(factory));
        Ok(())
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn Strategy>, SchedulerError> {
        self.factories
            .get(name)
            .map(|f| f())
            .ok_or_else(|| SchedulerError::UnknownStrategy(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}
