//! Resumable task implementations.
//!
//! A workload splits into slices; each slice runs in bounded steps through
//! [`ResumableTask::run_slice`], and its state converts to and from the
//! opaque variable map that the checkpoint store keeps. Randomness is
//! counter-based (keyed by slice seed and item index), so resuming from any
//! cursor reproduces exactly the same stream no matter which worker runs it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::TaskState;
use crate::rng::{derive_seed, mix64, unit_f64};

/// Default work units per Monte Carlo trial.
pub const DEFAULT_TRIAL_COST: f64 = 0.003;
/// Default work units per tile.
pub const DEFAULT_ITEM_COST: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed task state: {0}")]
    MalformedState(String),
}

/// Bounds and seed of one slice of a job.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceParams {
    pub job_id: String,
    pub slice_index: u32,
    /// First work item of the slice within the job.
    pub offset: u64,
    /// Number of work items in the slice.
    pub len: u64,
    /// Per-slice seed, derived from the job seed and slice index.
    pub seed: u64,
}

impl SliceParams {
    pub fn new(job_id: &str, job_seed: u64, slice_index: u32, offset: u64, len: u64) -> Self {
        Self {
            job_id: job_id.to_string(),
            slice_index,
            offset,
            len,
            seed: derive_seed(job_seed, slice_index as u64),
        }
    }
}

/// Operations every resumable workload provides.
pub trait ResumableTask {
    type State: Clone + PartialEq + std::fmt::Debug;

    fn init(&self, params: &SliceParams) -> Self::State;

    /// Runs at most `budget` items and returns how many were run.
    fn run_slice(&self, state: &mut Self::State, budget: u64) -> u64;

    fn remaining(&self, state: &Self::State) -> u64;

    fn serialize(&self, state: &Self::State) -> TaskState;

    fn deserialize(&self, state: &TaskState) -> Result<Self::State, WorkloadError>;

    fn finalize(&self, state: &Self::State) -> Vec<u8>;

    /// Combines slice results given in slice order.
    fn fold(&self, results: &[Vec<u8>]) -> Result<Aggregate, WorkloadError>;
}

/// Job-level result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregate {
    EulerEstimate { draw_sum: u64, trials: u64 },
    Tiles {
        #[serde(with = "crate::codec::hex_bytes")]
        outputs: Vec<u8>,
    },
}

impl Aggregate {
    /// Canonical bytes, used for exact comparisons between runs.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Aggregate::EulerEstimate { draw_sum, trials } => {
                let mut out = b"euler".to_vec();
                out.extend(draw_sum.to_be_bytes());
                out.extend(trials.to_be_bytes());
                out
            }
            Aggregate::Tiles { outputs } => {
                let mut out = b"tiles".to_vec();
                out.extend(outputs);
                out
            }
        }
    }

    pub fn estimate(&self) -> Option<f64> {
        match self {
            Aggregate::EulerEstimate { draw_sum, trials } => {
                Some(*draw_sum as f64 / *trials as f64)
            }
            Aggregate::Tiles { .. } => None,
        }
    }
}

fn get_u64(state: &TaskState, name: &str) -> Result<u64, WorkloadError> {
    let bytes = state
        .vars
        .get(name)
        .ok_or_else(|| WorkloadError::MalformedState(format!("missing variable {name}")))?;
    let array: [u8; 8] = bytes.as_slice().try_into().map_err(|_| {
        WorkloadError::MalformedState(format!("variable {name} is {} bytes", bytes.len()))
    })?;
    Ok(u64::from_be_bytes(array))
}

fn vars(pairs: &[(&str, u64)]) -> BTreeMap<String, Vec<u8>> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_be_bytes().to_vec()))
        .collect()
}

fn u64_pairs(results: &[Vec<u8>]) -> Result<Vec<(u64, u64)>, WorkloadError> {
    results
        .iter()
        .map(|r| {
            if r.len() != 16 {
                return Err(WorkloadError::MalformedState(format!(
                    "slice result is {} bytes, expected 16",
                    r.len()
                )));
            }
            let a = u64::from_be_bytes(r[..8].try_into().unwrap());
            let b = u64::from_be_bytes(r[8..].try_into().unwrap());
            Ok((a, b))
        })
        .collect()
}

/// Estimates e by counting uniform draws until their running sum exceeds 1.
/// The expected count is exactly e.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonteCarloState {
    pub trials_target: u64,
    pub trials_done: u64,
    pub draw_count_sum: u64,
    pub seed: u64,
}

/// Draws needed for the running sum of uniforms to exceed 1, for one trial.
pub fn draws_to_exceed_one(slice_seed: u64, trial_index: u64) -> u64 {
    let key = derive_seed(slice_seed, trial_index);
    let mut sum = 0.0;
    let mut n = 0u64;
    while sum <= 1.0 {
        n += 1;
        sum += unit_f64(mix64(key.wrapping_add(n)));
    }
    n
}

impl ResumableTask for MonteCarlo {
    type State = MonteCarloState;

    fn init(&self, params: &SliceParams) -> MonteCarloState {
        MonteCarloState {
            trials_target: params.len,
            trials_done: 0,
            draw_count_sum: 0,
            seed: params.seed,
        }
    }

    fn run_slice(&self, state: &mut MonteCarloState, budget: u64) -> u64 {
        let n = budget.min(state.trials_target - state.trials_done);
        for t in state.trials_done..state.trials_done + n {
            state.draw_count_sum += draws_to_exceed_one(state.seed, t);
        }
        state.trials_done += n;
        n
    }

    fn remaining(&self, state: &MonteCarloState) -> u64 {
        state.trials_target - state.trials_done
    }

    fn serialize(&self, s: &MonteCarloState) -> TaskState {
        TaskState::new(
            vars(&[
                ("draws", s.draw_count_sum),
                ("seed", s.seed),
                ("target", s.trials_target),
            ]),
            s.trials_done,
        )
    }

    fn deserialize(&self, state: &TaskState) -> Result<MonteCarloState, WorkloadError> {
        let s = MonteCarloState {
            trials_target: get_u64(state, "target")?,
            trials_done: state.cursor,
            draw_count_sum: get_u64(state, "draws")?,
            seed: get_u64(state, "seed")?,
        };
        if s.trials_done > s.trials_target || s.draw_count_sum < 2 * s.trials_done {
            return Err(WorkloadError::MalformedState(format!("{s:?}")));
        }
        Ok(s)
    }

    fn finalize(&self, s: &MonteCarloState) -> Vec<u8> {
        let mut out = s.draw_count_sum.to_be_bytes().to_vec();
        out.extend(s.trials_done.to_be_bytes());
        out
    }

    fn fold(&self, results: &[Vec<u8>]) -> Result<Aggregate, WorkloadError> {
        let (draw_sum, trials) = u64_pairs(results)?
            .into_iter()
            .fold((0, 0), |(d, t), (sd, st)| (d + sd, t + st));
        if trials == 0 {
            return Err(WorkloadError::InvalidInput("no trials to fold".into()));
        }
        Ok(Aggregate::EulerEstimate { draw_sum, trials })
    }
}

/// `sum draws / sum trials` over finalized Monte Carlo slice results.
pub fn mc_fold(results: &[Vec<u8>]) -> Result<f64, WorkloadError> {
    MonteCarlo
        .fold(results)
        .map(|a| a.estimate().expect("monte carlo aggregate"))
}

/// Synthetic data-parallel tile processing: every item mixes a digest of
/// (slice seed, item index) into an accumulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileMapState {
    pub items_total: u64,
    pub items_done: u64,
    pub digest: u64,
    pub seed: u64,
}

impl ResumableTask for TileMap {
    type State = TileMapState;

    fn init(&self, params: &SliceParams) -> TileMapState {
        TileMapState {
            items_total: params.len,
            items_done: 0,
            digest: params.seed,
            seed: params.seed,
        }
    }

    fn run_slice(&self, state: &mut TileMapState, budget: u64) -> u64 {
        let n = budget.min(state.items_total - state.items_done);
        for item in state.items_done..state.items_done + n {
            let tile = derive_seed(state.seed, item);
            state.digest = mix64(state.digest.rotate_left(5) ^ tile);
        }
        state.items_done += n;
        n
    }

    fn remaining(&self, state: &TileMapState) -> u64 {
        state.items_total - state.items_done
    }

    fn serialize(&self, s: &TileMapState) -> TaskState {
        TaskState::new(
            vars(&[("digest", s.digest), ("seed", s.seed), ("total", s.items_total)]),
            s.items_done,
        )
    }

    fn deserialize(&self, state: &TaskState) -> Result<TileMapState, WorkloadError> {
        let s = TileMapState {
            items_total: get_u64(state, "total")?,
            items_done: state.cursor,
            digest: get_u64(state, "digest")?,
            seed: get_u64(state, "seed")?,
        };
        if s.items_done > s.items_total {
            return Err(WorkloadError::MalformedState(format!("{s:?}")));
        }
        Ok(s)
    }

    fn finalize(&self, s: &TileMapState) -> Vec<u8> {
        let mut out = s.digest.to_be_bytes().to_vec();
        out.extend(s.items_done.to_be_bytes());
        out
    }

    fn fold(&self, results: &[Vec<u8>]) -> Result<Aggregate, WorkloadError> {
        u64_pairs(results)?;
        Ok(Aggregate::Tiles {
            outputs: results.concat(),
        })
    }
}

/// Workload choice plus its parameters, as named in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadSpec {
    MonteCarlo {
        trials: u64,
        #[serde(default = "default_trial_cost")]
        trial_cost: f64,
    },
    TileMap {
        items: u64,
        #[serde(default = "default_item_cost")]
        item_cost: f64,
    },
}

fn default_trial_cost() -> f64 {
    DEFAULT_TRIAL_COST
}

fn default_item_cost() -> f64 {
    DEFAULT_ITEM_COST
}

impl WorkloadSpec {
    pub fn monte_carlo(trials: u64) -> Self {
        WorkloadSpec::MonteCarlo {
            trials,
            trial_cost: DEFAULT_TRIAL_COST,
        }
    }

    pub fn tile_map(items: u64, item_cost: f64) -> Self {
        WorkloadSpec::TileMap { items, item_cost }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WorkloadSpec::MonteCarlo { .. } => "monte_carlo",
            WorkloadSpec::TileMap { .. } => "tile_map",
        }
    }

    /// Total work items in the job.
    pub fn total_work(&self) -> u64 {
        match self {
            WorkloadSpec::MonteCarlo { trials, .. } => *trials,
            WorkloadSpec::TileMap { items, .. } => *items,
        }
    }

    /// Work units consumed per item.
    pub fn unit_cost(&self) -> f64 {
        match self {
            WorkloadSpec::MonteCarlo { trial_cost, .. } => *trial_cost,
            WorkloadSpec::TileMap { item_cost, .. } => *item_cost,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.total_work() == 0 {
            return Err(WorkloadError::InvalidInput("workload has no items".into()));
        }
        let cost = self.unit_cost();
        if !(cost.is_finite() && cost > 0.0) {
            return Err(WorkloadError::InvalidInput(format!(
                "per-item cost must be positive, got {cost}"
            )));
        }
        Ok(())
    }

    pub fn init(&self, params: &SliceParams) -> TaskState {
        match self {
            WorkloadSpec::MonteCarlo { .. } => MonteCarlo.serialize(&MonteCarlo.init(params)),
            WorkloadSpec::TileMap { .. } => TileMap.serialize(&TileMap.init(params)),
        }
    }

    /// Runs up to `budget` items from `state`; returns the new state and the
    /// number of items run.
    pub fn run_slice(
        &self,
        state: &TaskState,
        budget: u64,
    ) -> Result<(TaskState, u64), WorkloadError> {
        fn go<T: ResumableTask>(
            t: T,
            state: &TaskState,
            budget: u64,
        ) -> Result<(TaskState, u64), WorkloadError> {
            let mut s = t.deserialize(state)?;
            let n = t.run_slice(&mut s, budget);
            Ok((t.serialize(&s), n))
        }
        match self {
            WorkloadSpec::MonteCarlo { .. } => go(MonteCarlo, state, budget),
            WorkloadSpec::TileMap { .. } => go(TileMap, state, budget),
        }
    }

    pub fn remaining(&self, state: &TaskState) -> Result<u64, WorkloadError> {
        match self {
            WorkloadSpec::MonteCarlo { .. } => Ok(MonteCarlo.remaining(&MonteCarlo.deserialize(state)?)),
            WorkloadSpec::TileMap { .. } => Ok(TileMap.remaining(&TileMap.deserialize(state)?)),
        }
    }

    pub fn finalize(&self, state: &TaskState) -> Result<Vec<u8>, WorkloadError> {
        match self {
            WorkloadSpec::MonteCarlo { .. } => Ok(MonteCarlo.finalize(&MonteCarlo.deserialize(state)?)),
            WorkloadSpec::TileMap { .. } => Ok(TileMap.finalize(&TileMap.deserialize(state)?)),
        }
    }

    pub fn fold(&self, results: &[Vec<u8>]) -> Result<Aggregate, WorkloadError> {
        match self {
            WorkloadSpec::MonteCarlo { .. } => MonteCarlo.fold(results),
            WorkloadSpec::TileMap { .. } => TileMap.fold(results),
        }
    }

    /// Runs a whole slice in one go. Reference path for tests and baselines.
    pub fn run_to_end(&self, params: &SliceParams) -> Result<Vec<u8>, WorkloadError> {
        let (state, _) = self.run_slice(&self.init(params), params.len)?;
        self.finalize(&state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(len: u64) -> SliceParams {
        SliceParams::new("job", 1, 0, 0, len)
    }

    #[test]
    fn finished_slice_is_unchanged() {
        let mut s = MonteCarlo.init(&params(10));
        MonteCarlo.run_slice(&mut s, 10);
        let before = s.clone();
        assert_eq!(MonteCarlo.run_slice(&mut s, 5), 0);
        assert_eq!(s, before);

        let mut t = TileMap.init(&params(3));
        TileMap.run_slice(&mut t, 3);
        let before = t.clone();
        assert_eq!(TileMap.run_slice(&mut t, 1), 0);
        assert_eq!(t, before);
    }

    #[test]
    fn split_run_matches_single_run() {
        let mut whole = MonteCarlo.init(&params(1000));
        MonteCarlo.run_slice(&mut whole, 1000);
        let mut split = MonteCarlo.init(&params(1000));
        MonteCarlo.run_slice(&mut split, 500);
        MonteCarlo.run_slice(&mut split, 500);
        assert_eq!(whole, split);
        assert_eq!(MonteCarlo.finalize(&whole), MonteCarlo.finalize(&split));

        let mut whole = TileMap.init(&params(300));
        TileMap.run_slice(&mut whole, 300);
        let mut split = TileMap.init(&params(300));
        TileMap.run_slice(&mut split, 120);
        TileMap.run_slice(&mut split, 1000);
        assert_eq!(whole, split);
    }

    #[test]
    fn each_trial_needs_at_least_two_draws() {
        for t in 0..1000 {
            assert!(draws_to_exceed_one(99, t) >= 2);
        }
    }

    #[test]
    fn fold_arithmetic() {
        let slice = |d: u64, t: u64| {
            let mut v = d.to_be_bytes().to_vec();
            v.extend(t.to_be_bytes());
            v
        };
        let a = slice(272, 100);
        let b = slice(271, 100);
        assert!((mc_fold(&[a.clone(), b.clone()]).unwrap() - 2.715).abs() < 1e-15);
        assert_eq!(mc_fold(&[b.clone(), a.clone()]), mc_fold(&[a.clone(), b]));
        assert_eq!(mc_fold(&[a]).unwrap(), 2.72);
        assert!(matches!(
            mc_fold(&[slice(0, 0)]),
            Err(WorkloadError::InvalidInput(_))
        ));
    }

    #[test]
    fn tile_fold_concatenates_in_slice_order() {
        let spec = WorkloadSpec::tile_map(40, 0.01);
        let results: Vec<_> = (0..4)
            .map(|i| spec.run_to_end(&SliceParams::new("j", 5, i, i as u64 * 10, 10)).unwrap())
            .collect();
        match spec.fold(&results).unwrap() {
            Aggregate::Tiles { outputs } => assert_eq!(outputs, results.concat()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn state_round_trips_through_vars() {
        let mut s = MonteCarlo.init(&params(50));
        MonteCarlo.run_slice(&mut s, 17);
        assert_eq!(MonteCarlo.deserialize(&MonteCarlo.serialize(&s)).unwrap(), s);
        let mut t = TileMap.init(&params(50));
        TileMap.run_slice(&mut t, 17);
        assert_eq!(TileMap.deserialize(&TileMap.serialize(&t)).unwrap(), t);
    }

    #[test]
    fn malformed_state_is_rejected() {
        let mut state = MonteCarlo.serialize(&MonteCarlo.init(&params(5)));
        state.cursor = 9;
        assert!(MonteCarlo.deserialize(&state).is_err());
        state.vars.remove("seed");
        assert!(MonteCarlo.deserialize(&state).is_err());
    }

    #[test]
    fn workload_json_shape() {
        let spec: WorkloadSpec =
            serde_json::from_str(r#"{"kind":"monte_carlo","trials":100}"#).unwrap();
        assert_eq!(spec, WorkloadSpec::monte_carlo(100));
        assert!(serde_json::from_str::<WorkloadSpec>(
            r#"{"kind":"monte_carlo","trials":100,"bogus":1}"#
        )
        .is_err());
    }
}
