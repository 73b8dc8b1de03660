//! Tiered checkpoint chains.
//!
//! A chain starts with a `Base` record holding the full variable set. Later
//! appends store only the variables whose bytes changed (`Delta`). Once `k`
//! deltas pile up after the last full record, the whole chain is folded
//! into a single `Compacted` record, so recovery never replays more than
//! `k + 1` records.
//!
//! Variable values are opaque byte strings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::hex_map;

pub const DEFAULT_COMPACTION_THRESHOLD: u32 = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("checkpoint chain is empty")]
    EmptyChain,
    #[error("corrupt checkpoint chain for task {task_id}: {reason}")]
    CorruptChain { task_id: u64, reason: String },
    #[error("stale state: cursor {offered} is behind checkpointed cursor {current}")]
    StaleState { offered: u64, current: u64 },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointTier {
    Base,
    Delta,
    Compacted,
}

impl CheckpointTier {
    fn is_full(self) -> bool {
        matches!(self, CheckpointTier::Base | CheckpointTier::Compacted)
    }

    fn tag(self) -> u8 {
        match self {
            CheckpointTier::Base => 0,
            CheckpointTier::Delta => 1,
            CheckpointTier::Compacted => 2,
        }
    }
}

/// Full resumable state of one task.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskState {
    #[serde(with = "hex_map")]
    pub vars: BTreeMap<String, Vec<u8>>,
    /// Completed-iteration count.
    pub cursor: u64,
}

impl TaskState {
    pub fn new(vars: BTreeMap<String, Vec<u8>>, cursor: u64) -> Self {
        Self { vars, cursor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRecord {
    pub task_id: u64,
    pub seq: u64,
    pub tier: CheckpointTier,
    #[serde(with = "hex_map")]
    pub vars: BTreeMap<String, Vec<u8>>,
    /// Names dropped since the previous state (deltas only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed: Vec<String>,
    pub cursor: u64,
    pub created_at_s: f64,
    /// Hex SHA-256 over task id, seq, tier, cursor and variables.
    pub checksum: String,
}

impl CheckpointRecord {
    fn sealed(
        task_id: u64,
        seq: u64,
        tier: CheckpointTier,
        vars: BTreeMap<String, Vec<u8>>,
        removed: Vec<String>,
        cursor: u64,
        created_at_s: f64,
    ) -> Self {
        let mut record = Self {
            task_id,
            seq,
            tier,
            vars,
            removed,
            cursor,
            created_at_s,
            checksum: String::new(),
        };
        record.checksum = record.compute_checksum();
        record
    }

    pub fn compute_checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.task_id.to_be_bytes());
        h.update(self.seq.to_be_bytes());
        h.update([self.tier.tag()]);
        h.update(self.cursor.to_be_bytes());
        for (name, value) in &self.vars {
            h.update((name.len() as u64).to_be_bytes());
            h.update(name.as_bytes());
            h.update((value.len() as u64).to_be_bytes());
            h.update(value);
        }
        for name in &self.removed {
            h.update([0xff]);
            h.update((name.len() as u64).to_be_bytes());
            h.update(name.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn verify(&self) -> bool {
        self.checksum == self.compute_checksum()
    }
}

/// When and how often a task checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointPolicy {
    pub enabled: bool,
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    #[serde(default = "default_threshold")]
    pub compaction_threshold: u32,
}

fn default_interval() -> f64 {
    5.0
}

fn default_threshold() -> u32 {
    DEFAULT_COMPACTION_THRESHOLD
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        Self::disabled()
    }
}

impl CheckpointPolicy {
    pub fn every(interval_s: f64) -> Self {
        Self {
            enabled: true,
            interval_s,
            compaction_threshold: DEFAULT_COMPACTION_THRESHOLD,
        }
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            interval_s: default_interval(),
            compaction_threshold: DEFAULT_COMPACTION_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, k: u32) -> Self {
        self.compaction_threshold = k;
        self
    }

    pub fn validate(&self) -> Result<(), CheckpointError> {
        if self.compaction_threshold < 1 {
            return Err(CheckpointError::InvalidPolicy(
                "compaction threshold must be at least 1".into(),
            ));
        }
        if !(self.interval_s.is_finite() && self.interval_s > 0.0) {
            return Err(CheckpointError::InvalidPolicy(
                "interval must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Interval as reported in result tables; `None` when disabled.
    pub fn reported_interval(&self) -> Option<f64> {
        self.enabled.then_some(self.interval_s)
    }
}

pub fn should_checkpoint(policy: &CheckpointPolicy, elapsed_since_last_s: f64) -> bool {
    policy.enabled && elapsed_since_last_s >= policy.interval_s
}

/// What an [`CheckpointChain::append`] call did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Appended {
        seq: u64,
        tier: CheckpointTier,
        compacted: bool,
    },
    /// The state matched the chain head; nothing was written.
    Unchanged,
}

/// Ordered checkpoint records for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointChain {
    task_id: u64,
    records: Vec<CheckpointRecord>,
    policy: CheckpointPolicy,
}

impl CheckpointChain {
    pub fn new(task_id: u64, policy: CheckpointPolicy) -> Self {
        Self {
            task_id,
            records: Vec::new(),
            policy,
        }
    }

    /// Rebuilds a chain from persisted records, verifying structure.
    pub fn from_records(
        task_id: u64,
        policy: CheckpointPolicy,
        records: Vec<CheckpointRecord>,
    ) -> Result<Self, CheckpointError> {
        let chain = Self {
            task_id,
            records,
            policy,
        };
        if !chain.records.is_empty() {
            chain.recover()?;
        }
        Ok(chain)
    }

    pub fn task_id(&self) -> u64 {
        self.task_id
    }

    pub fn records(&self) -> &[CheckpointRecord] {
        &self.records
    }

    pub fn policy(&self) -> &CheckpointPolicy {
        &self.policy
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Deltas written since the most recent full record.
    pub fn pending_deltas(&self) -> usize {
        self.records
            .iter()
            .rev()
            .take_while(|r| r.tier == CheckpointTier::Delta)
            .count()
    }

    /// Cursor of the newest record, if any.
    pub fn head_cursor(&self) -> Option<u64> {
        self.records.last().map(|r| r.cursor)
    }

    /// Records `state`, as a Base when the chain is empty and as a Delta of
    /// changed variables otherwise. Compacts once the delta run reaches the
    /// policy threshold. The chain is untouched on error.
    pub fn append(
        &mut self,
        state: &TaskState,
        now_s: f64,
    ) -> Result<AppendOutcome, CheckpointError> {
        if self.records.is_empty() {
            let record = CheckpointRecord::sealed(
                self.task_id,
                0,
                CheckpointTier::Base,
                state.vars.clone(),
                Vec::new(),
                state.cursor,
                now_s,
            );
            self.records.push(record);
            return Ok(AppendOutcome::Appended {
                seq: 0,
                tier: CheckpointTier::Base,
                compacted: false,
            });
        }

        let head = self.recover()?;
        if state.cursor < head.cursor {
            return Err(CheckpointError::StaleState {
                offered: state.cursor,
                current: head.cursor,
            });
        }
        let changed: BTreeMap<String, Vec<u8>> = state
            .vars
            .iter()
            .filter(|(name, value)| head.vars.get(*name) != Some(*value))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect();
        let removed: Vec<String> = head
            .vars
            .keys()
            .filter(|name| !state.vars.contains_key(*name))
            .cloned()
            .collect();
        if changed.is_empty() && removed.is_empty() && state.cursor == head.cursor {
            return Ok(AppendOutcome::Unchanged);
        }

        let seq = self.next_seq();
        self.records.push(CheckpointRecord::sealed(
            self.task_id,
            seq,
            CheckpointTier::Delta,
            changed,
            removed,
            state.cursor,
            now_s,
        ));
        let compacted = self.pending_deltas() >= self.policy.compaction_threshold as usize;
        if compacted {
            self.compact(now_s)?;
        }
        Ok(AppendOutcome::Appended {
            seq,
            tier: CheckpointTier::Delta,
            compacted,
        })
    }

    /// Folds the whole chain into one `Compacted` record carrying the newest
    /// record's sequence number.
    pub fn compact(&mut self, now_s: f64) -> Result<(), CheckpointError> {
        let state = self.recover()?;
        let seq = self.records.last().map(|r| r.seq).ok_or(CheckpointError::EmptyChain)?;
        let record = CheckpointRecord::sealed(
            self.task_id,
            seq,
            CheckpointTier::Compacted,
            state.vars,
            Vec::new(),
            state.cursor,
            now_s,
        );
        self.records = vec![record];
        Ok(())
    }

    pub fn recover(&self) -> Result<TaskState, CheckpointError> {
        self.recover_counted().map(|(state, _)| state)
    }

    /// Like [`recover`](Self::recover), also returning how many records
    /// were read.
    pub fn recover_counted(&self) -> Result<(TaskState, usize), CheckpointError> {
        let corrupt = |reason: String| CheckpointError::CorruptChain {
            task_id: self.task_id,
            reason,
        };
        if self.records.is_empty() {
            return Err(CheckpointError::EmptyChain);
        }
        let start = self
            .records
            .iter()
            .rposition(|r| r.tier.is_full())
            .ok_or_else(|| corrupt("no base or compacted record".into()))?;

        let mut read = 0;
        let mut state = TaskState::default();
        let mut prev: Option<&CheckpointRecord> = None;
        for record in &self.records[start..] {
            read += 1;
            if record.task_id != self.task_id {
                return Err(corrupt(format!("record for task {}", record.task_id)));
            }
            if !record.verify() {
                return Err(corrupt(format!("checksum mismatch at seq {}", record.seq)));
            }
            if let Some(p) = prev {
                if record.seq != p.seq + 1 {
                    return Err(corrupt(format!("seq gap {} -> {}", p.seq, record.seq)));
                }
                if record.cursor < p.cursor {
                    return Err(corrupt(format!("cursor regression at seq {}", record.seq)));
                }
            }
            if record.tier.is_full() {
                state.vars = record.vars.clone();
            } else {
                for name in &record.removed {
                    state.vars.remove(name);
                }
                for (name, value) in &record.vars {
                    state.vars.insert(name.clone(), value.clone());
                }
            }
            state.cursor = record.cursor;
            prev = Some(record);
        }
        Ok((state, read))
    }

    fn next_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.seq + 1)
    }
}

/// Replays persisted records (in write order) into per-task chains. A full
/// record restarts its task's chain.
pub fn rebuild_chains(
    records: impl IntoIterator<Item = CheckpointRecord>,
    policy: &CheckpointPolicy,
) -> Result<BTreeMap<u64, CheckpointChain>, CheckpointError> {
    let mut grouped: BTreeMap<u64, Vec<CheckpointRecord>> = BTreeMap::new();
    for record in records {
        let list = grouped.entry(record.task_id).or_default();
        if record.tier.is_full() {
            list.clear();
        }
        list.push(record);
    }
    grouped
        .into_iter()
        .map(|(task_id, recs)| {
            CheckpointChain::from_records(task_id, policy.clone(), recs).map(|c| (task_id, c))
        })
        .collect()
}
