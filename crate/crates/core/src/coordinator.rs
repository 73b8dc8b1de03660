//! Control plane: job decomposition, task ownership and reassignment.
//!
//! [`Coordinator`] is a sans-IO state machine. Drivers feed it incoming
//! messages and timer polls with the current time, then drain the
//! envelopes it wants sent. The simulated and TCP drivers share it.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{AppendOutcome, CheckpointChain, CheckpointError, CheckpointRecord, TaskState};
use crate::codec::hex_bytes;
use crate::fleet::{DeviceProfile, TelemetryModel, TelemetrySnapshot, WorkerId};
use crate::rng::SimRng;
use crate::scheduler::{select_worker, Candidate, DispatchMode, SchedulerError, Strategy};
use crate::transport::{Body, Message, Outgoing, RejectReason, COORDINATOR_ID};
use crate::workloads::{Aggregate, SliceParams, WorkloadError, WorkloadSpec};
use crate::checkpoint::CheckpointPolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordinatorError {
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("job has not finished")]
    JobNotFinished,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

/// Timing and retry constants of the control plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoordinatorConfig {
    pub heartbeat_interval_s: f64,
    /// Silence after which a worker is declared disconnected.
    pub heartbeat_timeout_s: f64,
    pub max_attempts: u32,
    /// Fixed per-job coordination cost paid between submit and first dispatch.
    pub submit_overhead_s: f64,
    /// Serial coordinator time spent on each dispatch decision.
    pub dispatch_overhead_s: f64,
    /// One-time per-job cost of bringing up checkpoint storage.
    pub checkpoint_setup_s: f64,
    /// Worker pause per checkpoint upload.
    pub checkpoint_record_s: f64,
    /// Resend an unacknowledged assignment after this long.
    pub assign_ack_timeout_s: f64,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval_s: 2.0,
            heartbeat_timeout_s: 6.0,
            max_attempts: 5,
            submit_overhead_s: 0.4,
            dispatch_overhead_s: 0.05,
            checkpoint_setup_s: 2.0,
            checkpoint_record_s: 0.02,
            assign_ack_timeout_s: 3.0,
        }
    }
}

impl CoordinatorConfig {
    pub fn validate(&self) -> Result<(), CoordinatorError> {
        let non_negative = [
            ("submit_overhead_s", self.submit_overhead_s),
            ("dispatch_overhead_s", self.dispatch_overhead_s),
            ("checkpoint_setup_s", self.checkpoint_setup_s),
            ("checkpoint_record_s", self.checkpoint_record_s),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoordinatorError::InvalidJob(format!("{name} must be >= 0")));
            }
        }
        let positive = [
            ("heartbeat_interval_s", self.heartbeat_interval_s),
            ("heartbeat_timeout_s", self.heartbeat_timeout_s),
            ("assign_ack_timeout_s", self.assign_ack_timeout_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoordinatorError::InvalidJob(format!("{name} must be > 0")));
            }
        }
        if self.heartbeat_timeout_s <= self.heartbeat_interval_s {
            return Err(CoordinatorError::InvalidJob(
                "heartbeat timeout must exceed the heartbeat interval".into(),
            ));
        }
        if self.max_attempts == 0 {
            return Err(CoordinatorError::InvalidJob("max_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub job_id: String,
    pub workload: WorkloadSpec,
    pub task_count: u64,
    pub strategy: String,
    pub checkpoint: CheckpointPolicy,
    pub seed: u64,
}

impl JobSpec {
    pub fn total_work(&self) -> u64 {
        self.workload.total_work()
    }

    pub fn validate(&self) -> Result<(), CoordinatorError> {
        self.workload.validate()?;
        self.checkpoint.validate()?;
        if self.task_count == 0 {
            return Err(CoordinatorError::InvalidJob("task_count must be >= 1".into()));
        }
        if self.task_count > self.total_work() {
            return Err(CoordinatorError::InvalidJob(format!(
                "task_count {} exceeds total work {}",
                self.task_count,
                self.total_work()
            )));
        }
        if self.task_count > u32::MAX as u64 {
            return Err(CoordinatorError::InvalidJob("too many tasks".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Assigned,
    Running,
    Orphaned,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_id: u64,
    pub job_id: String,
    pub params: SliceParams,
    pub status: TaskStatus,
    pub owner: Option<WorkerId>,
    /// Attempts charged against `max_attempts`. An assignment orphaned
    /// before the worker acknowledged it is refunded.
    pub attempts: u32,
    /// Ownership token carried by assignments, uploads and commits; grows
    /// with every assignment.
    pub epoch: u32,
    pub chain: CheckpointChain,
    pub result: Option<Vec<u8>>,
    /// Commits accepted over the task's lifetime; 1 once completed.
    pub accepted_commits: u32,
    pub completed_by: Option<WorkerId>,
    pub completed_at_s: Option<f64>,
    acked: bool,
    last_assign_s: f64,
}

/// Splits the job into `task_count` contiguous slices whose sizes differ by
/// at most one.
pub fn decompose(job: &JobSpec) -> Result<Vec<TaskRecord>, CoordinatorError> {
    job.validate()?;
    let total = job.total_work();
    let n = job.task_count;
    let (base, extra) = (total / n, total % n);
    let mut offset = 0;
    let tasks = (0..n)
        .map(|i| {
            let len = base + u64::from(i < extra);
            let params = SliceParams::new(&job.job_id, job.seed, i as u32, offset, len);
            offset += len;
            TaskRecord {
                task_id: i,
                job_id: job.job_id.clone(),
                params,
                status: TaskStatus::Pending,
                owner: None,
                attempts: 0,
                epoch: 0,
                chain: CheckpointChain::new(i, job.checkpoint.clone()),
                result: None,
                accepted_commits: 0,
                completed_by: None,
                completed_at_s: None,
                acked: false,
                last_assign_s: 0.0,
            }
        })
        .collect();
    Ok(tasks)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkerStatus {
    Connected,
    Disconnected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerEntry {
    pub worker_id: WorkerId,
    pub profile: DeviceProfile,
    pub status: WorkerStatus,
    pub last_heartbeat_s: f64,
    pub telemetry: TelemetrySnapshot,
    pub completed: u64,
    pub busy_s: f64,
    queue: VecDeque<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobStatus {
    Waiting,
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Accepted,
    RejectedStale,
}

/// Worker lifecycle input, independent of the message that carried it.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkerEvent {
    Register {
        profile: DeviceProfile,
        telemetry: Option<TelemetrySnapshot>,
    },
    Heartbeat {
        worker_id: WorkerId,
        telemetry: Option<TelemetrySnapshot>,
    },
    Disconnect {
        worker_id: WorkerId,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceKind {
    Submitted { task_count: u64 },
    Ready,
    Registered { worker: WorkerId, reconnect: bool },
    Disconnected { worker: WorkerId, reason: String },
    Assigned { task: u64, worker: WorkerId, attempt: u32, start_cursor: u64 },
    Orphaned { task: u64, worker: WorkerId, cursor: u64 },
    CheckpointAccepted { task: u64, worker: WorkerId, seq: u64, cursor: u64 },
    CommitAccepted { task: u64, worker: WorkerId },
    CommitRejected { task: u64, worker: WorkerId },
    TaskFailed { task: u64 },
    JobCompleted,
    JobFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub at_s: f64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

/// Timestamp-free scheduling decision, for comparing drivers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Decision {
    Assigned { task: u64, worker: WorkerId, attempt: u32 },
    Committed { task: u64, worker: WorkerId },
}

/// Assignment and accepted-commit decisions grouped by task id, keeping
/// event order within a task.
pub fn decision_trace(trace: &[TraceEvent]) -> Vec<Decision> {
    let mut out: Vec<(u64, Decision)> = trace
        .iter()
        .filter_map(|e| match &e.kind {
            TraceKind::Assigned { task, worker, attempt, .. } => Some((
                *task,
                Decision::Assigned { task: *task, worker: worker.clone(), attempt: *attempt },
            )),
            TraceKind::CommitAccepted { task, worker } => Some((
                *task,
                Decision::Committed { task: *task, worker: worker.clone() },
            )),
            _ => None,
        })
        .collect();
    out.sort_by_key(|(task, _)| *task);
    out.into_iter().map(|(_, d)| d).collect()
}

/// Durable record written to the per-job journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalEntry {
    Submitted {
        job: JobSpec,
        at_s: f64,
    },
    Task {
        task_id: u64,
        status: TaskStatus,
        owner: Option<WorkerId>,
        attempts: u32,
        at_s: f64,
    },
    Checkpoint {
        record: CheckpointRecord,
    },
    Commit {
        task_id: u64,
        worker: WorkerId,
        attempt: u32,
        #[serde(with = "hex_bytes")]
        result: Vec<u8>,
        at_s: f64,
    },
    Finished {
        status: JobStatus,
        at_s: f64,
    },
}

/// A message the coordinator wants delivered, not before `at_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub to: WorkerId,
    pub at_s: f64,
    pub msg: Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerTally {
    pub worker_id: WorkerId,
    pub completed: u64,
    pub busy_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub job_id: String,
    pub aggregate: Aggregate,
    pub makespan_s: f64,
    /// In registration order.
    pub workers: Vec<WorkerTally>,
}

impl JobResult {
    pub fn completed_counts(&self) -> Vec<u64> {
        self.workers.iter().map(|w| w.completed).collect()
    }

    pub fn busy_seconds(&self) -> Vec<f64> {
        self.workers.iter().map(|w| w.busy_s).collect()
    }
}

pub struct Coordinator {
    config: CoordinatorConfig,
    job: JobSpec,
    strategy: Box<dyn Strategy>,
    mode: DispatchMode,
    rng: SimRng,
    tasks: Vec<TaskRecord>,
    workers: Vec<WorkerEntry>,
    index: BTreeMap<WorkerId, usize>,
    status: JobStatus,
    submitted_at: Option<f64>,
    ready_at: Option<f64>,
    finished_at: Option<f64>,
    orphans: VecDeque<u64>,
    pool: VecDeque<u64>,
    busy_until: f64,
    out: Outgoing,
    outbox: Vec<Envelope>,
    trace: Vec<TraceEvent>,
    journal: Option<Vec<JournalEntry>>,
    protocol_errors: u64,
}

impl std::fmt::Debug for Coordinator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coordinator")
            .field("job", &self.job.job_id)
            .field("strategy", &self.strategy.name())
            .field("status", &self.status)
            .finish()
    }
}

impl Coordinator {
    pub fn new(
        config: CoordinatorConfig,
        job: JobSpec,
        strategy: Box<dyn Strategy>,
        rng: SimRng,
    ) -> Result<Self, CoordinatorError> {
        config.validate()?;
        let tasks = decompose(&job)?;
        let mode = strategy.mode();
        Ok(Self {
            config,
            job,
            strategy,
            mode,
            rng,
            tasks,
            workers: Vec::new(),
            index: BTreeMap::new(),
            status: JobStatus::Waiting,
            submitted_at: None,
            ready_at: None,
            finished_at: None,
            orphans: VecDeque::new(),
            pool: VecDeque::new(),
            busy_until: f64::NEG_INFINITY,
            out: Outgoing::new(COORDINATOR_ID),
            outbox: Vec::new(),
            trace: Vec::new(),
            journal: None,
            protocol_errors: 0,
        })
    }

    /// Starts buffering journal entries; drain them with [`take_journal`](Self::take_journal).
    pub fn enable_journal(&mut self) {
        self.journal.get_or_insert_with(Vec::new);
    }

    pub fn take_journal(&mut self) -> Vec<JournalEntry> {
        self.journal.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn take_outbox(&mut self) -> Vec<Envelope> {
        std::mem::take(&mut self.outbox)
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn job(&self) -> &JobSpec {
        &self.job
    }

    pub fn status(&self) -> JobStatus {
        self.status
    }

    pub fn mode(&self) -> DispatchMode {
        self.mode
    }

    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn workers(&self) -> &[WorkerEntry] {
        &self.workers
    }

    pub fn worker(&self, id: &str) -> Option<&WorkerEntry> {
        self.index.get(id).map(|&i| &self.workers[i])
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn protocol_errors(&self) -> u64 {
        self.protocol_errors
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.status, JobStatus::Completed | JobStatus::Failed)
    }

    /// Accepts the job at `now`; dispatch starts after the submit overhead
    /// (plus checkpoint setup when checkpointing is on).
    pub fn submit(&mut self, now: f64) {
        if self.submitted_at.is_some() {
            return;
        }
        self.submitted_at = Some(now);
        let mut delay = self.config.submit_overhead_s;
        if self.job.checkpoint.enabled {
            delay += self.config.checkpoint_setup_s;
        }
        self.ready_at = Some(now + delay);
        self.record(now, TraceKind::Submitted { task_count: self.job.task_count });
        let job = self.job.clone();
        self.journal_push(|| JournalEntry::Submitted { job, at_s: now });
    }

    /// Earliest time at which [`poll`](Self::poll) has work to do.
    pub fn next_deadline(&self) -> Option<f64> {
        if self.is_finished() {
            return None;
        }
        let mut next = f64::INFINITY;
        if self.status == JobStatus::Waiting {
            if let Some(t) = self.ready_at {
                next = next.min(t);
            }
        }
        for w in &self.workers {
            if w.status == WorkerStatus::Connected {
                next = next.min(w.last_heartbeat_s + self.config.heartbeat_timeout_s);
            }
        }
        for t in &self.tasks {
            if t.status == TaskStatus::Assigned && !t.acked {
                next = next.min(t.last_assign_s + self.config.assign_ack_timeout_s);
            }
        }
        next.is_finite().then_some(next)
    }

    /// Fires timers due at `now`: job readiness, heartbeat timeouts and
    /// assignment resends. Then dispatches.
    pub fn poll(&mut self, now: f64) {
        if self.is_finished() {
            return;
        }
        if self.status == JobStatus::Waiting && self.ready_at.is_some_and(|t| now >= t) {
            self.start(now);
        }
        let expired: Vec<WorkerId> = self
            .workers
            .iter()
            .filter(|w| {
                w.status == WorkerStatus::Connected
                    && now >= w.last_heartbeat_s + self.config.heartbeat_timeout_s
            })
            .map(|w| w.worker_id.clone())
            .collect();
        for worker_id in expired {
            self.disconnect(now, &worker_id, "heartbeat timeout");
        }
        let resend: Vec<u64> = self
            .tasks
            .iter()
            .filter(|t| {
                t.status == TaskStatus::Assigned
                    && !t.acked
                    && now >= t.last_assign_s + self.config.assign_ack_timeout_s
            })
            .map(|t| t.task_id)
            .collect();
        for task_id in resend {
            self.send_assignment(now, task_id, false);
        }
        self.dispatch(now);
    }

    /// Applies one incoming message at `now`.
    pub fn handle(&mut self, now: f64, msg: Message) {
        let sender = msg.sender.clone();
        let connected = self
            .worker(&sender)
            .is_some_and(|w| w.status == WorkerStatus::Connected);
        if connected {
            self.touch(now, &sender, None);
        }
        match msg.body {
            Body::Register { profile, telemetry } => {
                if profile.id != sender {
                    self.protocol_error(now, &sender, msg.seq, None, "register id mismatch");
                    return;
                }
                self.on_worker_event(now, WorkerEvent::Register { profile, telemetry });
                self.reply(now, &sender, Body::Ack { ack_seq: msg.seq, task_id: None });
            }
            Body::Heartbeat { telemetry } => {
                if connected {
                    self.touch(now, &sender, telemetry);
                } else {
                    self.reply(
                        now,
                        &sender,
                        Body::Reject {
                            ack_seq: msg.seq,
                            task_id: None,
                            reason: RejectReason::NotRegistered,
                        },
                    );
                }
            }
            Body::Telemetry { snapshot } => {
                if connected {
                    self.touch(now, &sender, Some(snapshot));
                }
            }
            Body::CheckpointUpload { task_id, attempt, state } => {
                match self.record_checkpoint(now, task_id, &sender, attempt, &state) {
                    Ok(Verdict::Accepted) => self.reply(
                        now,
                        &sender,
                        Body::Ack { ack_seq: msg.seq, task_id: Some(task_id) },
                    ),
                    Ok(Verdict::RejectedStale) => self.reply(
                        now,
                        &sender,
                        Body::Reject {
                            ack_seq: msg.seq,
                            task_id: Some(task_id),
                            reason: RejectReason::Stale,
                        },
                    ),
                    Err(e) => {
                        let text = e.to_string();
                        self.protocol_error(now, &sender, msg.seq, Some(task_id), &text)
                    }
                }
            }
            Body::CommitResult { task_id, attempt, result, busy_s } => {
                match self.commit_result(now, task_id, &sender, attempt, result, busy_s) {
                    Ok(Verdict::Accepted) => self.reply(
                        now,
                        &sender,
                        Body::Ack { ack_seq: msg.seq, task_id: Some(task_id) },
                    ),
                    Ok(Verdict::RejectedStale) => self.reply(
                        now,
                        &sender,
                        Body::Reject {
                            ack_seq: msg.seq,
                            task_id: Some(task_id),
                            reason: RejectReason::Stale,
                        },
                    ),
                    Err(e) => {
                        let text = e.to_string();
                        self.protocol_error(now, &sender, msg.seq, Some(task_id), &text)
                    }
                }
            }
            Body::Ack { task_id: Some(task_id), .. } => {
                if let Some(t) = self.tasks.get_mut(task_id as usize) {
                    if t.owner.as_deref() == Some(sender.as_str()) && t.status == TaskStatus::Assigned {
                        t.acked = true;
                        t.status = TaskStatus::Running;
                    }
                }
            }
            Body::Ack { task_id: None, .. } | Body::Reject { .. } => {}
            Body::DisconnectNotice { reason } => {
                self.on_worker_event(now, WorkerEvent::Disconnect { worker_id: sender, reason });
            }
            Body::AssignTask { .. } => {
                self.protocol_error(now, &sender, msg.seq, None, "workers cannot assign tasks");
            }
        }
        self.dispatch(now);
    }

    pub fn on_worker_event(&mut self, now: f64, event: WorkerEvent) {
        match event {
            WorkerEvent::Register { profile, telemetry } => self.register(now, profile, telemetry),
            WorkerEvent::Heartbeat { worker_id, telemetry } => {
                if self
                    .worker(&worker_id)
                    .is_some_and(|w| w.status == WorkerStatus::Connected)
                {
                    self.touch(now, &worker_id, telemetry);
                }
            }
            WorkerEvent::Disconnect { worker_id, reason } => {
                self.disconnect(now, &worker_id, &reason)
            }
        }
    }

    fn register(&mut self, now: f64, profile: DeviceProfile, telemetry: Option<TelemetrySnapshot>) {
        let id = profile.id.clone();
        let telemetry = telemetry
            .unwrap_or_else(|| TelemetrySnapshot::initial(&profile, &TelemetryModel::default()));
        let reconnect = match self.index.get(&id) {
            Some(&i) => {
                // A registering worker has lost whatever it was running.
                self.orphan_tasks_of(now, &id);
                let w = &mut self.workers[i];
                w.profile = profile;
                w.status = WorkerStatus::Connected;
                w.last_heartbeat_s = now;
                w.telemetry = telemetry;
                true
            }
            None => {
                self.index.insert(id.clone(), self.workers.len());
                self.workers.push(WorkerEntry {
                    worker_id: id.clone(),
                    profile,
                    status: WorkerStatus::Connected,
                    last_heartbeat_s: now,
                    telemetry,
                    completed: 0,
                    busy_s: 0.0,
                    queue: VecDeque::new(),
                });
                false
            }
        };
        self.record(now, TraceKind::Registered { worker: id, reconnect });
    }

    fn touch(&mut self, now: f64, id: &str, telemetry: Option<TelemetrySnapshot>) {
        if let Some(&i) = self.index.get(id) {
            let w = &mut self.workers[i];
            w.last_heartbeat_s = w.last_heartbeat_s.max(now);
            if let Some(t) = telemetry {
                w.telemetry = t;
            }
        }
    }

    fn disconnect(&mut self, now: f64, id: &str, reason: &str) {
        let Some(&i) = self.index.get(id) else {
            return;
        };
        if self.workers[i].status == WorkerStatus::Disconnected {
            return;
        }
        self.workers[i].status = WorkerStatus::Disconnected;
        let queued: Vec<u64> = self.workers[i].queue.drain(..).collect();
        self.pool.extend(queued);
        self.record(now, TraceKind::Disconnected { worker: id.to_string(), reason: reason.to_string() });
        self.orphan_tasks_of(now, id);
    }

    fn orphan_tasks_of(&mut self, now: f64, id: &str) {
        let owned: Vec<u64> = self
            .tasks
            .iter()
            .filter(|t| t.owner.as_deref() == Some(id))
            .map(|t| t.task_id)
            .collect();
        for task_id in owned {
            let t = &mut self.tasks[task_id as usize];
            if t.status == TaskStatus::Assigned && !t.acked {
                // never reached the worker
                t.attempts -= 1;
            }
            t.status = TaskStatus::Orphaned;
            t.owner = None;
            t.acked = false;
            let cursor = t.chain.head_cursor().unwrap_or(0);
            self.orphans.push_back(task_id);
            self.record(now, TraceKind::Orphaned { task: task_id, worker: id.to_string(), cursor });
            self.journal_task(now, task_id);
        }
    }

    fn start(&mut self, now: f64) {
        self.status = JobStatus::Running;
        self.record(now, TraceKind::Ready);
        let connected: Vec<usize> = (0..self.workers.len())
            .filter(|&i| self.workers[i].status == WorkerStatus::Connected)
            .collect();
        match self.mode {
            DispatchMode::Dynamic => self.pool.extend(0..self.job.task_count),
            DispatchMode::Static if connected.is_empty() => self.pool.extend(0..self.job.task_count),
            DispatchMode::Static => {
                // Pre-partition through the strategy's own rotation.
                for task_id in 0..self.job.task_count {
                    let candidates: Vec<Candidate<'_>> = connected
                        .iter()
                        .map(|&i| Candidate {
                            profile: &self.workers[i].profile,
                            telemetry: &self.workers[i].telemetry,
                        })
                        .collect();
                    let chosen = select_worker(self.strategy.as_mut(), &candidates, &mut self.rng)
                        .expect("candidates are non-empty");
                    let i = self.index[&chosen];
                    self.workers[i].queue.push_back(task_id);
                }
            }
        }
    }

    fn idle(&self, i: usize) -> bool {
        let w = &self.workers[i];
        w.status == WorkerStatus::Connected
            && !self
                .tasks
                .iter()
                .any(|t| t.owner.as_deref() == Some(w.worker_id.as_str()))
    }

    fn next_shared_task(&mut self) -> Option<u64> {
        self.orphans.pop_front().or_else(|| self.pool.pop_front())
    }

    /// Binds dispatchable tasks to idle workers; returns the new assignments.
    pub fn dispatch(&mut self, now: f64) -> Vec<(u64, WorkerId)> {
        let mut made = Vec::new();
        if self.status != JobStatus::Running {
            return made;
        }
        match self.mode {
            DispatchMode::Static => {
                for i in 0..self.workers.len() {
                    if self.status != JobStatus::Running || !self.idle(i) {
                        continue;
                    }
                    let next = match self.orphans.pop_front() {
                        Some(t) => Some(t),
                        None => self.workers[i].queue.pop_front().or_else(|| self.pool.pop_front()),
                    };
                    if let Some(task_id) = next {
                        let id = self.workers[i].worker_id.clone();
                        if self.assign(now, task_id, &id) {
                            made.push((task_id, id));
                        }
                    }
                }
            }
            DispatchMode::Dynamic => loop {
                if self.status != JobStatus::Running || (self.orphans.is_empty() && self.pool.is_empty()) {
                    break;
                }
                let idle: Vec<usize> = (0..self.workers.len()).filter(|&i| self.idle(i)).collect();
                if idle.is_empty() {
                    break;
                }
                let candidates: Vec<Candidate<'_>> = idle
                    .iter()
                    .map(|&i| Candidate {
                        profile: &self.workers[i].profile,
                        telemetry: &self.workers[i].telemetry,
                    })
                    .collect();
                let chosen = match select_worker(self.strategy.as_mut(), &candidates, &mut self.rng) {
                    Ok(id) => id,
                    Err(e) => {
                        log::error!("strategy {} failed: {e}", self.strategy.name());
                        break;
                    }
                };
                let task_id = self.next_shared_task().expect("checked non-empty");
                if self.assign(now, task_id, &chosen) {
                    made.push((task_id, chosen));
                }
            },
        }
        made
    }

    /// Returns false if the task ran out of attempts instead.
    fn assign(&mut self, now: f64, task_id: u64, worker: &str) -> bool {
        let t = &mut self.tasks[task_id as usize];
        if t.attempts >= self.config.max_attempts {
            t.status = TaskStatus::Failed;
            t.owner = None;
            self.record(now, TraceKind::TaskFailed { task: task_id });
            self.journal_task(now, task_id);
            self.finish(now, JobStatus::Failed);
            return false;
        }
        t.attempts += 1;
        t.epoch += 1;
        t.status = TaskStatus::Assigned;
        t.owner = Some(worker.to_string());
        self.send_assignment(now, task_id, true);
        self.journal_task(now, task_id);
        true
    }

    fn send_assignment(&mut self, now: f64, task_id: u64, first: bool) {
        let t = &self.tasks[task_id as usize];
        let owner = t.owner.clone().expect("assigned task has an owner");
        let state = if t.chain.is_empty() {
            None
        } else {
            match t.chain.recover() {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("task {task_id}: {e}; restarting from scratch");
                    None
                }
            }
        };
        let start_cursor = state.as_ref().map_or(0, |s| s.cursor);
        let body = Body::AssignTask {
            task_id,
            attempt: t.epoch,
            workload: self.job.workload.clone(),
            params: t.params.clone(),
            start_cursor,
            state,
            checkpoint_interval_s: self.job.checkpoint.reported_interval(),
        };
        let attempt = t.epoch;
        let at = if first {
            let at = now.max(self.busy_until) + self.config.dispatch_overhead_s;
            self.busy_until = at;
            at
        } else {
            now
        };
        let t = &mut self.tasks[task_id as usize];
        t.last_assign_s = at;
        t.acked = false;
        let msg = self.out.stamp(body);
        self.outbox.push(Envelope { to: owner.clone(), at_s: at, msg });
        if first {
            self.record(at, TraceKind::Assigned { task: task_id, worker: owner, attempt, start_cursor });
        }
    }

    fn owns(&self, task_id: u64, worker: &str, attempt: u32) -> bool {
        let t = &self.tasks[task_id as usize];
        matches!(t.status, TaskStatus::Assigned | TaskStatus::Running)
            && t.owner.as_deref() == Some(worker)
            && t.epoch == attempt
    }

    /// Accepts a result only from the current owner and attempt.
    pub fn commit_result(
        &mut self,
        now: f64,
        task_id: u64,
        worker: &str,
        attempt: u32,
        result: Vec<u8>,
        busy_s: f64,
    ) -> Result<Verdict, CoordinatorError> {
        if task_id >= self.tasks.len() as u64 {
            return Err(CoordinatorError::Protocol(format!("unknown task {task_id}")));
        }
        if !self.owns(task_id, worker, attempt) {
            self.record(now, TraceKind::CommitRejected { task: task_id, worker: worker.to_string() });
            return Ok(Verdict::RejectedStale);
        }
        let t = &mut self.tasks[task_id as usize];
        t.status = TaskStatus::Completed;
        t.owner = None;
        t.acked = true;
        t.accepted_commits += 1;
        t.completed_by = Some(worker.to_string());
        t.completed_at_s = Some(now);
        t.result = Some(result.clone());
        let i = self.index[worker];
        self.workers[i].completed += 1;
        self.workers[i].busy_s += busy_s.max(0.0);
        self.record(now, TraceKind::CommitAccepted { task: task_id, worker: worker.to_string() });
        let w = worker.to_string();
        self.journal_push(|| JournalEntry::Commit { task_id, worker: w, attempt, result, at_s: now });
        self.journal_task(now, task_id);
        if self.tasks.iter().all(|t| t.status == TaskStatus::Completed) {
            self.finish(now, JobStatus::Completed);
        }
        Ok(Verdict::Accepted)
    }

    /// Appends the owner's full state to the task's chain.
    pub fn record_checkpoint(
        &mut self,
        now: f64,
        task_id: u64,
        worker: &str,
        attempt: u32,
        state: &TaskState,
    ) -> Result<Verdict, CoordinatorError> {
        if task_id >= self.tasks.len() as u64 {
            return Err(CoordinatorError::Protocol(format!("unknown task {task_id}")));
        }
        if !self.owns(task_id, worker, attempt) {
            return Ok(Verdict::RejectedStale);
        }
        let t = &mut self.tasks[task_id as usize];
        let outcome = t.chain.append(state, now)?;
        t.status = TaskStatus::Running;
        t.acked = true;
        if let AppendOutcome::Appended { seq, .. } = outcome {
            let record = t.chain.records().last().expect("just appended").clone();
            self.record(
                now,
                TraceKind::CheckpointAccepted { task: task_id, worker: worker.to_string(), seq, cursor: state.cursor },
            );
            self.journal_push(|| JournalEntry::Checkpoint { record });
        }
        Ok(Verdict::Accepted)
    }

    /// Folds slice results once every task has completed.
    pub fn aggregate(&self) -> Result<JobResult, CoordinatorError> {
        if self.status != JobStatus::Completed {
            return Err(CoordinatorError::JobNotFinished);
        }
        let results: Vec<Vec<u8>> = self
            .tasks
            .iter()
            .map(|t| t.result.clone().expect("completed tasks carry results"))
            .collect();
        let aggregate = self.job.workload.fold(&results)?;
        let makespan_s = self.finished_at.expect("finished") - self.submitted_at.expect("submitted");
        Ok(JobResult {
            job_id: self.job.job_id.clone(),
            aggregate,
            makespan_s,
            workers: self
                .workers
                .iter()
                .map(|w| WorkerTally {
                    worker_id: w.worker_id.clone(),
                    completed: w.completed,
                    busy_s: w.busy_s,
                })
                .collect(),
        })
    }

    fn finish(&mut self, now: f64, status: JobStatus) {
        if self.is_finished() {
            return;
        }
        self.status = status;
        self.finished_at = Some(now);
        let kind = match status {
            JobStatus::Completed => TraceKind::JobCompleted,
            _ => TraceKind::JobFailed,
        };
        self.record(now, kind);
        self.journal_push(|| JournalEntry::Finished { status, at_s: now });
    }

    fn reply(&mut self, now: f64, to: &str, body: Body) {
        let msg = self.out.stamp(body);
        self.outbox.push(Envelope { to: to.to_string(), at_s: now, msg });
    }

    fn protocol_error(&mut self, now: f64, sender: &str, seq: u64, task_id: Option<u64>, what: &str) {
        log::warn!("protocol error from {sender}: {what}");
        self.protocol_errors += 1;
        self.reply(now, sender, Body::Reject { ack_seq: seq, task_id, reason: RejectReason::Invalid });
    }

    fn record(&mut self, at_s: f64, kind: TraceKind) {
        log::debug!("t={at_s:.3} {kind:?}");
        self.trace.push(TraceEvent { at_s, kind });
    }

    fn journal_push(&mut self, entry: impl FnOnce() -> JournalEntry) {
        if let Some(j) = self.journal.as_mut() {
            j.push(entry());
        }
    }

    fn journal_task(&mut self, now: f64, task_id: u64) {
        let t = &self.tasks[task_id as usize];
        let (status, owner, attempts) = (t.status, t.owner.clone(), t.attempts);
        self.journal_push(|| JournalEntry::Task { task_id, status, owner, attempts, at_s: now });
    }
}
