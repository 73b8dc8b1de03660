//! Worker side: synthetic telemetry over time and the execution agent.

use crate::checkpoint::TaskState;
use crate::fleet::{effective_throughput, step_telemetry, DeviceProfile, TelemetryModel, TelemetrySnapshot};
use crate::rng::SimRng;
use crate::transport::{Body, Message, Outgoing, RejectReason};
use crate::workloads::{SliceParams, WorkloadSpec};

/// Telemetry of one device sampled on a fixed grid, generated lazily.
///
/// The path depends only on the profile, model and generator, never on
/// what the worker is doing, so throughput integrals are reproducible.
#[derive(Debug, Clone)]
pub struct TelemetryTrack {
    profile: DeviceProfile,
    model: TelemetryModel,
    rng: SimRng,
    snaps: Vec<TelemetrySnapshot>,
}

impl TelemetryTrack {
    pub fn new(profile: DeviceProfile, model: TelemetryModel, rng: SimRng) -> Self {
        let first = TelemetrySnapshot::initial(&profile, &model);
        Self {
            profile,
            model,
            rng,
            snaps: vec![first],
        }
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    fn step(&self) -> f64 {
        self.model.step_s
    }

    fn slot(&self, t: f64) -> usize {
        (t.max(0.0) / self.step()).floor() as usize
    }

    fn ensure(&mut self, k: usize) {
        while self.snaps.len() <= k {
            let prev = self.snaps.last().expect("never empty");
            let next = step_telemetry(&self.profile, prev, self.model.step_s, &self.model, &mut self.rng)
                .expect("model step is positive");
            self.snaps.push(next);
        }
    }

    /// Snapshot in effect at `t`, stamped with `t`.
    pub fn at(&mut self, t: f64) -> TelemetrySnapshot {
        let k = self.slot(t);
        self.ensure(k);
        let mut snap = self.snaps[k].clone();
        snap.timestamp_s = t;
        snap
    }

    fn rate(&mut self, k: usize, unit_scale: f64) -> f64 {
        self.ensure(k);
        effective_throughput(&self.profile, &self.snaps[k], unit_scale)
    }

    /// Work units the device delivers over `[t0, t1]`.
    pub fn work_between(&mut self, t0: f64, t1: f64, unit_scale: f64) -> f64 {
        let mut total = 0.0;
        let mut t = t0;
        while t < t1 {
            let k = self.slot(t);
            let end = ((k + 1) as f64 * self.step()).min(t1);
            total += self.rate(k, unit_scale) * (end - t);
            t = end;
        }
        total
    }

    /// Earliest time at which `work` units are done, starting at `t0`.
    pub fn time_for_work(&mut self, t0: f64, work: f64, unit_scale: f64) -> f64 {
        let mut left = work;
        let mut t = t0;
        loop {
            if left <= 0.0 {
                return t;
            }
            let k = self.slot(t);
            let end = (k + 1) as f64 * self.step();
            let rate = self.rate(k, unit_scale);
            let can = rate * (end - t);
            if rate > 0.0 && can >= left {
                return t + left / rate;
            }
            left -= can;
            t = end;
        }
    }
}

/// Worker-side constants.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    pub heartbeat_interval_s: f64,
    pub checkpoint_record_s: f64,
    pub unit_scale: f64,
    /// Send telemetry inside the heartbeat instead of as its own message.
    pub piggyback_telemetry: bool,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            heartbeat_interval_s: 2.0,
            checkpoint_record_s: 0.02,
            unit_scale: 1.0,
            piggyback_telemetry: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Running {
    task_id: u64,
    attempt: u32,
    workload: WorkloadSpec,
    state: TaskState,
    interval_s: Option<f64>,
    seg_start: f64,
    seg_end: f64,
    seg_items: u64,
    /// Work units computed but not yet turned into whole items.
    credit: f64,
    busy_s: f64,
}

#[derive(Debug, Clone)]
struct PendingCommit {
    task_id: u64,
    attempt: u32,
    result: Vec<u8>,
    busy_s: f64,
}

/// Executes assigned slices against the simulated clock.
///
/// Sans-IO: callers deliver messages and wake-ups and send what is returned.
#[derive(Debug, Clone)]
pub struct WorkerAgent {
    config: WorkerConfig,
    track: TelemetryTrack,
    out: Outgoing,
    online: bool,
    registered: bool,
    register_seq: Option<u64>,
    next_heartbeat: f64,
    current: Option<Running>,
    pending: Option<PendingCommit>,
}

impl WorkerAgent {
    pub fn new(config: WorkerConfig, track: TelemetryTrack) -> Self {
        let id = track.profile().id.clone();
        Self {
            config,
            track,
            out: Outgoing::new(id),
            online: false,
            registered: false,
            register_seq: None,
            next_heartbeat: f64::INFINITY,
            current: None,
            pending: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.track.profile().id
    }

    pub fn profile(&self) -> &DeviceProfile {
        self.track.profile()
    }

    pub fn is_online(&self) -> bool {
        self.online
    }

    pub fn is_registered(&self) -> bool {
        self.registered
    }

    /// Task currently executing, if any.
    pub fn current_task(&self) -> Option<(u64, u32)> {
        self.current.as_ref().map(|r| (r.task_id, r.attempt))
    }

    pub fn telemetry(&mut self, now: f64) -> TelemetrySnapshot {
        self.track.at(now)
    }

    /// Marks the worker as already registered at `now` (initial fleet).
    pub fn bootstrap(&mut self, now: f64) {
        self.online = true;
        self.registered = true;
        self.next_heartbeat = now + self.config.heartbeat_interval_s;
    }

    /// Comes (back) online and asks to register.
    pub fn go_online(&mut self, now: f64) -> Vec<Message> {
        self.online = true;
        self.registered = false;
        self.current = None;
        self.pending = None;
        self.next_heartbeat = now + self.config.heartbeat_interval_s;
        vec![self.register(now)]
    }

    /// Drops off silently, abandoning any work.
    pub fn go_offline(&mut self) {
        self.online = false;
        self.registered = false;
        self.register_seq = None;
        self.current = None;
        self.pending = None;
        self.next_heartbeat = f64::INFINITY;
    }

    fn register(&mut self, now: f64) -> Message {
        let telemetry = Some(self.track.at(now));
        let msg = self.out.stamp(Body::Register {
            profile: self.track.profile().clone(),
            telemetry,
        });
        self.register_seq = Some(msg.seq);
        msg
    }

    pub fn next_wakeup(&self) -> Option<f64> {
        if !self.online {
            return None;
        }
        let seg = self.current.as_ref().map_or(f64::INFINITY, |r| r.seg_end);
        Some(self.next_heartbeat.min(seg))
    }

    pub fn handle(&mut self, now: f64, msg: Message) -> Vec<Message> {
        let mut out = Vec::new();
        if !self.online {
            return out;
        }
        match msg.body {
            Body::Ack { ack_seq, task_id: None } => {
                if self.register_seq == Some(ack_seq) {
                    self.registered = true;
                }
            }
            Body::Ack { task_id: Some(id), .. } => {
                if self.pending.as_ref().is_some_and(|p| p.task_id == id) {
                    self.pending = None;
                }
            }
            Body::Reject { reason: RejectReason::NotRegistered, .. } => {
                self.current = None;
                self.pending = None;
                self.registered = false;
                out.push(self.register(now));
            }
            Body::Reject { reason: RejectReason::Stale, task_id: Some(id), .. } => {
                if self.pending.as_ref().is_some_and(|p| p.task_id == id) {
                    self.pending = None;
                }
                if self.current.as_ref().is_some_and(|r| r.task_id == id) {
                    self.current = None;
                }
            }
            Body::Reject { reason, task_id, .. } => {
                log::debug!("{}: reject {reason:?} for {task_id:?}", self.id());
            }
            Body::AssignTask {
                task_id,
                attempt,
                workload,
                params,
                start_cursor: _,
                state,
                checkpoint_interval_s,
            } => {
                let ack = Body::Ack { ack_seq: msg.seq, task_id: Some(task_id) };
                if self.current_task() != Some((task_id, attempt)) {
                    self.start(now, task_id, attempt, workload, &params, state, checkpoint_interval_s);
                }
                self.registered = true;
                out.push(self.out.stamp(ack));
            }
            other => log::debug!("{}: ignoring {}", self.id(), other.type_name()),
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn start(
        &mut self,
        now: f64,
        task_id: u64,
        attempt: u32,
        workload: WorkloadSpec,
        params: &SliceParams,
        state: Option<TaskState>,
        interval_s: Option<f64>,
    ) {
        let state = state.unwrap_or_else(|| workload.init(params));
        let mut run = Running {
            task_id,
            attempt,
            workload,
            state,
            interval_s,
            seg_start: now,
            seg_end: now,
            seg_items: 0,
            credit: 0.0,
            busy_s: 0.0,
        };
        if self.plan(&mut run, now) {
            self.current = Some(run);
        }
    }

    /// Schedules the next segment; false if the state is unusable.
    fn plan(&mut self, run: &mut Running, t0: f64) -> bool {
        let remaining = match run.workload.remaining(&run.state) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: task {}: {e}", self.id(), run.task_id);
                return false;
            }
        };
        let cost = run.workload.unit_cost();
        let scale = self.config.unit_scale;
        run.seg_start = t0;
        if let Some(interval) = run.interval_s {
            let te = t0 + interval;
            let capacity = self.track.work_between(t0, te, scale) + run.credit;
            let items = ((capacity / cost).floor() as u64).min(remaining);
            if items < remaining {
                run.seg_end = te;
                run.seg_items = items;
                run.credit = capacity - items as f64 * cost;
                return true;
            }
        }
        let need = (remaining as f64 * cost - run.credit).max(0.0);
        run.seg_end = self.track.time_for_work(t0, need, scale);
        run.seg_items = remaining;
        run.credit = 0.0;
        true
    }

    pub fn wake(&mut self, now: f64) -> Vec<Message> {
        let mut out = Vec::new();
        if !self.online {
            return out;
        }
        if now >= self.next_heartbeat {
            while self.next_heartbeat <= now {
                self.next_heartbeat += self.config.heartbeat_interval_s;
            }
            if !self.registered {
                out.push(self.register(now));
            } else {
                let snap = self.track.at(now);
                if self.config.piggyback_telemetry {
                    out.push(self.out.stamp(Body::Heartbeat { telemetry: Some(snap) }));
                } else {
                    out.push(self.out.stamp(Body::Heartbeat { telemetry: None }));
                    out.push(self.out.stamp(Body::Telemetry { snapshot: snap }));
                }
                if let Some(p) = self.pending.clone() {
                    out.push(self.commit_message(&p));
                }
            }
        }
        if self.current.as_ref().is_some_and(|r| now >= r.seg_end) {
            let mut run = self.current.take().expect("checked");
            match run.workload.run_slice(&run.state, run.seg_items) {
                Ok((state, _)) => run.state = state,
                Err(e) => {
                    log::warn!("{}: task {}: {e}", self.id(), run.task_id);
                    return out;
                }
            }
            run.busy_s += now - run.seg_start;
            if run.workload.remaining(&run.state) == Ok(0) {
                let result = run.workload.finalize(&run.state).expect("state checked above");
                let pending = PendingCommit {
                    task_id: run.task_id,
                    attempt: run.attempt,
                    result,
                    busy_s: run.busy_s,
                };
                out.push(self.commit_message(&pending));
                self.pending = Some(pending);
            } else {
                out.push(self.out.stamp(Body::CheckpointUpload {
                    task_id: run.task_id,
                    attempt: run.attempt,
                    state: run.state.clone(),
                }));
                let resume = now + self.config.checkpoint_record_s;
                run.busy_s += self.config.checkpoint_record_s;
                if self.plan(&mut run, resume) {
                    self.current = Some(run);
                }
            }
        }
        out
    }

    fn commit_message(&mut self, p: &PendingCommit) -> Message {
        self.out.stamp(Body::CommitResult {
            task_id: p.task_id,
            attempt: p.attempt,
            result: p.result.clone(),
            busy_s: p.busy_s,
        })
    }
}
