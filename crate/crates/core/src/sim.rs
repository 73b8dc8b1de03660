//! Deterministic discrete-event driver for one job.
//!
//! Events are ordered by (time, source id, insertion sequence). Source 0 is
//! the coordinator; worker `i` (in fleet order) is source `i + 1`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::coordinator::{
    Coordinator, CoordinatorConfig, CoordinatorError, JobResult, JobSpec, JobStatus, JournalEntry,
    TraceEvent, WorkerEvent,
};
use crate::fleet::{ChurnEvent, ChurnKind, DeviceProfile, TelemetryModel};
use crate::rng::{labels, stream, SimRng};
use crate::scheduler::Strategy;
use crate::transport::{LinkModel, Message, SimNetwork, COORDINATOR_ID};
use crate::worker::{TelemetryTrack, WorkerAgent, WorkerConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error("simulation passed {0} s without finishing the job")]
    Stalled(f64),
    #[error("churn event names unknown worker {0:?}")]
    UnknownWorker(String),
}

/// Everything one simulated run needs besides the seed.
pub struct SimSetup {
    pub profiles: Vec<DeviceProfile>,
    pub job: JobSpec,
    pub strategy: Box<dyn Strategy>,
    pub coordinator: CoordinatorConfig,
    pub telemetry: TelemetryModel,
    pub link: LinkModel,
    pub link_overrides: BTreeMap<String, LinkModel>,
    pub churn: Vec<ChurnEvent>,
    pub unit_scale: f64,
    pub max_time_s: f64,
    pub journal: bool,
}

impl SimSetup {
    pub fn new(profiles: Vec<DeviceProfile>, job: JobSpec, strategy: Box<dyn Strategy>) -> Self {
        Self {
            profiles,
            job,
            strategy,
            coordinator: CoordinatorConfig::default(),
            telemetry: TelemetryModel::default(),
            link: LinkModel::default(),
            link_overrides: BTreeMap::new(),
            churn: Vec::new(),
            unit_scale: 1.0,
            max_time_s: 100_000.0,
            journal: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub status: JobStatus,
    pub result: Option<JobResult>,
    pub trace: Vec<TraceEvent>,
    pub journal: Vec<JournalEntry>,
    pub end_time_s: f64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    /// Accepted commits per task, by task id.
    pub accepted_commits: Vec<u32>,
}

/// Per-worker generator for the synthetic telemetry path.
pub fn telemetry_rng(seed: u64, worker_index: usize) -> SimRng {
    stream(seed, labels::TELEMETRY_BASE + worker_index as u64)
}

#[derive(Debug)]
enum Kind {
    ToCoordinator(Message),
    ToWorker(usize, Message),
    WakeWorker(usize, u64),
    WakeCoordinator(u64),
    Churn(usize, ChurnKind),
}

#[derive(Debug)]
struct Event {
    at: f64,
    source: usize,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .at
            .total_cmp(&self.at)
            .then(other.source.cmp(&self.source))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Driver {
    queue: BinaryHeap<Event>,
    seq: u64,
    net: SimNetwork,
    coordinator: Coordinator,
    workers: Vec<WorkerAgent>,
    index: BTreeMap<String, usize>,
    worker_wake: Vec<(u64, f64)>,
    coord_wake: (u64, f64),
}

impl Driver {
    fn push(&mut self, at: f64, source: usize, kind: Kind) {
        self.seq += 1;
        self.queue.push(Event { at, source, seq: self.seq, kind });
    }

    fn flush_coordinator(&mut self, now: f64) {
        for env in self.coordinator.take_outbox() {
            let Some(&i) = self.index.get(&env.to) else {
                continue;
            };
            let send_at = env.at_s.max(now);
            if let Some(arrive) = self.net.send(COORDINATOR_ID, &env.to, send_at) {
                self.push(arrive, 0, Kind::ToWorker(i, env.msg));
            }
        }
        let next = self.coordinator.next_deadline().unwrap_or(f64::INFINITY);
        if next != self.coord_wake.1 {
            self.coord_wake = (self.coord_wake.0 + 1, next);
            if next.is_finite() {
                let v = self.coord_wake.0;
                self.push(next.max(now), 0, Kind::WakeCoordinator(v));
            }
        }
    }

    fn send_from_worker(&mut self, now: f64, i: usize, msgs: Vec<Message>) {
        for msg in msgs {
            if let Some(arrive) = self.net.send(&msg.sender, COORDINATOR_ID, now) {
                self.push(arrive, i + 1, Kind::ToCoordinator(msg));
            }
        }
        let next = self.workers[i].next_wakeup().unwrap_or(f64::INFINITY);
        if next != self.worker_wake[i].1 {
            let v = self.worker_wake[i].0 + 1;
            self.worker_wake[i] = (v, next);
            if next.is_finite() {
                self.push(next.max(now), i + 1, Kind::WakeWorker(i, v));
            }
        }
    }
}

/// Runs the job to completion (or failure) and returns what happened.
pub fn simulate(setup: SimSetup, seed: u64) -> Result<SimOutcome, SimError> {
    let SimSetup {
        profiles,
        job,
        strategy,
        coordinator: coord_config,
        telemetry,
        link,
        link_overrides,
        churn,
        unit_scale,
        max_time_s,
        journal,
    } = setup;

    let mut coordinator = Coordinator::new(
        coord_config.clone(),
        job,
        strategy,
        stream(seed, labels::SCHEDULER),
    )?;
    if journal {
        coordinator.enable_journal();
    }
    let mut net = SimNetwork::new(link, stream(seed, labels::NETWORK));
    for (id, l) in link_overrides {
        net.set_link(id, l);
    }
    let worker_config = WorkerConfig {
        heartbeat_interval_s: coord_config.heartbeat_interval_s,
        checkpoint_record_s: coord_config.checkpoint_record_s,
        unit_scale,
        piggyback_telemetry: false,
    };
    let workers: Vec<WorkerAgent> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let track = TelemetryTrack::new(p.clone(), telemetry.clone(), telemetry_rng(seed, i));
            WorkerAgent::new(worker_config.clone(), track)
        })
        .collect();
    let index: BTreeMap<String, usize> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.clone(), i))
        .collect();

    let mut d = Driver {
        queue: BinaryHeap::new(),
        seq: 0,
        net,
        coordinator,
        worker_wake: vec![(0, f64::INFINITY); workers.len()],
        workers,
        index,
        coord_wake: (0, f64::INFINITY),
    };

    // Initial fleet registers out of band at t = 0, in fleet order.
    for i in 0..d.workers.len() {
        d.workers[i].bootstrap(0.0);
        let telemetry = Some(d.workers[i].telemetry(0.0));
        let profile = d.workers[i].profile().clone();
        d.coordinator
            .on_worker_event(0.0, WorkerEvent::Register { profile, telemetry });
        d.send_from_worker(0.0, i, Vec::new());
    }
    for ev in churn {
        let i = *d
            .index
            .get(&ev.worker_id)
            .ok_or_else(|| SimError::UnknownWorker(ev.worker_id.clone()))?;
        d.push(ev.at_s, i + 1, Kind::Churn(i, ev.kind));
    }
    d.coordinator.submit(0.0);
    d.flush_coordinator(0.0);

    let mut now = 0.0;
    while !d.coordinator.is_finished() {
        let Some(ev) = d.queue.pop() else {
            return Err(SimError::Stalled(now));
        };
        now = ev.at;
        if now > max_time_s {
            return Err(SimError::Stalled(max_time_s));
        }
        match ev.kind {
            Kind::ToCoordinator(msg) => {
                d.coordinator.handle(now, msg);
                d.flush_coordinator(now);
            }
            Kind::WakeCoordinator(v) => {
                if v == d.coord_wake.0 {
                    d.coord_wake.1 = f64::INFINITY;
                    d.coordinator.poll(now);
                    d.flush_coordinator(now);
                }
            }
            Kind::ToWorker(i, msg) => {
                let out = d.workers[i].handle(now, msg);
                d.send_from_worker(now, i, out);
            }
            Kind::WakeWorker(i, v) => {
                if v == d.worker_wake[i].0 {
                    d.worker_wake[i].1 = f64::INFINITY;
                    let out = d.workers[i].wake(now);
                    d.send_from_worker(now, i, out);
                }
            }
            Kind::Churn(i, ChurnKind::Disconnect) => {
                log::debug!("t={now:.3} churn: {} drops", d.workers[i].id());
                d.workers[i].go_offline();
                d.send_from_worker(now, i, Vec::new());
            }
            Kind::Churn(i, ChurnKind::Reconnect) => {
                log::debug!("t={now:.3} churn: {} returns", d.workers[i].id());
                let out = d.workers[i].go_online(now);
                d.send_from_worker(now, i, out);
            }
        }
    }

    let (sent, dropped) = d.net.stats();
    let status = d.coordinator.status();
    let result = match status {
        JobStatus::Completed => Some(d.coordinator.aggregate()?),
        _ => None,
    };
    Ok(SimOutcome {
        status,
        result,
        trace: d.coordinator.trace().to_vec(),
        journal: d.coordinator.take_journal(),
        end_time_s: now,
        messages_sent: sent,
        messages_dropped: dropped,
        accepted_commits: d.coordinator.tasks().iter().map(|t| t.accepted_commits).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::CheckpointPolicy;
    use crate::fleet::default_fleet;
    use crate::scheduler::{builtin, StrategyKind};
    use crate::workloads::WorkloadSpec;

    fn job(trials: u64, tasks: u64, kind: StrategyKind, checkpoint: CheckpointPolicy) -> JobSpec {
        JobSpec {
            job_id: "sim".into(),
            workload: WorkloadSpec::monte_carlo(trials),
            task_count: tasks,
            strategy: kind.name().into(),
            checkpoint,
            seed: 5,
        }
    }

    fn reference(job: &JobSpec) -> Vec<u8> {
        let tasks = crate::coordinator::decompose(job).unwrap();
        let results: Vec<Vec<u8>> = tasks
            .iter()
            .map(|t| job.workload.run_to_end(&t.params).unwrap())
            .collect();
        job.workload.fold(&results).unwrap().to_bytes()
    }

    #[test]
    fn every_strategy_completes() {
        for kind in StrategyKind::ALL {
            let j = job(60_000, 24, kind, CheckpointPolicy::disabled());
            let expected = reference(&j);
            let out = simulate(SimSetup::new(default_fleet(), j, builtin(kind)), 3).unwrap();
            assert_eq!(out.status, JobStatus::Completed, "{kind}");
            let r = out.result.unwrap();
            assert_eq!(r.aggregate.to_bytes(), expected, "{kind}");
            assert_eq!(r.completed_counts().iter().sum::<u64>(), 24);
            assert!(out.accepted_commits.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed| {
            let j = job(30_000, 12, StrategyKind::Mabac, CheckpointPolicy::every(1.0));
            simulate(SimSetup::new(default_fleet(), j, builtin(StrategyKind::Mabac)), seed).unwrap()
        };
        let (a, b) = (run(8), run(8));
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.end_time_s, b.end_time_s);
    }

    #[test]
    fn survives_disconnect_with_resume() {
        let j = job(200_000, 6, StrategyKind::Wrr, CheckpointPolicy::every(1.0));
        let expected = reference(&j);
        let mut setup = SimSetup::new(default_fleet(), j, builtin(StrategyKind::Wrr));
        setup.churn = vec![
            ChurnEvent { worker_id: "A34".into(), kind: ChurnKind::Disconnect, at_s: 5.0 },
            ChurnEvent { worker_id: "A34".into(), kind: ChurnKind::Reconnect, at_s: 20.0 },
        ];
        let out = simulate(setup, 1).unwrap();
        assert_eq!(out.result.unwrap().aggregate.to_bytes(), expected);
        let resumed = out.trace.iter().any(|e| {
            matches!(&e.kind, crate::coordinator::TraceKind::Assigned { attempt: 2, start_cursor, .. } if *start_cursor > 0)
        });
        assert!(resumed);
    }

    #[test]
    fn lossy_partitioned_links_still_complete() {
        let j = job(100_000, 12, StrategyKind::Edas, CheckpointPolicy::every(2.0));
        let expected = reference(&j);
        let mut setup = SimSetup::new(default_fleet(), j, builtin(StrategyKind::Edas));
        setup.link = LinkModel {
            base_latency_s: 0.01,
            jitter_s: 0.02,
            drop_probability: 0.1,
            partitions: vec![],
        };
        setup.link_overrides.insert(
            "A51".into(),
            LinkModel { partitions: vec![(4.0, 15.0)], ..LinkModel::default() },
        );
        let out = simulate(setup, 4).unwrap();
        assert!(out.messages_dropped > 0);
        assert_eq!(out.result.unwrap().aggregate.to_bytes(), expected);
        assert!(out.accepted_commits.iter().all(|&c| c == 1));
    }

    #[test]
    fn single_device_time_matches_throughput() {
        let mut p = default_fleet().remove(0);
        p.background_load = 0.1;
        let j = job(48_000, 1, StrategyKind::Fifo, CheckpointPolicy::disabled());
        let mut setup = SimSetup::new(vec![p], j, builtin(StrategyKind::Fifo));
        setup.telemetry.noise_sigma = 0.0;
        setup.link = LinkModel::ideal();
        let out = simulate(setup, 0).unwrap();
        // 0.4 submit + 0.05 dispatch + 48000 * 0.003 / 14.4
        assert!((out.result.unwrap().makespan_s - 10.45).abs() < 1e-9);
    }
}
