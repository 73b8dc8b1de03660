//! Loopback TCP driver.
//!
//! The coordinator runs on the calling thread and each worker on its own
//! thread, talking over 127.0.0.1 with the framed wire format. Simulated
//! time is wall time divided by `time_scale`, so a scale of 0.05 runs the
//! job twenty times faster than its simulated makespan.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::coordinator::{Coordinator, CoordinatorConfig, CoordinatorError, Envelope, JobSpec, JobStatus};
use crate::fleet::{DeviceProfile, TelemetryModel};
use crate::rng::{labels, stream};
use crate::scheduler::Strategy;
use crate::sim::{telemetry_rng, SimOutcome};
use crate::transport::{read_message, write_message, Message};
use crate::worker::{TelemetryTrack, WorkerAgent, WorkerConfig};

#[derive(Debug, Error)]
pub enum TcpError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error("worker {0} did not register")]
    Registration(String),
    #[error("job did not finish within {0:?} of wall time")]
    Timeout(Duration),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcpOptions {
    /// 0 picks a free port.
    pub port: u16,
    pub time_scale: f64,
    pub wall_limit: Duration,
}

impl Default for TcpOptions {
    fn default() -> Self {
        Self {
            port: 0,
            time_scale: 0.02,
            wall_limit: Duration::from_secs(300),
        }
    }
}

pub struct TcpSetup {
    pub profiles: Vec<DeviceProfile>,
    pub job: JobSpec,
    pub strategy: Box<dyn Strategy>,
    pub coordinator: CoordinatorConfig,
    pub telemetry: TelemetryModel,
    pub unit_scale: f64,
}

#[derive(Debug, Clone, Copy)]
struct Clock {
    start: Instant,
    scale: f64,
}

impl Clock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() / self.scale
    }

    /// Wall duration until simulated time `t`.
    fn until(&self, t: f64) -> Duration {
        let wait = (t - self.now()) * self.scale;
        if wait.is_finite() && wait > 0.0 {
            Duration::from_secs_f64(wait.min(3600.0))
        } else {
            Duration::ZERO
        }
    }
}

fn spawn_reader(stream: TcpStream, tx: Sender<Message>) -> JoinHandle<()> {
    thread::spawn(move || {
        let mut reader = BufReader::new(stream);
        loop {
            match read_message(&mut reader) {
                Ok(Some(msg)) => {
                    if tx.send(msg).is_err() {
                        return;
                    }
                }
                Ok(None) => return,
                Err(e) => {
                    log::debug!("reader stopped: {e}");
                    return;
                }
            }
        }
    })
}

fn run_worker(
    mut agent: WorkerAgent,
    addr: std::net::SocketAddr,
    clock: Clock,
    done: Arc<AtomicBool>,
) -> std::io::Result<()> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let (tx, rx) = mpsc::channel();
    let reader = spawn_reader(stream.try_clone()?, tx);
    let mut writer = BufWriter::new(stream.try_clone()?);
    let send = |w: &mut BufWriter<TcpStream>, msgs: Vec<Message>| -> std::io::Result<()> {
        for m in &msgs {
            write_message(w, m)?;
        }
        w.flush()
    };
    let out = agent.go_online(clock.now());
    send(&mut writer, out)?;
    while !done.load(AtomicOrdering::SeqCst) {
        let wait = agent.next_wakeup().map_or(Duration::from_millis(50), |t| clock.until(t));
        let out = match rx.recv_timeout(wait.min(Duration::from_millis(50))) {
            Ok(msg) => agent.handle(clock.now(), msg),
            Err(RecvTimeoutError::Timeout) => {
                let now = clock.now();
                if agent.next_wakeup().is_some_and(|t| now >= t) {
                    agent.wake(now)
                } else {
                    Vec::new()
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        };
        if send(&mut writer, out).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
    let _ = reader.join();
    Ok(())
}

/// Runs the job over loopback TCP. Churn is not injected in this mode.
pub fn run_tcp(setup: TcpSetup, seed: u64, opts: &TcpOptions) -> Result<SimOutcome, TcpError> {
    let TcpSetup {
        profiles,
        job,
        strategy,
        coordinator: coord_config,
        telemetry,
        unit_scale,
    } = setup;
    let listener = TcpListener::bind(("127.0.0.1", opts.port))?;
    let addr = listener.local_addr()?;
    log::info!("coordinator listening on {addr}");
    let clock = Clock {
        start: Instant::now(),
        scale: opts.time_scale,
    };
    let done = Arc::new(AtomicBool::new(false));
    let mut coordinator = Coordinator::new(coord_config.clone(), job, strategy, stream(seed, labels::SCHEDULER))?;

    let (in_tx, in_rx) = mpsc::channel::<TcpStream>();
    let n = profiles.len();
    let acceptor = {
        let in_tx = in_tx.clone();
        thread::spawn(move || {
            for _ in 0..n {
                match listener.accept() {
                    Ok((s, _)) => {
                        let _ = s.set_nodelay(true);
                        if in_tx.send(s).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        log::error!("accept failed: {e}");
                        return;
                    }
                }
            }
        })
    };

    let worker_config = WorkerConfig {
        heartbeat_interval_s: coord_config.heartbeat_interval_s,
        checkpoint_record_s: coord_config.checkpoint_record_s,
        unit_scale,
        piggyback_telemetry: true,
    };
    let mut conns: Vec<TcpStream> = Vec::new();
    let mut writers: BTreeMap<String, BufWriter<TcpStream>> = BTreeMap::new();
    let mut readers = Vec::new();
    let mut workers = Vec::new();
    let (msg_tx, msg_rx) = mpsc::channel::<Message>();
    let mut pending: Vec<Envelope> = Vec::new();

    let wall_deadline = Instant::now() + opts.wall_limit;

    // Register workers one at a time so registration order is fleet order.
    for (i, profile) in profiles.iter().enumerate() {
        let track = TelemetryTrack::new(profile.clone(), telemetry.clone(), telemetry_rng(seed, i));
        let agent = WorkerAgent::new(worker_config.clone(), track);
        let done = done.clone();
        workers.push(thread::spawn(move || run_worker(agent, addr, clock, done)));
        match in_rx.recv_timeout(Duration::from_secs(10)) {
            Ok(s) => {
                readers.push(spawn_reader(s.try_clone()?, msg_tx.clone()));
                conns.push(s);
            }
            Err(_) => return Err(TcpError::Registration(profile.id.clone())),
        }
        let limit = Instant::now() + Duration::from_secs(10);
        while coordinator.worker(&profile.id).is_none() {
            let left = limit.saturating_duration_since(Instant::now());
            match msg_rx.recv_timeout(left) {
                Ok(msg) => {
                    if let crate::transport::Body::Register { profile: p, .. } = &msg.body {
                        let s = conns.last().expect("connected").try_clone()?;
                        writers.insert(p.id.clone(), BufWriter::new(s));
                    }
                    coordinator.handle(clock.now(), msg);
                }
                Err(_) => return Err(TcpError::Registration(profile.id.clone())),
            }
            flush(&mut coordinator, &mut pending, &mut writers, clock.now())?;
        }
    }
    drop(in_tx);

    coordinator.submit(clock.now());
    flush(&mut coordinator, &mut pending, &mut writers, clock.now())?;
    while !coordinator.is_finished() {
        if Instant::now() > wall_deadline {
            done.store(true, AtomicOrdering::SeqCst);
            return Err(TcpError::Timeout(opts.wall_limit));
        }
        let deadline = coordinator
            .next_deadline()
            .into_iter()
            .chain(pending.iter().map(|e| e.at_s))
            .fold(f64::INFINITY, f64::min);
        let wait = clock.until(deadline).min(Duration::from_millis(50));
        match msg_rx.recv_timeout(wait) {
            Ok(msg) => coordinator.handle(clock.now(), msg),
            Err(RecvTimeoutError::Timeout) => coordinator.poll(clock.now()),
            Err(RecvTimeoutError::Disconnected) => break,
        }
        flush(&mut coordinator, &mut pending, &mut writers, clock.now())?;
    }
    let end = clock.now();

    done.store(true, AtomicOrdering::SeqCst);
    for c in &conns {
        let _ = c.shutdown(Shutdown::Both);
    }
    drop(writers);
    for w in workers {
        if let Ok(Err(e)) = w.join() {
            log::debug!("worker exited with {e}");
        }
    }
    for r in readers {
        let _ = r.join();
    }
    let _ = acceptor.join();

    let status = coordinator.status();
    let result = match status {
        JobStatus::Completed => Some(coordinator.aggregate()?),
        _ => None,
    };
    Ok(SimOutcome {
        status,
        result,
        trace: coordinator.trace().to_vec(),
        journal: coordinator.take_journal(),
        end_time_s: end,
        messages_sent: 0,
        messages_dropped: 0,
        accepted_commits: coordinator.tasks().iter().map(|t| t.accepted_commits).collect(),
    })
}

/// Sends every queued envelope that is due, in time order.
fn flush(
    coordinator: &mut Coordinator,
    pending: &mut Vec<Envelope>,
    writers: &mut BTreeMap<String, BufWriter<TcpStream>>,
    now: f64,
) -> std::io::Result<()> {
    pending.extend(coordinator.take_outbox());
    pending.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
    let split = pending.partition_point(|e| e.at_s <= now);
    for env in pending.drain(..split) {
        if let Some(w) = writers.get_mut(&env.to) {
            if write_message(w, &env.msg).and_then(|_| w.flush()).is_err() {
                log::debug!("send to {} failed", env.to);
            }
        }
    }
    Ok(())
}
