//! Experiment harness behind the command-line subcommands.
//!
//! Repetition `r` of a scenario with seed `s` uses seed `s + r`. Sim-mode
//! repetitions run in parallel; results are always reported in seed order,
//! so artifacts are byte-identical across invocations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::checkpoint::CheckpointPolicy;
use crate::config::{ChurnSpec, ConfigError, FairnessBasis, Mode, ScenarioConfig};
use crate::coordinator::{JobResult, TraceEvent, TraceKind};
use crate::fleet::{ChurnEvent, ChurnKind, DeviceProfile};
use crate::journal::{JournalError, JournalWriter};
use crate::metrics::{checkpoint_overhead, improvement_pct, jains_index, mean_sd, speedup, AllocationVector, MetricsError, RunSummary};
use crate::scheduler::StrategyRegistry;
use crate::sim::{simulate, SimError, SimOutcome};
use crate::tcp::{run_tcp, TcpError, TcpOptions, TcpSetup};
use crate::transport::LinkModel;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("tcp run failed: {0}")]
    Tcp(#[from] TcpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("job failed (strategy {strategy}, seed {seed})")]
    JobFailed { strategy: String, seed: u64 },
}

impl HarnessError {
    /// Process exit code: 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Best standalone device for the whole job.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub device: String,
    pub makespan_s: f64,
}

/// Time for one device to run the whole job alone at its background load,
/// without any coordination.
pub fn standalone_time(profile: &DeviceProfile, cfg: &ScenarioConfig) -> f64 {
    let work = cfg.workload.total_work() as f64 * cfg.workload.unit_cost();
    work / (profile.capacity() * (1.0 - profile.background_load) * cfg.unit_scale)
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub summary: RunSummary,
    pub outcome: SimOutcome,
}

impl RunRecord {
    pub fn result(&self) -> &JobResult {
        self.outcome.result.as_ref().expect("records are only built for completed jobs")
    }
}

pub struct Harness {
    cfg: ScenarioConfig,
    registry: StrategyRegistry,
    tcp: TcpOptions,
}

impl Harness {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let tcp = TcpOptions {
            time_scale: cfg.time_scale,
            ..TcpOptions::default()
        };
        Ok(Self {
            cfg,
            registry: StrategyRegistry::default(),
            tcp,
        })
    }

    pub fn with_registry(mut self, registry: StrategyRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn with_port(mut self, port: u16) -> Self {
        self.tcp.port = port;
        self
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.cfg.repetitions as u64)
            .map(|r| self.cfg.seed.wrapping_add(r))
            .collect()
    }

    pub fn baseline(&self) -> Result<Baseline, HarnessError> {
        let profiles = self.cfg.profiles()?;
        let best = profiles
            .iter()
            .map(|p| (p, standalone_time(p, &self.cfg)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("fleet is non-empty");
        Ok(Baseline {
            device: best.0.id.clone(),
            makespan_s: best.1,
        })
    }

    fn check_strategy(&self, name: &str) -> Result<(), HarnessError> {
        if self.registry.contains(name) {
            Ok(())
        } else {
            Err(ConfigError::UnknownStrategy(name.into()).into())
        }
    }

    /// Executes one repetition.
    pub fn run_once(
        &self,
        strategy: &str,
        policy: &CheckpointPolicy,
        seed: u64,
        journal_dir: Option<&Path>,
    ) -> Result<RunRecord, HarnessError> {
        self.check_strategy(strategy)?;
        let outcome = match self.cfg.mode {
            Mode::Sim => {
                let mut setup = self.cfg.sim_setup(&self.registry, strategy, policy.clone(), seed)?;
                setup.journal = journal_dir.is_some();
                simulate(setup, seed)?
            }
            Mode::Tcp => {
                let setup = TcpSetup {
                    profiles: self.cfg.profiles()?,
                    job: self.cfg.job_spec(strategy, policy.clone(), seed),
                    strategy: self
                        .registry
                        .create(strategy)
                        .map_err(|_| ConfigError::UnknownStrategy(strategy.into()))?,
                    coordinator: self.cfg.coordinator.clone(),
                    telemetry: self.cfg.telemetry.clone(),
                    unit_scale: self.cfg.unit_scale,
                };
                run_tcp(setup, seed, &self.tcp)?
            }
        };
        if let Some(dir) = journal_dir {
            let path = dir.join(format!("{}-{}-seed{}.journal", self.cfg.name, strategy, seed));
            // A journal belongs to exactly one job run.
            if path.exists() {
                fs::remove_file(&path).map_err(|source| io_error(&path, source))?;
            }
            JournalWriter::open(&path)?.append_all(&outcome.journal)?;
        }
        let Some(result) = outcome.result.as_ref() else {
            return Err(HarnessError::JobFailed { strategy: strategy.into(), seed });
        };
        let allocations = match self.cfg.fairness {
            FairnessBasis::Tasks => result.completed_counts().into_iter().map(|c| c as f64).collect(),
            FairnessBasis::BusySeconds => result.busy_seconds(),
        };
        let fairness = jains_index(&AllocationVector::new(allocations.clone())?)?;
        let baseline = self.baseline()?;
        let summary = RunSummary {
            scenario: self.cfg.name.clone(),
            strategy: strategy.into(),
            interval_s: policy.reported_interval(),
            seed,
            makespan_s: result.makespan_s,
            fairness,
            speedup: speedup(baseline.makespan_s, result.makespan_s)?,
            overhead_s: None,
            allocations,
        };
        log::info!(
            "{} {} seed {}: makespan {:.3} s, J {:.4}",
            summary.scenario,
            strategy,
            seed,
            summary.makespan_s,
            summary.fairness
        );
        Ok(RunRecord { summary, outcome })
    }

    /// Runs every repetition of `strategy` under `policy`, in seed order.
    pub fn repetitions(
        &self,
        strategy: &str,
        policy: &CheckpointPolicy,
        journal_dir: Option<&Path>,
    ) -> Result<Vec<RunRecord>, HarnessError> {
        let seeds = self.seeds();
        match self.cfg.mode {
            Mode::Sim => seeds
                .par_iter()
                .map(|&seed| self.run_once(strategy, policy, seed, journal_dir))
                .collect(),
            Mode::Tcp => seeds
                .iter()
                .map(|&seed| self.run_once(strategy, policy, seed, journal_dir))
                .collect(),
        }
    }

    pub fn run(&self, out_dir: Option<&Path>) -> Result<RunReport, HarnessError> {
        let journal_dir = match out_dir {
            Some(dir) => {
                let j = dir.join("journal");
                fs::create_dir_all(&j).map_err(|source| io_error(&j, source))?;
                Some(j)
            }
            None => None,
        };
        let records = self.repetitions(&self.cfg.strategy, &self.cfg.checkpoint, journal_dir.as_deref())?;
        let report = RunReport {
            baseline: self.baseline()?,
            rows: records.into_iter().map(|r| r.summary).collect(),
        };
        if let Some(dir) = out_dir {
            write(dir, "runs.csv", &report.csv())?;
            write(dir, "summary.md", &report.markdown())?;
        }
        Ok(report)
    }

    pub fn compare(&self, strategies: &[String], out_dir: Option<&Path>) -> Result<CompareReport, HarnessError> {
        if strategies.len() < 2 {
            return Err(ConfigError::Invalid("compare needs at least two strategies".into()).into());
        }
        for s in strategies {
            self.check_strategy(s)?;
        }
        let mut groups = Vec::new();
        for s in strategies {
            let records = self.repetitions(s, &self.cfg.checkpoint, None)?;
            groups.push((s.clone(), records.into_iter().map(|r| r.summary).collect::<Vec<_>>()));
        }
        let report = CompareReport { groups };
        if let Some(dir) = out_dir {
            write(dir, "compare.csv", &report.csv())?;
            write(dir, "compare.md", &report.markdown())?;
        }
        Ok(report)
    }

    pub fn sweep_checkpoint(&self, intervals: &[f64], out_dir: Option<&Path>) -> Result<SweepReport, HarnessError> {
        if intervals.is_empty() || intervals.iter().any(|i| !(i.is_finite() && *i > 0.0)) {
            return Err(ConfigError::Invalid("checkpoint intervals must be positive".into()).into());
        }
        let base = &self.cfg.checkpoint;
        let disabled = CheckpointPolicy { enabled: false, ..base.clone() };
        let baseline_rows: Vec<RunSummary> = self
            .repetitions(&self.cfg.strategy, &disabled, None)?
            .into_iter()
            .map(|r| r.summary)
            .collect();
        let mut groups = vec![(None, baseline_rows.clone())];
        for &interval in intervals {
            let policy = CheckpointPolicy { enabled: true, interval_s: interval, ..base.clone() };
            let rows = self
                .repetitions(&self.cfg.strategy, &policy, None)?
                .into_iter()
                .zip(&baseline_rows)
                .map(|(r, off)| {
                    let mut s = r.summary;
                    s.overhead_s = Some(checkpoint_overhead(s.makespan_s, off.makespan_s));
                    s
                })
                .collect();
            groups.push((Some(interval), rows));
        }
        let report = SweepReport { groups };
        if let Some(dir) = out_dir {
            write(dir, "sweep.csv", &report.csv())?;
            write(dir, "sweep.md", &report.markdown())?;
        }
        Ok(report)
    }

    /// Runs the scenario fault-free and again under churn, and reports the
    /// reconnection trace of the faulty run.
    ///
    /// Without churn in the config, the first device drops out at 30% of the
    /// fault-free makespan and returns 15 s later, and the second device is
    /// partitioned for 10 s from the halfway point.
    pub fn fault_demo(&self, out_dir: Option<&Path>) -> Result<FaultDemoReport, HarnessError> {
        if self.cfg.mode == Mode::Tcp {
            return Err(ConfigError::Invalid("fault-demo runs in sim mode only".into()).into());
        }
        let policy = if self.cfg.checkpoint.enabled {
            self.cfg.checkpoint.clone()
        } else {
            CheckpointPolicy::every(2.0)
        };
        let seed = self.cfg.seed;
        let strategy = self.cfg.strategy.clone();
        let mut clean_cfg = self.cfg.clone();
        clean_cfg.churn = ChurnSpec::None;
        let clean = Harness::new(clean_cfg)?.run_once(&strategy, &policy, seed, None)?;

        let mut faulty_cfg = self.cfg.clone();
        if faulty_cfg.churn == ChurnSpec::None {
            let profiles = self.cfg.profiles()?;
            let m = clean.summary.makespan_s;
            let drop_at = 0.3 * m;
            let mut events = vec![
                ChurnEvent { worker_id: profiles[0].id.clone(), kind: ChurnKind::Disconnect, at_s: drop_at },
                ChurnEvent { worker_id: profiles[0].id.clone(), kind: ChurnKind::Reconnect, at_s: drop_at + 15.0 },
            ];
            events.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
            faulty_cfg.churn = ChurnSpec::Scripted { events };
            if let Some(p) = profiles.get(1) {
                let base = faulty_cfg.links.get(&p.id).cloned().unwrap_or_else(|| faulty_cfg.link.clone());
                if base.partitions.is_empty() {
                    faulty_cfg.links.insert(
                        p.id.clone(),
                        LinkModel { partitions: vec![(0.5 * m, 0.5 * m + 10.0)], ..base },
                    );
                }
            }
        }
        let faulty = Harness::new(faulty_cfg)?.run_once(&strategy, &policy, seed, None)?;
        let report = FaultDemoReport {
            scenario: self.cfg.name.clone(),
            strategy,
            seed,
            clean_makespan_s: clean.summary.makespan_s,
            faulty_makespan_s: faulty.summary.makespan_s,
            aggregate_matches: clean.result().aggregate == faulty.result().aggregate,
            exactly_once: faulty.outcome.accepted_commits.iter().all(|&c| c == 1),
            trace: faulty.outcome.trace.clone(),
        };
        if let Some(dir) = out_dir {
            write(dir, "fault_demo.md", &report.markdown())?;
            let mut jsonl = String::new();
            for e in &report.trace {
                jsonl.push_str(&serde_json::to_string(e).expect("trace serializes"));
                jsonl.push('\n');
            }
            write(dir, "fault_trace.jsonl", &jsonl)?;
        }
        Ok(report)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| io_error(dir, source))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| io_error(&path, source))
}

fn csv_of<'a>(rows: impl IntoIterator<Item = &'a RunSummary>) -> String {
    let mut out = String::from(RunSummary::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn stat(xs: &[f64]) -> String {
    let (m, sd) = mean_sd(xs);
    format!("{m:.3} ± {sd:.3}")
}

fn column(rows: &[RunSummary], f: impl Fn(&RunSummary) -> f64) -> Vec<f64> {
    rows.iter().map(f).collect()
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub baseline: Baseline,
    pub rows: Vec<RunSummary>,
}

impl RunReport {
    pub fn csv(&self) -> String {
        csv_of(&self.rows)
    }

    /// Mean and sample SD of each metric.
    pub fn stats(&self) -> [(&'static str, (f64, f64)); 3] {
        [
            ("makespan_s", mean_sd(&column(&self.rows, |r| r.makespan_s))),
            ("J", mean_sd(&column(&self.rows, |r| r.fairness))),
            ("speedup", mean_sd(&column(&self.rows, |r| r.speedup))),
        ]
    }

    pub fn markdown(&self) -> String {
        let mut out = String::new();
        let first = &self.rows[0];
        let _ = writeln!(out, "# {} / {}\n", first.scenario, first.strategy);
        let _ = writeln!(
            out,
            "Best single device: {} ({:.3} s). n = {}.\n",
            self.baseline.device,
            self.baseline.makespan_s,
            self.rows.len()
        );
        let _ = writeln!(out, "| metric | mean | sd |");
        let _ = writeln!(out, "|---|---:|---:|");
        for (name, (m, sd)) in self.stats() {
            let _ = writeln!(out, "| {name} | {m:.3} | {sd:.3} |");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub groups: Vec<(String, Vec<RunSummary>)>,
}

impl CompareReport {
    pub fn mean_makespan(&self, strategy: &str) -> Option<f64> {
        self.groups
            .iter()
            .find(|(s, _)| s == strategy)
            .map(|(_, rows)| mean_sd(&column(rows, |r| r.makespan_s)).0)
    }

    /// Improvement of each strategy's mean makespan over the first one, in %.
    pub fn improvements(&self) -> Vec<(String, f64)> {
        let base = mean_sd(&column(&self.groups[0].1, |r| r.makespan_s)).0;
        self.groups
            .iter()
            .map(|(s, rows)| (s.clone(), improvement_pct(base, mean_sd(&column(rows, |r| r.makespan_s)).0)))
            .collect()
    }

    pub fn csv(&self) -> String {
        csv_of(self.groups.iter().flat_map(|(_, rows)| rows))
    }

    pub fn markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| strategy | makespan_s | J | speedup | improvement |");
        let _ = writeln!(out, "|---|---:|---:|---:|---:|");
        for ((s, rows), (_, imp)) in self.groups.iter().zip(self.improvements()) {
            let _ = writeln!(
                out,
                "| {s} | {} | {} | {} | {imp:.1}% |",
                stat(&column(rows, |r| r.makespan_s)),
                stat(&column(rows, |r| r.fairness)),
                stat(&column(rows, |r| r.speedup)),
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// `None` is the checkpointing-disabled row, always first.
    pub groups: Vec<(Option<f64>, Vec<RunSummary>)>,
}

impl SweepReport {
    pub fn mean_overhead(&self, interval: f64) -> Option<f64> {
        self.groups
            .iter()
            .find(|(i, _)| *i == Some(interval))
            .map(|(_, rows)| mean_sd(&column(rows, |r| r.overhead_s.unwrap_or(0.0))).0)
    }

    pub fn csv(&self) -> String {
        csv_of(self.groups.iter().flat_map(|(_, rows)| rows))
    }

    pub fn markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| interval_s | makespan_s | overhead_s |");
        let _ = writeln!(out, "|---|---:|---:|");
        for (interval, rows) in &self.groups {
            let label = interval.map_or_else(|| "disabled".to_string(), |i| i.to_string());
            let overhead = match interval {
                None => String::new(),
                Some(_) => stat(&column(rows, |r| r.overhead_s.unwrap_or(0.0))),
            };
            let _ = writeln!(out, "| {label} | {} | {overhead} |", stat(&column(rows, |r| r.makespan_s)));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct FaultDemoReport {
    pub scenario: String,
    pub strategy: String,
    pub seed: u64,
    pub clean_makespan_s: f64,
    pub faulty_makespan_s: f64,
    pub aggregate_matches: bool,
    pub exactly_once: bool,
    pub trace: Vec<TraceEvent>,
}

impl FaultDemoReport {
    /// Disconnects, re-registrations, orphaned tasks, resumptions and stale
    /// commits, one line each.
    pub fn reconnection_lines(&self) -> Vec<String> {
        self.trace
            .iter()
            .filter_map(|e| {
                let text = match &e.kind {
                    TraceKind::Disconnected { worker, reason } => format!("{worker} disconnected ({reason})"),
                    TraceKind::Registered { worker, reconnect: true } => format!("{worker} re-registered"),
                    TraceKind::Orphaned { task, worker, cursor } => {
                        format!("task {task} orphaned by {worker} at cursor {cursor}")
                    }
                    TraceKind::Assigned { task, worker, attempt, start_cursor } if *attempt > 1 => {
                        format!("task {task} resumed on {worker} from cursor {start_cursor} (attempt {attempt})")
                    }
                    TraceKind::CommitRejected { task, worker } => format!("stale commit for task {task} from {worker} rejected"),
                    _ => return None,
                };
                Some(format!("t={:>9.3}  {text}", e.at_s))
            })
            .collect()
    }

    pub fn markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# fault demo: {} / {} (seed {})\n", self.scenario, self.strategy, self.seed);
        for line in self.reconnection_lines() {
            let _ = writeln!(out, "    {line}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "| run | makespan_s |");
        let _ = writeln!(out, "|---|---:|");
        let _ = writeln!(out, "| fault-free | {:.3} |", self.clean_makespan_s);
        let _ = writeln!(out, "| with faults | {:.3} |", self.faulty_makespan_s);
        let _ = writeln!(out);
        let _ = writeln!(out, "aggregate identical to fault-free run: {}", self.aggregate_matches);
        let _ = writeln!(out, "every task committed exactly once: {}", self.exactly_once);
        out
    }
}
