//! `crowd`: run crowd-computing scenarios and write CSV and markdown tables.
//!
//! Exit codes: 0 on success, 1 when a job fails, 2 for an invalid config.
//! Set `CROWD_LOG` (e.g. `CROWD_LOG=info`) for logging on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crowd_core::config::{Mode, ScenarioConfig};
use crowd_core::harness::{Harness, HarnessError};

#[derive(Parser)]
#[command(name = "crowd", version, about = "Crowd-computing scheduler experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSV, markdown and journal files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the scenario mode.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Coordinator port in tcp mode (0 picks a free one).
    #[arg(long, global = true, default_value_t = 0)]
    port: u16,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sim,
    Tcp,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the scenario's strategy for every repetition.
    Run,
    /// Run several strategies on identical seeds.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "fifo,wrr,edas,aras,mabac")]
        strategies: Vec<String>,
    },
    /// Measure checkpoint overhead across intervals.
    SweepCheckpoint {
        #[arg(long, value_delimiter = ',', default_value = "5,2,0.5")]
        intervals: Vec<f64>,
    },
    /// Inject scripted churn and print the reconnection trace.
    FaultDemo,
}

fn load(common: &Common) -> Result<Harness, HarnessError> {
    let Some(path) = &common.config else {
        return Err(crowd_core::config::ConfigError::Invalid("--config is required".into()).into());
    };
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.mode = match mode {
            ModeArg::Sim => Mode::Sim,
            ModeArg::Tcp => Mode::Tcp,
        };
    }
    Ok(Harness::new(cfg)?.with_port(common.port))
}

fn execute(cli: &Cli) -> Result<String, HarnessError> {
    let harness = load(&cli.common)?;
    let out = cli.common.out_dir.as_deref();
    Ok(match &cli.cmd {
        Cmd::Run => harness.run(out)?.markdown(),
        Cmd::Compare { strategies } => harness.compare(strategies, out)?.markdown(),
        Cmd::SweepCheckpoint { intervals } => harness.sweep_checkpoint(intervals, out)?.markdown(),
        Cmd::FaultDemo => harness.fault_demo(out)?.markdown(),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CROWD_LOG", "warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(text) => {
            print!("{text}");
            if let Some(dir) = &cli.common.out_dir {
                log::info!("artifacts in {}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
