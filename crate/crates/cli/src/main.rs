//! `soid`: estimation, limit-law simulation and Monte Carlo checks for GMM
//! under second-order local identification.

mod commands;
mod config;
mod failure;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use config::{ModelSection, RunConfig};
use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "soid", version, about = "GMM under second-order local identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Builtin model: exact1, exact2, over3 or ar1.
    #[arg(long)]
    model: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a model from a data file and classify its regime.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Simulate the limit law and report its quantiles.
    LimitSim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        draws: Option<usize>,
        /// Bundle JSON to use instead of a builtin model.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Run a Monte Carlo plan.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<usize>>,
    },
    /// Panel AR(1) regime, limit-law and sign-frequency report.
    Ar1Demo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Simulate a dataset from a builtin model.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Estimate { .. } => "estimate",
            Command::LimitSim { .. } => "limit-sim",
            Command::Mc { .. } => "mc",
            Command::Ar1Demo { .. } => "ar1-demo",
            Command::Simulate { .. } => "simulate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Estimate { common, .. }
            | Command::LimitSim { common, .. }
            | Command::Mc { common, .. }
            | Command::Ar1Demo { common, .. }
            | Command::Simulate { common, .. } => common,
        }
    }
}

/// Config file first, then flags.
fn resolve(cmd: &Command) -> Result<RunConfig, Failure> {
    let common = cmd.common();
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(name) = &common.model {
        cfg.model = Some(ModelSection::named(name)?);
    }
    match cmd {
        Command::Estimate { data, .. } => {
            if data.is_some() {
                cfg.estimate.data = data.clone();
            }
        }
        Command::LimitSim { draws, bundle, .. } => {
            if let Some(d) = draws {
                cfg.limit_sim.draws = *d;
            }
            if bundle.is_some() {
                cfg.limit_sim.bundle = bundle.clone();
            }
        }
        Command::Mc { replications, t_grid, .. } => {
            if let Some(r) = replications {
                cfg.mc.replications = *r;
            }
            if let Some(g) = t_grid {
                cfg.mc.t_grid = g.clone();
            }
        }
        Command::Ar1Demo { replications, .. } => {
            if let Some(r) = replications {
                cfg.ar1_demo.replications = *r;
            }
        }
        Command::Simulate { n, .. } => {
            if let Some(n) = n {
                cfg.simulate.n = *n;
            }
        }
    }
    if cfg.threads == Some(0) {
        return Err(Failure::config("threads must be at least 1"));
    }
    Ok(cfg)
}

fn run(cmd: &Command, cfg: &RunConfig) -> Result<commands::Outputs, Failure> {
    let mut out = commands::Outputs::create(cfg.output_dir())?;
    out.text("resolved_config.toml", &cfg.to_toml())?;
    soid::exec::with_threads(cfg.threads, || match cmd {
        Command::Estimate { .. } => commands::cmd_estimate(cfg, &mut out),
        Command::LimitSim { .. } => commands::cmd_limit_sim(cfg, &mut out),
        Command::Mc { .. } => commands::cmd_mc(cfg, &mut out),
        Command::Ar1Demo { .. } => commands::cmd_ar1_demo(cfg, &mut out),
        Command::Simulate { .. } => commands::cmd_simulate(cfg, &mut out),
    })?;
    Ok(out)
}

/// Appends one line per run to `soid.log`; timestamps live only here.
fn log_run(cfg: &RunConfig, command: &str, status: &str, secs: f64) {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let path = cfg.output_dir().join("soid.log");
    if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(path) {
        let _ = writeln!(f, "unix_time={stamp} command={command} seed={} status={status} seconds={secs:.3}", cfg.seed);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = &cli.command;
    let cfg = match resolve(cmd) {
        Ok(c) => c,
        Err(f) => {
            eprintln!("{f}");
            return ExitCode::from(f.code as u8);
        }
    };
    let start = Instant::now();
    let result = run(cmd, &cfg);
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(out) => {
            log_run(&cfg, cmd.name(), "ok", secs);
            for p in &out.written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            log_run(&cfg, cmd.name(), &format!("exit_{}", f.code), secs);
            eprintln!("{f}");
            ExitCode::from(f.code as u8)
        }
    }
}
