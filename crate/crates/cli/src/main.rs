//! `weakkam`: command-line driver for the weak KAM solvers.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 numerical
//! non-convergence, 3 invariant violation or failed checks, 4 bad
//! configuration or missing prerequisite.

mod cache;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use weakkam_core::semiflow::Method;
use weakkam_core::SystemSpec;

use cache::Cache;
use commands::{AubryArgs, ConleyArgs, RunContext, TwistArgs, TwistMap};
use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "weakkam", version, about = "Weak KAM solutions, their semiflow and singular sets")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file (or the defaults).
#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// System name: free, pendulum, separable-pendulum, nearly-integrable, bump, tabulated-bump.
    #[arg(long, global = true)]
    system: Option<String>,
    /// System parameters, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    params: Option<Vec<f64>>,
    /// Cohomology class, comma separated.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    c: Option<Vec<f64>>,
    /// Grid nodes per axis (default 512 in 1D, 64 in 2D).
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Semiflow step.
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Cache root (otherwise $WEAKKAM_CACHE, then ./.weakkam-cache).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    tol_alpha: Option<f64>,
    #[arg(long, global = true)]
    tol_fix: Option<f64>,
    #[arg(long, global = true)]
    cluster_tol: Option<f64>,
    #[arg(long, global = true)]
    tol_aubry: Option<f64>,
    /// Solve with the monotone propagator.
    #[arg(long, global = true)]
    monotone: bool,
    /// Fail instead of computing a missing prerequisite.
    #[arg(long, global = true)]
    no_compute: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Weak KAM solution and α(c).
    Solve,
    /// Integrate the semiflow from a point.
    Flow {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Vec<f64>,
        #[arg(long, default_value = "selection-ode")]
        method: Method,
    },
    /// Singular set and superdifferential diameters per node.
    Sing,
    /// Critical points and critical values.
    Crit,
    /// Chain-recurrent cells of the semiflow.
    Conley {
        /// Cells per period (default grid/4).
        #[arg(long)]
        window_cells: Option<usize>,
        #[arg(long, default_value_t = 2)]
        periods: usize,
        #[arg(long, default_value_t = 1.0)]
        chain_time: f64,
        #[arg(long, default_value = "selection-ode")]
        method: Method,
    },
    /// Peierls barrier diagonal and the Aubry set.
    Aubry {
        /// Nodes per axis of the barrier grid (default 64 in 1D, 24 in 2D).
        #[arg(long)]
        barrier_grid: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 50.0)]
        t_max: f64,
    },
    /// Minimal periodic configuration of a twist map.
    Twist {
        #[arg(long, value_enum, default_value_t = TwistMap::Standard)]
        map: TwistMap,
        #[arg(long, default_value_t = 1.0)]
        k: f64,
        #[arg(long, default_value_t = 1)]
        p: i64,
        #[arg(long, default_value_t = 2)]
        q: i64,
        /// Resolution of the distance table for `--map system`.
        #[arg(long, default_value_t = 128)]
        resolution: usize,
    },
    /// Run the acceptance suite.
    Report {
        #[arg(long, default_value = "paper", value_parser = ["paper"])]
        suite: String,
        /// Criterion ids, comma separated.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn build_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &common.system {
        if *name != cfg.system.name {
            cfg.system.params.clear();
        }
        cfg.system.name = name.clone();
    }
    if let Some(p) = &common.params {
        cfg.system.params = p.clone();
    }
    if let Some(c) = &common.c {
        cfg.system.c = c.clone();
    }
    match common.grid {
        Some(n) => cfg.grid.n = n,
        None if common.config.is_none() => {
            let spec = SystemSpec::from_registry(&cfg.system.name, &cfg.system.params)
                .map_err(|e| ConfigError(e.to_string()))?;
            cfg.grid.n = if spec.dim == 2 { 64 } else { 512 };
        }
        None => {}
    }
    let run = &mut cfg.run;
    run.tau = common.tau.or(run.tau);
    run.monotone |= common.monotone;
    run.horizon = common.horizon.unwrap_or(run.horizon);
    if let Some(o) = &common.output {
        run.output = o.clone();
    }
    if let Some(c) = &common.cache {
        run.cache = Some(c.clone());
    }
    run.seed = common.seed.unwrap_or(run.seed);
    let t = &mut cfg.tolerances;
    t.tol_alpha = common.tol_alpha.unwrap_or(t.tol_alpha);
    t.tol_fix = common.tol_fix.unwrap_or(t.tol_fix);
    t.cluster_tol = common.cluster_tol.unwrap_or(t.cluster_tol);
    t.tol_aubry = common.tol_aubry.unwrap_or(t.tol_aubry);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli.common)?;
    let spec = cfg.spec()?;
    let cache = Cache::resolve(cfg.run.cache.as_deref());
    let cx = RunContext { cfg, spec, cache, no_compute: cli.common.no_compute };
    match cli.command {
        Command::Solve => commands::solve(&cx),
        Command::Flow { x0, method } => commands::flow(&cx, &x0, method),
        Command::Sing => commands::sing(&cx),
        Command::Crit => commands::crit(&cx),
        Command::Conley { window_cells, periods, chain_time, method } => {
            commands::conley(&cx, &ConleyArgs { window_cells, periods, chain_time, method })
        }
        Command::Aubry { barrier_grid, delta, t_max } => {
            commands::aubry(&cx, &AubryArgs { barrier_grid, delta, t_max })
        }
        Command::Twist { map, k, p, q, resolution } => {
            commands::twist(&cx, &TwistArgs { map, k, p, q, resolution })
        }
        Command::Report { suite: _, only } => commands::report(&cx, &only),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<weakkam_core::Error>() {
            return e.exit_code();
        }
        if cause.is::<ConfigError>() || cause.is::<commands::MissingPrerequisite>() {
            return 4;
        }
        if cause.is::<commands::ChecksFailed>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
