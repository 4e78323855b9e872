//! Command-line driver: configuration, orchestration of runs, couplings and
//! audits, and artifact output. The `vpb` binary is a thin wrapper over
//! [`run_command`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;
use vpb_core::diagnostics::{compute_tb, DEFAULT_TB_A};

pub mod commands;
pub mod config;

pub use commands::{execute_audit, execute_couple, execute_run, miot_profile, MiotRow, Outcome};
pub use config::{AuditConfig, CoupleConfig, FieldsConfig, RunConfig};
pub use vpb_core;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vpb", version, about = "Vlasov-Poisson particle runs with an external magnetic field")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; results are reproducible for a fixed count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the defaults table as a complete config and exit.
    #[arg(long)]
    pub print_defaults: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Advance one ensemble, record diagnostics, run the bound audits.
    Run,
    /// Advance two branches from one ensemble and record their distance.
    Couple,
    /// Re-check a stored run directory (reads its config.toml and series.json).
    Audit {
        dir: PathBuf,
    },
    /// Print the T with B T exp(B T) = a.
    Tb {
        #[arg(long)]
        binf: f64,
        #[arg(long, default_value_t = DEFAULT_TB_A)]
        a: f64,
    },
    /// Histogram norms of the logarithmic-density data at t = 0.
    MiotProfile {
        #[arg(long, default_value_t = 200_000)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1.0 / 64.0)]
        h: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0, 8.0, 16.0, 30.0])]
        p: Vec<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("vpb-out"))
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(format!("threads: {e}")))
}

fn summarize(outcome: &Outcome) -> i32 {
    let checked = outcome.reports.iter().filter(|r| r.is_checked()).count();
    let failed: Vec<_> = outcome.failures().collect();
    for r in &failed {
        eprintln!("FAIL {} at t = {}: lhs = {}, rhs = {}, margin = {}", r.name, r.t, r.lhs, r.rhs, r.margin);
    }
    for r in &outcome.implied {
        match r.c_impl {
            Some(c) => println!("implied {} = {c} ({} samples)", r.name, r.samples),
            None => println!("implied {} = n/a", r.name),
        }
    }
    println!("{} reports, {} checked, {} failed", outcome.reports.len(), checked, failed.len());
    if let Some(msg) = &outcome.aborted {
        eprintln!("run aborted: {msg}");
    }
    outcome.exit_code()
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    if cli.print_defaults {
        print!("{}", RunConfig::default().to_toml());
        return Ok(0);
    }
    let Some(command) = cli.command.as_ref() else {
        return Err(CliError::Config("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Tb { binf, a } => {
            if *binf == 0.0 && *a > 0.0 {
                println!("inf");
                return Ok(0);
            }
            let t = compute_tb(*binf, *a).map_err(|e| CliError::Config(e.to_string()))?;
            println!("{t:.5e}");
            Ok(0)
        }
        Command::Run | Command::Couple => {
            let mut cfg = load_config(&cli)?;
            let pool = pool(cfg.threads)?;
            cfg.threads = Some(pool.current_num_threads());
            let dir = out_dir(&cfg);
            let outcome = pool.install(|| match command {
                Command::Run => execute_run(&cfg, &dir),
                _ => execute_couple(&cfg, &dir),
            })?;
            println!("artifacts in {}", dir.display());
            Ok(summarize(&outcome))
        }
        Command::Audit { dir } => {
            let path = cli.config.clone().unwrap_or_else(|| dir.join("config.toml"));
            let cfg = RunConfig::load(&path)?;
            let outcome = execute_audit(&cfg, &dir.join("series.json"))?;
            for r in &outcome.reports {
                println!("{}", r.to_json_line());
            }
            Ok(summarize(&outcome))
        }
        Command::MiotProfile { n, seed, h, p } => {
            let pool = pool(cli.threads)?;
            let (rows, outcome) = pool.install(|| miot_profile(*n, *seed, *h, p))?;
            commands::write_miot_table(&rows, std::io::stdout().lock())?;
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir)?;
                commands::write_miot_table(&rows, std::fs::File::create(dir.join("miot_profile.csv"))?)?;
                write_reports(&outcome, &dir.join("reports.jsonl"))?;
            }
            Ok(summarize(&outcome))
        }
    }
}

fn write_reports(outcome: &Outcome, path: &Path) -> Result<(), CliError> {
    let text: String = outcome.reports.iter().map(|r| r.to_json_line() + "\n").collect();
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses `argv` and runs the command. Exit status: 0 success, 1 a failed
/// bound check, 2 a config or usage error, 3 a numerical abort.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
