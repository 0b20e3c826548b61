//! Batch driver for the extremal-clock experiments.
//!
//! Each subcommand reads an [`ExperimentConfig`], runs on a dedicated rayon
//! pool, and writes `results.json`, one CSV per table and `manifest.json`
//! into the output directory. All randomness is derived from the configured
//! seed, so results do not depend on the thread count.

mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub use config::{BetaRule, ExperimentConfig};
use output::{Manifest, Results, Versions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] extremal_clock_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Ppp,
    SkRun,
    Verify,
    Ehrenfest,
    Ageing,
    Compare,
    Variance,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ppp => "ppp",
            Command::SkRun => "sk-run",
            Command::Verify => "verify",
            Command::Ehrenfest => "ehrenfest",
            Command::Ageing => "ageing",
            Command::Compare => "compare",
            Command::Variance => "variance",
        }
    }
}

/// Environment variable naming the output directory.
pub const OUT_ENV: &str = "EXTREMAL_CLOCK_OUT";

/// Output directory: explicit flag, then environment, then config, then `results`.
pub fn resolve_out_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// Runs `command` and writes its artifacts into `out_dir`.
pub fn run(command: Command, config: &ExperimentConfig, out_dir: &Path) -> Result<Results, CliError> {
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(name) = &config.command {
        if name != command.name() {
            log::warn!("config names command {name:?}; running {:?}", command.name());
        }
    }
    let threads = if config.threads == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        config.threads
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let started = Instant::now();
    let outcome = pool.install(|| commands::execute(command, config))?;
    std::fs::create_dir_all(out_dir)?;
    for table in &outcome.tables {
        table.write(out_dir)?;
    }
    let hash = config.hash();
    let results = Results {
        command: command.name().to_string(),
        config_hash: hash.clone(),
        seed: config.seed,
        tables: outcome.tables.iter().map(|t| t.name.clone()).collect(),
        reports: outcome.reports,
        trends: outcome.trends,
        partial: outcome.partial,
        notes: outcome.notes,
        runtime_seconds: started.elapsed().as_secs_f64(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    output::write_json(&out_dir.join("results.json"), &results)?;
    output::write_json(
        &out_dir.join("manifest.json"),
        &Manifest {
            command: command.name(),
            seed: config.seed,
            config_hash: &hash,
            config,
            versions: Versions::default(),
            threads,
        },
    )?;
    Ok(results)
}
