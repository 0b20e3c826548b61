use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use extremal_clock::{resolve_out_dir, run, CliError, Command, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "extremal-clock", version, about = "Run extremal clock-process experiments")]
struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured worker count (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let result = (|| {
        let mut config = match &args.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if let Some(threads) = args.threads {
            config.threads = threads;
        }
        let out = resolve_out_dir(args.out.as_deref(), &config);
        run(args.command, &config, &out).map(|r| (r, out))
    })();
    match result {
        Ok((results, out)) => {
            println!("{}: wrote {} tables to {}", results.command, results.tables.len(), out.display());
            if results.partial {
                eprintln!("warning: some replicas exhausted the step budget; results are partial");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
