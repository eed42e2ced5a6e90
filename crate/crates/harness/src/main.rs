//! `beacon` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use beacon_core::problems::BUILTIN_PROBLEMS;
use beacon_harness::runner::ReplicateStatus;
use beacon_harness::{aggregate, load_traces, run_experiment, write_report, Error, ExperimentConfig};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "beacon", version, about = "Sample-efficient novelty search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every missing replicate of an experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Worker threads (default: available parallelism).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate the traces in a directory into CSV tables and an SVG chart.
    Report {
        dir: PathBuf,
        /// Where to write the report files (default: the trace directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a config without running anything.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// List the built-in problems.
    ListProblems,
}

#[derive(Args)]
struct Overrides {
    /// Base seed; replicate r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Output directory for traces.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Overrides {
    fn load(&self, path: &PathBuf) -> Result<ExperimentConfig, Error> {
        let mut c = ExperimentConfig::load(path)?;
        if let Some(s) = self.seed {
            c.base_seed = s;
        }
        if let Some(r) = self.replicates {
            c.replicates = r;
        }
        if let Some(o) = &self.output {
            c.output = o.clone();
        }
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Run { config, overrides, jobs } => {
            let exp = overrides.load(&config)?.prepare()?;
            if jobs == Some(0) {
                return Err(Error::Config("--jobs must be at least 1".into()));
            }
            let summary = run_experiment(&exp, jobs)?;
            let done = summary.count(|s| *s == ReplicateStatus::Completed);
            let skipped = summary.count(|s| *s == ReplicateStatus::Skipped);
            println!(
                "{}: {done} replicates run, {skipped} already present, {} failed -> {}",
                exp.problem.name(),
                summary.failures().count(),
                exp.config.output.display()
            );
            for f in summary.failures() {
                if let ReplicateStatus::Failed(msg) = &f.status {
                    eprintln!("failed: {} replicate {}: {msg}", f.algorithm, f.replicate);
                }
            }
            Ok(if summary.all_ok() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Report { dir, output } => {
            let traces = load_traces(&dir)?;
            let report = aggregate(&traces)?;
            let files = write_report(&report, output.as_deref().unwrap_or(&dir))?;
            for c in &report.curves {
                println!(
                    "{:<12} R={:<3} final reachability {:.3} ± {:.3}",
                    c.algorithm,
                    c.replicates,
                    c.final_mean(),
                    c.final_std()
                );
            }
            println!("wrote {}, {}, {}", files.curves.display(), files.summary.display(), files.chart.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { config, overrides } => {
            let exp = overrides.load(&config)?.prepare()?;
            println!(
                "ok: {} (d={}, n={}), {} bins, {} algorithms x {} replicates, hash {}",
                exp.problem.name(),
                exp.problem.input_dim(),
                exp.problem.output_dim(),
                exp.space.num_bins(),
                exp.config.algorithms.len(),
                exp.config.replicates,
                exp.hash
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::ListProblems => {
            for (name, about) in BUILTIN_PROBLEMS {
                println!("{name:<18} {about}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
