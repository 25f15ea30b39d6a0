use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use estimand_sim::numerics::StreamFactory;
use estimand_sim::sim::{analytic_hypothetical_truth, analytic_mixed_truth, compute_truth_mc, simulate_trial};
use estimand_sim::study::{
    informative_postdisc_probability, merge_summaries, read_summary, run_study, write_summary, OutputFormat,
    StudyConfig,
};

#[derive(Parser)]
#[command(name = "estimand-sim", version, about = "Longitudinal trial simulation and multiple-imputation estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Large-sample estimand values for a configuration.
    Truth {
        #[arg(long)]
        config: PathBuf,
        /// Subjects per arm.
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Simulate one trial and write it in long format.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n_per_arm: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a replicated study and write its summary.
    RunStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the output file extension.
        #[arg(long, value_enum)]
        format: Option<OutputFormat>,
        /// Overrides the configured thread budget.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Merge summaries over disjoint replication ranges.
    Summarize {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probability that retrieved post-discontinuation data are absent.
    DiagnoseFailures {
        #[arg(long)]
        config: PathBuf,
        /// Subjects per arm of the trial in question.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1_000_000)]
        monte_carlo: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn load(path: &PathBuf) -> Result<StudyConfig> {
    StudyConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Truth { config, n, seed } => {
            let cfg = load(&config)?;
            let mc = compute_truth_mc(&cfg.sim, n, seed)?;
            let out = json!({
                "n_per_arm": n,
                "seed": seed,
                "monte_carlo": mc,
                "analytic": {
                    "hypothetical": analytic_hypothetical_truth(&cfg.sim),
                    "mixed": analytic_mixed_truth(&cfg.sim)?,
                },
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Simulate { config, n_per_arm, seed, out } => {
            let cfg = load(&config)?;
            let trial = simulate_trial(n_per_arm, &cfg.sim, StreamFactory::new(seed, 0))?;
            let file = std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            trial.write_csv(std::io::BufWriter::new(file))?;
        }
        Command::RunStudy { config, out, format, threads } => {
            let mut cfg = load(&config)?;
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let summary = run_study(&cfg)?;
            write_summary(&summary, format.unwrap_or_else(|| OutputFormat::from_path(&out)), &out)?;
        }
        Command::Summarize { paths, out } => {
            let parts = paths
                .iter()
                .map(|p| read_summary(p).with_context(|| format!("reading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            let merged = merge_summaries(&parts)?;
            write_summary(&merged, OutputFormat::from_path(&out), &out)?;
        }
        Command::DiagnoseFailures { config, n, monte_carlo, seed } => {
            let cfg = load(&config)?;
            let report = informative_postdisc_probability(&cfg.sim, n, monte_carlo, seed)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
