//! A small replicated study across sample sizes, printed as summary CSV.
//! The same settings scale up through the `run-study` command.
//!
//! cargo run --release --example power_study -- [replications] [M]

use estimand_sim::estimand::EstimatorName;
use estimand_sim::study::{run_study, StudyConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let replications: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(40);
    let m: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let cfg = StudyConfig {
        sample_sizes: vec![100, 200, 300],
        replications,
        m,
        estimators: vec![EstimatorName::MarHyp, EstimatorName::CirMix, EstimatorName::Tv4Tp],
        truth_n_per_arm: 200_000,
        ..StudyConfig::default()
    };
    let summary = run_study(&cfg)?;
    estimand_sim::study::write_csv(&summary, std::io::stdout().lock())?;
    Ok(())
}
