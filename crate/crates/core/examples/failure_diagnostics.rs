//! Why time-varying estimators sometimes cannot be fitted: the chance that
//! an arm has no retrieved post-discontinuation outcome, and a replication
//! where that happens.
//!
//! cargo run --release --example failure_diagnostics -- [n_per_arm]

use estimand_sim::error::Error;
use estimand_sim::estimand::EstimatorName;
use estimand_sim::numerics::StreamFactory;
use estimand_sim::sim::{simulate_trial, SimConfig};
use estimand_sim::study::{informative_postdisc_probability, replication_key, run_estimator};
use estimand_sim::mi::GibbsConfig;

fn main() -> anyhow::Result<()> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(75);
    let cfg = SimConfig::default();
    let report = informative_postdisc_probability(&cfg, n, 1_000_000, 2024)?;
    println!(
        "per-subject probability of retrieved post-discontinuation data: placebo {:.2}%, active {:.2}%",
        100.0 * report.per_arm.placebo,
        100.0 * report.per_arm.active
    );
    println!("probability some arm has none at n = {n}: {:.2}%", 100.0 * report.all_empty_probability);

    let gibbs = GibbsConfig { burn_in: 20, thin: 2, fix_sigma: false };
    for rep in 0..500 {
        let streams = StreamFactory::new(5, replication_key(n, rep));
        let trial = simulate_trial(n, &cfg, streams)?;
        if let Err(e @ Error::RankDeficient { .. }) = run_estimator(&trial, EstimatorName::Tv1Mix, 2, &gibbs, &streams) {
            println!("\nreplication {rep}: TV1_MIX failed ({}): {e}", e.failure_kind().map_or("other", |k| k.as_str()));
            let base = run_estimator(&trial, EstimatorName::MarMix, 2, &gibbs, &streams)?;
            println!("MAR_MIX on the same trial: estimate {:.3}", base.estimate);
            break;
        }
    }
    Ok(())
}
