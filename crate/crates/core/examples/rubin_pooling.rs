//! Full analysis of one simulated trial with every estimator: imputation,
//! ANCOVA per completed dataset, Rubin's rules.
//!
//! cargo run --release --example rubin_pooling -- [n_per_arm] [M]

use estimand_sim::estimand::{mask_for_estimand, EstimatorName};
use estimand_sim::mi::{multiple_impute, GibbsConfig};
use estimand_sim::numerics::StreamFactory;
use estimand_sim::pool::{ancova, rubin_pool};
use estimand_sim::sim::{simulate_trial, SimConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let m: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(25);
    let streams = StreamFactory::new(31, 0);
    let trial = simulate_trial(n, &SimConfig::default(), streams)?;

    println!("estimator  estimate     SE      df   95% CI            p      B/W");
    for name in EstimatorName::ALL {
        let data = mask_for_estimand(&trial, &name.spec());
        let set = match multiple_impute(&data, m, &GibbsConfig::default(), &streams) {
            Ok(s) => s,
            Err(e) => {
                println!("{:<9}  failed: {e}", name.as_str());
                continue;
            }
        };
        let mut est = Vec::new();
        let mut var = Vec::new();
        let mut df = 0.0;
        for k in 0..set.m() {
            let a = ancova(&set.final_visit(k), &set.baselines, &set.arms)?;
            est.push(a.estimate);
            var.push(a.variance);
            df = a.residual_df;
        }
        let p = rubin_pool(&est, &var, df)?;
        println!(
            "{:<9}  {:>8.3}  {:>6.3}  {:>6.1}  [{:>6.2}, {:>6.2}]  {:.4}  {:.2}",
            name.as_str(),
            p.estimate,
            p.std_error,
            p.df,
            p.ci_low,
            p.ci_high,
            p.p_value,
            p.between / p.within
        );
    }
    Ok(())
}
