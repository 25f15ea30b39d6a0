//! How each estimator sees the same trial: which outcomes are present,
//! which feed the imputation model, and the time-varying covariates.
//!
//! cargo run --release --example estimand_masking

use estimand_sim::estimand::{mask_for_estimand, EstimatorName};
use estimand_sim::numerics::StreamFactory;
use estimand_sim::sim::{simulate_trial, SimConfig};

fn main() -> anyhow::Result<()> {
    let trial = simulate_trial(300, &SimConfig::default(), StreamFactory::new(7, 0))?;
    let id = trial
        .subjects
        .iter()
        .position(|s| !s.dropped_out && s.disc_after_visit.is_some_and(|d| d < 3) && s.sympt_after_visit.is_some())
        .unwrap_or(0);

    println!("estimator  missing  fit-excluded");
    for name in EstimatorName::ALL {
        let data = mask_for_estimand(&trial, &name.spec());
        let excluded: usize = data
            .subjects
            .iter()
            .map(|s| s.outcomes.iter().zip(&s.fit_eligible).filter(|(o, f)| o.is_some() && !**f).count())
            .sum();
        println!("{:<9}  {:>7}  {:>12}", name.as_str(), data.n_missing(), excluded);
    }

    let s = &trial.subjects[id];
    println!(
        "\nsubject {id}: disc after visit {:?}, symptomatic after visit {:?}",
        s.disc_after_visit, s.sympt_after_visit
    );
    for name in EstimatorName::ALL {
        let data = mask_for_estimand(&trial, &name.spec());
        let a = &data.subjects[id];
        let cells: Vec<String> = a
            .outcomes
            .iter()
            .zip(&a.fit_eligible)
            .map(|(o, f)| match (o, f) {
                (None, _) => "    .".to_string(),
                (Some(y), true) => format!("{y:5.1}"),
                (Some(y), false) => format!("{y:4.1}*"),
            })
            .collect();
        let tv: Vec<String> = a.tv.iter().map(|row| format!("{row:.2?}")).collect();
        println!("{:<9} {}  tv {}", name.as_str(), cells.join(" "), tv.join(" "));
    }
    println!("\n. missing   * present but excluded from the imputation fit");
    Ok(())
}
