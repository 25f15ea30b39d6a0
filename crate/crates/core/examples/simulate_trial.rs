//! Simulate one trial and tabulate its intercurrent events.
//!
//! cargo run --release --example simulate_trial -- [n_per_arm] [seed] [out.csv]

use estimand_sim::numerics::StreamFactory;
use estimand_sim::sim::{simulate_trial, Arm, SimConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let out = args.next();

    let trial = simulate_trial(n, &SimConfig::default(), StreamFactory::new(seed, 0))?;
    println!("arm       discontinued  dropped out  symptomatic  missing month 12");
    for arm in Arm::BOTH {
        let subjects: Vec<_> = trial.subjects.iter().filter(|s| s.arm == arm).collect();
        let count = |f: &dyn Fn(&&estimand_sim::sim::SubjectRecord) -> bool| subjects.iter().filter(|s| f(s)).count();
        println!(
            "{:<9} {:>12}  {:>11}  {:>11}  {:>16}",
            arm.as_str(),
            count(&|s| s.disc_after_visit.is_some()),
            count(&|s| s.dropped_out),
            count(&|s| s.sympt_after_visit.is_some()),
            count(&|s| s.observed.last().is_some_and(|y| y.is_none())),
        );
    }

    let first = trial
        .subjects
        .iter()
        .find(|s| s.disc_after_visit.is_some() && s.sympt_after_visit.is_some())
        .unwrap_or(&trial.subjects[0]);
    println!("\nsubject {} ({}), disc after visit {:?}, symptomatic after visit {:?}", first.subject_id, first.arm.as_str(), first.disc_after_visit, first.sympt_after_visit);
    println!("month  hypothetical  mixed   policy  observed");
    for (v, month) in trial.config.visit_months.iter().enumerate() {
        println!(
            "{month:>5}  {:>12.2}  {:>6.2}  {:>6.2}  {}",
            first.y_hypothetical[v],
            first.y_mixed[v],
            first.y_policy[v],
            first.observed[v].map_or("-".to_string(), |y| format!("{y:.2}"))
        );
    }

    if let Some(path) = out {
        trial.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        println!("\nwrote {path}");
    }
    Ok(())
}
