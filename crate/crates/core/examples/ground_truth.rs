//! Large-sample estimand values for the default scenario, next to the
//! closed-form hypothetical and mixed effects.
//!
//! cargo run --release --example ground_truth -- [n_per_arm] [seed]

use estimand_sim::sim::{analytic_hypothetical_truth, analytic_mixed_truth, compute_truth_mc, SimConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1_000_000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2024);
    let cfg = SimConfig::default();

    let truth = compute_truth_mc(&cfg, n, seed)?;
    println!("n per arm          {n}");
    println!("hypothetical  MC {:+.3}  analytic {:+.4}", truth.hypothetical, analytic_hypothetical_truth(&cfg));
    println!("mixed         MC {:+.3}  analytic {:+.4}", truth.mixed, analytic_mixed_truth(&cfg)?);
    println!("policy        MC {:+.3}", truth.policy);
    println!();
    println!("mean change from baseline by visit (placebo / active)");
    for (e, name) in ["hypothetical", "mixed", "policy"].iter().enumerate() {
        print!("{name:>13}");
        for v in 1..cfg.n_visits() {
            print!("  {:5.2}/{:5.2}", truth.arm_means[e][0][v], truth.arm_means[e][1][v]);
        }
        println!();
    }
    Ok(())
}
