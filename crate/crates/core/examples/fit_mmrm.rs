//! REML fit of the imputation model on one trial, with the direct
//! treatment-effect estimate at the last visit.
//!
//! cargo run --release --example fit_mmrm -- [estimator] [n_per_arm]

use estimand_sim::design::{build_design, DesignSpec};
use estimand_sim::estimand::{mask_for_estimand, EstimatorName};
use estimand_sim::mmrm::fit_mmrm;
use estimand_sim::numerics::StreamFactory;
use estimand_sim::sim::{simulate_trial, Arm, SimConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let name: EstimatorName = args.next().map(|s| s.parse()).transpose()?.unwrap_or(EstimatorName::MarHyp);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(300);

    let trial = simulate_trial(n, &SimConfig::default(), StreamFactory::new(11, 0))?;
    let data = mask_for_estimand(&trial, &name.spec());
    let spec = DesignSpec::for_dataset(&data);
    let design = build_design(&data, &spec)?;
    let fit = fit_mmrm(&design)?;

    println!("{name}: {} subjects, {} outcomes, {} coefficients", fit.n_subjects, fit.n_obs, spec.n_columns());
    println!("REML log-likelihood {:.4} after {} iterations", fit.loglik, fit.n_iterations);
    println!("\nvisit  placebo  active  baseline");
    for (j, month) in data.visit_months.iter().enumerate() {
        println!(
            "{month:>5}  {:>7.3}  {:>6.3}  {:>8.4}",
            fit.beta[spec.cell_column(Arm::Placebo, j)],
            fit.beta[spec.cell_column(Arm::Active, j)],
            fit.beta[spec.baseline_column(j)]
        );
    }
    for c in 0..spec.tv_scheme.n_columns() {
        println!("tv column {c}: {:.3}", fit.beta[spec.tv_column(c)]);
    }
    println!("\ncovariance\n{:.2}", fit.sigma.as_matrix());

    let last = spec.n_visits - 1;
    let (a, p) = (spec.cell_column(Arm::Active, last), spec.cell_column(Arm::Placebo, last));
    let effect = fit.beta[a] - fit.beta[p];
    let v = &fit.beta_vcov;
    let se = (v.get(a, a) + v.get(p, p) - 2.0 * v.get(a, p)).sqrt();
    println!("treatment effect at the last visit: {effect:.3} (SE {se:.3})");
    Ok(())
}
