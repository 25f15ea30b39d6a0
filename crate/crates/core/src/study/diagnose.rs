use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Purpose, RngStream, StreamId};
use crate::sim::{simulate_subject, Arm, PerArm, SimConfig, SubjectRecord};

const CHUNK: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostDiscReport {
    /// Per-arm probability that a subject contributes at least one
    /// post-discontinuation outcome to the mixed-estimand analysis.
    pub per_arm: PerArm,
    /// Probability that some arm of a trial with `n_per_arm` subjects per
    /// arm has no such subject.
    pub all_empty_probability: f64,
    pub n_per_arm: usize,
    pub n_monte_carlo: usize,
}

/// Discontinued, not dropped out, and observed at some visit after
/// discontinuation and no later than symptomatic initiation.
fn is_informative(s: &SubjectRecord) -> bool {
    let Some(d) = s.disc_after_visit else { return false };
    if s.dropped_out {
        return false;
    }
    let last = s.sympt_after_visit.unwrap_or(usize::MAX);
    s.observed
        .iter()
        .enumerate()
        .any(|(v, y)| y.is_some() && v > d && v <= last)
}

/// Monte Carlo estimate from `n_monte_carlo` subjects per arm; the
/// all-empty probability is `1 − Πₐ (1 − (1 − pₐ)ⁿ)`.
pub fn informative_postdisc_probability(
    cfg: &SimConfig,
    n_per_arm: usize,
    n_monte_carlo: usize,
    root_seed: u64,
) -> Result<PostDiscReport> {
    cfg.validate()?;
    if n_monte_carlo == 0 {
        return Err(Error::InvalidInput("n_monte_carlo must be at least 1".into()));
    }
    let mut p = [0.0; 2];
    for arm in Arm::BOTH {
        let counts: Vec<usize> = (0..n_monte_carlo.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n_monte_carlo);
                (lo..hi)
                    .filter(|&i| {
                        let id = StreamId::new(u64::MAX - 1, (arm.index() * n_monte_carlo + i) as u64, Purpose::Diagnose);
                        let mut rng = RngStream::new(root_seed, id);
                        is_informative(&simulate_subject(i, arm, cfg, &mut rng))
                    })
                    .count()
            })
            .collect();
        p[arm.index()] = counts.iter().sum::<usize>() as f64 / n_monte_carlo as f64;
    }
    let none_in = |q: f64| (1.0 - q).powi(n_per_arm as i32);
    Ok(PostDiscReport {
        per_arm: PerArm { placebo: p[0], active: p[1] },
        all_empty_probability: 1.0 - (1.0 - none_in(p[0])) * (1.0 - none_in(p[1])),
        n_per_arm,
        n_monte_carlo,
    })
}
