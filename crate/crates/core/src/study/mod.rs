//! Replicated simulation studies.
//!
//! Every replication simulates one trial that all estimators share, then
//! runs mask → design → fit → draws → impute → ANCOVA → pool per
//! estimator. Random streams are keyed by `(root_seed, n, rep)`, so
//! results do not depend on the thread budget or on scheduling.

mod diagnose;
mod report;

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnose::{informative_postdisc_probability, PostDiscReport};
pub use report::{format_sig6, merge_summaries, read_csv, read_summary, write_csv, write_summary, OutputFormat, StudySummary, SummaryRow};

use crate::design::{build_design, DesignSpec};
use crate::error::{Error, FailureKind, Result};
use crate::estimand::{mask_for_estimand, EstimatorName};
use crate::mi::{multiple_impute_from_fit, GibbsConfig};
use crate::mmrm::fit_mmrm;
use crate::numerics::StreamFactory;
use crate::pool::{analyze_imputed, PooledResult};
use crate::sim::{analytic_hypothetical_truth, analytic_mixed_truth, compute_truth_mc, simulate_trial, Estimand, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub estimators: Vec<EstimatorName>,
    pub alpha: f64,
    pub root_seed: u64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub gibbs: GibbsConfig,
    /// Index of the first replication, for splitting a study across runs.
    pub first_replication: usize,
    /// Subjects per arm for the Monte Carlo treatment-policy truth.
    pub truth_n_per_arm: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            sim: SimConfig::default(),
            sample_sizes: (75..=300).step_by(25).collect(),
            replications: 500,
            m: 25,
            estimators: EstimatorName::ALL.to_vec(),
            alpha: 0.05,
            root_seed: 20_240_101,
            threads: 0,
            gibbs: GibbsConfig::default(),
            first_replication: 0,
            truth_n_per_arm: 1_000_000,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.m < 2 {
            return bad("M must be at least 2");
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < 3) {
            return bad("sample_sizes must be non-empty with at least 3 subjects per arm");
        }
        if self.sample_sizes.iter().any(|&n| n as u64 >= 1 << 23) || self.first_replication as u64 + self.replications as u64 >= 1 << 40 {
            return bad("sample size or replication index out of range");
        }
        if self.estimators.is_empty() {
            return bad("estimators must be non-empty");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.gibbs.thin == 0 {
            return bad("gibbs.thin must be at least 1");
        }
        if self.truth_n_per_arm == 0 {
            return bad("truth_n_per_arm must be at least 1");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: StudyConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn rep_range(&self) -> std::ops::Range<usize> {
        self.first_replication..self.first_replication + self.replications
    }
}

/// Stream replication key for sample size `n` and replication `rep`.
pub fn replication_key(n_per_arm: usize, rep: usize) -> u64 {
    ((n_per_arm as u64) << 40) | rep as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EstimatorOutcome {
    Success {
        estimate: f64,
        std_error: f64,
        p_value: f64,
        df: f64,
    },
    Failure {
        reason: FailureKind,
    },
}

impl From<&PooledResult> for EstimatorOutcome {
    fn from(p: &PooledResult) -> Self {
        EstimatorOutcome::Success {
            estimate: p.estimate,
            std_error: p.std_error,
            p_value: p.p_value,
            df: p.df,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub sample_size: usize,
    pub replication: usize,
    pub root_seed: u64,
    pub outcomes: Vec<(EstimatorName, EstimatorOutcome)>,
}

/// Runs one estimator on a trial and pools the imputations.
pub fn run_estimator(
    trial: &crate::sim::TrialDataset,
    name: EstimatorName,
    m: usize,
    gibbs: &GibbsConfig,
    streams: &StreamFactory,
) -> Result<PooledResult> {
    let data = mask_for_estimand(trial, &name.spec());
    let design = build_design(&data, &DesignSpec::for_dataset(&data))?;
    let fit = fit_mmrm(&design)?;
    let set = multiple_impute_from_fit(&data, &design, &fit, m, gibbs, streams)?;
    analyze_imputed(&set)
}

fn failure_of(e: &Error) -> FailureKind {
    e.failure_kind().unwrap_or(FailureKind::Nonfinite)
}

pub fn run_replication(cfg: &StudyConfig, n_per_arm: usize, rep: usize) -> Result<ReplicationResult> {
    let streams = StreamFactory::new(cfg.root_seed, replication_key(n_per_arm, rep));
    let trial = simulate_trial(n_per_arm, &cfg.sim, streams)?;
    let outcomes = cfg
        .estimators
        .iter()
        .map(|&name| {
            let outcome = match run_estimator(&trial, name, cfg.m, &cfg.gibbs, &streams) {
                Ok(p) => EstimatorOutcome::from(&p),
                Err(e) => EstimatorOutcome::Failure { reason: failure_of(&e) },
            };
            (name, outcome)
        })
        .collect();
    Ok(ReplicationResult {
        sample_size: n_per_arm,
        replication: rep,
        root_seed: cfg.root_seed,
        outcomes,
    })
}

/// True values of the three estimands, indexed by [`Estimand::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyTruths {
    pub hypothetical: f64,
    pub mixed: f64,
    pub policy: f64,
}

impl StudyTruths {
    pub fn get(&self, e: Estimand) -> f64 {
        match e {
            Estimand::Hypothetical => self.hypothetical,
            Estimand::Mixed => self.mixed,
            Estimand::Policy => self.policy,
        }
    }
}

static TRUTH_CACHE: Mutex<Option<HashMap<String, StudyTruths>>> = Mutex::new(None);

/// Closed forms for the hypothetical and mixed estimands; Monte Carlo for
/// treatment policy. Cached per generator configuration.
pub fn study_truths(cfg: &StudyConfig) -> Result<StudyTruths> {
    let key = format!(
        "{}|{}|{}",
        serde_json::to_string(&cfg.sim)?,
        cfg.truth_n_per_arm,
        cfg.root_seed
    );
    if let Some(t) = TRUTH_CACHE.lock().expect("truth cache").as_ref().and_then(|c| c.get(&key)) {
        return Ok(*t);
    }
    let mc = compute_truth_mc(&cfg.sim, cfg.truth_n_per_arm, cfg.root_seed)?;
    let truths = StudyTruths {
        hypothetical: analytic_hypothetical_truth(&cfg.sim),
        mixed: analytic_mixed_truth(&cfg.sim)?,
        policy: mc.policy,
    };
    TRUTH_CACHE
        .lock()
        .expect("truth cache")
        .get_or_insert_with(HashMap::new)
        .insert(key, truths);
    Ok(truths)
}

/// All replications of one sample size, in replication order.
pub fn run_replications(cfg: &StudyConfig, n_per_arm: usize) -> Result<Vec<ReplicationResult>> {
    cfg.rep_range()
        .into_par_iter()
        .map(|rep| run_replication(cfg, n_per_arm, rep))
        .collect()
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker threads: {e}")))
}

/// Runs every sample size and summarizes against [`study_truths`].
pub fn run_study(cfg: &StudyConfig) -> Result<StudySummary> {
    cfg.validate()?;
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| {
        let truths = study_truths(cfg)?;
        let mut rows = Vec::new();
        for &n in &cfg.sample_sizes {
            let reps = run_replications(cfg, n)?;
            rows.extend(summarize_replications(cfg, n, &reps, &truths));
        }
        Ok(StudySummary { rows })
    })
}

/// Per-estimator performance over replications already sorted by index.
pub fn summarize_replications(
    cfg: &StudyConfig,
    n_per_arm: usize,
    reps: &[ReplicationResult],
    truths: &StudyTruths,
) -> Vec<SummaryRow> {
    cfg.estimators
        .iter()
        .map(|&name| {
            let truth = truths.get(name.spec().estimand);
            let mut sum_est = 0.0;
            let mut sum_sq = 0.0;
            let mut sum_se = 0.0;
            let mut rejections = 0usize;
            let mut n_eff = 0usize;
            let mut failures = std::collections::BTreeMap::new();
            for r in reps {
                let outcome = r
                    .outcomes
                    .iter()
                    .find(|(e, _)| *e == name)
                    .map(|(_, o)| *o)
                    .expect("every replication covers every estimator");
                match outcome {
                    EstimatorOutcome::Success { estimate, std_error, p_value, .. } => {
                        n_eff += 1;
                        sum_est += estimate;
                        sum_sq += (estimate - truth).powi(2);
                        sum_se += std_error;
                        if p_value < cfg.alpha {
                            rejections += 1;
                        }
                    }
                    EstimatorOutcome::Failure { reason } => {
                        *failures.entry(reason.as_str().to_string()).or_insert(0) += 1;
                    }
                }
            }
            let k = n_eff as f64;
            let mean_estimate = sum_est / k;
            SummaryRow {
                sample_size: n_per_arm,
                estimator: name,
                truth,
                mean_estimate,
                bias: mean_estimate - truth,
                rmse: (sum_sq / k).sqrt(),
                mean_se: sum_se / k,
                power: rejections as f64 / k,
                n_failures: reps.len() - n_eff,
                n_effective: n_eff,
                root_seed: cfg.root_seed,
                rep_start: cfg.first_replication,
                rep_end: cfg.first_replication + reps.len(),
                failures_by_kind: failures,
            }
        })
        .collect()
}
