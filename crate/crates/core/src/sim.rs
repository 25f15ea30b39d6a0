//! Trial data generator.
//!
//! Each subject follows a random intercept and slope model around an
//! arm-specific linear mean, observed at every visit with independent
//! residual error. Two intercurrent events can occur after any visit but
//! the last:
//!
//! * study-treatment discontinuation, at a constant per-visit hazard; in the
//!   active arm the fixed slope reverts to the placebo slope afterwards, and
//!   the subject withdraws from the study with a fixed probability;
//! * symptomatic-treatment initiation, with a per-visit base probability
//!   whose odds scale with the current observed score; it causes an
//!   immediate scaled-beta drop and sets the fixed slope to a new value.
//!
//! An event recorded "after visit k" takes effect at visit k's time, so
//! visit k is unaffected and visit k+1 already reflects it.
//!
//! Every subject carries three potential-outcome trajectories sharing the
//! same random effects, residuals, event times and drop: with no event
//! effects (`y_hypothetical`), with the discontinuation effect only
//! (`y_mixed`), and with all effects (`y_policy`).

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_scaled_beta, standard_normal, Purpose, RngStream, StreamFactory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Placebo,
    Active,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Placebo, Arm::Active];

    pub fn indicator(self) -> f64 {
        match self {
            Arm::Placebo => 0.0,
            Arm::Active => 1.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Placebo => "placebo",
            Arm::Active => "active",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerArm {
    pub placebo: f64,
    pub active: f64,
}

impl PerArm {
    pub fn get(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Placebo => self.placebo,
            Arm::Active => self.active,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledBetaLaw {
    pub alpha: f64,
    pub beta: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Parameters of the data-generating process. Slopes are per year, visit
/// times in months.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub visit_months: Vec<f64>,
    pub baseline_mean: f64,
    pub placebo_slope: f64,
    pub active_slope: f64,
    pub sd_intercept: f64,
    pub sd_slope: f64,
    pub corr_int_slope: f64,
    pub sd_residual: f64,
    pub disc_prob_per_visit: PerArm,
    pub dropout_prob_after_disc: f64,
    /// Initiation probability after each visit but the last, for a subject
    /// whose current score equals `sympt_reference_score`.
    pub sympt_base_prob_by_visit: Vec<f64>,
    pub sympt_reference_score: f64,
    pub sympt_or_per_10pts: f64,
    pub sympt_drop_law: ScaledBetaLaw,
    pub post_sympt_fixed_slope: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            visit_months: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            baseline_mean: 30.0,
            placebo_slope: 10.0,
            active_slope: 6.0,
            sd_intercept: 10.0,
            sd_slope: 5.0,
            corr_int_slope: 0.5,
            sd_residual: 6.0,
            disc_prob_per_visit: PerArm {
                placebo: 0.02,
                active: 0.03,
            },
            dropout_prob_after_disc: 0.5,
            sympt_base_prob_by_visit: vec![0.0, 0.025, 0.025, 0.075, 0.075, 0.075],
            sympt_reference_score: 30.0,
            sympt_or_per_10pts: 1.5,
            sympt_drop_law: ScaledBetaLaw {
                alpha: 2.0,
                beta: 1.5,
                lo: -25.0,
                hi: 0.0,
            },
            post_sympt_fixed_slope: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let v = &self.visit_months;
        if v.len() < 2 || v[0] != 0.0 || v.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("visit_months must start at 0 and be strictly increasing".into());
        }
        if self.sympt_base_prob_by_visit.len() != v.len() - 1 {
            return bad(format!(
                "sympt_base_prob_by_visit needs {} entries (one per visit but the last)",
                v.len() - 1
            ));
        }
        let probs = [
            ("disc_prob_per_visit.placebo", self.disc_prob_per_visit.placebo),
            ("disc_prob_per_visit.active", self.disc_prob_per_visit.active),
            ("dropout_prob_after_disc", self.dropout_prob_after_disc),
        ];
        for (name, p) in probs
            .into_iter()
            .chain(self.sympt_base_prob_by_visit.iter().map(|&p| ("sympt_base_prob_by_visit", p)))
        {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(self.corr_int_slope.abs() < 1.0) {
            return bad("|corr_int_slope| must be < 1".into());
        }
        if !(self.sd_intercept > 0.0 && self.sd_slope > 0.0 && self.sd_residual > 0.0) {
            return bad("standard deviations must be positive".into());
        }
        if !(self.sympt_or_per_10pts > 0.0) {
            return bad("sympt_or_per_10pts must be positive".into());
        }
        let law = &self.sympt_drop_law;
        if !(law.alpha > 0.0 && law.beta > 0.0 && law.lo <= law.hi) {
            return bad("sympt_drop_law needs positive shapes and lo <= hi".into());
        }
        Ok(())
    }

    pub fn n_visits(&self) -> usize {
        self.visit_months.len()
    }

    pub fn visit_years(&self) -> Vec<f64> {
        self.visit_months.iter().map(|m| m / 12.0).collect()
    }

    pub fn arm_slope(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Placebo => self.placebo_slope,
            Arm::Active => self.active_slope,
        }
    }
}

/// Probability of initiating symptomatic treatment after `visit_index`
/// given the score observed at that visit. Odds scale by
/// `sympt_or_per_10pts` per 10 points above the reference score.
pub fn sympt_init_probability(visit_index: usize, current_score: f64, cfg: &SimConfig) -> f64 {
    let base = cfg.sympt_base_prob_by_visit[visit_index];
    if base <= 0.0 {
        return 0.0;
    }
    if base >= 1.0 {
        return 1.0;
    }
    let odds = base / (1.0 - base)
        * cfg
            .sympt_or_per_10pts
            .powf((current_score - cfg.sympt_reference_score) / 10.0);
    odds / (1.0 + odds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: usize,
    pub arm: Arm,
    pub random_intercept: f64,
    pub random_slope: f64,
    pub y_hypothetical: Vec<f64>,
    pub y_mixed: Vec<f64>,
    pub y_policy: Vec<f64>,
    /// Visit index after which study treatment was discontinued.
    pub disc_after_visit: Option<usize>,
    /// Visit index after which symptomatic treatment was started.
    pub sympt_after_visit: Option<usize>,
    pub sympt_drop: Option<f64>,
    pub dropped_out: bool,
    /// `y_policy` with visits after a withdrawal removed.
    pub observed: Vec<Option<f64>>,
}

/// Fixed (population) part of the three trajectories for one subject.
struct FixedPath<'a> {
    cfg: &'a SimConfig,
    arm: Arm,
    times: &'a [f64],
    disc: Option<usize>,
    sympt: Option<usize>,
    drop: f64,
}

impl FixedPath<'_> {
    fn hypothetical(&self, t: f64) -> f64 {
        self.cfg.baseline_mean + self.cfg.arm_slope(self.arm) * t
    }

    fn mixed(&self, t: f64) -> f64 {
        match self.disc {
            Some(k) if t > self.times[k] => {
                // zero exactly in the placebo arm
                let extra = self.cfg.placebo_slope - self.cfg.arm_slope(self.arm);
                self.hypothetical(t) + extra * (t - self.times[k])
            }
            _ => self.hypothetical(t),
        }
    }

    fn policy(&self, t: f64) -> f64 {
        match self.sympt {
            Some(k) if t > self.times[k] => {
                let ts = self.times[k];
                self.mixed(ts) + self.drop + self.cfg.post_sympt_fixed_slope * (t - ts)
            }
            _ => self.mixed(t),
        }
    }
}

/// Simulates one subject. Draw order is fixed (random effects, residuals,
/// then two uniforms per event opportunity plus event-specific draws), so a
/// stream always maps to the same record.
pub fn simulate_subject(
    subject_id: usize,
    arm: Arm,
    cfg: &SimConfig,
    rng: &mut RngStream,
) -> SubjectRecord {
    let times = cfg.visit_years();
    let n = times.len();

    let z1 = standard_normal(rng);
    let z2 = standard_normal(rng);
    let rho = cfg.corr_int_slope;
    let b0 = cfg.sd_intercept * z1;
    let b1 = cfg.sd_slope * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
    let resid: Vec<f64> = (0..n).map(|_| cfg.sd_residual * standard_normal(rng)).collect();
    let subject_part = |v: usize| b0 + b1 * times[v] + resid[v];

    let mut path = FixedPath {
        cfg,
        arm,
        times: &times,
        disc: None,
        sympt: None,
        drop: 0.0,
    };
    let mut dropped_out = false;
    let q = cfg.disc_prob_per_visit.get(arm);

    for v in 0..n - 1 {
        let u_disc: f64 = rng.random();
        let u_sympt: f64 = rng.random();
        // Events at v only act after v, so the score at v is already final.
        let score = path.policy(times[v]) + subject_part(v);
        if path.disc.is_none() && u_disc < q {
            path.disc = Some(v);
            dropped_out = rng.random::<f64>() < cfg.dropout_prob_after_disc;
        }
        if path.sympt.is_none() && u_sympt < sympt_init_probability(v, score, cfg) {
            path.sympt = Some(v);
            let law = &cfg.sympt_drop_law;
            path.drop = sample_scaled_beta(rng, law.alpha, law.beta, law.lo, law.hi);
        }
    }

    let y_hypothetical: Vec<f64> = (0..n)
        .map(|v| path.hypothetical(times[v]) + subject_part(v))
        .collect();
    let y_mixed: Vec<f64> = (0..n).map(|v| path.mixed(times[v]) + subject_part(v)).collect();
    let y_policy: Vec<f64> = (0..n).map(|v| path.policy(times[v]) + subject_part(v)).collect();
    let observed = y_policy
        .iter()
        .enumerate()
        .map(|(v, &y)| match path.disc {
            Some(k) if dropped_out && v > k => None,
            _ => Some(y),
        })
        .collect();

    SubjectRecord {
        subject_id,
        arm,
        random_intercept: b0,
        random_slope: b1,
        y_hypothetical,
        y_mixed,
        y_policy,
        disc_after_visit: path.disc,
        sympt_after_visit: path.sympt,
        sympt_drop: path.sympt.map(|_| path.drop),
        dropped_out,
        observed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub root_seed: u64,
    pub replication: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    pub subjects: Vec<SubjectRecord>,
    pub config: SimConfig,
    pub seed: SeedProvenance,
}

impl TrialDataset {
    pub fn n_per_arm(&self, arm: Arm) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm).count()
    }

    /// Long-format CSV, one row per subject and visit.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "subject_id",
            "arm",
            "visit_month",
            "y_observed",
            "y_hypothetical",
            "y_mixed",
            "y_policy",
            "disc_after_month",
            "sympt_after_month",
            "dropped_out",
        ])?;
        let months = &self.config.visit_months;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.subjects {
            for (v, month) in months.iter().enumerate() {
                w.write_record([
                    s.subject_id.to_string(),
                    s.arm.as_str().to_string(),
                    month.to_string(),
                    opt(s.observed[v]),
                    s.y_hypothetical[v].to_string(),
                    s.y_mixed[v].to_string(),
                    s.y_policy[v].to_string(),
                    opt(s.disc_after_visit.map(|k| months[k])),
                    opt(s.sympt_after_visit.map(|k| months[k])),
                    s.dropped_out.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates a 1:1 trial. Subjects `0..n` are placebo and `n..2n` active;
/// each draws from its own stream keyed by subject id.
pub fn simulate_trial(n_per_arm: usize, cfg: &SimConfig, streams: StreamFactory) -> Result<TrialDataset> {
    cfg.validate()?;
    if n_per_arm == 0 {
        return Err(Error::InvalidInput("n_per_arm must be at least 1".into()));
    }
    let subjects = (0..2 * n_per_arm)
        .map(|id| {
            let arm = if id < n_per_arm { Arm::Placebo } else { Arm::Active };
            let mut rng = streams.stream(id as u64, Purpose::Simulate);
            simulate_subject(id, arm, cfg, &mut rng)
        })
        .collect();
    Ok(TrialDataset {
        subjects,
        config: cfg.clone(),
        seed: SeedProvenance {
            root_seed: streams.root_seed,
            replication: streams.replication,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Hypothetical,
    Mixed,
    Policy,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::Hypothetical, Estimand::Mixed, Estimand::Policy];

    pub fn trajectory(self, s: &SubjectRecord) -> &[f64] {
        match self {
            Estimand::Hypothetical => &s.y_hypothetical,
            Estimand::Mixed => &s.y_mixed,
            Estimand::Policy => &s.y_policy,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Large-sample estimand values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub hypothetical: f64,
    pub mixed: f64,
    pub policy: f64,
    /// `[estimand][arm][visit]` mean change from baseline.
    pub arm_means: Vec<Vec<Vec<f64>>>,
    pub n_per_arm: usize,
}

impl Truth {
    pub fn effect(&self, e: Estimand) -> f64 {
        match e {
            Estimand::Hypothetical => self.hypothetical,
            Estimand::Mixed => self.mixed,
            Estimand::Policy => self.policy,
        }
    }
}

const TRUTH_CHUNK: usize = 20_000;

/// Monte Carlo estimand values from `n_per_arm` complete potential-outcome
/// trajectories per arm.
pub fn compute_truth_mc(cfg: &SimConfig, n_per_arm: usize, root_seed: u64) -> Result<Truth> {
    cfg.validate()?;
    if n_per_arm == 0 {
        return Err(Error::InvalidInput("n_per_arm must be at least 1".into()));
    }
    let nv = cfg.n_visits();
    let n_chunks = n_per_arm.div_ceil(TRUTH_CHUNK);
    let mut arm_means = vec![vec![vec![0.0; nv]; 2]; 3];
    for arm in Arm::BOTH {
        // Chunked partial sums, reduced in chunk order: thread-count independent.
        let partials: Vec<Vec<f64>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = vec![0.0; 3 * nv];
                let lo = c * TRUTH_CHUNK;
                let hi = (lo + TRUTH_CHUNK).min(n_per_arm);
                for i in lo..hi {
                    let id = (arm.index() * n_per_arm + i) as u64;
                    let mut rng = RngStream::new(
                        root_seed,
                        crate::numerics::StreamId::new(u64::MAX, id, Purpose::Truth),
                    );
                    let s = simulate_subject(i, arm, cfg, &mut rng);
                    for e in Estimand::ALL {
                        let y = e.trajectory(&s);
                        for v in 0..nv {
                            acc[e.index() * nv + v] += y[v] - y[0];
                        }
                    }
                }
                acc
            })
            .collect();
        for p in partials {
            for e in Estimand::ALL {
                for v in 0..nv {
                    arm_means[e.index()][arm.index()][v] += p[e.index() * nv + v];
                }
            }
        }
        for e in Estimand::ALL {
            for v in 0..nv {
                arm_means[e.index()][arm.index()][v] /= n_per_arm as f64;
            }
        }
    }
    let effect = |e: Estimand| arm_means[e.index()][1][nv - 1] - arm_means[e.index()][0][nv - 1];
    Ok(Truth {
        hypothetical: effect(Estimand::Hypothetical),
        mixed: effect(Estimand::Mixed),
        policy: effect(Estimand::Policy),
        arm_means: arm_means.clone(),
        n_per_arm,
    })
}

/// Closed-form hypothetical effect: the difference in fixed slopes over the
/// study duration.
pub fn analytic_hypothetical_truth(cfg: &SimConfig) -> f64 {
    let duration = cfg.visit_years().last().copied().unwrap_or(0.0);
    (cfg.active_slope - cfg.placebo_slope) * duration
}

/// Closed-form mixed-estimand effect. Discontinuation after visit `k`
/// (probability `q(1-q)^k`) adds `(placebo_slope - active_slope)·(T - t_k)`
/// to the active-arm mean change; the placebo arm is unaffected.
pub fn analytic_mixed_truth(cfg: &SimConfig) -> Result<f64> {
    cfg.validate()?;
    let times = cfg.visit_years();
    let total = *times.last().expect("validated");
    let q = cfg.disc_prob_per_visit.active;
    let weighted: f64 = times[..times.len() - 1]
        .iter()
        .enumerate()
        .map(|(k, t)| q * (1.0 - q).powi(k as i32) * (total - t))
        .sum();
    let active_mean = cfg.active_slope * total + (cfg.placebo_slope - cfg.active_slope) * weighted;
    Ok(active_mean - cfg.placebo_slope * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StreamId;

    fn stream(i: u64) -> RngStream {
        RngStream::new(77, StreamId::new(0, i, Purpose::Simulate))
    }

    #[test]
    fn sympt_probability_values() {
        let cfg = SimConfig::default();
        assert!((sympt_init_probability(1, 30.0, &cfg) - 0.025).abs() < 1e-15);
        assert_eq!(sympt_init_probability(0, 55.0, &cfg), 0.0);
        let odds: f64 = 0.075 / 0.925 * 1.5;
        assert!((odds - 0.12162).abs() < 1e-5);
        let p = sympt_init_probability(4, 40.0, &cfg);
        assert!((p - 0.10843).abs() < 1e-5, "{p}");
    }

    #[test]
    fn potential_outcome_consistency() {
        let cfg = SimConfig::default();
        for i in 0..5000 {
            let arm = if i % 2 == 0 { Arm::Placebo } else { Arm::Active };
            let s = simulate_subject(i, arm, &cfg, &mut stream(i as u64));
            let first_ice = match (s.disc_after_visit, s.sympt_after_visit) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            let upto = first_ice.unwrap_or(cfg.n_visits() - 1);
            for v in 0..=upto {
                assert_eq!(s.y_hypothetical[v], s.y_mixed[v]);
                assert_eq!(s.y_mixed[v], s.y_policy[v]);
            }
            if s.disc_after_visit.is_none() || arm == Arm::Placebo {
                assert_eq!(s.y_mixed, s.y_hypothetical);
            }
            if s.sympt_after_visit.is_none() {
                assert_eq!(s.y_policy, s.y_mixed);
            }
            if let Some(d) = s.sympt_drop {
                assert!((-25.0..=0.0).contains(&d));
            }
            for (v, o) in s.observed.iter().enumerate() {
                let should_miss = s.dropped_out && v > s.disc_after_visit.unwrap();
                assert_eq!(o.is_none(), should_miss);
                if let Some(y) = o {
                    assert_eq!(*y, s.y_policy[v]);
                }
            }
            assert!(s.disc_after_visit.map_or(true, |k| k < cfg.n_visits() - 1));
            assert!(s.sympt_after_visit.map_or(true, |k| k >= 1 && k < cfg.n_visits() - 1));
        }
    }

    #[test]
    fn trial_shapes_and_determinism() {
        let cfg = SimConfig::default();
        let f = StreamFactory::new(11, 0);
        let one = simulate_trial(1, &cfg, f).unwrap();
        assert_eq!(one.subjects.len(), 2);
        assert_eq!(one.n_per_arm(Arm::Placebo), 1);
        let a = simulate_trial(300, &cfg, f).unwrap();
        let b = simulate_trial(300, &cfg, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.subjects.len(), 600);
        let mut ids: Vec<_> = a.subjects.iter().map(|s| s.subject_id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 600);
        assert!(simulate_trial(0, &cfg, f).is_err());
    }

    #[test]
    fn analytic_mixed_values() {
        let cfg = SimConfig::default();
        let eff = analytic_mixed_truth(&cfg).unwrap();
        assert!((eff + 3.6004).abs() < 1e-4, "{eff}");
        // geometric sum term on its own
        let q: f64 = 0.03;
        let sum: f64 = (0..6).map(|k| q * (1.0 - q).powi(k) * (1.0 - k as f64 / 6.0)).sum();
        assert!((sum - 0.099905).abs() < 1e-6);

        let mut no_disc = cfg.clone();
        no_disc.disc_prob_per_visit.active = 0.0;
        assert_eq!(analytic_mixed_truth(&no_disc).unwrap(), -4.0);

        let mut null = cfg.clone();
        null.active_slope = null.placebo_slope;
        assert_eq!(analytic_mixed_truth(&null).unwrap(), 0.0);
        assert_eq!(analytic_hypothetical_truth(&cfg), -4.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = SimConfig::default();
        c.visit_months = vec![0.0, 2.0, 2.0];
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.dropout_prob_after_disc = 1.5;
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.corr_int_slope = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_layout() {
        let cfg = SimConfig::default();
        let d = simulate_trial(2, &cfg, StreamFactory::new(3, 0)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "subject_id,arm,visit_month,y_observed,y_hypothetical,y_mixed,y_policy,disc_after_month,sympt_after_month,dropped_out"
        );
        assert_eq!(lines.count(), 4 * 7);
    }
}
