//! From simulated trials to per-estimator analysis datasets.
//!
//! Visit indices in [`SubjectRecord`] cover the full grid (0 = baseline);
//! analysis datasets keep only post-baseline visits, so post-baseline index
//! `j` is grid visit `j + 1`. An event "after visit k" affects post-baseline
//! indices `j >= k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::sim::{Arm, Estimand, SubjectRecord, TrialDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorName {
    #[serde(rename = "MAR_HYP")]
    MarHyp,
    #[serde(rename = "MAR_MIX")]
    MarMix,
    #[serde(rename = "CIR_MIX")]
    CirMix,
    #[serde(rename = "TV1_MIX")]
    Tv1Mix,
    #[serde(rename = "TV2_MIX")]
    Tv2Mix,
    #[serde(rename = "MAR_TP")]
    MarTp,
    #[serde(rename = "TV3_TP")]
    Tv3Tp,
    #[serde(rename = "TV4_TP")]
    Tv4Tp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Imputation {
    Mar,
    Cir,
}

/// Time-varying covariates added to the imputation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvScheme {
    None,
    PostDiscIndicator,
    TimeSinceDisc,
    PostDiscIndicatorSympt,
    TimeSinceDiscSympt,
}

impl TvScheme {
    /// Number of tv columns before adding treatment interactions.
    pub fn n_base_columns(self) -> usize {
        match self {
            TvScheme::None => 0,
            TvScheme::PostDiscIndicator | TvScheme::TimeSinceDisc => 1,
            TvScheme::PostDiscIndicatorSympt | TvScheme::TimeSinceDiscSympt => 2,
        }
    }

    /// Total tv columns in the design (each with its arm interaction).
    pub fn n_columns(self) -> usize {
        2 * self.n_base_columns()
    }
}

/// One row of the estimator table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub name: EstimatorName,
    pub estimand: Estimand,
    pub imputation: Imputation,
    pub tv_scheme: TvScheme,
}

impl EstimatorName {
    pub const ALL: [EstimatorName; 8] = [
        EstimatorName::MarHyp,
        EstimatorName::MarMix,
        EstimatorName::CirMix,
        EstimatorName::Tv1Mix,
        EstimatorName::Tv2Mix,
        EstimatorName::MarTp,
        EstimatorName::Tv3Tp,
        EstimatorName::Tv4Tp,
    ];

    pub fn spec(self) -> EstimatorSpec {
        use Estimand::*;
        use EstimatorName::*;
        let (estimand, imputation, tv_scheme) = match self {
            MarHyp => (Hypothetical, Imputation::Mar, TvScheme::None),
            MarMix => (Mixed, Imputation::Mar, TvScheme::None),
            CirMix => (Mixed, Imputation::Cir, TvScheme::None),
            Tv1Mix => (Mixed, Imputation::Mar, TvScheme::PostDiscIndicator),
            Tv2Mix => (Mixed, Imputation::Mar, TvScheme::TimeSinceDisc),
            MarTp => (Policy, Imputation::Mar, TvScheme::None),
            Tv3Tp => (Policy, Imputation::Mar, TvScheme::PostDiscIndicatorSympt),
            Tv4Tp => (Policy, Imputation::Mar, TvScheme::TimeSinceDiscSympt),
        };
        EstimatorSpec {
            name: self,
            estimand,
            imputation,
            tv_scheme,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorName::MarHyp => "MAR_HYP",
            EstimatorName::MarMix => "MAR_MIX",
            EstimatorName::CirMix => "CIR_MIX",
            EstimatorName::Tv1Mix => "TV1_MIX",
            EstimatorName::Tv2Mix => "TV2_MIX",
            EstimatorName::MarTp => "MAR_TP",
            EstimatorName::Tv3Tp => "TV3_TP",
            EstimatorName::Tv4Tp => "TV4_TP",
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for EstimatorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        EstimatorName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSubject {
    pub subject_id: usize,
    pub arm: Arm,
    pub baseline: f64,
    /// Change from baseline per post-baseline visit; `None` when missing
    /// for this estimand.
    pub outcomes: Vec<Option<f64>>,
    /// Whether the outcome enters the imputation model fit.
    pub fit_eligible: Vec<bool>,
    /// `[visit][column]`, empty rows when the estimator has no tv scheme.
    pub tv: Vec<Vec<f64>>,
    /// Grid visit index after which study treatment was discontinued.
    pub disc_after_visit: Option<usize>,
    pub sympt_after_visit: Option<usize>,
}

impl AnalysisSubject {
    pub fn n_present(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDataset {
    pub spec: EstimatorSpec,
    /// Post-baseline visit times in months.
    pub visit_months: Vec<f64>,
    pub subjects: Vec<AnalysisSubject>,
}

impl AnalysisDataset {
    pub fn n_visits(&self) -> usize {
        self.visit_months.len()
    }

    pub fn n_missing(&self) -> usize {
        self.subjects
            .iter()
            .map(|s| s.outcomes.len() - s.n_present())
            .sum()
    }
}

fn after(event: Option<usize>, grid_visit: usize) -> bool {
    matches!(event, Some(k) if grid_visit > k)
}

fn first_of(a: Option<usize>, b: Option<usize>) -> Option<usize> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, y) => x.or(y),
    }
}

/// Time-varying covariate values for one subject, `[post-baseline visit][column]`.
/// Column order: discontinuation term, its arm interaction, then (if the
/// scheme has one) the symptomatic indicator and its arm interaction.
pub fn subject_tv_covariates(s: &SubjectRecord, visit_months: &[f64], scheme: TvScheme) -> Vec<Vec<f64>> {
    let arm = s.arm.indicator();
    (1..visit_months.len())
        .map(|v| {
            let disc_term = match (scheme, s.disc_after_visit) {
                (TvScheme::None, _) => return Vec::new(),
                (_, Some(k)) if v > k => match scheme {
                    TvScheme::PostDiscIndicator | TvScheme::PostDiscIndicatorSympt => 1.0,
                    _ => (visit_months[v] - visit_months[k]) / 12.0,
                },
                _ => 0.0,
            };
            let mut row = vec![disc_term, disc_term * arm];
            if scheme.n_base_columns() == 2 {
                let sympt = if after(s.sympt_after_visit, v) { 1.0 } else { 0.0 };
                row.push(sympt);
                row.push(sympt * arm);
            }
            row
        })
        .collect()
}

/// Time-varying covariates for every subject of a trial.
pub fn build_tv_covariates(data: &TrialDataset, scheme: TvScheme) -> Vec<Vec<Vec<f64>>> {
    data.subjects
        .iter()
        .map(|s| subject_tv_covariates(s, &data.config.visit_months, scheme))
        .collect()
}

/// Applies the estimand's intercurrent-event strategy and dropout to the
/// observed data and converts outcomes to change from baseline.
///
/// * hypothetical: visits after the first event are missing;
/// * mixed: visits after symptomatic initiation are missing;
/// * treatment policy: only dropout removes data.
///
/// Under CIR, observed outcomes after discontinuation stay present but are
/// excluded from the imputation model fit.
pub fn mask_for_estimand(data: &TrialDataset, spec: &EstimatorSpec) -> AnalysisDataset {
    let months = &data.config.visit_months;
    let subjects = data
        .subjects
        .iter()
        .map(|s| {
            let baseline = s.observed[0].expect("baseline is always observed");
            let cutoff = match spec.estimand {
                Estimand::Hypothetical => first_of(s.disc_after_visit, s.sympt_after_visit),
                Estimand::Mixed => s.sympt_after_visit,
                Estimand::Policy => None,
            };
            let outcomes: Vec<Option<f64>> = (1..months.len())
                .map(|v| {
                    if after(cutoff, v) {
                        None
                    } else {
                        s.observed[v].map(|y| y - baseline)
                    }
                })
                .collect();
            let fit_eligible = outcomes
                .iter()
                .enumerate()
                .map(|(j, o)| {
                    o.is_some()
                        && !(spec.imputation == Imputation::Cir && after(s.disc_after_visit, j + 1))
                })
                .collect();
            AnalysisSubject {
                subject_id: s.subject_id,
                arm: s.arm,
                baseline,
                outcomes,
                fit_eligible,
                tv: subject_tv_covariates(s, months, spec.tv_scheme),
                disc_after_visit: s.disc_after_visit,
                sympt_after_visit: s.sympt_after_visit,
            }
        })
        .collect();
    AnalysisDataset {
        spec: *spec,
        visit_months: months[1..].to_vec(),
        subjects,
    }
}
