//! Design matrices for the imputation model.
//!
//! Column layout for `J` post-baseline visits and `T` tv columns:
//!
//! | columns          | meaning                         |
//! |------------------|---------------------------------|
//! | `0 .. J`         | placebo × visit cell means       |
//! | `J .. 2J`        | active × visit cell means        |
//! | `2J .. 3J`       | baseline score × visit           |
//! | `3J .. 3J + T`   | tv covariates and interactions   |
//!
//! Arm-by-visit cells are the usual treatment + visit + treatment-by-visit
//! parameterization written as cell means. Each row is stored sparsely;
//! zero tv values are dropped.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::{AnalysisDataset, TvScheme};
use crate::numerics::linalg::pivoted_rank;
use crate::sim::Arm;

/// Relative tolerance for the rank check on fit-eligible rows.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub n_visits: usize,
    pub tv_scheme: TvScheme,
}

impl DesignSpec {
    pub fn new(n_visits: usize, tv_scheme: TvScheme) -> Self {
        DesignSpec { n_visits, tv_scheme }
    }

    pub fn for_dataset(data: &AnalysisDataset) -> Self {
        DesignSpec::new(data.n_visits(), data.spec.tv_scheme)
    }

    pub fn n_columns(&self) -> usize {
        3 * self.n_visits + self.tv_scheme.n_columns()
    }

    pub fn cell_column(&self, arm: Arm, visit: usize) -> usize {
        arm.index() * self.n_visits + visit
    }

    pub fn baseline_column(&self, visit: usize) -> usize {
        2 * self.n_visits + visit
    }

    pub fn tv_column(&self, c: usize) -> usize {
        3 * self.n_visits + c
    }

    /// Mean change at `visit` for a subject with this baseline had they
    /// been in `arm`, ignoring tv columns.
    pub fn arm_mean(&self, beta: &DVector<f64>, arm: Arm, baseline: f64, visit: usize) -> f64 {
        beta[self.cell_column(arm, visit)] + beta[self.baseline_column(visit)] * baseline
    }
}

pub type SparseRow = Vec<(usize, f64)>;

pub fn row_dot(row: &SparseRow, beta: &DVector<f64>) -> f64 {
    row.iter().map(|&(c, v)| v * beta[c]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDesign {
    pub subject_id: usize,
    pub arm: Arm,
    pub baseline: f64,
    pub disc_after_visit: Option<usize>,
    /// One sparse design row per post-baseline visit.
    pub rows: Vec<SparseRow>,
    /// Present outcomes (change from baseline).
    pub y: Vec<Option<f64>>,
    /// Present and used by the imputation model fit.
    pub fit: Vec<bool>,
}

impl SubjectDesign {
    pub fn fit_indices(&self) -> Vec<usize> {
        (0..self.fit.len()).filter(|&j| self.fit[j]).collect()
    }

    pub fn present_indices(&self) -> Vec<usize> {
        (0..self.y.len()).filter(|&j| self.y[j].is_some()).collect()
    }

    pub fn mean(&self, beta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| row_dot(r, beta)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub spec: DesignSpec,
    pub subjects: Vec<SubjectDesign>,
}

impl Design {
    pub fn n_columns(&self) -> usize {
        self.spec.n_columns()
    }

    /// Dense stack of every fit-eligible row.
    pub fn fit_rows_dense(&self) -> DMatrix<f64> {
        let n_rows: usize = self
            .subjects
            .iter()
            .map(|s| s.fit.iter().filter(|&&f| f).count())
            .sum();
        let mut x = DMatrix::zeros(n_rows, self.n_columns());
        let mut r = 0;
        for s in &self.subjects {
            for j in s.fit_indices() {
                for &(c, v) in &s.rows[j] {
                    x[(r, c)] = v;
                }
                r += 1;
            }
        }
        x
    }

    /// Rank of the stacked fit-eligible rows.
    pub fn fit_rank(&self) -> usize {
        pivoted_rank(&self.fit_rows_dense(), RANK_TOL)
    }
}

/// Builds per-subject design rows and checks that the fit-eligible rows
/// identify every coefficient.
pub fn build_design(data: &AnalysisDataset, spec: &DesignSpec) -> Result<Design> {
    let design = build_design_unchecked(data, spec)?;
    let rank = design.fit_rank();
    if rank < design.n_columns() {
        return Err(Error::RankDeficient {
            rank,
            columns: design.n_columns(),
        });
    }
    Ok(design)
}

/// [`build_design`] without the rank check.
pub fn build_design_unchecked(data: &AnalysisDataset, spec: &DesignSpec) -> Result<Design> {
    let j_count = spec.n_visits;
    if data.n_visits() != j_count {
        return Err(Error::InvalidInput(format!(
            "dataset has {} visits, design expects {j_count}",
            data.n_visits()
        )));
    }
    let n_tv = spec.tv_scheme.n_columns();
    let subjects = data
        .subjects
        .iter()
        .map(|s| {
            if s.outcomes.len() != j_count || (n_tv > 0 && s.tv.len() != j_count) {
                return Err(Error::InvalidInput(format!(
                    "subject {} has an inconsistent visit grid",
                    s.subject_id
                )));
            }
            let rows = (0..j_count)
                .map(|j| {
                    let mut row = vec![
                        (spec.cell_column(s.arm, j), 1.0),
                        (spec.baseline_column(j), s.baseline),
                    ];
                    for c in 0..n_tv {
                        let v = s.tv[j][c];
                        if v != 0.0 {
                            row.push((spec.tv_column(c), v));
                        }
                    }
                    row
                })
                .collect();
            Ok(SubjectDesign {
                subject_id: s.subject_id,
                arm: s.arm,
                baseline: s.baseline,
                disc_after_visit: s.disc_after_visit,
                rows,
                y: s.outcomes.clone(),
                fit: s.fit_eligible.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Design {
        spec: *spec,
        subjects,
    })
}
