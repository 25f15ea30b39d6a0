//! Per-imputation ANCOVA and Rubin's rules.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{student_t_quantile, student_t_two_sided_p};
use crate::sim::Arm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AncovaResult {
    /// Active minus placebo.
    pub estimate: f64,
    pub variance: f64,
    pub baseline_coef: f64,
    pub residual_df: f64,
}

/// OLS of final-visit change on intercept, arm indicator and baseline.
pub fn ancova(changes: &[f64], baselines: &[f64], arms: &[Arm]) -> Result<AncovaResult> {
    let n = changes.len();
    if baselines.len() != n || arms.len() != n {
        return Err(Error::InvalidInput("ancova inputs differ in length".into()));
    }
    let n_active = arms.iter().filter(|&&a| a == Arm::Active).count();
    if n_active == 0 || n_active == n {
        return Err(Error::Singular("an arm has no subjects".into()));
    }
    if n <= 3 {
        return Err(Error::Singular("no residual degrees of freedom".into()));
    }
    // Centre the baseline so the normal equations stay well scaled.
    let centre = baselines.iter().sum::<f64>() / n as f64;
    let spread = baselines.iter().map(|b| (b - centre).abs()).fold(0.0, f64::max);
    if !(spread > 1e-12 * centre.abs().max(1.0)) {
        return Err(Error::Singular("baseline is constant".into()));
    }
    let mut xtx = Matrix3::<f64>::zeros();
    let mut xty = Vector3::<f64>::zeros();
    for i in 0..n {
        let x = Vector3::new(1.0, arms[i].indicator(), baselines[i] - centre);
        xtx += x * x.transpose();
        xty += x * changes[i];
    }
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::Singular("ancova normal equations are singular".into()))?;
    let coef = inv * xty;
    let rss: f64 = (0..n)
        .map(|i| {
            let fitted = coef[0] + coef[1] * arms[i].indicator() + coef[2] * (baselines[i] - centre);
            (changes[i] - fitted).powi(2)
        })
        .sum();
    let residual_df = (n - 3) as f64;
    let variance = rss / residual_df * inv[(1, 1)];
    if !coef.iter().all(|c| c.is_finite()) || !variance.is_finite() {
        return Err(Error::Singular("ancova produced non-finite values".into()));
    }
    Ok(AncovaResult {
        estimate: coef[1],
        variance,
        baseline_coef: coef[2],
        residual_df,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledResult {
    pub estimate: f64,
    pub std_error: f64,
    pub df: f64,
    pub p_value: f64,
    /// 95% interval on the pooled t reference.
    pub ci_low: f64,
    pub ci_high: f64,
    pub m: usize,
    pub within: f64,
    pub between: f64,
}

/// Rubin's rules with the Barnard–Rubin small-sample degrees of freedom:
///
/// ```text
/// V = W + (1 + 1/M) B,   λ = (1 + 1/M) B / V
/// ν_m = (M − 1) / λ²,    ν_obs = (ν_com + 1)/(ν_com + 3) · ν_com · (1 − λ)
/// 1/ν = 1/ν_m + 1/ν_obs
/// ```
pub fn rubin_pool(estimates: &[f64], variances: &[f64], df_com: f64) -> Result<PooledResult> {
    let m = estimates.len();
    if m < 2 || variances.len() != m {
        return Err(Error::InvalidInput(format!(
            "pooling needs at least two paired estimates and variances (got {m} and {})",
            variances.len()
        )));
    }
    if variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || estimates.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidInput("non-finite estimate or invalid variance".into()));
    }
    let mf = m as f64;
    let estimate = estimates.iter().sum::<f64>() / mf;
    let between = estimates.iter().map(|e| (e - estimate).powi(2)).sum::<f64>() / (mf - 1.0);
    let within = variances.iter().sum::<f64>() / mf;
    let inflated = (1.0 + 1.0 / mf) * between;
    let total = within + inflated;
    if !(total > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let lambda = inflated / total;
    let nu_obs = (df_com + 1.0) / (df_com + 3.0) * df_com * (1.0 - lambda);
    let df = if lambda == 0.0 {
        nu_obs
    } else {
        let nu_m = (mf - 1.0) / (lambda * lambda);
        1.0 / (1.0 / nu_m + 1.0 / nu_obs)
    };
    let std_error = total.sqrt();
    let q = student_t_quantile(0.975, df);
    Ok(PooledResult {
        estimate,
        std_error,
        df,
        p_value: student_t_two_sided_p(estimate / std_error, df),
        ci_low: estimate - q * std_error,
        ci_high: estimate + q * std_error,
        m,
        within,
        between,
    })
}


/// ANCOVA at the final visit of every completed dataset, pooled with
/// `ν_com` equal to the ANCOVA residual df.
pub fn analyze_imputed(set: &crate::mi::ImputedSet) -> Result<PooledResult> {
    let mut estimates = Vec::with_capacity(set.m());
    let mut variances = Vec::with_capacity(set.m());
    let mut df_com = f64::NAN;
    for k in 0..set.m() {
        let r = ancova(&set.final_visit(k), &set.baselines, &set.arms)?;
        estimates.push(r.estimate);
        variances.push(r.variance);
        df_com = r.residual_df;
    }
    rubin_pool(&estimates, &variances, df_com)
}
