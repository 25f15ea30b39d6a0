//! Sampling and reference distributions.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

use super::linalg::{cholesky, SymMatrix};
use crate::error::{Error, Result};

/// Above this many degrees of freedom the t reference is replaced by the
/// standard normal; the difference is below 1e-9 in the two-sided p-value
/// for any |t| where it matters.
const NORMAL_LIMIT_DF: f64 = 1e7;

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `lo + (hi - lo)·B` with `B ~ Beta(alpha, beta)`, sampled as a ratio of
/// two Gamma variates.
pub fn sample_scaled_beta<R: Rng + ?Sized>(
    rng: &mut R,
    alpha: f64,
    beta: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    assert!(alpha > 0.0 && beta > 0.0, "beta shapes must be positive");
    assert!(lo <= hi, "empty range [{lo}, {hi}]");
    if lo == hi {
        return lo;
    }
    let x: f64 = Gamma::new(alpha, 1.0).expect("alpha > 0").sample(rng);
    let y: f64 = Gamma::new(beta, 1.0).expect("beta > 0").sample(rng);
    let b = x / (x + y);
    (lo + (hi - lo) * b).clamp(lo, hi)
}

/// Draw from the inverse-Wishart law `IW(scale, dof)`, whose mean is
/// `scale / (dof - dim - 1)`.
///
/// Uses the Bartlett decomposition: with `scale = L·Lᵀ` and `A` the
/// Bartlett lower-triangular factor, `Σ = (L·A⁻ᵀ)(L·A⁻ᵀ)ᵀ`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    rng: &mut R,
    scale: &SymMatrix,
    dof: f64,
) -> Result<SymMatrix> {
    let p = scale.dim();
    if !(dof > p as f64 - 1.0) {
        return Err(Error::InvalidInput(format!(
            "inverse-Wishart needs dof > {} (got {dof})",
            p as f64 - 1.0
        )));
    }
    let l = cholesky(scale)?;
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi: f64 = ChiSquared::new(dof - i as f64)
            .expect("positive dof")
            .sample(rng);
        a[(i, i)] = chi.sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    // T = L·A⁻ᵀ, i.e. Tᵀ solves A·Tᵀ = Lᵀ.
    let t_t = a
        .solve_lower_triangular(&l.transpose())
        .ok_or(Error::NotPositiveDefinite {
            pivot: 0,
            value: 0.0,
        })?;
    let sigma = SymMatrix::symmetrize(t_t.transpose() * &t_t);
    cholesky(&sigma)?;
    Ok(sigma)
}

/// Two-sided p-value `2·(1 − F_t(|t|; df))`.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    assert!(df > 0.0, "df must be positive");
    if t.is_nan() {
        return f64::NAN;
    }
    let x = -t.abs();
    let tail = if df >= NORMAL_LIMIT_DF {
        Normal::new(0.0, 1.0).expect("unit normal").cdf(x)
    } else {
        StudentsT::new(0.0, 1.0, df).expect("df > 0").cdf(x)
    };
    (2.0 * tail).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Quantile of the standard t distribution.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    assert!(df > 0.0 && (0.0..=1.0).contains(&p));
    if df >= NORMAL_LIMIT_DF {
        Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
    } else {
        let t = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        let mut x = t.inverse_cdf(p);
        if x.is_finite() {
            // statrs stops around 1e-9 in probability; Newton on the cdf.
            for _ in 0..3 {
                let step = (t.cdf(x) - p) / t.pdf(x);
                if !step.is_finite() {
                    break;
                }
                x -= step;
            }
        }
        x
    }
}
