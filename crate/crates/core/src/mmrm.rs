//! Frequentist MMRM fit with a common unstructured covariance.
//!
//! The fixed effects are profiled out by generalized least squares, and the
//! (restricted) log-likelihood is maximized over the log-Cholesky factor of
//! `Σ` with BFGS and an analytic gradient. Only fit-eligible outcomes enter;
//! subjects without any are skipped.
//!
//! For a subject with observed coordinates `o`, design rows `X` and
//! residual `r = y - Xβ`:
//!
//! ```text
//! ML:   ℓ = -½ Σᵢ [ nᵢ log 2π + log|Σᵢ| + rᵢᵀ Σᵢ⁻¹ rᵢ ]
//! REML: ℓ = -½ Σᵢ [ log|Σᵢ| + rᵢᵀ Σᵢ⁻¹ rᵢ ] - ½ log|A| - ½ (N - p) log 2π
//! A = Σᵢ Xᵢᵀ Σᵢ⁻¹ Xᵢ,   Σᵢ = Σ[o, o]
//! ```

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::{row_dot, Design, SparseRow};
use crate::error::{Error, FailureKind, Result};
use crate::numerics::linalg::{cholesky, cholesky_solve, inverse_from_cholesky, log_det_from_cholesky};
use crate::numerics::SymMatrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Reml,
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmrmOptions {
    pub method: Method,
    pub max_iter: usize,
    /// Relative change in the objective between iterations.
    pub rel_tol: f64,
    /// Euclidean norm of the gradient in log-Cholesky coordinates.
    pub grad_tol: f64,
}

impl Default for MmrmOptions {
    fn default() -> Self {
        MmrmOptions {
            method: Method::Reml,
            max_iter: 500,
            rel_tol: 1e-8,
            grad_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmrmFit {
    pub beta: DVector<f64>,
    pub sigma: SymMatrix,
    /// `(Σᵢ XᵢᵀΣᵢ⁻¹Xᵢ)⁻¹` at the optimum.
    pub beta_vcov: SymMatrix,
    /// Maximized objective: restricted log-likelihood under REML, ordinary
    /// log-likelihood under ML.
    pub loglik: f64,
    pub converged: bool,
    pub n_iterations: usize,
    pub method: Method,
    pub n_subjects: usize,
    pub n_obs: usize,
}

struct FitSubject<'a> {
    rows: Vec<&'a SparseRow>,
    y: Vec<f64>,
}

struct Pattern<'a> {
    obs: Vec<usize>,
    members: Vec<FitSubject<'a>>,
}

/// Fit-eligible data grouped by observation pattern.
struct Problem<'a> {
    n_visits: usize,
    p: usize,
    n_obs: usize,
    n_subjects: usize,
    patterns: Vec<Pattern<'a>>,
}

impl<'a> Problem<'a> {
    fn new(design: &'a Design) -> Self {
        let mut groups: BTreeMap<Vec<usize>, Vec<FitSubject<'a>>> = BTreeMap::new();
        let mut n_obs = 0;
        let mut n_subjects = 0;
        for s in &design.subjects {
            let obs = s.fit_indices();
            if obs.is_empty() {
                continue;
            }
            n_obs += obs.len();
            n_subjects += 1;
            let member = FitSubject {
                rows: obs.iter().map(|&j| &s.rows[j]).collect(),
                y: obs.iter().map(|&j| s.y[j].expect("fit-eligible implies present")).collect(),
            };
            groups.entry(obs).or_default().push(member);
        }
        Problem {
            n_visits: design.spec.n_visits,
            p: design.n_columns(),
            n_obs,
            n_subjects,
            patterns: groups
                .into_iter()
                .map(|(obs, members)| Pattern { obs, members })
                .collect(),
        }
    }
}

struct Evaluation {
    loglik: f64,
    beta: DVector<f64>,
    a_inv: SymMatrix,
    /// `∂ℓ/∂Σ` as a symmetric matrix `G` with `dℓ = tr(G dΣ)`.
    grad_sigma: Option<DMatrix<f64>>,
}

fn quad_pairs(rows: &[&SparseRow], w: &DMatrix<f64>, a: &mut DMatrix<f64>) {
    for (ia, ra) in rows.iter().enumerate() {
        for (ib, rb) in rows.iter().enumerate() {
            let wab = w[(ia, ib)];
            for &(c1, v1) in ra.iter() {
                for &(c2, v2) in rb.iter() {
                    a[(c1, c2)] += wab * v1 * v2;
                }
            }
        }
    }
}

fn evaluate(problem: &Problem, sigma: &SymMatrix, method: Method, want_grad: bool) -> Result<Evaluation> {
    let p = problem.p;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut log_det_sum = 0.0;
    let mut inverses = Vec::with_capacity(problem.patterns.len());

    for pat in &problem.patterns {
        let s_oo = sigma.select(&pat.obs);
        let l = cholesky(&s_oo)?;
        log_det_sum += pat.members.len() as f64 * log_det_from_cholesky(&l);
        let w = inverse_from_cholesky(&l).into_inner();
        for m in &pat.members {
            quad_pairs(&m.rows, &w, &mut a);
            for (ia, ra) in m.rows.iter().enumerate() {
                let wy: f64 = (0..m.y.len()).map(|ib| w[(ia, ib)] * m.y[ib]).sum();
                for &(c, v) in ra.iter() {
                    b[c] += v * wy;
                }
            }
        }
        inverses.push((s_oo, w));
    }

    let a_sym = SymMatrix::symmetrize(a);
    let l_a = cholesky(&a_sym).map_err(|_| Error::RankDeficient {
        rank: 0,
        columns: p,
    })?;
    let beta = cholesky_solve(&l_a, &b);
    let a_inv = inverse_from_cholesky(&l_a);

    let mut quad = 0.0;
    let mut grad = want_grad.then(|| DMatrix::<f64>::zeros(problem.n_visits, problem.n_visits));
    for (pat, (s_oo, w)) in problem.patterns.iter().zip(&inverses) {
        let k = pat.obs.len();
        let mut scatter = DMatrix::<f64>::zeros(k, k);
        for m in &pat.members {
            let r = DVector::from_iterator(k, (0..k).map(|i| m.y[i] - row_dot(m.rows[i], &beta)));
            quad += (w * &r).dot(&r);
            if grad.is_some() {
                scatter += &r * r.transpose();
                if method == Method::Reml {
                    for ia in 0..k {
                        for ib in 0..k {
                            let mut acc = 0.0;
                            for &(c1, v1) in m.rows[ia].iter() {
                                for &(c2, v2) in m.rows[ib].iter() {
                                    acc += v1 * v2 * a_inv.get(c1, c2);
                                }
                            }
                            scatter[(ia, ib)] += acc;
                        }
                    }
                }
            }
        }
        if let Some(g) = grad.as_mut() {
            let centred = scatter - s_oo.as_matrix() * pat.members.len() as f64;
            let gp = w * centred * w * 0.5;
            for ia in 0..k {
                for ib in 0..k {
                    g[(pat.obs[ia], pat.obs[ib])] += gp[(ia, ib)];
                }
            }
        }
    }

    let n = problem.n_obs as f64;
    let loglik = match method {
        Method::Ml => -0.5 * (n * LN_2PI + log_det_sum + quad),
        Method::Reml => {
            -0.5 * ((n - p as f64) * LN_2PI + log_det_sum + quad + log_det_from_cholesky(&l_a))
        }
    };
    if !loglik.is_finite() {
        return Err(Error::ConvergenceFailure {
            kind: FailureKind::Nonfinite,
            iterations: 0,
            objective: loglik,
        });
    }
    Ok(Evaluation {
        loglik,
        beta,
        a_inv,
        grad_sigma: grad,
    })
}

/// Log-Cholesky coordinates: lower-triangular entries column by column,
/// with the diagonal on the log scale.
fn theta_to_factor(theta: &[f64], n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            l[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
            k += 1;
        }
    }
    l
}

fn factor_to_theta(l: &DMatrix<f64>) -> Vec<f64> {
    let n = l.nrows();
    let mut theta = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in j..n {
            theta.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    theta
}

fn sigma_from_theta(theta: &[f64], n: usize) -> SymMatrix {
    let l = theta_to_factor(theta, n);
    SymMatrix::symmetrize(&l * l.transpose())
}

/// Objective `-ℓ` and its gradient in log-Cholesky coordinates.
fn objective(problem: &Problem, theta: &[f64], method: Method) -> Result<(f64, Vec<f64>, Evaluation)> {
    let n = problem.n_visits;
    let l = theta_to_factor(theta, n);
    let sigma = SymMatrix::symmetrize(&l * l.transpose());
    let ev = evaluate(problem, &sigma, method, true)?;
    let g = ev.grad_sigma.as_ref().expect("gradient requested");
    let gl = g * &l * 2.0;
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..n {
        for i in j..n {
            let d = if i == j { gl[(i, j)] * l[(i, j)] } else { gl[(i, j)] };
            grad.push(-d);
        }
    }
    if grad.iter().any(|x| !x.is_finite()) {
        grad = numeric_gradient(problem, theta, method)?;
    }
    Ok((-ev.loglik, grad, ev))
}

fn numeric_gradient(problem: &Problem, theta: &[f64], method: Method) -> Result<Vec<f64>> {
    let n = problem.n_visits;
    let mut out = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let h = 1e-5 * theta[k].abs().max(1.0);
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[k] += h;
        tm[k] -= h;
        let fp = evaluate(problem, &sigma_from_theta(&tp, n), method, false)?.loglik;
        let fm = evaluate(problem, &sigma_from_theta(&tm, n), method, false)?.loglik;
        out.push(-(fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// GLS coefficients at a given covariance.
pub fn profiled_beta(design: &Design, sigma: &SymMatrix) -> Result<DVector<f64>> {
    Ok(evaluate(&Problem::new(design), sigma, Method::Ml, false)?.beta)
}

/// Restricted log-likelihood at `sigma` with `β` profiled out.
pub fn reml_loglik(design: &Design, sigma: &SymMatrix) -> Result<f64> {
    Ok(evaluate(&Problem::new(design), sigma, Method::Reml, false)?.loglik)
}

/// Gaussian log-likelihood of the fit-eligible outcomes at `(β, Σ)`.
pub fn observed_loglik(beta: &DVector<f64>, sigma: &SymMatrix, design: &Design) -> Result<f64> {
    let mut total = 0.0;
    for s in &design.subjects {
        let obs = s.fit_indices();
        if obs.is_empty() {
            continue;
        }
        let l = cholesky(&sigma.select(&obs))?;
        let r = DVector::from_iterator(
            obs.len(),
            obs.iter()
                .map(|&j| s.y[j].expect("fit-eligible implies present") - row_dot(&s.rows[j], beta)),
        );
        let z = l.solve_lower_triangular(&r).expect("positive diagonal");
        total -= 0.5 * (obs.len() as f64 * LN_2PI + log_det_from_cholesky(&l) + z.norm_squared());
    }
    Ok(total)
}

/// Starting covariance: pairwise-complete covariance of OLS residuals,
/// with eigenvalues floored at `1e-6·trace/J`.
fn starting_sigma(problem: &Problem, design: &Design) -> Result<SymMatrix> {
    let n = problem.n_visits;
    let beta = evaluate(problem, &SymMatrix::identity(n), Method::Ml, false)?.beta;
    let mut sums = DMatrix::<f64>::zeros(n, n);
    let mut sum_a = DMatrix::<f64>::zeros(n, n);
    let mut sum_b = DMatrix::<f64>::zeros(n, n);
    let mut counts = DMatrix::<f64>::zeros(n, n);
    for s in &design.subjects {
        let r: Vec<Option<f64>> = (0..n)
            .map(|j| s.fit[j].then(|| s.y[j].expect("fit-eligible implies present") - row_dot(&s.rows[j], &beta)))
            .collect();
        for a in 0..n {
            for b in 0..n {
                if let (Some(ra), Some(rb)) = (r[a], r[b]) {
                    sums[(a, b)] += ra * rb;
                    sum_a[(a, b)] += ra;
                    sum_b[(a, b)] += rb;
                    counts[(a, b)] += 1.0;
                }
            }
        }
    }
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let c = counts[(a, b)];
            if c >= 2.0 {
                cov[(a, b)] = (sums[(a, b)] - sum_a[(a, b)] * sum_b[(a, b)] / c) / (c - 1.0);
            }
        }
    }
    for a in 0..n {
        if !(cov[(a, a)] > 0.0) {
            cov[(a, a)] = 1.0;
        }
    }
    let cov = SymMatrix::symmetrize(cov).into_inner();
    let floor = 1e-6 * cov.trace() / n as f64;
    let eig = SymmetricEigen::new(cov);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    Ok(SymMatrix::symmetrize(repaired))
}

/// Fits the imputation model with default options (REML).
pub fn fit_mmrm(design: &Design) -> Result<MmrmFit> {
    fit_mmrm_with(design, &MmrmOptions::default())
}

pub fn fit_mmrm_with(design: &Design, opts: &MmrmOptions) -> Result<MmrmFit> {
    let problem = Problem::new(design);
    let p = problem.p;
    if problem.n_obs <= p {
        return Err(Error::RankDeficient {
            rank: problem.n_obs,
            columns: p,
        });
    }
    let n = problem.n_visits;
    let sigma0 = starting_sigma(&problem, design)?;
    let mut theta = factor_to_theta(&cholesky(&sigma0)?);
    let (mut f, mut g, mut ev) = objective(&problem, &theta, opts.method)?;

    let dim = theta.len();
    let mut h_inv = DMatrix::<f64>::identity(dim, dim);
    let mut scaled = false;
    let max_step = 2.0;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&h_inv * &gv);
        if dir.dot(&gv) >= 0.0 {
            h_inv = DMatrix::identity(dim, dim);
            scaled = false;
            dir = -gv.clone();
        }
        let dn = dir.norm();
        if dn > max_step {
            dir *= max_step / dn;
        }
        let slope = dir.dot(&gv);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, d)| t + step * d).collect();
            if let Ok((ft, gt, et)) = objective(&problem, &trial, opts.method) {
                if ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt, et));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((trial, ft, gt, et)) = accepted else {
            // No descent possible along the quasi-Newton direction: either
            // already at the optimum to working precision, or restart.
            if norm(&g) < opts.grad_tol {
                converged = true;
                break;
            }
            if scaled || h_inv != DMatrix::identity(dim, dim) {
                h_inv = DMatrix::identity(dim, dim);
                scaled = false;
                continue;
            }
            return Err(Error::ConvergenceFailure {
                kind: FailureKind::IterationCap,
                iterations,
                objective: -f,
            });
        };

        let s = DVector::from_iterator(dim, trial.iter().zip(&theta).map(|(a, b)| a - b));
        let y = DVector::from_iterator(dim, gt.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                h_inv = DMatrix::identity(dim, dim) * (sy / y.norm_squared());
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho)
                - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }

        let rel_change = (f - ft).abs() / f.abs().max(1.0);
        theta = trial;
        f = ft;
        g = gt;
        ev = et;
        if rel_change < opts.rel_tol && norm(&g) < opts.grad_tol {
            converged = true;
            break;
        }
    }

    if !converged {
        return Err(Error::ConvergenceFailure {
            kind: FailureKind::IterationCap,
            iterations,
            objective: -f,
        });
    }
    let sigma = sigma_from_theta(&theta, n);
    cholesky(&sigma)?;
    Ok(MmrmFit {
        beta: ev.beta,
        sigma,
        beta_vcov: ev.a_inv,
        loglik: ev.loglik,
        converged,
        n_iterations: iterations,
        method: opts.method,
        n_subjects: problem.n_subjects,
        n_obs: problem.n_obs,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
