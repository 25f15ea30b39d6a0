//! Bayesian multiple imputation.
//!
//! Posterior draws of `(β, Σ)` come from a data-augmentation Gibbs sampler
//! on the fit-eligible outcomes, started at the frequentist fit. Each
//! retained draw produces one completed dataset, with missing outcomes
//! drawn from their Gaussian conditional around either the assigned-arm
//! mean (MAR) or the copy-increments-in-reference mean (CIR).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{build_design, row_dot, Design, DesignSpec, SubjectDesign};
use crate::error::{Error, FailureKind, Result};
use crate::estimand::{AnalysisDataset, Imputation};
use crate::mmrm::{fit_mmrm, MmrmFit};
use crate::numerics::linalg::{cholesky, cholesky_solve, inverse_from_cholesky};
use crate::numerics::{sample_inverse_wishart, standard_normal, Purpose, StreamFactory, SymMatrix};
use crate::sim::Arm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub thin: usize,
    /// Keep `Σ` at its starting value and sample only `β`.
    pub fix_sigma: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            burn_in: 200,
            thin: 20,
            fix_sigma: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub beta: DVector<f64>,
    pub sigma: SymMatrix,
}

/// Sampler for `y[miss] | y[obs]` under `N(μ, Σ)` with a fixed pattern.
pub struct ConditionalSampler {
    obs: Vec<usize>,
    miss: Vec<usize>,
    /// `Σ_mo Σ_oo⁻¹`
    coef: DMatrix<f64>,
    /// Cholesky factor of `Σ_mm − Σ_mo Σ_oo⁻¹ Σ_om`.
    chol: DMatrix<f64>,
}

impl ConditionalSampler {
    pub fn new(sigma: &SymMatrix, observed: &[bool]) -> Result<Self> {
        let obs: Vec<usize> = (0..observed.len()).filter(|&j| observed[j]).collect();
        let miss: Vec<usize> = (0..observed.len()).filter(|&j| !observed[j]).collect();
        let s = sigma.as_matrix();
        let s_mm = sigma.select(&miss).into_inner();
        if obs.is_empty() || miss.is_empty() {
            let chol = if miss.is_empty() {
                DMatrix::zeros(0, 0)
            } else {
                cholesky(&SymMatrix::symmetrize(s_mm))?
            };
            return Ok(ConditionalSampler {
                coef: DMatrix::zeros(miss.len(), obs.len()),
                obs,
                miss,
                chol,
            });
        }
        let l_oo = cholesky(&sigma.select(&obs))?;
        let s_om = DMatrix::from_fn(obs.len(), miss.len(), |a, b| s[(obs[a], miss[b])]);
        // Σ_oo⁻¹ Σ_om, transposed.
        let z = l_oo.solve_lower_triangular(&s_om).expect("positive diagonal");
        let solved = l_oo.transpose().solve_upper_triangular(&z).expect("positive diagonal");
        let coef = solved.transpose();
        let cond = s_mm - &coef * &s_om;
        let chol = cholesky(&SymMatrix::symmetrize(cond))?;
        Ok(ConditionalSampler { obs, miss, coef, chol })
    }

    pub fn missing(&self) -> &[usize] {
        &self.miss
    }

    /// Fills the missing coordinates of `y` in place given mean `mu`.
    pub fn fill<R: Rng + ?Sized>(&self, mu: &[f64], y: &mut [f64], rng: &mut R) {
        let k = self.miss.len();
        if k == 0 {
            return;
        }
        let resid: Vec<f64> = self.obs.iter().map(|&j| y[j] - mu[j]).collect();
        let z: Vec<f64> = (0..k).map(|_| standard_normal(rng)).collect();
        for (a, &j) in self.miss.iter().enumerate() {
            let mut v = mu[j];
            for (b, r) in resid.iter().enumerate() {
                v += self.coef[(a, b)] * r;
            }
            for (b, zb) in z.iter().enumerate().take(a + 1) {
                v += self.chol[(a, b)] * zb;
            }
            y[j] = v;
        }
    }
}

fn pattern_key(mask: &[bool]) -> u64 {
    mask.iter().enumerate().fold(0, |acc, (j, &b)| acc | ((b as u64) << j))
}

/// Complete-data precision products `A = Σᵢ XᵢᵀWXᵢ` and `b = Σᵢ XᵢᵀW yᵢ`.
fn normal_equations(subjects: &[SubjectDesign], ys: &[Vec<f64>], w: &DMatrix<f64>, p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let j_count = w.nrows();
    let mut wy = vec![0.0; j_count];
    for (s, y) in subjects.iter().zip(ys) {
        for ja in 0..j_count {
            wy[ja] = (0..j_count).map(|jb| w[(ja, jb)] * y[jb]).sum();
        }
        for (ja, ra) in s.rows.iter().enumerate() {
            for &(c, v) in ra {
                b[c] += v * wy[ja];
            }
            for (jb, rb) in s.rows.iter().enumerate() {
                let wab = w[(ja, jb)];
                for &(c1, v1) in ra {
                    for &(c2, v2) in rb {
                        a[(c1, c2)] += wab * v1 * v2;
                    }
                }
            }
        }
    }
    (a, b)
}

struct Chain<'a> {
    design: &'a Design,
    fit_masks: Vec<u64>,
    masks: HashMap<u64, Vec<bool>>,
    ys: Vec<Vec<f64>>,
    beta: DVector<f64>,
    sigma: SymMatrix,
}

impl<'a> Chain<'a> {
    fn new(design: &'a Design, init: &MmrmFit) -> Self {
        let mut masks = HashMap::new();
        let fit_masks = design
            .subjects
            .iter()
            .map(|s| {
                let key = pattern_key(&s.fit);
                masks.entry(key).or_insert_with(|| s.fit.clone());
                key
            })
            .collect();
        let ys = design
            .subjects
            .iter()
            .map(|s| {
                let mu = s.mean(&init.beta);
                (0..s.y.len())
                    .map(|j| if s.fit[j] { s.y[j].expect("fit-eligible implies present") } else { mu[j] })
                    .collect()
            })
            .collect();
        Chain {
            design,
            fit_masks,
            masks,
            ys,
            beta: init.beta.clone(),
            sigma: init.sigma.clone(),
        }
    }

    fn sweep<R: Rng + ?Sized>(&mut self, gibbs: &GibbsConfig, rng: &mut R) -> Result<()> {
        // (i) augment missing fit-eligible coordinates
        let mut samplers: HashMap<u64, ConditionalSampler> = HashMap::new();
        for (key, mask) in &self.masks {
            samplers.insert(*key, ConditionalSampler::new(&self.sigma, mask)?);
        }
        let mut ys = self.ys.clone();
        for ((s, y), key) in self.design.subjects.iter().zip(ys.iter_mut()).zip(&self.fit_masks) {
            let sampler = &samplers[key];
            if !sampler.missing().is_empty() {
                let mu: Vec<f64> = s.rows.iter().map(|r| row_dot(r, &self.beta)).collect();
                sampler.fill(&mu, y, rng);
            }
        }

        // (ii) β | Y, Σ ~ N(A⁻¹b, A⁻¹)
        let l_sigma = cholesky(&self.sigma)?;
        let w = inverse_from_cholesky(&l_sigma).into_inner();
        let p = self.design.n_columns();
        let (a, b) = normal_equations(&self.design.subjects, &ys, &w, p);
        let l_a = cholesky(&SymMatrix::symmetrize(a))?;
        let mean = cholesky_solve(&l_a, &b);
        let z = DVector::from_fn(p, |_, _| standard_normal(rng));
        let dev = l_a.transpose().solve_upper_triangular(&z).expect("positive diagonal");
        let beta = mean + dev;

        // (iii) Σ | Y, β ~ IW(S, n)
        let sigma = if gibbs.fix_sigma {
            self.sigma.clone()
        } else {
            let j_count = self.sigma.dim();
            let mut scatter = DMatrix::<f64>::zeros(j_count, j_count);
            for (s, y) in self.design.subjects.iter().zip(&ys) {
                let r = DVector::from_iterator(j_count, (0..j_count).map(|j| y[j] - row_dot(&s.rows[j], &beta)));
                scatter.ger(1.0, &r, &r, 1.0);
            }
            sample_inverse_wishart(rng, &SymMatrix::symmetrize(scatter), self.design.subjects.len() as f64)?
        };
        if beta.iter().any(|x| !x.is_finite()) {
            return Err(Error::ConvergenceFailure {
                kind: FailureKind::Nonfinite,
                iterations: 0,
                objective: f64::NAN,
            });
        }
        self.ys = ys;
        self.beta = beta;
        self.sigma = sigma;
        Ok(())
    }
}

/// Runs the data-augmentation chain from `init` and returns `m` retained
/// draws: `burn_in` sweeps are discarded, then every `thin`-th sweep kept.
pub fn posterior_draws<R: Rng + ?Sized>(
    init: &MmrmFit,
    design: &Design,
    m: usize,
    gibbs: &GibbsConfig,
    rng: &mut R,
) -> Result<Vec<PosteriorDraw>> {
    if !init.converged {
        return Err(Error::InvalidInput("chain start must be a converged fit".into()));
    }
    if gibbs.thin == 0 {
        return Err(Error::InvalidConfig("thin must be at least 1".into()));
    }
    let mut chain = Chain::new(design, init);
    let total = gibbs.burn_in + m * gibbs.thin;
    let mut draws = Vec::with_capacity(m);
    for sweep in 1..=total {
        if chain.sweep(gibbs, rng).is_err() {
            // A numerically unlucky draw gets one more attempt.
            chain.sweep(gibbs, rng).map_err(|_| Error::ConvergenceFailure {
                kind: FailureKind::GibbsFailure,
                iterations: sweep,
                objective: f64::NAN,
            })?;
        }
        if sweep > gibbs.burn_in && (sweep - gibbs.burn_in) % gibbs.thin == 0 {
            draws.push(PosteriorDraw {
                beta: chain.beta.clone(),
                sigma: chain.sigma.clone(),
            });
        }
    }
    Ok(draws)
}

/// Assigned-arm mean `Xᵢβ`, including any tv columns.
pub fn marginal_mean_mar(draw: &PosteriorDraw, subject: &SubjectDesign) -> Vec<f64> {
    subject.rows.iter().map(|r| row_dot(r, &draw.beta)).collect()
}

/// Copy-increments-in-reference mean. `disc_visit` is the grid index
/// (0 = baseline) of the last visit before discontinuation.
///
/// For an active subject discontinuing after grid visit `d`, with
/// covariate-specific arm means `μ_act`, `μ_pla` and `μ(0) = 0`:
///
/// ```text
/// μⱼ = μ_act,j                          j ≤ d
/// μⱼ = μ_act,d + (μ_pla,j − μ_pla,d)    j > d
/// ```
pub fn marginal_mean_cir(draw: &PosteriorDraw, spec: &DesignSpec, subject: &SubjectDesign, disc_visit: Option<usize>) -> Vec<f64> {
    let j_count = spec.n_visits;
    let arm_mean = |arm: Arm| -> Vec<f64> {
        (0..j_count)
            .map(|j| spec.arm_mean(&draw.beta, arm, subject.baseline, j))
            .collect()
    };
    let own = arm_mean(subject.arm);
    let d = match (subject.arm, disc_visit) {
        (Arm::Active, Some(d)) if d < j_count => d,
        _ => return own,
    };
    let reference = arm_mean(Arm::Placebo);
    let at = |mu: &[f64], g: usize| if g == 0 { 0.0 } else { mu[g - 1] };
    (1..=j_count)
        .map(|g| {
            if g <= d {
                own[g - 1]
            } else {
                at(&own, d) + (reference[g - 1] - at(&reference, d))
            }
        })
        .collect()
}

/// Draws the missing coordinates of one subject given its present values.
pub fn impute_subject<R: Rng + ?Sized>(
    draw: &PosteriorDraw,
    marginal_mean: &[f64],
    observed: &[Option<f64>],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mask: Vec<bool> = observed.iter().map(Option::is_some).collect();
    let sampler = ConditionalSampler::new(&draw.sigma, &mask)?;
    let mut y: Vec<f64> = observed.iter().map(|o| o.unwrap_or(0.0)).collect();
    sampler.fill(marginal_mean, &mut y, rng);
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputedSet {
    /// One `n × J` matrix of completed changes per imputation.
    pub completed: Vec<DMatrix<f64>>,
    pub arms: Vec<Arm>,
    pub baselines: Vec<f64>,
    /// Index of each retained draw in the chain's output.
    pub draw_indices: Vec<usize>,
    pub root_seed: u64,
    pub replication: u64,
}

impl ImputedSet {
    pub fn m(&self) -> usize {
        self.completed.len()
    }

    /// Completed outcomes at the last visit for imputation `k`.
    pub fn final_visit(&self, k: usize) -> Vec<f64> {
        let c = &self.completed[k];
        c.column(c.ncols() - 1).iter().copied().collect()
    }
}

/// Fits the imputation model, runs the chain, and completes the dataset
/// `m` times.
///
/// Streams: the chain uses `(0, Gibbs(tag))` and imputation `(0,
/// Impute(tag))` where `tag` is the estimator index.
pub fn multiple_impute(data: &AnalysisDataset, m: usize, gibbs: &GibbsConfig, streams: &StreamFactory) -> Result<ImputedSet> {
    let design = build_design(data, &DesignSpec::for_dataset(data))?;
    let fit = fit_mmrm(&design)?;
    multiple_impute_from_fit(data, &design, &fit, m, gibbs, streams)
}

pub fn multiple_impute_from_fit(
    data: &AnalysisDataset,
    design: &Design,
    fit: &MmrmFit,
    m: usize,
    gibbs: &GibbsConfig,
    streams: &StreamFactory,
) -> Result<ImputedSet> {
    let tag = data.spec.name.index();
    let mut chain_rng = streams.stream(0, Purpose::Gibbs(tag));
    let draws = posterior_draws(fit, design, m, gibbs, &mut chain_rng)?;
    let mut rng = streams.stream(0, Purpose::Impute(tag));
    let j_count = design.spec.n_visits;
    let n = design.subjects.len();

    let mut completed = Vec::with_capacity(m);
    for draw in &draws {
        let mut samplers: HashMap<u64, ConditionalSampler> = HashMap::new();
        let mut out = DMatrix::<f64>::zeros(n, j_count);
        for (i, s) in design.subjects.iter().enumerate() {
            let mask: Vec<bool> = s.y.iter().map(Option::is_some).collect();
            let mut y: Vec<f64> = s.y.iter().map(|o| o.unwrap_or(0.0)).collect();
            if mask.iter().any(|&b| !b) {
                let mu = match data.spec.imputation {
                    Imputation::Mar => marginal_mean_mar(draw, s),
                    Imputation::Cir => marginal_mean_cir(draw, &design.spec, s, s.disc_after_visit),
                };
                let key = pattern_key(&mask);
                if !samplers.contains_key(&key) {
                    samplers.insert(key, ConditionalSampler::new(&draw.sigma, &mask)?);
                }
                samplers[&key].fill(&mu, &mut y, &mut rng);
            }
            for j in 0..j_count {
                out[(i, j)] = y[j];
            }
        }
        completed.push(out);
    }
    Ok(ImputedSet {
        completed,
        arms: design.subjects.iter().map(|s| s.arm).collect(),
        baselines: design.subjects.iter().map(|s| s.baseline).collect(),
        draw_indices: (0..m).collect(),
        root_seed: streams.root_seed,
        replication: streams.replication,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design_unchecked, SparseRow};
    use crate::estimand::{mask_for_estimand, EstimatorName, TvScheme};
    use crate::mmrm::fit_mmrm;
    use crate::numerics::RngStream;
    use crate::sim::{simulate_trial, SimConfig, TrialDataset};

    fn rng(seed: u64) -> RngStream {
        StreamFactory::new(seed, 0).stream(0, Purpose::Custom(9))
    }

    fn subject(spec: &DesignSpec, arm: Arm, baseline: f64) -> SubjectDesign {
        let rows: Vec<SparseRow> = (0..spec.n_visits)
            .map(|v| vec![(spec.cell_column(arm, v), 1.0), (spec.baseline_column(v), baseline)])
            .collect();
        SubjectDesign {
            subject_id: 0,
            arm,
            baseline,
            disc_after_visit: None,
            y: vec![None; spec.n_visits],
            fit: vec![false; spec.n_visits],
            rows,
        }
    }

    fn default_trajectory_draw() -> (DesignSpec, PosteriorDraw) {
        let spec = DesignSpec::new(6, TvScheme::None);
        let mut beta = DVector::zeros(spec.n_columns());
        for v in 0..6 {
            beta[spec.cell_column(Arm::Placebo, v)] = 5.0 * (v + 1) as f64 / 3.0;
            beta[spec.cell_column(Arm::Active, v)] = (v + 1) as f64;
        }
        (spec, PosteriorDraw { beta, sigma: SymMatrix::identity(6) })
    }

    #[test]
    fn cir_worked_example() {
        let (spec, draw) = default_trajectory_draw();
        let s = subject(&spec, Arm::Active, 31.0);
        let mu = marginal_mean_cir(&draw, &spec, &s, Some(2));
        let expect = [1.0, 2.0, 11.0 / 3.0, 16.0 / 3.0, 7.0, 26.0 / 3.0];
        for (a, b) in mu.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(marginal_mean_cir(&draw, &spec, &s, Some(6)), marginal_mean_mar(&draw, &s));
        assert_eq!(marginal_mean_cir(&draw, &spec, &s, None), marginal_mean_mar(&draw, &s));
        let p = subject(&spec, Arm::Placebo, 31.0);
        for d in 0..6 {
            assert_eq!(marginal_mean_cir(&draw, &spec, &p, Some(d)), marginal_mean_mar(&draw, &p));
        }
    }

    #[test]
    fn cir_retained_benefit() {
        let spec = DesignSpec::new(6, TvScheme::None);
        let mut r = rng(4);
        let beta = DVector::from_fn(spec.n_columns(), |_, _| standard_normal(&mut r));
        let draw = PosteriorDraw { beta, sigma: SymMatrix::identity(6) };
        let s = subject(&spec, Arm::Active, 27.5);
        let act = |g: usize| if g == 0 { 0.0 } else { spec.arm_mean(&draw.beta, Arm::Active, 27.5, g - 1) };
        let pla = |g: usize| if g == 0 { 0.0 } else { spec.arm_mean(&draw.beta, Arm::Placebo, 27.5, g - 1) };
        for d in 0..6 {
            let mu = marginal_mean_cir(&draw, &spec, &s, Some(d));
            for g in d.max(1)..=6 {
                let retained = mu[g - 1] - pla(g);
                assert!((retained - (act(d) - pla(d))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impute_passes_observed_through() {
        let (_, draw) = default_trajectory_draw();
        let obs: Vec<Option<f64>> = (0..6).map(|v| Some(v as f64 * 0.37)).collect();
        let out = impute_subject(&draw, &[0.0; 6], &obs, &mut rng(1)).unwrap();
        for (a, b) in out.iter().zip(&obs) {
            assert_eq!(*a, b.unwrap());
        }
    }

    #[test]
    fn unconditional_imputation_mean() {
        let sigma = SymMatrix::from_row_slice(3, &[4.0, 2.0, 1.0, 2.0, 5.0, 2.5, 1.0, 2.5, 6.0]).unwrap();
        let draw = PosteriorDraw { beta: DVector::zeros(1), sigma: sigma.clone() };
        let mu = [1.0, -2.0, 3.5];
        let n = 100_000;
        let mut r = rng(2);
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let y = impute_subject(&draw, &mu, &[None, None, None], &mut r).unwrap();
            for j in 0..3 {
                sums[j] += y[j];
            }
        }
        for j in 0..3 {
            let se = (sigma.get(j, j) / n as f64).sqrt();
            assert!((sums[j] / n as f64 - mu[j]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn diagonal_sigma_ignores_observed_values() {
        let draw = PosteriorDraw { beta: DVector::zeros(1), sigma: SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]) };
        let a = impute_subject(&draw, &[0.0; 3], &[Some(5.0), None, None], &mut rng(3)).unwrap();
        let b = impute_subject(&draw, &[0.0; 3], &[Some(-40.0), None, None], &mut rng(3)).unwrap();
        assert_eq!(a[1..], b[1..]);
    }

    fn complete_design(n: usize, seed: u64) -> Design {
        let spec = DesignSpec::new(3, TvScheme::None);
        let mut r = rng(seed);
        let subjects = (0..n)
            .map(|i| {
                let arm = if i % 2 == 0 { Arm::Placebo } else { Arm::Active };
                let mut s = subject(&spec, arm, 30.0 + 5.0 * standard_normal(&mut r));
                let shared = 2.0 * standard_normal(&mut r);
                s.y = (0..3)
                    .map(|v| Some(v as f64 * (1.0 + arm.indicator()) + 0.05 * s.baseline + shared + standard_normal(&mut r)))
                    .collect();
                s.fit = vec![true; 3];
                s.subject_id = i;
                s
            })
            .collect();
        Design { spec, subjects }
    }

    #[test]
    fn fixed_sigma_draws_are_exact_gls_posterior() {
        let design = complete_design(40, 5);
        let fit = fit_mmrm(&design).unwrap();
        let gibbs = GibbsConfig { burn_in: 0, thin: 1, fix_sigma: true };
        let m = 10_000;
        let draws = posterior_draws(&fit, &design, m, &gibbs, &mut rng(10)).unwrap();
        assert_eq!(draws.len(), m);
        for c in 0..design.n_columns() {
            let mean = draws.iter().map(|d| d.beta[c]).sum::<f64>() / m as f64;
            let se = (fit.beta_vcov.get(c, c) / m as f64).sqrt();
            assert!((mean - fit.beta[c]).abs() < 3.0 * se, "column {c}");
        }
    }

    #[test]
    fn large_sample_posterior_matches_fit() {
        let design = complete_design(400, 7);
        let fit = fit_mmrm(&design).unwrap();
        let gibbs = GibbsConfig { burn_in: 50, thin: 5, fix_sigma: false };
        let m = 2000;
        let draws = posterior_draws(&fit, &design, m, &gibbs, &mut rng(10)).unwrap();
        assert_eq!(draws.len(), m);
        assert!(draws.iter().all(|d| cholesky(&d.sigma).is_ok()));
        let p = design.n_columns();
        let mean = draws.iter().fold(DVector::zeros(p), |acc, d| acc + &d.beta) / m as f64;
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for d in &draws {
            let r = &d.beta - &mean;
            cov += &r * r.transpose();
        }
        cov /= (m - 1) as f64;
        for c in 0..p {
            let mcse = (cov[(c, c)] / m as f64).sqrt();
            assert!((mean[c] - fit.beta[c]).abs() < 2.0 * mcse, "column {c}");
        }
        let target = fit.beta_vcov.as_matrix();
        let rel = (&cov - target).norm() / target.norm();
        assert!(rel < 0.15, "relative Frobenius error {rel}");
    }

    fn ice_free_trial() -> TrialDataset {
        let mut t = simulate_trial(30, &SimConfig::default(), StreamFactory::new(12, 0)).unwrap();
        for s in t.subjects.iter_mut() {
            s.disc_after_visit = None;
            s.sympt_after_visit = None;
            s.dropped_out = false;
            s.observed = s.y_policy.iter().map(|&y| Some(y)).collect();
        }
        t
    }

    #[test]
    fn no_missing_data_gives_identical_copies() {
        let t = ice_free_trial();
        let gibbs = GibbsConfig { burn_in: 5, thin: 2, fix_sigma: false };
        let mut sets = Vec::new();
        for name in [EstimatorName::MarHyp, EstimatorName::MarMix, EstimatorName::MarTp] {
            let data = mask_for_estimand(&t, &name.spec());
            let set = multiple_impute(&data, 4, &gibbs, &StreamFactory::new(1, 0)).unwrap();
            assert_eq!(set.m(), 4);
            assert!(set.completed.iter().all(|c| c == &set.completed[0]));
            sets.push(set.completed[0].clone());
        }
        assert!(sets.iter().all(|c| c == &sets[0]));
    }

    #[test]
    fn completed_data_respects_observed_cells() {
        let t = simulate_trial(60, &SimConfig::default(), StreamFactory::new(13, 0)).unwrap();
        let gibbs = GibbsConfig { burn_in: 10, thin: 2, fix_sigma: false };
        for name in [EstimatorName::CirMix, EstimatorName::Tv2Mix, EstimatorName::MarHyp] {
            let data = mask_for_estimand(&t, &name.spec());
            let set = match multiple_impute(&data, 3, &gibbs, &StreamFactory::new(2, 0)) {
                Ok(s) => s,
                Err(Error::RankDeficient { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            for c in &set.completed {
                for (i, s) in data.subjects.iter().enumerate() {
                    for (j, o) in s.outcomes.iter().enumerate() {
                        if let Some(y) = o {
                            assert_eq!(c[(i, j)].to_bits(), y.to_bits());
                        }
                        assert!(c[(i, j)].is_finite());
                    }
                }
            }
        }
    }

    #[test]
    fn cir_more_conservative_than_mar_for_active_discontinuers() {
        let t = simulate_trial(300, &SimConfig::default(), StreamFactory::new(14, 0)).unwrap();
        let data = mask_for_estimand(&t, &EstimatorName::CirMix.spec());
        let design = build_design_unchecked(&data, &DesignSpec::for_dataset(&data)).unwrap();
        let fit = fit_mmrm(&design).unwrap();
        let draws = posterior_draws(&fit, &design, 5, &GibbsConfig::default(), &mut rng(15)).unwrap();
        let (mut cir, mut mar, mut count) = (0.0, 0.0, 0);
        for d in &draws {
            for s in design.subjects.iter().filter(|s| s.arm == Arm::Active && s.disc_after_visit.is_some_and(|k| k < 4)) {
                cir += marginal_mean_cir(d, &design.spec, s, s.disc_after_visit)[5];
                mar += marginal_mean_mar(d, s)[5];
                count += 1;
            }
        }
        assert!(count > 0);
        assert!(cir > mar);
    }
}
