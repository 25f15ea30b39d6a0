//! Small dense linear algebra on top of `nalgebra`.
//!
//! Matrices in this crate are tiny (visit counts up to ~10, fixed-effect
//! counts up to ~30), so everything is plain dense column-major storage.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric matrix. Construction checks symmetry to within `1e-12`
/// relative to the largest absolute entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::InvalidInput(format!(
                "matrix is {}x{}, expected square",
                m.nrows(),
                m.ncols()
            )));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Averages `m` with its transpose. Use for products like `A·B·Aᵀ`
    /// that are symmetric only up to rounding.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_row_slice(dim: usize, data: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Principal submatrix on `idx` (in the given order).
    pub fn select(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix(DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            self.0[(idx[a], idx[b])]
        }))
    }
}

/// Lower Cholesky factor `L` with `L·Lᵀ = m`.
pub fn cholesky(m: &SymMatrix) -> Result<DMatrix<f64>> {
    let a = m.as_matrix();
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// `log det m` from its Cholesky factor.
pub fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Inverse of a positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(m: &SymMatrix) -> Result<SymMatrix> {
    let l = cholesky(m)?;
    Ok(inverse_from_cholesky(&l))
}

pub fn inverse_from_cholesky(l: &DMatrix<f64>) -> SymMatrix {
    let n = l.nrows();
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("Cholesky factor has a positive diagonal");
    SymMatrix::symmetrize(l_inv.transpose() * l_inv)
}

/// Solves `L·Lᵀ x = b` given the lower factor.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = l
        .solve_lower_triangular(b)
        .expect("Cholesky factor has a positive diagonal");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("Cholesky factor has a positive diagonal")
}

/// Numerical rank of `x` by Householder QR with column pivoting on the
/// remaining column norms. Columns whose residual norm falls below
/// `rel_tol · max column norm` count as dependent.
pub fn pivoted_rank(x: &DMatrix<f64>, rel_tol: f64) -> usize {
    let (m, n) = x.shape();
    let mut a = x.clone();
    let max_norm = (0..n).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    if max_norm == 0.0 {
        return 0;
    }
    let tol = rel_tol * max_norm;
    let steps = m.min(n);
    for k in 0..steps {
        // Pick the remaining column with the largest trailing norm. Norms
        // are recomputed rather than downdated to avoid cancellation.
        let (best, best_norm) = (k..n)
            .map(|j| (j, a.view((k, j), (m - k, 1)).norm()))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if best_norm <= tol {
            return k;
        }
        a.swap_columns(k, best);

        let mut v: DVector<f64> = a.view((k, k), (m - k, 1)).column(0).into_owned();
        let alpha = if v[0] >= 0.0 { -best_norm } else { best_norm };
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            for j in (k + 1)..n {
                let proj = 2.0 * (0..m - k).map(|i| v[i] * a[(k + i, j)]).sum::<f64>() / vnorm2;
                for i in 0..m - k {
                    a[(k + i, j)] -= proj * v[i];
                }
            }
        }
        a[(k, k)] = alpha;
        for i in (k + 1)..m {
            a[(i, k)] = 0.0;
        }
    }
    steps
}

/// Gaussian conditional law of the unobserved coordinates.
///
/// Returns the mean and covariance of `x[unobserved] | x[observed_idx] =
/// observed_vals`, with unobserved coordinates in increasing index order.
/// With nothing observed this is `(mean, cov)` unchanged.
pub fn mvn_conditional(
    mean: &DVector<f64>,
    cov: &SymMatrix,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
) -> Result<(DVector<f64>, SymMatrix)> {
    let n = mean.len();
    if cov.dim() != n || observed_idx.len() != observed_vals.len() {
        return Err(Error::InvalidInput(
            "mvn_conditional: dimension mismatch".into(),
        ));
    }
    let mut is_obs = vec![false; n];
    for &i in observed_idx {
        if i >= n || is_obs[i] {
            return Err(Error::InvalidInput(format!(
                "mvn_conditional: bad observed index {i}"
            )));
        }
        is_obs[i] = true;
    }
    let mis: Vec<usize> = (0..n).filter(|&i| !is_obs[i]).collect();
    if observed_idx.is_empty() {
        // still honour the factorization precondition
        cholesky(cov)?;
        return Ok((mean.clone(), cov.clone()));
    }

    let s = cov.as_matrix();
    let l_oo = cholesky(&cov.select(observed_idx))?;
    let s_om = DMatrix::from_fn(observed_idx.len(), mis.len(), |a, b| {
        s[(observed_idx[a], mis[b])]
    });
    let dev = DVector::from_fn(observed_idx.len(), |a, _| {
        observed_vals[a] - mean[observed_idx[a]]
    });
    let w = l_oo
        .solve_lower_triangular(&s_om)
        .expect("positive diagonal");
    let v = l_oo.solve_lower_triangular(&dev).expect("positive diagonal");

    let shift = w.transpose() * v;
    let cond_mean = DVector::from_fn(mis.len(), |b, _| mean[mis[b]] + shift[b]);
    let s_mm = DMatrix::from_fn(mis.len(), mis.len(), |a, b| s[(mis[a], mis[b])]);
    let cond_cov = SymMatrix::symmetrize(s_mm - w.transpose() * &w);
    Ok((cond_mean, cond_cov))
}
