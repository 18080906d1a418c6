//! Cyclic coordinate-descent Lasso for `‖y − Xβ‖² + λ‖β‖₁`, the per-task
//! augmented system used by the surrogate formulation, and the multi-task
//! pilot estimate.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{input, Result};
use crate::model::TaskDataset;
use crate::prox::soft_threshold;

/// Stopping rule for coordinate descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Target for the largest subgradient-condition violation.
    pub kkt_tol: f64,
    /// Maximum number of full sweeps.
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            kkt_tol: 1e-8,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: DVector<f64>,
    /// Largest violation of `|2X_jᵀr| ≤ λ` (zero coefficients) or
    /// `2X_jᵀr = λ sign(β_j)` (nonzero coefficients).
    pub kkt_residual: f64,
    pub sweeps: usize,
    pub converged: bool,
}

fn kkt_violation(beta: f64, corr: f64, lambda: f64) -> f64 {
    // corr = X_jᵀ r; the smooth part's negative gradient is 2·corr
    let g = 2.0 * corr;
    if beta > 0.0 {
        (g - lambda).abs()
    } else if beta < 0.0 {
        (g + lambda).abs()
    } else {
        (g.abs() - lambda).max(0.0)
    }
}

/// Coordinate descent driven by the Gram matrix `G = XᵀX` and `Xᵀy`.
///
/// Keeps `c = Xᵀy − Gβ` up to date, so a sweep costs `O(p²)` regardless of `n`.
pub(crate) fn solve_gram(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    lambda: f64,
    mut beta: DVector<f64>,
    opts: &LassoOptions,
) -> LassoFit {
    let p = gram.nrows();
    let mut corr = xty - gram * &beta;
    let half = 0.5 * lambda;
    let mut sweeps = 0;
    let mut kkt = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        for j in 0..p {
            let gjj = gram[(j, j)];
            if gjj <= 0.0 {
                continue;
            }
            let old = beta[j];
            let new = soft_threshold(corr[j] + gjj * old, half) / gjj;
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                corr.axpy(-delta, &gram.column(j), 1.0);
            }
        }
        // Refresh against drift before measuring optimality.
        corr = xty - gram * &beta;
        kkt = (0..p)
            .map(|j| kkt_violation(beta[j], corr[j], lambda))
            .fold(0.0, f64::max);
        if kkt < opts.kkt_tol {
            break;
        }
    }
    LassoFit {
        beta,
        kkt_residual: kkt,
        sweeps,
        converged: kkt < opts.kkt_tol,
    }
}

/// Coordinate descent that keeps the residual `r = y − Xβ` instead of a Gram matrix.
fn solve_naive(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, mut beta: DVector<f64>, opts: &LassoOptions) -> LassoFit {
    let p = x.ncols();
    let col_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
    let mut resid = y - x * &beta;
    let half = 0.5 * lambda;
    let mut sweeps = 0;
    let mut kkt = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        for j in 0..p {
            if col_sq[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            let rho = x.column(j).dot(&resid) + col_sq[j] * old;
            let new = soft_threshold(rho, half) / col_sq[j];
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                resid.axpy(-delta, &x.column(j), 1.0);
            }
        }
        resid = y - x * &beta;
        let corr = x.tr_mul(&resid);
        kkt = (0..p)
            .map(|j| kkt_violation(beta[j], corr[j], lambda))
            .fold(0.0, f64::max);
        if kkt < opts.kkt_tol {
            break;
        }
    }
    LassoFit {
        beta,
        kkt_residual: kkt,
        sweeps,
        converged: kkt < opts.kkt_tol,
    }
}

/// Minimizes `‖y − Xβ‖² + λ‖β‖₁` from `β = 0` with default options.
pub fn lasso_cd(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LassoFit> {
    lasso_cd_with(x, y, lambda, None, &LassoOptions::default())
}

/// Coordinate-descent Lasso with an optional warm start.
///
/// Uses Gram-matrix updates when `n > p` and residual updates otherwise.
pub fn lasso_cd_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    warm: Option<&DVector<f64>>,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return input(format!("response has length {}, design has {} rows", y.len(), n));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return input(format!("lambda must be finite and nonnegative, got {lambda}"));
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return input("lasso inputs contain non-finite entries");
    }
    let start = match warm {
        Some(w) if w.len() == p => w.clone(),
        Some(w) => return input(format!("warm start has length {}, expected {}", w.len(), p)),
        None => DVector::zeros(p),
    };
    if n > p {
        Ok(solve_gram(&x.tr_mul(x), &x.tr_mul(y), lambda, start, opts))
    } else {
        Ok(solve_naive(x, y, lambda, start, opts))
    }
}

/// Stacks `(X; √λ2 I)` and `(y; √λ2 γ)` so that a plain Lasso on the result
/// minimizes `‖y − Xβ‖² + λ1‖β‖₁ + λ2‖β − γ‖²`.
pub fn augment_task(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    gamma_col: &DVector<f64>,
    lambda2: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, p) = x.shape();
    if y.len() != n || gamma_col.len() != p {
        return input(format!(
            "augment: design {}×{}, response {}, surrogate column {}",
            n,
            p,
            y.len(),
            gamma_col.len()
        ));
    }
    if !(lambda2.is_finite() && lambda2 > 0.0) {
        return input(format!("lambda2 must be positive, got {lambda2}"));
    }
    let root = lambda2.sqrt();
    let mut xa = DMatrix::zeros(n + p, p);
    xa.view_mut((0, 0), (n, p)).copy_from(x);
    for d in 0..p {
        xa[(n + d, d)] = root;
    }
    let mut ya = DVector::zeros(n + p);
    ya.rows_mut(0, n).copy_from(y);
    ya.rows_mut(n, p).copy_from(&(gamma_col * root));
    Ok((xa, ya))
}

/// Independent per-task Lasso fits stacked into a `p×k` matrix.
///
/// Returns the matrix and whether every task met the KKT tolerance.
pub fn multitask_lasso(data: &TaskDataset, lambda1: f64, opts: &LassoOptions) -> Result<(DMatrix<f64>, bool)> {
    if !(lambda1.is_finite() && lambda1 >= 0.0) {
        return input(format!("lambda1 must be finite and nonnegative, got {lambda1}"));
    }
    let (p, k) = (data.p(), data.k());
    let shared_gram = data.is_shared().then(|| {
        let x = data.task_design(0);
        x.tr_mul(x)
    });
    let fits: Vec<LassoFit> = (0..k)
        .into_par_iter()
        .map(|s| {
            let x = data.task_design(s);
            let y = data.responses().column(s).clone_owned();
            if data.n() > p {
                let own;
                let gram = match &shared_gram {
                    Some(g) => g,
                    None => {
                        own = x.tr_mul(x);
                        &own
                    }
                };
                solve_gram(gram, &x.tr_mul(&y), lambda1, DVector::zeros(p), opts)
            } else {
                solve_naive(x, &y, lambda1, DVector::zeros(p), opts)
            }
        })
        .collect();
    let mut theta = DMatrix::zeros(p, k);
    let mut ok = true;
    for (s, f) in fits.into_iter().enumerate() {
        ok &= f.converged;
        theta.set_column(s, &f.beta);
    }
    Ok((theta, ok))
}
