//! End-to-end helpers: pilot weights, fit plus cluster extraction, and the
//! two-step Lasso-then-bi-clustering baseline.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::formulation1::fit_formulation1;
use crate::formulation2::fit_formulation2;
use crate::lasso::{multitask_lasso, LassoOptions};
use crate::model::{EdgeWeights, FitResult, FusionMode, Hyperparameters, TaskDataset};
use crate::prox::{Cobra, ProxConfig};
use crate::selection::{prediction_rmse, summarize_clusters, ClusterSummary};
use crate::weights::weights_from_pilot;

/// Which objective to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// Fusion penalty placed directly on `Θ`, solved by proximal decomposition.
    Direct,
    /// Fusion penalty on a surrogate `Γ`, solved by alternating minimization.
    Surrogate,
}

/// Dispatches to the solver of the chosen formulation.
pub fn fit(
    data: &TaskDataset,
    edges: &EdgeWeights,
    hp: &Hyperparameters,
    cfg: &ProxConfig,
    formulation: Formulation,
) -> Result<FitResult> {
    match formulation {
        Formulation::Direct => fit_formulation1(data, edges, hp, cfg),
        Formulation::Surrogate => fit_formulation2(data, edges, hp, cfg),
    }
}

/// Proximal-decomposition step matched to the curvature of the loss:
/// `p / (2‖X‖²_F)`, the reciprocal of the mean eigenvalue of `2XᵀX`
/// (averaged over tasks for per-task designs).
pub fn suggested_gamma(data: &TaskDataset) -> f64 {
    let tasks = if data.is_shared() { 1 } else { data.k() };
    let mean_sq = (0..tasks).map(|s| data.task_design(s).norm_squared()).sum::<f64>() / tasks as f64;
    if mean_sq > 0.0 {
        data.p() as f64 / (2.0 * mean_sq)
    } else {
        1.0
    }
}

/// Multi-task Lasso estimate at `hp.lambda1`.
pub fn pilot_estimate(data: &TaskDataset, lambda1: f64) -> Result<DMatrix<f64>> {
    Ok(multitask_lasso(data, lambda1, &LassoOptions::default())?.0)
}

/// Similarity weights built from the Lasso pilot at `hp.lambda1`.
pub fn pilot_weights(data: &TaskDataset, hp: &Hyperparameters, mode: FusionMode) -> Result<EdgeWeights> {
    hp.validate()?;
    let pilot = pilot_estimate(data, hp.lambda1)?;
    weights_from_pilot(&pilot, hp, data.n(), mode)
}

#[derive(Debug, Clone)]
pub struct ClusteredFit {
    pub fit: FitResult,
    pub clusters: ClusterSummary,
}

/// Fits and extracts clusters from `Γ̂` (or `Θ̂` for the direct formulation),
/// with the noise level estimated from the residuals of `Θ̂`.
pub fn fit_and_cluster(
    data: &TaskDataset,
    edges: &EdgeWeights,
    hp: &Hyperparameters,
    cfg: &ProxConfig,
    formulation: Formulation,
) -> Result<ClusteredFit> {
    let fit = fit(data, edges, hp, cfg, formulation)?;
    let clusters = summarize_clusters(data, fit.theta.values(), fit.clustered(), edges)?;
    Ok(ClusteredFit { fit, clusters })
}

/// How the two-step baseline picks its bi-clustering multiplier.
#[derive(Debug, Clone, Copy)]
pub enum NuSelection<'a> {
    /// Hide a random `fraction` of the entries of the Lasso estimate, impute
    /// them by majorization-minimization for each candidate and keep the
    /// candidate that reconstructs the hidden entries best.
    HeldOutEntries { fraction: f64, seed: u64 },
    /// Keep the candidate whose bi-clustered estimate predicts this set best.
    ValidationRmse(&'a TaskDataset),
}

impl Default for NuSelection<'_> {
    fn default() -> Self {
        NuSelection::HeldOutEntries {
            fraction: 0.1,
            seed: 0,
        }
    }
}

const IMPUTE_MAX_ITER: usize = 200;

/// Output of the two-step baseline.
#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub lasso: DMatrix<f64>,
    pub biclustered: DMatrix<f64>,
    /// Chosen bi-clustering multiplier.
    pub nu: f64,
    /// `(ν, selection score)` for every candidate.
    pub scores: Vec<(f64, f64)>,
    pub converged: bool,
    pub clusters: ClusterSummary,
}

fn held_out_mask(p: usize, k: usize, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return input(format!("held-out fraction must lie in (0, 1), got {fraction}"));
    }
    let total = p * k;
    let count = ((fraction * total as f64).round() as usize).clamp(1, total.saturating_sub(1));
    if count == 0 {
        return input("need at least two entries to hold some out");
    }
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut mask = vec![false; total];
    for &i in &idx[..count] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Bi-clusters `target` with the `hidden` entries treated as missing and
/// returns the squared reconstruction error on them.
fn impute_score(target: &DMatrix<f64>, hidden: &[bool], edges: &EdgeWeights, nu: f64, cfg: &ProxConfig) -> f64 {
    let observed: Vec<f64> = target.iter().zip(hidden).filter(|(_, h)| !**h).map(|(v, _)| *v).collect();
    let fill = observed.iter().sum::<f64>() / observed.len() as f64;
    let mut u = DMatrix::from_iterator(target.nrows(), target.ncols(), target.iter().zip(hidden).map(|(v, h)| if *h { fill } else { *v }));
    let mut cobra = Cobra::new(edges, cfg);
    for _ in 0..IMPUTE_MAX_ITER {
        let filled = DMatrix::from_iterator(
            target.nrows(),
            target.ncols(),
            target.iter().zip(u.iter()).zip(hidden).map(|((t, uv), h)| if *h { *uv } else { *t }),
        );
        let next = cobra.solve(&filled, nu, cfg).value;
        let change = (&next - &u).norm() / (1.0 + u.norm());
        u = next;
        if change < cfg.inner_tol {
            break;
        }
    }
    target.iter().zip(u.iter()).zip(hidden).filter(|(_, h)| **h).map(|((t, uv), _)| (t - uv).powi(2)).sum()
}

/// Lasso at `hp.lambda1`, then convex bi-clustering of the estimate with the
/// multiplier from `nu_grid` chosen by `selection`, then cluster extraction.
/// Weights come from the Lasso estimate unless given. Ties go to the smaller
/// multiplier.
pub fn two_step_baseline(
    train: &TaskDataset,
    edges: Option<&EdgeWeights>,
    hp: &Hyperparameters,
    mode: FusionMode,
    nu_grid: &[f64],
    selection: NuSelection<'_>,
    cfg: &ProxConfig,
) -> Result<BaselineFit> {
    hp.validate()?;
    cfg.validate()?;
    if nu_grid.is_empty() || !nu_grid.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return input("bi-clustering grid must be a non-empty list of finite nonnegative values");
    }
    let lasso = pilot_estimate(train, hp.lambda1)?;
    let owned;
    let edges = match edges {
        Some(e) => {
            e.check_shape(train.p(), train.k())?;
            e
        }
        None => {
            owned = weights_from_pilot(&lasso, hp, train.n(), mode)?;
            &owned
        }
    };
    let mut grid = nu_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let scores: Vec<f64> = match selection {
        NuSelection::HeldOutEntries { fraction, seed } => {
            let hidden = held_out_mask(train.p(), train.k(), fraction, seed)?;
            grid.par_iter().map(|&nu| impute_score(&lasso, &hidden, edges, nu, cfg)).collect()
        }
        NuSelection::ValidationRmse(validation) => {
            if validation.p() != train.p() || validation.k() != train.k() {
                return input("validation set does not match the training set's shape");
            }
            grid.par_iter()
                .map(|&nu| prediction_rmse(validation, &Cobra::new(edges, cfg).solve(&lasso, nu, cfg).value))
                .collect()
        }
    };
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    let nu = grid[best];
    let out = Cobra::new(edges, cfg).solve(&lasso, nu, cfg);
    let clusters = summarize_clusters(train, &lasso, &out.value, edges)?;
    Ok(BaselineFit {
        lasso,
        biclustered: out.value,
        nu,
        scores: grid.into_iter().zip(scores).collect(),
        converged: out.converged,
        clusters,
    })
}
