//! Noise estimation, cluster extraction, solution paths and validation-based
//! tuning of the penalty multipliers.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::formulation1::fit_formulation1_from;
use crate::formulation2::{fit_formulation2_from, F2Start};
use crate::lasso::{multitask_lasso, LassoOptions};
use crate::model::{Axis, CoefficientMatrix, EdgeWeights, FusionMode, Hyperparameters, TaskDataset};
use crate::pipeline::{fit, pilot_weights, Formulation};
use crate::prox::ProxConfig;
use crate::union_find::UnionFind;

/// Row and column partition of a coefficient matrix. Bi-cluster `(r, c)` is
/// the pair `(row_labels[r], col_labels[c])`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<usize>,
}

/// Relabels so that labels are numbered by first occurrence from 0.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut seen = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = seen.len();
            *seen.entry(*l).or_insert(next)
        })
        .collect()
}

fn count_labels(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

impl ClusterAssignment {
    /// Builds an assignment from arbitrary labels, canonicalizing both axes.
    pub fn from_labels(row_labels: Vec<usize>, col_labels: Vec<usize>) -> Self {
        Self {
            row_labels: canonical_labels(&row_labels),
            col_labels: canonical_labels(&col_labels),
        }
    }

    /// Every row and every column alone.
    pub fn singletons(p: usize, k: usize) -> Self {
        Self {
            row_labels: (0..p).collect(),
            col_labels: (0..k).collect(),
        }
    }

    pub fn n_row_clusters(&self) -> usize {
        count_labels(&self.row_labels)
    }

    pub fn n_col_clusters(&self) -> usize {
        count_labels(&self.col_labels)
    }

    /// Checks the label counts against a `p × k` matrix.
    pub fn validate(&self, p: usize, k: usize) -> Result<()> {
        if self.row_labels.len() != p || self.col_labels.len() != k {
            return input(format!(
                "assignment has {} row and {} column labels, expected {p} and {k}",
                self.row_labels.len(),
                self.col_labels.len()
            ));
        }
        Ok(())
    }
}

/// Sample standard deviation of all `n·k` entries of `Y − XΘ`.
pub fn estimate_sigma(data: &TaskDataset, theta: &DMatrix<f64>) -> Result<f64> {
    data.check_theta(theta, "theta")?;
    let r = data.residuals(theta);
    let m = r.len();
    if m < 2 {
        return input("noise estimation needs at least two residuals");
    }
    let mean = r.mean();
    let ss: f64 = r.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((ss / (m - 1) as f64).sqrt())
}

/// Euclidean distances between all pairs `i < j` of rows or columns.
pub fn pairwise_distances(m: &DMatrix<f64>, axis: Axis) -> Vec<f64> {
    let size = match axis {
        Axis::Columns => m.ncols(),
        Axis::Rows => m.nrows(),
    };
    let mut out = Vec::with_capacity(size * size.saturating_sub(1) / 2);
    for i in 0..size {
        for j in (i + 1)..size {
            out.push(item_distance(m, axis, i, j));
        }
    }
    out
}

fn item_distance(m: &DMatrix<f64>, axis: Axis, i: usize, j: usize) -> f64 {
    match axis {
        Axis::Columns => (m.column(i) - m.column(j)).norm(),
        Axis::Rows => (m.row(i) - m.row(j)).norm(),
    }
}

fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let ss: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

/// Grouping thresholds `τ = ½[σ√(log p / n) + std(v)]`, where `v` stacks the
/// pairwise row (for `τ_r`) or column (for `τ_c`) distances of `m`.
///
/// Returns `(τ_r, τ_c)`. An axis with fewer than two items gets `τ = 0`.
pub fn cluster_thresholds(m: &DMatrix<f64>, sigma: f64, n: usize, p: usize) -> Result<(f64, f64)> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return input(format!("sigma must be finite and nonnegative, got {sigma}"));
    }
    if n == 0 || p == 0 {
        return input("n and p must be positive");
    }
    let noise = sigma * ((p as f64).ln() / n as f64).sqrt();
    let tau = |axis: Axis, size: usize| {
        if size < 2 {
            0.0
        } else {
            0.5 * (noise + sample_std(&pairwise_distances(m, axis)))
        }
    };
    Ok((tau(Axis::Rows, m.nrows()), tau(Axis::Columns, m.ncols())))
}

fn axis_labels(m: &DMatrix<f64>, axis: Axis, tau: f64) -> Vec<usize> {
    let size = match axis {
        Axis::Columns => m.ncols(),
        Axis::Rows => m.nrows(),
    };
    let mut uf = UnionFind::new(size);
    for i in 0..size {
        for j in (i + 1)..size {
            if item_distance(m, axis, i, j) <= tau {
                uf.union(i, j);
            }
        }
    }
    uf.canonical_labels()
}

/// Groups rows whose distance is at most `τ_r` and columns whose distance is
/// at most `τ_c`, closing transitively.
pub fn extract_clusters(m: &DMatrix<f64>, tau_r: f64, tau_c: f64) -> ClusterAssignment {
    ClusterAssignment {
        row_labels: axis_labels(m, Axis::Rows, tau_r),
        col_labels: axis_labels(m, Axis::Columns, tau_c),
    }
}

/// Clusters of a fitted model with the quantities used to find them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub sigma: f64,
    pub tau_r: f64,
    pub tau_c: f64,
    pub assignment: ClusterAssignment,
}

/// Noise level from the residuals of `theta`, thresholds and clusters from
/// `clustered`. An axis that carries no fusion edges is reported as singletons.
pub fn summarize_clusters(
    data: &TaskDataset,
    theta: &DMatrix<f64>,
    clustered: &DMatrix<f64>,
    edges: &EdgeWeights,
) -> Result<ClusterSummary> {
    data.check_theta(clustered, "clustered matrix")?;
    let sigma = estimate_sigma(data, theta)?;
    let (tau_r, tau_c) = cluster_thresholds(clustered, sigma, data.n(), data.p())?;
    let mut assignment = extract_clusters(clustered, tau_r, tau_c);
    if edges.rows.is_empty() {
        assignment.row_labels = (0..data.p()).collect();
    }
    if edges.columns.is_empty() {
        assignment.col_labels = (0..data.k()).collect();
    }
    Ok(ClusterSummary {
        sigma,
        tau_r,
        tau_c,
        assignment,
    })
}

/// Which multiplier a solution path sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathParameter {
    /// `λ2` of the direct formulation.
    Lambda2F1,
    /// `λ3` of the surrogate formulation.
    Lambda3F2,
}

/// One fitted grid point of a solution path.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub penalty: f64,
    pub theta: CoefficientMatrix,
    pub gamma: Option<CoefficientMatrix>,
    pub clusters: ClusterSummary,
    pub n_row_clusters: usize,
    pub n_col_clusters: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SolutionPath {
    pub parameter: PathParameter,
    pub points: Vec<PathPoint>,
}

impl SolutionPath {
    pub fn col_cluster_counts(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.n_col_clusters).collect()
    }

    pub fn row_cluster_counts(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.n_row_clusters).collect()
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return input(format!("{name} grid is empty"));
    }
    if !grid.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return input(format!("{name} grid must hold finite nonnegative values"));
    }
    Ok(())
}

/// Fits at every grid value in increasing order, warm-starting each fit
/// from the previous solution. Non-converged fits are kept with their flag.
pub fn solution_path(
    data: &TaskDataset,
    edges: &EdgeWeights,
    grid: &[f64],
    parameter: PathParameter,
    hp: &Hyperparameters,
    cfg: &ProxConfig,
) -> Result<SolutionPath> {
    check_grid("path", grid)?;
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return input("path grid must be strictly increasing");
    }
    let mut points: Vec<PathPoint> = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut h = *hp;
        let fit = match parameter {
            PathParameter::Lambda2F1 => {
                h.lambda2 = value;
                let start = points.last().map(|prev| {
                    let t = prev.theta.values().clone();
                    [t.clone(), t.clone(), t]
                });
                fit_formulation1_from(data, edges, &h, cfg, start.as_ref())?
            }
            PathParameter::Lambda3F2 => {
                h.lambda3 = value;
                let start = points.last().map(|prev| F2Start {
                    theta: prev.theta.values().clone(),
                    gamma: prev.gamma.as_ref().unwrap_or(&prev.theta).values().clone(),
                });
                fit_formulation2_from(data, edges, &h, cfg, start.as_ref())?
            }
        };
        let clusters = summarize_clusters(data, fit.theta.values(), fit.clustered(), edges)?;
        points.push(PathPoint {
            penalty: value,
            n_row_clusters: clusters.assignment.n_row_clusters(),
            n_col_clusters: clusters.assignment.n_col_clusters(),
            clusters,
            objective: fit.final_objective().unwrap_or(f64::NAN),
            iterations: fit.iterations,
            converged: fit.converged,
            theta: fit.theta,
            gamma: fit.gamma,
        });
    }
    Ok(SolutionPath { parameter, points })
}

/// How validation data is carved out for tuning.
#[derive(Debug, Clone)]
pub enum Split {
    /// One random split holding out `validation_fraction` of the samples.
    Holdout { validation_fraction: f64, seed: u64 },
    /// Shuffled `folds`-fold cross-validation.
    KFold { folds: usize, seed: u64 },
    /// Train on all of `data`, validate on a separate set.
    External(TaskDataset),
}

impl Split {
    /// Holdout that, applied to the training-plus-validation share of a
    /// 70/15/15 split, reproduces the 70/15 proportions.
    pub fn default_holdout(seed: u64) -> Self {
        Split::Holdout {
            validation_fraction: 15.0 / 85.0,
            seed,
        }
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Seeded 70/15/15 partition of `0..n` into train, validation and test
/// indices, each sorted.
pub fn train_validation_test_split(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < 3 {
        return input(format!("need at least 3 samples to split three ways, got {n}"));
    }
    let idx = shuffled(n, seed);
    let n_val = ((0.15 * n as f64).round() as usize).max(1);
    let n_test = ((0.15 * n as f64).round() as usize).max(1);
    let n_train = n - n_val - n_test;
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

/// Training and validation sets of every fold.
fn folds(data: &TaskDataset, split: &Split) -> Result<Vec<(TaskDataset, TaskDataset)>> {
    let n = data.n();
    let complement = |held: &[usize]| -> Vec<usize> {
        let mut mask = vec![false; n];
        for &i in held {
            mask[i] = true;
        }
        (0..n).filter(|&i| !mask[i]).collect()
    };
    let make = |held: Vec<usize>| -> Result<(TaskDataset, TaskDataset)> {
        let mut held = held;
        held.sort_unstable();
        let train = complement(&held);
        if train.is_empty() || held.is_empty() {
            return input("split leaves an empty training or validation set");
        }
        Ok((data.select_rows(&train)?, data.select_rows(&held)?))
    };
    match split {
        Split::Holdout {
            validation_fraction,
            seed,
        } => {
            if !(*validation_fraction > 0.0 && *validation_fraction < 1.0) {
                return input(format!("validation fraction must lie in (0, 1), got {validation_fraction}"));
            }
            let n_val = (validation_fraction * n as f64).round() as usize;
            if n_val == 0 || n_val >= n {
                return input(format!("holdout of {validation_fraction} leaves an empty side with n = {n}"));
            }
            Ok(vec![make(shuffled(n, *seed)[..n_val].to_vec())?])
        }
        Split::KFold { folds, seed } => {
            if *folds < 2 || *folds > n {
                return input(format!("fold count must lie in [2, {n}], got {folds}"));
            }
            let idx = shuffled(n, *seed);
            (0..*folds)
                .map(|f| make(idx.iter().skip(f).step_by(*folds).copied().collect()))
                .collect()
        }
        Split::External(val) => {
            if val.p() != data.p() || val.k() != data.k() || val.is_shared() != data.is_shared() {
                return input("validation set does not match the training set's shape");
            }
            Ok(vec![(data.clone(), val.clone())])
        }
    }
}

/// Root-mean-squared prediction error of `theta` on `data`.
pub fn prediction_rmse(data: &TaskDataset, theta: &DMatrix<f64>) -> f64 {
    (data.residuals(theta).norm_squared() / (data.n() * data.k()) as f64).sqrt()
}

/// Candidate values for the greedy search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    /// Only used by the surrogate formulation.
    #[serde(default)]
    pub lambda3: Vec<f64>,
}

/// Settings of a tuning run. `base` supplies everything that is not tuned.
#[derive(Debug, Clone)]
pub struct CvConfig {
    pub formulation: Formulation,
    pub split: Split,
    pub mode: FusionMode,
    pub base: Hyperparameters,
    pub prox: ProxConfig,
}

/// Validation error of one stage-2 grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub lambda2: f64,
    pub lambda3: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub chosen: Hyperparameters,
    /// `(λ1, RMSE)` of the Lasso stage.
    pub lambda1_scores: Vec<(f64, f64)>,
    pub stage2_scores: Vec<GridScore>,
}

fn sorted_unique(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Index of the smallest score; ties go to the earliest entry.
fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s < &scores[best] || scores[best].is_nan() && !s.is_nan() {
            best = i;
        }
    }
    best
}

/// Greedy two-stage tuning by validation RMSE.
///
/// Stage 1 picks `λ1` for the plain multi-task Lasso. Stage 2 fixes it and
/// searches `λ2` (direct formulation) or the `(λ2, λ3)` grid (surrogate
/// formulation, scored by predictions from `Γ̂`). Scores are averaged over
/// folds. When `edges` is `None` the weights come from the Lasso pilot at the
/// chosen `λ1` on all of `data`.
pub fn cross_validate(data: &TaskDataset, edges: Option<&EdgeWeights>, grid: &CvGrid, cfg: &CvConfig) -> Result<CvReport> {
    cfg.base.validate()?;
    cfg.prox.validate()?;
    check_grid("lambda1", &grid.lambda1)?;
    check_grid("lambda2", &grid.lambda2)?;
    let lambda1 = sorted_unique(&grid.lambda1);
    let lambda2 = sorted_unique(&grid.lambda2);
    let lambda3 = match cfg.formulation {
        Formulation::Direct => vec![0.0],
        Formulation::Surrogate => {
            check_grid("lambda3", &grid.lambda3)?;
            if lambda2.contains(&0.0) {
                return input("the surrogate formulation needs lambda2 > 0 at every grid point");
            }
            sorted_unique(&grid.lambda3)
        }
    };
    if let Some(e) = edges {
        e.check_shape(data.p(), data.k())?;
    }
    let folds = folds(data, &cfg.split)?;
    let lasso_opts = LassoOptions::default();

    let l1_rmse: Vec<f64> = lambda1
        .par_iter()
        .map(|&l1| -> Result<f64> {
            let mut total = 0.0;
            for (train, val) in &folds {
                let (beta, _) = multitask_lasso(train, l1, &lasso_opts)?;
                total += prediction_rmse(val, &beta);
            }
            Ok(total / folds.len() as f64)
        })
        .collect::<Result<_>>()?;
    let best_l1 = lambda1[argmin(&l1_rmse)];

    let mut chosen = cfg.base;
    chosen.lambda1 = best_l1;
    let owned;
    let edges = match edges {
        Some(e) => e,
        None => {
            owned = pilot_weights(data, &chosen, cfg.mode)?;
            &owned
        }
    };

    let pairs: Vec<(f64, f64)> = lambda2
        .iter()
        .flat_map(|&l2| lambda3.iter().map(move |&l3| (l2, l3)))
        .collect();
    let stage2: Vec<GridScore> = pairs
        .par_iter()
        .map(|&(l2, l3)| -> Result<GridScore> {
            let mut h = chosen;
            h.lambda2 = l2;
            h.lambda3 = l3;
            let mut total = 0.0;
            for (train, val) in &folds {
                let f = fit(train, edges, &h, &cfg.prox, cfg.formulation)?;
                total += prediction_rmse(val, f.clustered());
            }
            Ok(GridScore {
                lambda2: l2,
                lambda3: l3,
                rmse: total / folds.len() as f64,
            })
        })
        .collect::<Result<_>>()?;
    let best = stage2[argmin(&stage2.iter().map(|s| s.rmse).collect::<Vec<_>>())];
    chosen.lambda2 = best.lambda2;
    chosen.lambda3 = best.lambda3;

    Ok(CvReport {
        chosen,
        lambda1_scores: lambda1.into_iter().zip(l1_rmse).collect(),
        stage2_scores: stage2,
    })
}
