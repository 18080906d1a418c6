//! Seeded generator for checkerboard coefficient matrices and noisy
//! multi-task regression data.
//!
//! All randomness comes from ChaCha8 seeded with `seed`, split into
//! independent streams: 0 for the coefficients, 1 and 2 for the training
//! design and noise, 3 and 4 for a validation set, 5 and 6 for a test set.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::model::{CoefficientMatrix, TaskDataset};
use crate::selection::ClusterAssignment;

fn default_zero_fraction() -> f64 {
    0.5
}

fn default_support() -> Vec<f64> {
    vec![-2.0, -1.0, 1.0, 2.0]
}

fn default_sigma_eps() -> f64 {
    0.25
}

/// Configuration of a synthetic checkerboard problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// Sizes of the row blocks; must sum to `p`.
    pub row_partition: Vec<usize>,
    /// Sizes of the column blocks; must sum to `k`.
    pub col_partition: Vec<usize>,
    /// Probability that a block is all zeros.
    #[serde(default = "default_zero_fraction")]
    pub zero_block_fraction: f64,
    /// Values the block means are drawn from, uniformly.
    #[serde(default = "default_support")]
    pub mu_support: Vec<f64>,
    /// Standard deviation of the within-block jitter.
    #[serde(default = "default_sigma_eps")]
    pub sigma_eps: f64,
    /// Standard deviation of the regression noise.
    pub sigma_noise: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Even split of `p` rows and `k` columns into the given numbers of blocks.
    pub fn even(n: usize, p: usize, k: usize, row_blocks: usize, col_blocks: usize, sigma_noise: f64, seed: u64) -> Self {
        Self {
            n,
            p,
            k,
            row_partition: even_split(p, row_blocks),
            col_partition: even_split(k, col_blocks),
            zero_block_fraction: default_zero_fraction(),
            mu_support: default_support(),
            sigma_eps: default_sigma_eps(),
            sigma_noise,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.k == 0 {
            return input("n, p and k must be positive");
        }
        let check = |name: &str, blocks: &[usize], total: usize| -> Result<()> {
            if blocks.is_empty() || blocks.contains(&0) {
                return input(format!("{name} must list positive block sizes"));
            }
            let sum: usize = blocks.iter().sum();
            if sum != total {
                return input(format!("{name} sums to {sum}, expected {total}"));
            }
            Ok(())
        };
        check("row_partition", &self.row_partition, self.p)?;
        check("col_partition", &self.col_partition, self.k)?;
        if !(0.0..1.0).contains(&self.zero_block_fraction) {
            return input(format!(
                "zero_block_fraction must lie in [0, 1), got {}",
                self.zero_block_fraction
            ));
        }
        if self.mu_support.is_empty() || !self.mu_support.iter().all(|v| v.is_finite()) {
            return input("mu_support must be a non-empty set of finite values");
        }
        for (name, v) in [("sigma_eps", self.sigma_eps), ("sigma_noise", self.sigma_noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return input(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

fn even_split(total: usize, blocks: usize) -> Vec<usize> {
    let blocks = blocks.clamp(1, total.max(1));
    (0..blocks)
        .map(|b| total / blocks + usize::from(b < total % blocks))
        .collect()
}

fn block_labels(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a checkerboard coefficient matrix and its true row/column partition.
///
/// Blocks are visited row band by row band. Each is zero with probability
/// `zero_block_fraction`; otherwise its entries are `μ + ε` with `μ` drawn
/// uniformly from `mu_support` and `ε ~ N(0, σ_ε²)`. Every block keeps its
/// own label, zero or not.
pub fn checkerboard_theta(spec: &GeneratorSpec) -> Result<(CoefficientMatrix, ClusterAssignment)> {
    spec.validate()?;
    let mut rng = stream(spec.seed, 0);
    let mut theta = DMatrix::zeros(spec.p, spec.k);
    let mut row0 = 0;
    for &rows in &spec.row_partition {
        let mut col0 = 0;
        for &cols in &spec.col_partition {
            let zero = rng.random::<f64>() < spec.zero_block_fraction;
            let mu = spec.mu_support[rng.random_range(0..spec.mu_support.len())];
            if !zero {
                for c in col0..col0 + cols {
                    for r in row0..row0 + rows {
                        let eps: f64 = rng.sample(StandardNormal);
                        theta[(r, c)] = mu + spec.sigma_eps * eps;
                    }
                }
            }
            col0 += cols;
        }
        row0 += rows;
    }
    let truth = ClusterAssignment::from_labels(block_labels(&spec.row_partition), block_labels(&spec.col_partition));
    Ok((CoefficientMatrix::new(theta)?, truth))
}

fn simulate_streams(theta: &DMatrix<f64>, n: usize, sigma: f64, seed: u64, x_stream: u64, e_stream: u64) -> Result<TaskDataset> {
    if n == 0 {
        return input("sample count must be positive");
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return input(format!("noise level must be finite and nonnegative, got {sigma}"));
    }
    let (p, k) = theta.shape();
    let mut xr = stream(seed, x_stream);
    let x = DMatrix::from_fn(n, p, |_, _| xr.sample::<f64, _>(StandardNormal));
    let mut er = stream(seed, e_stream);
    let noise = DMatrix::from_fn(n, k, |_, _| sigma * er.sample::<f64, _>(StandardNormal));
    TaskDataset::shared(x.clone(), &x * theta + noise)
}

/// `Y = XΘ* + E` with i.i.d. standard normal `X` and `N(0, σ²)` noise.
pub fn simulate_dataset(theta_star: &DMatrix<f64>, n: usize, sigma_noise: f64, seed: u64) -> Result<TaskDataset> {
    simulate_streams(theta_star, n, sigma_noise, seed, 1, 2)
}

/// A generated problem with independent training, validation and test sets.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub theta_star: CoefficientMatrix,
    pub truth: ClusterAssignment,
    pub train: TaskDataset,
    pub validation: TaskDataset,
    pub test: TaskDataset,
}

/// Coefficients plus training (`spec.n` samples), validation and test sets
/// that share the coefficients but use disjoint random streams.
pub fn synthetic_problem(spec: &GeneratorSpec, n_validation: usize, n_test: usize) -> Result<SyntheticProblem> {
    let (theta_star, truth) = checkerboard_theta(spec)?;
    let train = simulate_dataset(&theta_star, spec.n, spec.sigma_noise, spec.seed)?;
    let validation = simulate_streams(&theta_star, n_validation, spec.sigma_noise, spec.seed, 3, 4)?;
    let test = simulate_streams(&theta_star, n_test, spec.sigma_noise, spec.seed, 5, 6)?;
    Ok(SyntheticProblem {
        theta_star,
        truth,
        train,
        validation,
        test,
    })
}
