//! Pair-counting agreement between partitions and estimation-accuracy measures.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{input, Result};
use crate::selection::ClusterAssignment;

/// Counts over all unordered item pairs.
///
/// `tp`: together in both partitions; `fp`: together only in the prediction;
/// `fn_`: together only in the truth; `tn`: apart in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl PairConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

/// Contingency counts plus the two marginals.
struct Contingency {
    cells: HashMap<(usize, usize), u64>,
    pred: HashMap<usize, u64>,
    truth: HashMap<usize, u64>,
    m: u64,
}

fn contingency(pred: &[usize], truth: &[usize]) -> Result<Contingency> {
    if pred.len() != truth.len() {
        return input(format!("label vectors differ in length: {} vs {}", pred.len(), truth.len()));
    }
    if pred.len() < 2 {
        return input("pair counting needs at least two items");
    }
    let mut cells = HashMap::new();
    let mut a = HashMap::new();
    let mut b = HashMap::new();
    for (&x, &y) in pred.iter().zip(truth) {
        *cells.entry((x, y)).or_insert(0) += 1;
        *a.entry(x).or_insert(0) += 1;
        *b.entry(y).or_insert(0) += 1;
    }
    Ok(Contingency {
        cells,
        pred: a,
        truth: b,
        m: pred.len() as u64,
    })
}

/// Pair confusion counts in `O(m + r·c)` through the contingency table.
pub fn pair_confusion(pred: &[usize], truth: &[usize]) -> Result<PairConfusion> {
    let t = contingency(pred, truth)?;
    let tp: u64 = t.cells.values().map(|&c| choose2(c)).sum();
    let same_pred: u64 = t.pred.values().map(|&c| choose2(c)).sum();
    let same_truth: u64 = t.truth.values().map(|&c| choose2(c)).sum();
    let fp = same_pred - tp;
    let fn_ = same_truth - tp;
    let tn = choose2(t.m) - tp - fp - fn_;
    Ok(PairConfusion { tp, fp, fn_, tn })
}

/// Harmonic mean of pair precision and pair recall; 0 when no pair agrees.
pub fn f1_score(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = pair_confusion(pred, truth)?;
    if c.tp == 0 {
        return Ok(0.0);
    }
    let precision = c.tp as f64 / (c.tp + c.fp) as f64;
    let recall = c.tp as f64 / (c.tp + c.fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// `TP / (TP + FP + FN)`; 1 when both partitions are all singletons.
pub fn jaccard_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let c = pair_confusion(pred, truth)?;
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok(c.tp as f64 / denom as f64)
}

/// Adjusted Rand index under the permutation model; 1 when the index and
/// its expectation coincide with the maximum (both partitions trivial).
pub fn adjusted_rand(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let t = contingency(pred, truth)?;
    let index: f64 = t.cells.values().map(|&c| choose2(c) as f64).sum();
    let sum_a: f64 = t.pred.values().map(|&c| choose2(c) as f64).sum();
    let sum_b: f64 = t.truth.values().map(|&c| choose2(c) as f64).sum();
    let expected = sum_a * sum_b / choose2(t.m) as f64;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Labels of the `p·k` cells, row-major, where a cell's label identifies the
/// (row cluster, column cluster) pair it falls in. Labels are canonical.
pub fn bicluster_labels(assignment: &ClusterAssignment) -> Vec<usize> {
    let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out = Vec::with_capacity(assignment.row_labels.len() * assignment.col_labels.len());
    for &r in &assignment.row_labels {
        for &c in &assignment.col_labels {
            let next = ids.len();
            out.push(*ids.entry((r, c)).or_insert(next));
        }
    }
    out
}

/// Root mean squared entrywise difference.
pub fn rmse(pred: &DMatrix<f64>, actual: &DMatrix<f64>) -> Result<f64> {
    if pred.shape() != actual.shape() {
        return input(format!("rmse shapes differ: {:?} vs {:?}", pred.shape(), actual.shape()));
    }
    if pred.is_empty() {
        return input("rmse of empty matrices");
    }
    Ok(((pred - actual).norm_squared() / pred.len() as f64).sqrt())
}

/// `‖Θ̂ − Θ*‖_F / ‖Θ*‖_F`.
pub fn recovery_accuracy(theta_hat: &DMatrix<f64>, theta_star: &DMatrix<f64>) -> Result<f64> {
    if theta_hat.shape() != theta_star.shape() {
        return input("recovery accuracy shapes differ");
    }
    let denom = theta_star.norm();
    if denom == 0.0 {
        return input("true coefficient matrix is zero");
    }
    Ok((theta_hat - theta_star).norm() / denom)
}

/// Agreement scores of one partition against another.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ClusterScores {
    pub ari: f64,
    pub f1: f64,
    pub jaccard: f64,
}

impl ClusterScores {
    pub fn compute(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(Self {
            ari: adjusted_rand(pred, truth)?,
            f1: f1_score(pred, truth)?,
            jaccard: jaccard_index(pred, truth)?,
        })
    }
}

/// Row, column and bi-cluster scores of a predicted assignment.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AssignmentScores {
    pub rows: Option<ClusterScores>,
    pub columns: Option<ClusterScores>,
    pub bicluster: ClusterScores,
}

impl AssignmentScores {
    /// Axes with a single item have no pairs and are reported as `None`.
    pub fn compute(pred: &ClusterAssignment, truth: &ClusterAssignment) -> Result<Self> {
        let axis = |a: &[usize], b: &[usize]| -> Result<Option<ClusterScores>> {
            if a.len() != b.len() {
                return input("assignments cover different numbers of items");
            }
            if a.len() < 2 {
                return Ok(None);
            }
            ClusterScores::compute(a, b).map(Some)
        };
        Ok(Self {
            rows: axis(&pred.row_labels, &truth.row_labels)?,
            columns: axis(&pred.col_labels, &truth.col_labels)?,
            bicluster: ClusterScores::compute(&bicluster_labels(pred), &bicluster_labels(truth))?,
        })
    }
}
