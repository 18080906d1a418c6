#![allow(dead_code)]
//! Reference computations written independently of the library: naive
//! objective evaluation, generic first-order minimizers and brute-force
//! pair enumeration.

use bifuse::{AxisEdges, Edge, EdgeWeights, TaskDataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, k: usize) -> TaskDataset {
    let x = random_matrix(rng, n, p, 1.0);
    let theta = random_matrix(rng, p, k, 2.0);
    let y = &x * theta + random_matrix(rng, n, k, 0.5);
    TaskDataset::shared(x, y).unwrap()
}

/// Random graph over `size` items: a spanning chain plus each remaining pair
/// with probability `density`, weights uniform in `[0.1, 1]`.
pub fn random_edges(rng: &mut ChaCha8Rng, size: usize, density: f64) -> AxisEdges {
    let mut e = Vec::new();
    for i in 0..size {
        for j in (i + 1)..size {
            if j == i + 1 || rng.random::<f64>() < density {
                e.push(Edge::new(i, j, rng.random_range(0.1..1.0)));
            }
        }
    }
    AxisEdges::new(size, e).unwrap()
}

/// `(i, j, w, c)` with `c = ±1`.
pub type RawEdge = (usize, usize, f64, f64);

pub fn raw(edges: &AxisEdges) -> Vec<RawEdge> {
    edges.edges().iter().map(|e| (e.i, e.j, e.weight, e.sign.value())).collect()
}

/// `Σ w ‖A·i − c A·j‖` over columns.
pub fn column_fusion(a: &DMatrix<f64>, edges: &[RawEdge]) -> f64 {
    edges
        .iter()
        .map(|&(i, j, w, c)| {
            let mut s = 0.0;
            for r in 0..a.nrows() {
                s += (a[(r, i)] - c * a[(r, j)]).powi(2);
            }
            w * s.sqrt()
        })
        .sum()
}

/// `Σ w ‖A_i· − c A_j·‖` over rows.
pub fn row_fusion(a: &DMatrix<f64>, edges: &[RawEdge]) -> f64 {
    column_fusion(&a.transpose(), edges)
}

pub fn bicluster_penalty(a: &DMatrix<f64>, w: &EdgeWeights) -> f64 {
    column_fusion(a, &raw(&w.columns)) + row_fusion(a, &raw(&w.rows))
}

pub fn loss(data: &TaskDataset, theta: &DMatrix<f64>) -> f64 {
    let x = data.task_design(0);
    (data.responses() - x * theta).norm_squared()
}

pub fn l1(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

pub fn f1_objective(data: &TaskDataset, theta: &DMatrix<f64>, w: &EdgeWeights, l1m: f64, l2m: f64) -> f64 {
    loss(data, theta) + l1m * l1(theta) + l2m * bicluster_penalty(theta, w)
}

pub fn f2_objective(data: &TaskDataset, theta: &DMatrix<f64>, gamma: &DMatrix<f64>, w: &EdgeWeights, l1m: f64, l2m: f64, l3m: f64) -> f64 {
    loss(data, theta) + l1m * l1(theta) + l2m * (theta - gamma).norm_squared() + l3m * bicluster_penalty(gamma, w)
}

/// Dense matrix `K` whose row blocks are the edge differences of `vec(A)`
/// (column-major), with the radius of each block's dual ball.
fn difference_operator(p: usize, k: usize, cols: &[RawEdge], rows: &[RawEdge], nu: f64) -> (DMatrix<f64>, Vec<(usize, usize, f64)>) {
    let total: usize = cols.len() * p + rows.len() * k;
    let mut op = DMatrix::zeros(total, p * k);
    let mut blocks = Vec::new();
    let mut at = 0;
    for &(i, j, w, c) in cols {
        for r in 0..p {
            op[(at + r, i * p + r)] = 1.0;
            op[(at + r, j * p + r)] = -c;
        }
        blocks.push((at, p, nu * w));
        at += p;
    }
    for &(i, j, w, c) in rows {
        for s in 0..k {
            op[(at + s, s * p + i)] = 1.0;
            op[(at + s, s * p + j)] = -c;
        }
        blocks.push((at, k, nu * w));
        at += k;
    }
    (op, blocks)
}

/// `argmin_A ½‖A − M‖² + ν[Σ_cols w‖…‖ + Σ_rows w‖…‖]` by accelerated
/// Chambolle–Pock on the dense difference operator.
pub fn reference_fusion_prox(m: &DMatrix<f64>, cols: &[RawEdge], rows: &[RawEdge], nu: f64, iters: usize) -> DMatrix<f64> {
    let (p, k) = m.shape();
    let (op, blocks) = difference_operator(p, k, cols, rows, nu);
    let target = DVector::from_column_slice(m.as_slice());
    if op.nrows() == 0 {
        return m.clone();
    }
    let norm = op.clone().svd(false, false).singular_values.max();
    let mut tau = 1.0 / norm;
    let mut sigma = 1.0 / norm;
    let mut x = target.clone();
    let mut xbar = x.clone();
    let mut y = DVector::zeros(op.nrows());
    for _ in 0..iters {
        y += &op * &xbar * sigma;
        for &(start, len, radius) in &blocks {
            let mut b = y.rows_mut(start, len);
            let nb = b.norm();
            if nb > radius {
                b *= radius / nb;
            }
        }
        let next = (&x - op.tr_mul(&y) * tau + &target * tau) / (1.0 + tau);
        let theta = 1.0 / (1.0 + 2.0 * tau).sqrt();
        tau *= theta;
        sigma /= theta;
        xbar = &next + (&next - &x) * theta;
        x = next;
    }
    DMatrix::from_column_slice(p, k, x.as_slice())
}

/// `argmin_A σ‖Y − XA‖² + ½‖A − B‖²` by plain gradient descent.
pub fn reference_ridge_prox(b: &DMatrix<f64>, data: &TaskDataset, sigma: f64, iters: usize) -> DMatrix<f64> {
    let x = data.task_design(0);
    let y = data.responses();
    let lip = 2.0 * sigma * x.tr_mul(x).symmetric_eigenvalues().max() + 1.0;
    let mut a = b.clone();
    for _ in 0..iters {
        let grad = x.tr_mul(&(x * &a - y)) * (2.0 * sigma) + (&a - b);
        a -= grad / lip;
    }
    a
}

/// Minimizer of a convex scalar function on `[lo, hi]`, located by bisection
/// on the sign of its right derivative `dplus`.
pub fn bisect_minimizer(dplus: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dplus(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Right derivative of `t|a| + ½(a − v)²`.
pub fn l1_prox_dplus(a: f64, v: f64, t: f64) -> f64 {
    (if a >= 0.0 { t } else { -t }) + (a - v)
}

/// Lasso `‖y − Xβ‖² + λ‖β‖₁` by long-run FISTA.
pub fn reference_lasso(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, iters: usize) -> DVector<f64> {
    let lip = 2.0 * x.tr_mul(x).symmetric_eigenvalues().max().max(1e-12);
    let p = x.ncols();
    let mut beta = DVector::zeros(p);
    let mut z = beta.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let grad = x.tr_mul(&(x * &z - y)) * 2.0;
        let v = &z - grad / lip;
        let next = v.map(|u| u.signum() * (u.abs() - lambda / lip).max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &beta) * ((t - 1.0) / t_next);
        beta = next;
        t = t_next;
    }
    beta
}

pub fn lasso_value(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    (y - x * beta).norm_squared() + lambda * beta.iter().map(|v| v.abs()).sum::<f64>()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A subgradient of `Σ w‖A·i − c A·j‖` over columns, added into `g`.
fn add_column_fusion_subgradient(a: &DMatrix<f64>, edges: &[RawEdge], scale: f64, g: &mut DMatrix<f64>) {
    for &(i, j, w, c) in edges {
        let d = a.column(i) - a.column(j) * c;
        let nd = d.norm();
        if nd > 0.0 {
            let u = d * (scale * w / nd);
            for r in 0..a.nrows() {
                g[(r, i)] += u[r];
                g[(r, j)] -= c * u[r];
            }
        }
    }
}

fn add_bicluster_subgradient(a: &DMatrix<f64>, w: &EdgeWeights, scale: f64, g: &mut DMatrix<f64>) {
    add_column_fusion_subgradient(a, &raw(&w.columns), scale, g);
    let mut gt = g.transpose();
    add_column_fusion_subgradient(&a.transpose(), &raw(&w.rows), scale, &mut gt);
    *g = gt.transpose();
}

/// Normalized subgradient descent with `phases` geometric step reductions,
/// each phase restarting from the best point so far. Returns the best value.
fn restarted_subgradient(
    start: DVector<f64>,
    total_iters: usize,
    phases: usize,
    step0: f64,
    value: impl Fn(&DVector<f64>) -> f64,
    subgradient: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> (DVector<f64>, f64) {
    let mut best = start.clone();
    let mut best_val = value(&best);
    let per = total_iters / phases;
    let mut step = step0;
    for _ in 0..phases {
        let mut x = best.clone();
        for t in 0..per {
            let g = subgradient(&x);
            let ng = g.norm();
            if ng == 0.0 {
                break;
            }
            x -= g * (step / (ng * (1.0 + t as f64 / per as f64)));
            let v = value(&x);
            if v < best_val {
                best_val = v;
                best.copy_from(&x);
            }
        }
        step *= 0.5;
    }
    (best, best_val)
}

/// Minimum of the direct objective found by generic subgradient descent.
pub fn reference_f1(data: &TaskDataset, w: &EdgeWeights, l1m: f64, l2m: f64, iters: usize) -> f64 {
    let (p, k) = (data.p(), data.k());
    let x = data.task_design(0).clone();
    let y = data.responses().clone();
    let unstack = |v: &DVector<f64>| DMatrix::from_column_slice(p, k, v.as_slice());
    let value = |v: &DVector<f64>| f1_objective(data, &unstack(v), w, l1m, l2m);
    let sub = |v: &DVector<f64>| {
        let t = unstack(v);
        let mut g = x.tr_mul(&(&x * &t - &y)) * 2.0 + t.map(sign) * l1m;
        add_bicluster_subgradient(&t, w, l2m, &mut g);
        DVector::from_column_slice(g.as_slice())
    };
    restarted_subgradient(DVector::zeros(p * k), iters, 40, 1.0, value, sub).1
}

/// Minimum of the surrogate objective found by generic subgradient descent
/// over the stacked pair `(Θ, Γ)`.
pub fn reference_f2(data: &TaskDataset, w: &EdgeWeights, l1m: f64, l2m: f64, l3m: f64, iters: usize) -> f64 {
    let (p, k) = (data.p(), data.k());
    let x = data.task_design(0).clone();
    let y = data.responses().clone();
    let size = p * k;
    let split = |v: &DVector<f64>| {
        (
            DMatrix::from_column_slice(p, k, &v.as_slice()[..size]),
            DMatrix::from_column_slice(p, k, &v.as_slice()[size..]),
        )
    };
    let value = |v: &DVector<f64>| {
        let (t, g) = split(v);
        f2_objective(data, &t, &g, w, l1m, l2m, l3m)
    };
    let sub = |v: &DVector<f64>| {
        let (t, g) = split(v);
        let diff = (&t - &g) * (2.0 * l2m);
        let gt = x.tr_mul(&(&x * &t - &y)) * 2.0 + t.map(sign) * l1m + &diff;
        let mut gg = -diff;
        add_bicluster_subgradient(&g, w, l3m, &mut gg);
        let mut out = DVector::zeros(2 * size);
        out.rows_mut(0, size).copy_from_slice(gt.as_slice());
        out.rows_mut(size, size).copy_from_slice(gg.as_slice());
        out
    };
    restarted_subgradient(DVector::zeros(2 * size), iters, 40, 1.0, value, sub).1
}

/// Pair counts `(tp, fp, fn, tn)` by enumerating every unordered pair.
pub fn enumerate_pairs(pred: &[usize], truth: &[usize]) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        for j in (i + 1)..pred.len() {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    (tp, fp, fn_, tn)
}

/// ARI, F-1 and Jaccard from enumerated pair counts.
pub fn pair_scores(pred: &[usize], truth: &[usize]) -> (f64, f64, f64) {
    let (tp, fp, fn_, tn) = enumerate_pairs(pred, truth);
    let total = (tp + fp + fn_ + tn) as f64;
    let same_pred = (tp + fp) as f64;
    let same_truth = (tp + fn_) as f64;
    let expected = same_pred * same_truth / total;
    let max = 0.5 * (same_pred + same_truth);
    let ari = if max == expected { 1.0 } else { (tp as f64 - expected) / (max - expected) };
    let f1 = if tp == 0 {
        0.0
    } else {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fn_) as f64;
        2.0 * precision * recall / (precision + recall)
    };
    let ji = if tp + fp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fp + fn_) as f64 };
    (ari, f1, ji)
}

pub fn random_labels(rng: &mut ChaCha8Rng, m: usize) -> Vec<usize> {
    let k = rng.random_range(1..=m);
    (0..m).map(|_| rng.random_range(0..k)).collect()
}

pub fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}
