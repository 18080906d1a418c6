//! k-nearest-neighbor Gaussian-kernel similarity weights over the columns
//! and rows of a pilot estimate.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{input, Error, Result};
use crate::model::{Axis, AxisEdges, Edge, EdgeWeights, FusionMode, Hyperparameters};
use crate::union_find::UnionFind;

/// Kernel values below this are treated as zero and the edge is dropped.
pub const MIN_WEIGHT: f64 = 1e-12;

/// Items along `axis` as owned vectors.
fn items(m: &DMatrix<f64>, axis: Axis) -> Vec<Vec<f64>> {
    match axis {
        Axis::Columns => m.column_iter().map(|c| c.iter().copied().collect()).collect(),
        Axis::Rows => m.row_iter().map(|r| r.iter().copied().collect()).collect(),
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn pairwise_sq_dists(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .par_iter()
        .map(|a| points.iter().map(|b| sq_dist(a, b)).collect())
        .collect()
}

/// Weights `w_ij = exp(−φ‖m_i − m_j‖²)` on the edges of the symmetric
/// κ-nearest-neighbor graph: `(i, j)` is kept when `j` is among `i`'s κ
/// nearest items or `i` among `j`'s. Distance ties go to the smaller index.
pub fn knn_gaussian_weights(m: &DMatrix<f64>, kappa: usize, phi: f64, axis: Axis) -> Result<AxisEdges> {
    if !(phi.is_finite() && phi >= 0.0) {
        return input(format!("phi must be finite and nonnegative, got {phi}"));
    }
    let points = items(m, axis);
    let size = points.len();
    if kappa == 0 || kappa >= size {
        return input(format!(
            "kappa = {kappa} must be positive and smaller than the {size} items along {axis:?}"
        ));
    }
    let d2 = pairwise_sq_dists(&points);
    let mut linked = vec![vec![false; size]; size];
    for i in 0..size {
        let mut order: Vec<usize> = (0..size).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| d2[i][a].total_cmp(&d2[i][b]).then(a.cmp(&b)));
        for &j in &order[..kappa] {
            linked[i.min(j)][i.max(j)] = true;
        }
    }
    let mut edges = Vec::new();
    for i in 0..size {
        for j in (i + 1)..size {
            if linked[i][j] {
                let w = (-phi * d2[i][j]).exp();
                if w >= MIN_WEIGHT {
                    edges.push(Edge::new(i, j, w));
                }
            }
        }
    }
    AxisEdges::new(size, edges)
}

/// Adds the shortest edges that join the components of `edges` until the
/// graph is connected (Kruskal over the remaining pairs).
///
/// New edges carry the kernel weight of their length, floored at
/// [`MIN_WEIGHT`]. Without this the full-fusion limit is unreachable when the
/// neighbor graph splits into separate groups.
pub fn connect_components(m: &DMatrix<f64>, edges: &AxisEdges, phi: f64, axis: Axis) -> Result<AxisEdges> {
    let points = items(m, axis);
    let size = points.len();
    if edges.size() != size {
        return input("edge set does not match matrix axis");
    }
    let mut uf = UnionFind::new(size);
    for e in edges.edges() {
        uf.union(e.i, e.j);
    }
    if uf.components() <= 1 {
        return Ok(edges.clone());
    }
    let d2 = pairwise_sq_dists(&points);
    let mut pairs: Vec<(usize, usize)> = (0..size)
        .flat_map(|i| ((i + 1)..size).map(move |j| (i, j)))
        .collect();
    pairs.sort_by(|a, b| d2[a.0][a.1].total_cmp(&d2[b.0][b.1]).then(a.cmp(b)));
    let mut out: Vec<Edge> = edges.edges().to_vec();
    for (i, j) in pairs {
        if uf.components() == 1 {
            break;
        }
        if uf.union(i, j) {
            let w = (-phi * d2[i][j]).exp().max(MIN_WEIGHT);
            out.push(Edge::new(i, j, w));
        }
    }
    out.sort_by_key(|e| (e.i, e.j));
    AxisEdges::new(size, out)
}

fn rescale_axis(edges: &AxisEdges, target: f64, axis: &str) -> Result<AxisEdges> {
    if edges.is_empty() {
        return Ok(edges.clone());
    }
    let total = edges.total_weight();
    if total <= 0.0 {
        return Err(Error::DegenerateWeights(format!("all {axis} weights are zero")));
    }
    let scaled = edges.scaled(target / total);
    // Re-validate so any weight that underflowed to zero is dropped.
    AxisEdges::new(scaled.size(), scaled.edges().iter().copied())
}

/// Rescales column weights to sum to `1/√n` and row weights to `1/√p`.
pub fn normalize_weights(edges: &EdgeWeights, n: usize, p: usize) -> Result<EdgeWeights> {
    if n == 0 || p == 0 {
        return input("n and p must be positive");
    }
    Ok(EdgeWeights {
        columns: rescale_axis(&edges.columns, 1.0 / (n as f64).sqrt(), "column")?,
        rows: rescale_axis(&edges.rows, 1.0 / (p as f64).sqrt(), "row")?,
    })
}

/// Centers `m` by its grand mean and scales it to unit Frobenius norm.
pub fn standardize_pilot(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.mean();
    let centered = m.map(|v| v - mean);
    let norm = centered.norm();
    if norm > 0.0 {
        centered / norm
    } else {
        centered
    }
}

/// Full weight construction from a pilot estimate: standardize, build κ-NN
/// kernel weights per axis, join disconnected components, normalize.
///
/// An axis with fewer than two items, or disabled by `mode`, gets no edges.
/// κ is capped at one less than the axis size.
pub fn weights_from_pilot(pilot: &DMatrix<f64>, hp: &Hyperparameters, n: usize, mode: FusionMode) -> Result<EdgeWeights> {
    let (p, k) = pilot.shape();
    let scaled = standardize_pilot(pilot);
    let build = |axis: Axis, size: usize| -> Result<AxisEdges> {
        if size < 2 {
            return Ok(AxisEdges::empty(size));
        }
        let kappa = hp.kappa.min(size - 1);
        let knn = knn_gaussian_weights(&scaled, kappa, hp.phi, axis)?;
        connect_components(&scaled, &knn, hp.phi, axis)
    };
    let columns = match mode {
        FusionMode::RowsOnly => AxisEdges::empty(k),
        _ => build(Axis::Columns, k)?,
    };
    let rows = match mode {
        FusionMode::ColumnsOnly => AxisEdges::empty(p),
        _ => build(Axis::Rows, p)?,
    };
    normalize_weights(&EdgeWeights::new(columns, rows), n, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn has_edge(e: &AxisEdges, i: usize, j: usize) -> bool {
        e.edges().iter().any(|x| x.i == i && x.j == j)
    }

    #[test]
    fn identical_columns_get_unit_weight() {
        let m = dmatrix![1.0, 1.0, 5.0; 2.0, 2.0, 7.0];
        let e = knn_gaussian_weights(&m, 1, 3.0, Axis::Columns).unwrap();
        let w = e.edges().iter().find(|x| x.i == 0 && x.j == 1).unwrap().weight;
        assert_eq!(w, 1.0);
    }

    #[test]
    fn zero_phi_gives_uniform_weights() {
        let m = dmatrix![0.0, 1.0, 3.0, 7.0; 2.0, -1.0, 0.5, 0.0];
        let e = knn_gaussian_weights(&m, 2, 0.0, Axis::Columns).unwrap();
        assert!(!e.is_empty());
        assert!(e.edges().iter().all(|x| x.weight == 1.0));
    }

    #[test]
    fn kernel_value_matches_direct_evaluation() {
        // squared distance 0.1 between the two columns
        let m = dmatrix![0.0, 0.1_f64.sqrt(); 0.0, 0.0];
        let e = knn_gaussian_weights(&m, 1, 20.0, Axis::Columns).unwrap();
        assert_relative_eq!(e.edges()[0].weight, (-2.0_f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(e.edges()[0].weight, 0.1353352832366127, max_relative = 1e-12);
    }

    #[test]
    fn neighbor_relation_is_a_union() {
        // items on a line at 0, 1, 10: item 2's nearest is 1, item 0's nearest is 1
        let m = dmatrix![0.0, 1.0, 10.0];
        let e = knn_gaussian_weights(&m, 1, 0.0, Axis::Columns).unwrap();
        assert!(has_edge(&e, 0, 1));
        assert!(has_edge(&e, 1, 2));
        assert!(!has_edge(&e, 0, 2));
    }

    #[test]
    fn ties_prefer_smaller_index() {
        // item 1 is equidistant from 0 and 2
        let m = dmatrix![0.0, 1.0, 2.0, 50.0];
        let e = knn_gaussian_weights(&m, 1, 0.0, Axis::Columns).unwrap();
        assert!(has_edge(&e, 0, 1));
        assert!(has_edge(&e, 1, 2)); // from item 2's own list
        assert!(has_edge(&e, 2, 3));
    }

    #[test]
    fn kappa_must_be_smaller_than_axis() {
        let m = DMatrix::<f64>::zeros(2, 3);
        assert!(knn_gaussian_weights(&m, 3, 1.0, Axis::Columns).is_err());
        assert!(knn_gaussian_weights(&m, 2, 1.0, Axis::Rows).is_err());
        assert!(knn_gaussian_weights(&m, 0, 1.0, Axis::Columns).is_err());
    }

    #[test]
    fn underflowing_edges_are_dropped() {
        let m = dmatrix![0.0, 100.0];
        let e = knn_gaussian_weights(&m, 1, 20.0, Axis::Columns).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn normalize_small_cases() {
        let cols = AxisEdges::new(3, [Edge::new(0, 1, 1.0), Edge::new(1, 2, 1.0)]).unwrap();
        let rows = AxisEdges::new(4, [Edge::new(0, 3, 5.0)]).unwrap();
        let out = normalize_weights(&EdgeWeights::new(cols, rows), 4, 4).unwrap();
        assert!(out.columns.edges().iter().all(|e| e.weight == 0.25));
        assert_eq!(out.rows.edges()[0].weight, 0.5);
    }

    #[test]
    fn normalize_keeps_empty_axes() {
        let out = normalize_weights(&EdgeWeights::none(3, 2), 5, 3).unwrap();
        assert!(out.columns.is_empty() && out.rows.is_empty());
    }

    #[test]
    fn components_are_joined() {
        // two tight groups far apart; kappa 1 links only within groups
        let m = dmatrix![0.0, 0.1, 5.0, 5.1];
        let knn = knn_gaussian_weights(&m, 1, 0.0, Axis::Columns).unwrap();
        assert_eq!(knn.len(), 2);
        let joined = connect_components(&m, &knn, 0.0, Axis::Columns).unwrap();
        assert_eq!(joined.len(), 3);
        assert!(has_edge(&joined, 1, 2));
    }

    #[test]
    fn pilot_weights_respect_mode() {
        let m = DMatrix::from_fn(6, 4, |i, j| (i as f64 * 0.3 - j as f64).sin());
        let hp = Hyperparameters::default();
        let cols_only = weights_from_pilot(&m, &hp, 10, FusionMode::ColumnsOnly).unwrap();
        assert!(cols_only.rows.is_empty());
        assert!(!cols_only.columns.is_empty());
        let rows_only = weights_from_pilot(&m, &hp, 10, FusionMode::RowsOnly).unwrap();
        assert!(rows_only.columns.is_empty());
        assert_relative_eq!(rows_only.rows.total_weight(), 1.0 / 6f64.sqrt(), max_relative = 1e-10);
    }

    fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (2usize..8, 2usize..8).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-3.0f64..3.0, r * c)
                .prop_map(move |v| DMatrix::from_vec(r, c, v))
        })
    }

    proptest! {
        #[test]
        fn kernel_depends_only_on_phi_times_sq_distance(m in matrix_strategy(), scale in 0.2f64..5.0) {
            let k = m.ncols() - 1;
            let a = knn_gaussian_weights(&m, k.max(1), 0.7, Axis::Columns).unwrap();
            let b = knn_gaussian_weights(&(&m * scale), k.max(1), 0.7 / (scale * scale), Axis::Columns).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.edges().iter().zip(b.edges()) {
                prop_assert_eq!((x.i, x.j), (y.i, y.j));
                prop_assert!((x.weight - y.weight).abs() <= 1e-10 * x.weight.max(1e-300) + 1e-14);
            }
        }

        #[test]
        fn normalization_preserves_ratios(m in matrix_strategy(), n in 1usize..500) {
            let p = m.nrows();
            let cols = knn_gaussian_weights(&m, 1, 0.5, Axis::Columns).unwrap();
            let rows = knn_gaussian_weights(&m, 1, 0.5, Axis::Rows).unwrap();
            let raw = EdgeWeights::new(cols, rows);
            let out = normalize_weights(&raw, n, p).unwrap();
            for (before, after, target) in [
                (&raw.columns, &out.columns, 1.0 / (n as f64).sqrt()),
                (&raw.rows, &out.rows, 1.0 / (p as f64).sqrt()),
            ] {
                if before.is_empty() { continue; }
                prop_assert!((after.total_weight() - target).abs() <= 1e-10 * target);
                let r0 = after.edges()[0].weight / before.edges()[0].weight;
                for (b, a) in before.edges().iter().zip(after.edges()) {
                    prop_assert!((a.weight / b.weight - r0).abs() <= 1e-10 * r0);
                }
            }
        }
    }
}
