mod common;

use bifuse::datagen::{synthetic_problem, GeneratorSpec};
use bifuse::formulation1::fit_formulation1;
use bifuse::formulation2::fit_formulation2;
use bifuse::metrics::adjusted_rand;
use bifuse::pipeline::{pilot_weights, suggested_gamma, Formulation};
use bifuse::prox::ProxConfig;
use bifuse::selection::{
    cluster_thresholds, cross_validate, estimate_sigma, extract_clusters, pairwise_distances, solution_path, CvConfig, CvGrid,
    PathParameter, Split,
};
use bifuse::{Axis, FusionMode, Hyperparameters};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_problem(seed: u64) -> bifuse::datagen::SyntheticProblem {
    synthetic_problem(&GeneratorSpec::even(30, 8, 6, 2, 2, 1.0, seed), 20, 20).unwrap()
}

#[test]
fn sigma_estimate_recovers_noise_level() {
    let prob = synthetic_problem(&GeneratorSpec::even(200, 20, 15, 2, 3, 1.5, 5), 1, 1).unwrap();
    let s = estimate_sigma(&prob.train, prob.theta_star.values()).unwrap();
    assert!((s / 1.5 - 1.0).abs() <= 0.15, "{s}");
}

#[test]
fn column_threshold_on_a_line() {
    // columns at 0, 1, 3: distances 1, 3, 2 with sample std 1
    let m = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 3.0]);
    let (_, tau_c) = cluster_thresholds(&m, 2.0, 1, 3).unwrap();
    let expected = 0.5 * (2.0 * 3f64.ln().sqrt() + 1.0);
    assert!((tau_c - expected).abs() < 1e-12);
}

#[test]
fn distance_spread_matches_independent_computation() {
    let m = DMatrix::from_columns(&[
        nalgebra::DVector::from_vec(vec![1.0, 2.0]),
        nalgebra::DVector::from_vec(vec![1.0, 2.0]),
        nalgebra::DVector::from_vec(vec![-1.0, 0.5]),
        nalgebra::DVector::from_vec(vec![-1.0, 0.5]),
    ]);
    let mut d = Vec::new();
    for i in 0..4 {
        for j in (i + 1)..4 {
            d.push((m.column(i) - m.column(j)).norm());
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
    let (_, tau_c) = cluster_thresholds(&m, 0.0, 10, 2).unwrap();
    assert!((tau_c - 0.5 * sd).abs() < 1e-12);
    let mut ours = pairwise_distances(&m, Axis::Columns);
    ours.sort_by(f64::total_cmp);
    d.sort_by(f64::total_cmp);
    assert_eq!(ours.len(), d.len());
    assert!(ours.iter().zip(&d).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn transitive_grouping() {
    let m = DMatrix::from_row_slice(1, 3, &[0.0, 0.1, 0.2]);
    let a = extract_clusters(&m, 0.0, 0.15);
    assert_eq!(a.col_labels, vec![0, 0, 0]);
}

#[test]
fn warm_and_cold_path_fits_agree() {
    let prob = small_problem(3);
    let tol = 1e-8;
    let base = Hyperparameters {
        lambda1: 1.0,
        gamma: suggested_gamma(&prob.train),
        tol,
        max_iter: 100_000,
        ..Default::default()
    };
    let edges = pilot_weights(&prob.train, &base, FusionMode::Bicluster).unwrap();
    let cfg = ProxConfig {
        inner_tol: 1e-10,
        ..Default::default()
    };
    let grid = [0.0, 1.0, 10.0, 100.0];
    let path = solution_path(&prob.train, &edges, &grid, PathParameter::Lambda2F1, &base, &cfg).unwrap();
    for point in &path.points {
        let cold = fit_formulation1(&prob.train, &edges, &Hyperparameters { lambda2: point.penalty, ..base }, &cfg).unwrap();
        let c = cold.final_objective().unwrap();
        assert!((point.objective - c).abs() <= 10.0 * tol * c, "{} vs {c}", point.objective);
    }
    let f2 = Hyperparameters { lambda2: 5.0, ..base };
    let path = solution_path(&prob.train, &edges, &grid, PathParameter::Lambda3F2, &f2, &cfg).unwrap();
    for point in &path.points {
        let cold = fit_formulation2(&prob.train, &edges, &Hyperparameters { lambda3: point.penalty, ..f2 }, &cfg).unwrap();
        let c = cold.final_objective().unwrap();
        assert!((point.objective - c).abs() <= 10.0 * tol * c, "{} vs {c}", point.objective);
    }
}

#[test]
fn path_ends_fully_fused() {
    let prob = small_problem(4);
    let base = Hyperparameters {
        lambda1: 0.5,
        gamma: suggested_gamma(&prob.train),
        ..Default::default()
    };
    let edges = pilot_weights(&prob.train, &base, FusionMode::Bicluster).unwrap();
    let path = solution_path(&prob.train, &edges, &[0.0, 1e12], PathParameter::Lambda2F1, &base, &ProxConfig::default()).unwrap();
    let last = path.points.last().unwrap();
    assert_eq!((last.n_row_clusters, last.n_col_clusters), (1, 1));
    assert!(path.points[0].n_col_clusters >= last.n_col_clusters);
}

fn cv_config(prob: &bifuse::datagen::SyntheticProblem, formulation: Formulation) -> CvConfig {
    CvConfig {
        formulation,
        split: Split::External(prob.validation.clone()),
        mode: FusionMode::Bicluster,
        base: Hyperparameters {
            gamma: suggested_gamma(&prob.train),
            ..Default::default()
        },
        prox: ProxConfig::default(),
    }
}

#[test]
fn single_point_grid_is_returned() {
    let prob = small_problem(5);
    let grid = CvGrid {
        lambda1: vec![0.3],
        lambda2: vec![2.0],
        lambda3: vec![4.0],
    };
    let chosen = cross_validate(&prob.train, None, &grid, &cv_config(&prob, Formulation::Surrogate)).unwrap().chosen;
    assert_eq!((chosen.lambda1, chosen.lambda2, chosen.lambda3), (0.3, 2.0, 4.0));
}

#[test]
fn chosen_penalty_is_no_worse_than_endpoints_and_reproducible() {
    let prob = small_problem(6);
    let grid = CvGrid {
        lambda1: geometric(0.01, 10.0, 5),
        lambda2: geometric(0.1, 1e4, 6),
        lambda3: vec![],
    };
    let cfg = cv_config(&prob, Formulation::Direct);
    let a = cross_validate(&prob.train, None, &grid, &cfg).unwrap();
    let b = cross_validate(&prob.train, None, &grid, &cfg).unwrap();
    assert_eq!(a, b);
    let rmse_at = |l2: f64| a.stage2_scores.iter().find(|s| s.lambda2 == l2).unwrap().rmse;
    let best = rmse_at(a.chosen.lambda2);
    assert!(best <= rmse_at(0.1) && best <= rmse_at(1e4));
}

#[test]
fn kfold_selection_is_deterministic() {
    let prob = small_problem(7);
    let grid = CvGrid {
        lambda1: geometric(0.01, 10.0, 4),
        lambda2: vec![0.0, 1.0, 100.0],
        lambda3: vec![],
    };
    let cfg = CvConfig {
        split: Split::KFold { folds: 3, seed: 9 },
        ..cv_config(&prob, Formulation::Direct)
    };
    let a = cross_validate(&prob.train, None, &grid, &cfg).unwrap();
    let b = cross_validate(&prob.train, None, &grid, &cfg).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extraction_is_permutation_equivariant(seed in any::<u64>(), tau_r in 0.0f64..3.0, tau_c in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_matrix(&mut rng, 6, 5, 1.5).map(|v| v.round());
        let mut rows: Vec<usize> = (0..6).collect();
        let mut cols: Vec<usize> = (0..5).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        let permuted = DMatrix::from_fn(6, 5, |i, j| m[(rows[i], cols[j])]);
        let a = extract_clusters(&m, tau_r, tau_c);
        let b = extract_clusters(&permuted, tau_r, tau_c);
        let back_rows: Vec<usize> = rows.iter().map(|&r| a.row_labels[r]).collect();
        let back_cols: Vec<usize> = cols.iter().map(|&c| a.col_labels[c]).collect();
        prop_assert_eq!(adjusted_rand(&back_rows, &b.row_labels).unwrap(), 1.0);
        prop_assert_eq!(adjusted_rand(&back_cols, &b.col_labels).unwrap(), 1.0);
    }
}
