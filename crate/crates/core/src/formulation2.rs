//! Alternating minimization for the surrogate formulation
//!
//! `‖Y − XΘ‖²_F + λ1‖Θ‖₁ + λ2‖Θ − Γ‖²_F + λ3 [Ω_W(Γ) + Ω_W̃(Γᵀ)]`.
//!
//! The Θ-step is `k` independent augmented Lasso problems; the Γ-step is one
//! convex bi-clustering of Θ. Each half-step is accepted only if it does not
//! raise the objective, so the recorded trace is non-increasing.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{input, Result};
use crate::lasso::{multitask_lasso, solve_gram, LassoOptions};
use crate::model::{nonfinite, unchecked_f2, CoefficientMatrix, EdgeWeights, FitResult, Hyperparameters, TaskDataset};
use crate::prox::{Cobra, ProxConfig};

/// Starting point for the alternating solver.
#[derive(Debug, Clone)]
pub struct F2Start {
    pub theta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

/// Solves the surrogate formulation from the pilot Lasso estimate.
pub fn fit_formulation2(data: &TaskDataset, edges: &EdgeWeights, hp: &Hyperparameters, cfg: &ProxConfig) -> Result<FitResult> {
    fit_formulation2_from(data, edges, hp, cfg, None)
}

/// Solves the surrogate formulation from an explicit start (or the pilot
/// Lasso estimate for both matrices when `start` is `None`).
pub fn fit_formulation2_from(
    data: &TaskDataset,
    edges: &EdgeWeights,
    hp: &Hyperparameters,
    cfg: &ProxConfig,
    start: Option<&F2Start>,
) -> Result<FitResult> {
    hp.validate()?;
    cfg.validate()?;
    edges.check_shape(data.p(), data.k())?;
    if hp.lambda2 <= 0.0 {
        return input("the surrogate formulation needs lambda2 > 0; with lambda2 = 0 the surrogate is undetermined");
    }
    let (p, k) = (data.p(), data.k());
    let lasso_opts = LassoOptions {
        kkt_tol: 1e-9,
        ..Default::default()
    };
    let (mut theta, mut gamma) = match start {
        Some(s) => {
            data.check_theta(&s.theta, "initial theta")?;
            data.check_theta(&s.gamma, "initial gamma")?;
            (s.theta.clone(), s.gamma.clone())
        }
        None => {
            let (pilot, _) = multitask_lasso(data, hp.lambda1, &lasso_opts)?;
            (pilot.clone(), pilot)
        }
    };

    // Gram matrices of the augmented systems: XᵀX + λ2 I.
    let grams: Vec<DMatrix<f64>> = if data.is_shared() {
        vec![data.task_design(0)]
    } else {
        (0..k).map(|s| data.task_design(s)).collect()
    }
    .into_iter()
    .map(|x| {
        let mut g = x.tr_mul(x);
        for d in 0..p {
            g[(d, d)] += hp.lambda2;
        }
        g
    })
    .collect();
    let xty: Vec<DVector<f64>> = (0..k)
        .map(|s| data.task_design(s).tr_mul(&data.responses().column(s)))
        .collect();

    let nu = hp.lambda3 / (2.0 * hp.lambda2);
    let mut cobra = Cobra::new(edges, cfg);
    let objective = |t: &DMatrix<f64>, g: &DMatrix<f64>| unchecked_f2(data, t, g, edges, hp);

    let mut current = objective(&theta, &gamma);
    let mut trace = vec![current];
    let mut converged = false;
    let mut inner_ok = true;
    let mut iterations = 0;
    while iterations < hp.max_iter {
        iterations += 1;

        let columns: Vec<(DVector<f64>, bool)> = (0..k)
            .into_par_iter()
            .map(|s| {
                let gram = &grams[if grams.len() == 1 { 0 } else { s }];
                let rhs = &xty[s] + gamma.column(s) * hp.lambda2;
                let fit = solve_gram(gram, &rhs, hp.lambda1, theta.column(s).clone_owned(), &lasso_opts);
                (fit.beta, fit.converged)
            })
            .collect();
        let mut candidate = DMatrix::zeros(p, k);
        let mut lasso_ok = true;
        for (s, (beta, ok)) in columns.into_iter().enumerate() {
            candidate.set_column(s, &beta);
            lasso_ok &= ok;
        }
        if candidate.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite("alternating solver", "coefficient step"));
        }
        let after_theta = objective(&candidate, &gamma);
        if after_theta <= current {
            theta = candidate;
            current = after_theta;
        }

        let step = cobra.solve(&theta, nu, cfg);
        if step.value.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite("alternating solver", "bi-clustering step"));
        }
        let after_gamma = objective(&theta, &step.value);
        if after_gamma <= current {
            gamma = step.value;
            current = after_gamma;
        }
        inner_ok = lasso_ok && step.converged;

        let previous = *trace.last().expect("trace starts non-empty");
        trace.push(current);
        if previous - current <= hp.tol * previous.abs() {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        theta: CoefficientMatrix::new(theta)?,
        gamma: Some(CoefficientMatrix::new(gamma)?),
        objective_trace: trace,
        iterations,
        converged: converged && inner_ok,
    })
}
