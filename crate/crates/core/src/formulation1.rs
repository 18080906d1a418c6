//! Proximal decomposition for the direct formulation
//!
//! `‖Y − XΘ‖²_F + λ1‖Θ‖₁ + λ2 [Ω_W(Θ) + Ω_W̃(Θᵀ)]`,
//!
//! split into the loss, the ℓ1 term and the fusion term. Every iteration
//! evaluates the three proxes at their own auxiliary points, averages the
//! results and reflects each auxiliary point about the average.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::lasso::{multitask_lasso, LassoOptions};
use crate::model::{nonfinite, unchecked_f1, CoefficientMatrix, EdgeWeights, FitResult, Hyperparameters, TaskDataset};
use crate::prox::{prox_l1, Cobra, ProxConfig, RidgeProx};

/// Solves the direct formulation with every auxiliary point starting at the
/// pilot Lasso estimate.
pub fn fit_formulation1(data: &TaskDataset, edges: &EdgeWeights, hp: &Hyperparameters, cfg: &ProxConfig) -> Result<FitResult> {
    fit_formulation1_from(data, edges, hp, cfg, None)
}

/// Solves the direct formulation from explicit auxiliary starting points
/// (loss, ℓ1, fusion), or from the pilot Lasso estimate when `start` is `None`.
pub fn fit_formulation1_from(
    data: &TaskDataset,
    edges: &EdgeWeights,
    hp: &Hyperparameters,
    cfg: &ProxConfig,
    start: Option<&[DMatrix<f64>; 3]>,
) -> Result<FitResult> {
    hp.validate()?;
    cfg.validate()?;
    edges.check_shape(data.p(), data.k())?;
    let mut aux: [DMatrix<f64>; 3] = match start {
        Some(s) => {
            for m in s {
                data.check_theta(m, "initial auxiliary point")?;
            }
            s.clone()
        }
        None => {
            let (pilot, _) = multitask_lasso(data, hp.lambda1, &LassoOptions::default())?;
            [pilot.clone(), pilot.clone(), pilot]
        }
    };

    let gamma = hp.gamma;
    let ridge = RidgeProx::new(data, gamma)?;
    let mut cobra = Cobra::new(edges, cfg);
    let l1_threshold = gamma * hp.lambda1;
    let fusion_nu = gamma * hp.lambda2;

    let mut hat = (&aux[0] + &aux[1] + &aux[2]) / 3.0;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut fusion_ok = true;
    let mut iterations = 0;
    while iterations < hp.max_iter {
        iterations += 1;
        let p_loss = ridge.apply(&aux[0]);
        if p_loss.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite("loss prox", "ridge step"));
        }
        let p_l1 = prox_l1(&aux[1], l1_threshold);
        if p_l1.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite("l1 prox", "soft-threshold step"));
        }
        let fusion = cobra.solve(&aux[2], fusion_nu, cfg);
        if fusion.value.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite("fusion prox", "bi-clustering step"));
        }
        fusion_ok = fusion.converged;
        let p_fusion = fusion.value;

        let avg = (&p_loss + &p_l1 + &p_fusion) / 3.0;
        let reflect = &avg * 2.0 - &hat;
        for (a, p) in aux.iter_mut().zip([&p_loss, &p_l1, &p_fusion]) {
            *a += &reflect - p;
        }
        let change = (&avg - &hat).norm() / (1.0 + hat.norm());
        hat = avg;
        trace.push(unchecked_f1(data, &hat, edges, hp.lambda1, hp.lambda2));
        if change < hp.tol {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        theta: CoefficientMatrix::new(hat)?,
        gamma: None,
        objective_trace: trace,
        iterations,
        converged: converged && fusion_ok,
    })
}
