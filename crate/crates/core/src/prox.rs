//! Proximal operators used by both solvers.
//!
//! `prox_f(b) = argmin_a f(a) + ½‖a − b‖²`. Coefficient matrices are `p×k`
//! and column-major, so they double as the stacked vectors the operators are
//! defined on.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{input, Result};
use crate::model::{biclustering_penalty, Axis, AxisEdges, Edge, EdgeWeights, TaskDataset};

/// Dual step used by the fusion prox.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum AmaStep {
    /// `1 / λ_max(DᵀD)` for the edge-incidence operator `D`, the exact
    /// Lipschitz constant of the dual gradient.
    #[default]
    Auto,
    Fixed(f64),
}

/// Stopping rules for the iterative proximal operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxConfig {
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub ama_step: AmaStep,
}

impl Default for ProxConfig {
    fn default() -> Self {
        Self {
            inner_tol: 1e-6,
            inner_max_iter: 10_000,
            ama_step: AmaStep::Auto,
        }
    }
}

impl ProxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_tol.is_finite() && self.inner_tol > 0.0) {
            return input(format!("inner_tol must be positive, got {}", self.inner_tol));
        }
        if self.inner_max_iter == 0 {
            return input("inner_max_iter must be positive");
        }
        if let AmaStep::Fixed(s) = self.ama_step {
            if !(s.is_finite() && s > 0.0) {
                return input(format!("ama step must be positive, got {s}"));
            }
        }
        Ok(())
    }
}

/// Result of an iterative prox evaluation.
#[derive(Debug, Clone)]
pub struct ProxOutcome {
    pub value: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl ProxOutcome {
    fn exact(value: DMatrix<f64>) -> Self {
        Self {
            value,
            converged: true,
            iterations: 0,
        }
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        input(format!("{what} contains non-finite entries"))
    }
}

/// Prox of `σ‖Y − XΘ‖²_F` with the per-task factorizations of
/// `σ X_sᵀX_s + ½ I` computed once.
pub struct RidgeProx {
    sigma: f64,
    factors: Vec<Cholesky<f64, Dyn>>,
    shared: bool,
    xty: DMatrix<f64>,
}

impl RidgeProx {
    pub fn new(data: &TaskDataset, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return input(format!("ridge prox scale must be positive, got {sigma}"));
        }
        let p = data.p();
        let factor = |x: &DMatrix<f64>| {
            let mut a = x.tr_mul(x) * sigma;
            for d in 0..p {
                a[(d, d)] += 0.5;
            }
            // σXᵀX + ½I is positive definite for σ > 0
            Cholesky::new(a).expect("ridge system is positive definite")
        };
        let (factors, xty) = if data.is_shared() {
            let x = data.task_design(0);
            (vec![factor(x)], x.tr_mul(data.responses()))
        } else {
            let mut xty = DMatrix::zeros(p, data.k());
            let factors = (0..data.k())
                .map(|s| {
                    let x = data.task_design(s);
                    xty.set_column(s, &x.tr_mul(&data.responses().column(s)));
                    factor(x)
                })
                .collect();
            (factors, xty)
        };
        Ok(Self {
            sigma,
            factors,
            shared: data.is_shared(),
            xty,
        })
    }

    /// `a_s = (σ X_sᵀX_s + ½I)⁻¹ (σ X_sᵀy_s + ½ b_s)` for every task.
    pub fn apply(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut rhs = &self.xty * self.sigma + b * 0.5;
        if self.shared {
            self.factors[0].solve_mut(&mut rhs);
        } else {
            for (s, f) in self.factors.iter().enumerate() {
                let mut col = rhs.column(s).clone_owned();
                f.solve_mut(&mut col);
                rhs.set_column(s, &col);
            }
        }
        rhs
    }
}

/// Prox of `σ‖Y − XΘ‖²_F` evaluated at `b` (`p×k`).
pub fn prox_ridge(b: &DMatrix<f64>, data: &TaskDataset, sigma: f64) -> Result<DMatrix<f64>> {
    data.check_theta(b, "prox argument")?;
    check_finite(b, "prox argument")?;
    Ok(RidgeProx::new(data, sigma)?.apply(b))
}

/// Entrywise soft-thresholding, the prox of `threshold · ‖·‖₁`.
pub fn prox_l1(b: &DMatrix<f64>, threshold: f64) -> DMatrix<f64> {
    b.map(|v| soft_threshold(v, threshold))
}

#[inline]
pub(crate) fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

/// `λ_max(DᵀD)`, the squared spectral norm of the signed edge-incidence matrix.
fn incidence_norm_sq(edges: &AxisEdges) -> f64 {
    let n = edges.size();
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for e in edges.edges() {
        let c = e.sign.value();
        lap[(e.i, e.i)] += 1.0;
        lap[(e.j, e.j)] += 1.0;
        lap[(e.i, e.j)] -= c;
        lap[(e.j, e.i)] -= c;
    }
    if n == 0 {
        return 0.0;
    }
    lap.symmetric_eigenvalues().max()
}

/// Prox of `ν Σ w_ij ‖a_i − c_ij a_j‖` over the items of one axis, solved on
/// the dual by accelerated projected gradient ascent.
///
/// Each edge carries a dual vector `λ_l` confined to the ball of radius
/// `ν w_l`; the primal point is recovered as `a = m − Dᵀλ`. Iteration stops
/// once the duality gap falls below `tol · (1 + ½‖m‖²)`. The dual
/// variables persist between calls, so repeated solves on nearby inputs
/// start warm.
#[derive(Debug, Clone)]
pub struct FusionProx {
    axis: Axis,
    edges: Vec<Edge>,
    items: usize,
    step: f64,
    duals: Option<DMatrix<f64>>,
}

impl FusionProx {
    pub fn new(edges: &AxisEdges, axis: Axis, cfg: &ProxConfig) -> Self {
        let step = match cfg.ama_step {
            AmaStep::Auto => 1.0 / incidence_norm_sq(edges).max(f64::MIN_POSITIVE),
            AmaStep::Fixed(s) => s,
        };
        Self {
            axis,
            edges: edges.edges().to_vec(),
            items: edges.size(),
            step,
            duals: None,
        }
    }

    /// Forgets the warm-start state.
    pub fn reset(&mut self) {
        self.duals = None;
    }

    fn primal(&self, points: &DMatrix<f64>, duals: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        out.copy_from(points);
        for (l, e) in self.edges.iter().enumerate() {
            let c = e.sign.value();
            let lam = duals.column(l);
            for d in 0..points.nrows() {
                out[(d, e.i)] -= lam[d];
                out[(d, e.j)] += c * lam[d];
            }
        }
    }

    /// Duality gap `Σ_l ν w_l ‖(Da)_l‖ − ⟨λ_l, (Da)_l⟩` at the primal point
    /// recovered from `duals`.
    fn gap(&self, a: &DMatrix<f64>, duals: &DMatrix<f64>, nu: f64) -> f64 {
        let mut gap = 0.0;
        for (l, e) in self.edges.iter().enumerate() {
            let c = e.sign.value();
            let lam = duals.column(l);
            let (mut sq, mut dot) = (0.0, 0.0);
            for d in 0..a.nrows() {
                let diff = a[(d, e.i)] - c * a[(d, e.j)];
                sq += diff * diff;
                dot += lam[d] * diff;
            }
            gap += nu * e.weight * sq.sqrt() - dot;
        }
        gap
    }

    fn project(&self, duals: &mut DMatrix<f64>, nu: f64) {
        for (l, e) in self.edges.iter().enumerate() {
            let radius = nu * e.weight;
            let mut col = duals.column_mut(l);
            let norm = col.norm();
            if norm > radius {
                col *= radius / norm;
            }
        }
    }

    /// Evaluates the prox at `m` (`p×k`; items are its columns or rows).
    pub fn solve(&mut self, m: &DMatrix<f64>, nu: f64, cfg: &ProxConfig) -> ProxOutcome {
        if nu == 0.0 || self.edges.is_empty() {
            return ProxOutcome::exact(m.clone());
        }
        let points = match self.axis {
            Axis::Columns => m.clone(),
            Axis::Rows => m.transpose(),
        };
        debug_assert_eq!(points.ncols(), self.items);
        let dim = points.nrows();
        let n_edges = self.edges.len();
        let mut lam = match self.duals.take() {
            Some(d) if d.shape() == (dim, n_edges) => d,
            _ => DMatrix::zeros(dim, n_edges),
        };
        self.project(&mut lam, nu);

        let threshold = cfg.inner_tol * (1.0 + 0.5 * points.norm_squared());
        let mut y = lam.clone();
        let mut next = lam.clone();
        let mut a_y = points.clone();
        let mut a_next = points.clone();
        let mut best = points.clone();
        let mut best_gap = f64::INFINITY;
        let mut momentum = 1.0_f64;
        let mut converged = false;
        let mut iterations = 0;

        self.primal(&points, &lam, &mut a_next);
        let gap0 = self.gap(&a_next, &lam, nu);
        if gap0 <= threshold {
            best.copy_from(&a_next);
            converged = true;
        } else {
            best_gap = gap0;
            best.copy_from(&a_next);
        }

        while !converged && iterations < cfg.inner_max_iter {
            iterations += 1;
            self.primal(&points, &y, &mut a_y);
            for (l, e) in self.edges.iter().enumerate() {
                let c = e.sign.value();
                for d in 0..dim {
                    next[(d, l)] = y[(d, l)] + self.step * (a_y[(d, e.i)] - c * a_y[(d, e.j)]);
                }
            }
            self.project(&mut next, nu);
            self.primal(&points, &next, &mut a_next);
            let gap = self.gap(&a_next, &next, nu);
            if gap < best_gap {
                best_gap = gap;
                best.copy_from(&a_next);
            }
            if gap <= threshold {
                converged = true;
                std::mem::swap(&mut lam, &mut next);
                break;
            }
            // Gradient-mapping restart: drop momentum once it points uphill.
            let restart = y
                .iter()
                .zip(next.iter())
                .zip(lam.iter())
                .map(|((yv, nv), lv)| (yv - nv) * (nv - lv))
                .sum::<f64>()
                > 0.0;
            if restart {
                momentum = 1.0;
                y.copy_from(&next);
            } else {
                let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                let beta = (momentum - 1.0) / m_next;
                for ((yv, nv), lv) in y.iter_mut().zip(next.iter()).zip(lam.iter()) {
                    *yv = nv + beta * (nv - lv);
                }
                momentum = m_next;
            }
            std::mem::swap(&mut lam, &mut next);
        }
        self.duals = Some(lam);
        let value = match self.axis {
            Axis::Columns => best,
            Axis::Rows => best.transpose(),
        };
        ProxOutcome {
            value,
            converged,
            iterations,
        }
    }
}

fn axis_size(m: &DMatrix<f64>, axis: Axis) -> usize {
    match axis {
        Axis::Columns => m.ncols(),
        Axis::Rows => m.nrows(),
    }
}

/// `argmin_A ½‖A − m‖²_F + ν Σ w_ij ‖A_i − c_ij A_j‖₂` over the columns
/// (or rows) of `m`.
pub fn prox_fusion(m: &DMatrix<f64>, edges: &AxisEdges, axis: Axis, nu: f64, cfg: &ProxConfig) -> Result<ProxOutcome> {
    if !(nu.is_finite() && nu >= 0.0) {
        return input(format!("nu must be finite and nonnegative, got {nu}"));
    }
    cfg.validate()?;
    check_finite(m, "prox argument")?;
    if edges.size() != axis_size(m, axis) {
        return input(format!(
            "edges cover {} items but the matrix has {} along {axis:?}",
            edges.size(),
            axis_size(m, axis)
        ));
    }
    Ok(FusionProx::new(edges, axis, cfg).solve(m, nu, cfg))
}

/// Convex bi-clustering by Dykstra-style alternation of the row-fusion and
/// column-fusion proxes, with correction matrices `P` and `Q`.
///
/// Computes `argmin_Γ ½‖Γ − Θ‖²_F + ν [Ω_W(Γ) + Ω_W̃(Γᵀ)]`. The corrections
/// are the two blocks of a dual coordinate ascent with `Γ = Θ − P − Q`, so
/// they and the inner dual states are kept between calls as a warm start.
#[derive(Debug, Clone)]
pub struct Cobra {
    columns: FusionProx,
    rows: FusionProx,
    edges: EdgeWeights,
    corrections: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Result of a bi-clustering solve.
#[derive(Debug, Clone)]
pub struct CobraOutcome {
    pub value: DMatrix<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// `½‖Γ − Θ‖² + ν[Ω_W(Γ) + Ω_W̃(Γᵀ)]` at the returned point.
    pub objective: f64,
}

impl Cobra {
    pub fn new(edges: &EdgeWeights, cfg: &ProxConfig) -> Self {
        Self {
            columns: FusionProx::new(&edges.columns, Axis::Columns, cfg),
            rows: FusionProx::new(&edges.rows, Axis::Rows, cfg),
            edges: edges.clone(),
            corrections: None,
        }
    }

    pub fn reset(&mut self) {
        self.columns.reset();
        self.rows.reset();
        self.corrections = None;
    }

    fn objective(&self, gamma: &DMatrix<f64>, theta: &DMatrix<f64>, nu: f64) -> f64 {
        0.5 * (gamma - theta).norm_squared() + nu * biclustering_penalty(gamma, &self.edges)
    }

    pub fn solve(&mut self, theta: &DMatrix<f64>, nu: f64, cfg: &ProxConfig) -> CobraOutcome {
        let finish = |value: DMatrix<f64>, converged, sweeps, this: &Self| {
            let objective = this.objective(&value, theta, nu);
            CobraOutcome {
                value,
                converged,
                sweeps,
                objective,
            }
        };
        if nu == 0.0 || (self.edges.columns.is_empty() && self.edges.rows.is_empty()) {
            return finish(theta.clone(), true, 0, self);
        }
        // Inner solves run an order of magnitude tighter than the sweep test.
        let inner = ProxConfig {
            inner_tol: cfg.inner_tol * 0.1,
            ..*cfg
        };
        if self.edges.rows.is_empty() {
            let out = self.columns.solve(theta, nu, &inner);
            return finish(out.value, out.converged, 1, self);
        }
        if self.edges.columns.is_empty() {
            let out = self.rows.solve(theta, nu, &inner);
            return finish(out.value, out.converged, 1, self);
        }

        let shape = theta.shape();
        let (mut p_corr, mut q_corr) = match self.corrections.take() {
            Some((p, q)) if p.shape() == shape => (p, q),
            _ => (DMatrix::zeros(shape.0, shape.1), DMatrix::zeros(shape.0, shape.1)),
        };
        let mut gamma = theta - &p_corr - &q_corr;
        let mut best = theta.clone();
        let mut best_obj = f64::INFINITY;
        let mut converged = false;
        let mut sweeps = 0;
        let mut inner_ok = true;
        while sweeps < cfg.inner_max_iter {
            sweeps += 1;
            let row_step = self.rows.solve(&(&gamma + &p_corr), nu, &inner);
            inner_ok &= row_step.converged;
            let y = row_step.value;
            p_corr += &gamma - &y;
            let col_step = self.columns.solve(&(&y + &q_corr), nu, &inner);
            inner_ok &= col_step.converged;
            let next = col_step.value;
            q_corr += &y - &next;

            let obj = self.objective(&next, theta, nu);
            if obj < best_obj {
                best_obj = obj;
                best.copy_from(&next);
            }
            let change = (&next - &gamma).norm();
            let scale = 1.0 + gamma.norm();
            gamma = next;
            if change <= cfg.inner_tol * scale {
                converged = true;
                break;
            }
        }
        self.corrections = Some((p_corr, q_corr));
        CobraOutcome {
            value: best,
            converged: converged && inner_ok,
            sweeps,
            objective: best_obj,
        }
    }
}

/// One-shot convex bi-clustering of `theta` with multiplier `nu`.
pub fn cobra(theta: &DMatrix<f64>, edges: &EdgeWeights, nu: f64, cfg: &ProxConfig) -> Result<CobraOutcome> {
    if !(nu.is_finite() && nu >= 0.0) {
        return input(format!("nu must be finite and nonnegative, got {nu}"));
    }
    cfg.validate()?;
    check_finite(theta, "bi-clustering input")?;
    edges.check_shape(theta.nrows(), theta.ncols())?;
    Ok(Cobra::new(edges, cfg).solve(theta, nu, cfg))
}
