//! Domain types shared by every solver, plus the two objectives and the
//! fusion penalty they are built from.
//!
//! Matrices use nalgebra's column-major storage, so a `p×k` coefficient
//! matrix is already laid out as the stacked vector `(Θ₁; …; Θ_k)`.

use std::ops::Deref;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Design matrix storage: one matrix shared by every task, or one per task.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Shared(DMatrix<f64>),
    PerTask(Vec<DMatrix<f64>>),
}

/// Designs and responses for `k` regression tasks over `n` samples and `p` features.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    design: Design,
    responses: DMatrix<f64>,
}

impl TaskDataset {
    /// Dataset whose tasks all use the same `n×p` design.
    pub fn shared(design: DMatrix<f64>, responses: DMatrix<f64>) -> Result<Self> {
        let ds = Self {
            design: Design::Shared(design),
            responses,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Dataset with one `n×p` design per task (one per column of `responses`).
    pub fn per_task(designs: Vec<DMatrix<f64>>, responses: DMatrix<f64>) -> Result<Self> {
        let ds = Self {
            design: Design::PerTask(designs),
            responses,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let (n, k) = self.responses.shape();
        if n == 0 || k == 0 {
            return input("responses must have at least one row and one column");
        }
        if !all_finite(&self.responses) {
            return input("responses contain non-finite entries");
        }
        let designs: Vec<&DMatrix<f64>> = match &self.design {
            Design::Shared(x) => vec![x],
            Design::PerTask(xs) => {
                if xs.len() != k {
                    return input(format!(
                        "{} per-task designs supplied for {} tasks",
                        xs.len(),
                        k
                    ));
                }
                xs.iter().collect()
            }
        };
        let p = designs[0].ncols();
        if p == 0 {
            return input("design must have at least one column");
        }
        for (s, x) in designs.iter().enumerate() {
            if x.nrows() != n || x.ncols() != p {
                return input(format!(
                    "design {} is {}×{}, expected {}×{}",
                    s,
                    x.nrows(),
                    x.ncols(),
                    n,
                    p
                ));
            }
            if !all_finite(x) {
                return input(format!("design {s} contains non-finite entries"));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.responses.nrows()
    }

    pub fn p(&self) -> usize {
        match &self.design {
            Design::Shared(x) => x.ncols(),
            Design::PerTask(xs) => xs[0].ncols(),
        }
    }

    pub fn k(&self) -> usize {
        self.responses.ncols()
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    /// Design used by task `s`.
    pub fn task_design(&self, s: usize) -> &DMatrix<f64> {
        match &self.design {
            Design::Shared(x) => x,
            Design::PerTask(xs) => &xs[s],
        }
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn is_shared(&self) -> bool {
        matches!(self.design, Design::Shared(_))
    }

    /// Fitted responses `XΘ` (task by task for per-task designs).
    pub fn predict(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.design {
            Design::Shared(x) => x * theta,
            Design::PerTask(xs) => {
                let mut out = DMatrix::zeros(self.n(), self.k());
                for (s, x) in xs.iter().enumerate() {
                    out.set_column(s, &(x * theta.column(s)));
                }
                out
            }
        }
    }

    /// Residual matrix `Y − XΘ`.
    pub fn residuals(&self, theta: &DMatrix<f64>) -> DMatrix<f64> {
        &self.responses - self.predict(theta)
    }

    /// Sub-dataset made of the given sample rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return input("row selection is empty");
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= self.n()) {
            return input(format!("row {r} out of range for n = {}", self.n()));
        }
        let responses = self.responses.select_rows(rows);
        let design = match &self.design {
            Design::Shared(x) => Design::Shared(x.select_rows(rows)),
            Design::PerTask(xs) => Design::PerTask(xs.iter().map(|x| x.select_rows(rows)).collect()),
        };
        Ok(Self { design, responses })
    }

    pub(crate) fn check_theta(&self, theta: &DMatrix<f64>, what: &str) -> Result<()> {
        if theta.shape() != (self.p(), self.k()) {
            return input(format!(
                "{what} is {}×{}, expected {}×{}",
                theta.nrows(),
                theta.ncols(),
                self.p(),
                self.k()
            ));
        }
        Ok(())
    }
}

/// A `p×k` coefficient matrix (also used for the surrogate matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(DMatrix<f64>);

impl CoefficientMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !all_finite(&values) {
            return input("coefficient matrix contains non-finite entries");
        }
        Ok(Self(values))
    }

    pub fn zeros(p: usize, k: usize) -> Self {
        Self(DMatrix::zeros(p, k))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl Deref for CoefficientMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Which side of the coefficient matrix a set of edges links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Columns,
    Rows,
}

/// Sign attached to a fusion edge: `+` fuses `a_i` with `a_j`, `−` fuses `a_i` with `−a_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Sign {
    #[default]
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    pub sign: Sign,
}

impl Edge {
    pub fn new(i: usize, j: usize, weight: f64) -> Self {
        Self {
            i,
            j,
            weight,
            sign: Sign::Plus,
        }
    }

    pub fn signed(i: usize, j: usize, weight: f64, sign: Sign) -> Self {
        Self { i, j, weight, sign }
    }
}

/// Weighted edges over the items (columns or rows) of one axis.
///
/// Edges are stored once with `i < j`; zero-weight edges are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisEdges {
    size: usize,
    edges: Vec<Edge>,
}

impl AxisEdges {
    /// Validates and canonicalizes edges over `size` items.
    ///
    /// Pairs given as `(j, i)` are flipped to `(i, j)`; zero weights are dropped.
    pub fn new(size: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut out = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for mut e in edges {
            if e.i > e.j {
                std::mem::swap(&mut e.i, &mut e.j);
            }
            if e.i == e.j {
                return input(format!("self-loop edge at item {}", e.i));
            }
            if e.j >= size {
                return input(format!("edge ({}, {}) out of bounds for {} items", e.i, e.j, size));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return input(format!("edge ({}, {}) has invalid weight {}", e.i, e.j, e.weight));
            }
            if !seen.insert((e.i, e.j)) {
                return input(format!("duplicate edge ({}, {})", e.i, e.j));
            }
            if e.weight > 0.0 {
                out.push(e);
            }
        }
        Ok(Self { size, edges: out })
    }

    pub fn empty(size: usize) -> Self {
        Self {
            size,
            edges: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Same edges with every weight multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            size: self.size,
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    weight: e.weight * factor,
                    ..*e
                })
                .collect(),
        }
    }
}

/// Which fusion terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    #[default]
    Bicluster,
    ColumnsOnly,
    RowsOnly,
}

/// Column-pair weights (`k` items) and row-pair weights (`p` items).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeights {
    pub columns: AxisEdges,
    pub rows: AxisEdges,
}

impl EdgeWeights {
    pub fn new(columns: AxisEdges, rows: AxisEdges) -> Self {
        Self { columns, rows }
    }

    /// No edges on either axis for a `p×k` matrix.
    pub fn none(p: usize, k: usize) -> Self {
        Self {
            columns: AxisEdges::empty(k),
            rows: AxisEdges::empty(p),
        }
    }

    pub fn axis(&self, axis: Axis) -> &AxisEdges {
        match axis {
            Axis::Columns => &self.columns,
            Axis::Rows => &self.rows,
        }
    }

    /// Drops the axis the mode disables.
    pub fn restrict(mut self, mode: FusionMode) -> Self {
        match mode {
            FusionMode::Bicluster => {}
            FusionMode::ColumnsOnly => self.rows = AxisEdges::empty(self.rows.size),
            FusionMode::RowsOnly => self.columns = AxisEdges::empty(self.columns.size),
        }
        self
    }

    pub(crate) fn check_shape(&self, p: usize, k: usize) -> Result<()> {
        if self.columns.size != k || self.rows.size != p {
            return input(format!(
                "edge weights cover {} rows × {} columns, matrix is {}×{}",
                self.rows.size, self.columns.size, p, k
            ));
        }
        Ok(())
    }
}

/// Penalty multipliers and solver knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Fusion multiplier of the surrogate formulation; unused by the direct one.
    pub lambda3: f64,
    /// Gaussian kernel scale for the similarity weights.
    pub phi: f64,
    /// Neighbor count for the similarity graph.
    pub kappa: usize,
    /// Proximal-decomposition step; unused by the alternating solver.
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            phi: 20.0,
            kappa: 5,
            gamma: 1.0,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("phi", self.phi),
        ] {
            if !v.is_finite() || v < 0.0 {
                return input(format!("{name} must be a finite nonnegative number, got {v}"));
            }
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return input(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return input(format!("tol must be positive, got {}", self.tol));
        }
        if self.kappa == 0 || self.max_iter == 0 {
            return input("kappa and max_iter must be positive");
        }
        Ok(())
    }
}

/// Output of either solver.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: CoefficientMatrix,
    /// Surrogate matrix; only the alternating solver produces one.
    pub gamma: Option<CoefficientMatrix>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    /// `Θ − Γ`, the task-specific part left over after clustering.
    pub fn global_component(&self) -> Option<DMatrix<f64>> {
        self.gamma.as_ref().map(|g| self.theta.values() - g.values())
    }

    /// Matrix that carries the cluster structure: `Γ` when present, else `Θ`.
    pub fn clustered(&self) -> &DMatrix<f64> {
        self.gamma.as_ref().unwrap_or(&self.theta).values()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

fn item_diff_norm(m: &DMatrix<f64>, axis: Axis, e: &Edge) -> f64 {
    let c = e.sign.value();
    match axis {
        Axis::Columns => m
            .column(e.i)
            .iter()
            .zip(m.column(e.j).iter())
            .map(|(a, b)| (a - c * b).powi(2))
            .sum::<f64>()
            .sqrt(),
        Axis::Rows => m
            .row(e.i)
            .iter()
            .zip(m.row(e.j).iter())
            .map(|(a, b)| (a - c * b).powi(2))
            .sum::<f64>()
            .sqrt(),
    }
}

pub(crate) fn fusion_sum(m: &DMatrix<f64>, edges: &AxisEdges, axis: Axis) -> f64 {
    edges
        .edges
        .iter()
        .map(|e| e.weight * item_diff_norm(m, axis, e))
        .sum()
}

/// `Σ w_ij ‖m_i − c_ij m_j‖₂` over the columns or rows of `m`.
pub fn fusion_penalty(m: &DMatrix<f64>, edges: &AxisEdges, axis: Axis) -> Result<f64> {
    let items = match axis {
        Axis::Columns => m.ncols(),
        Axis::Rows => m.nrows(),
    };
    if edges.size != items {
        return input(format!(
            "edges cover {} items but the matrix has {} along {:?}",
            edges.size, items, axis
        ));
    }
    Ok(fusion_sum(m, edges, axis))
}

pub(crate) fn biclustering_penalty(m: &DMatrix<f64>, edges: &EdgeWeights) -> f64 {
    fusion_sum(m, &edges.columns, Axis::Columns) + fusion_sum(m, &edges.rows, Axis::Rows)
}

pub(crate) fn squared_loss(data: &TaskDataset, theta: &DMatrix<f64>) -> f64 {
    data.residuals(theta).norm_squared()
}

pub(crate) fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// `‖Y − XΘ‖²_F + λ1 ‖Θ‖₁ + λ2 [Ω_W(Θ) + Ω_W̃(Θᵀ)]`.
pub fn objective_f1(
    data: &TaskDataset,
    theta: &DMatrix<f64>,
    edges: &EdgeWeights,
    hp: &Hyperparameters,
) -> Result<f64> {
    data.check_theta(theta, "theta")?;
    edges.check_shape(data.p(), data.k())?;
    Ok(unchecked_f1(data, theta, edges, hp.lambda1, hp.lambda2))
}

pub(crate) fn unchecked_f1(
    data: &TaskDataset,
    theta: &DMatrix<f64>,
    edges: &EdgeWeights,
    lambda1: f64,
    lambda2: f64,
) -> f64 {
    let mut value = squared_loss(data, theta) + lambda1 * l1_norm(theta);
    if lambda2 != 0.0 {
        value += lambda2 * biclustering_penalty(theta, edges);
    }
    value
}

/// `‖Y − XΘ‖²_F + λ1 ‖Θ‖₁ + λ2 ‖Θ − Γ‖²_F + λ3 [Ω_W(Γ) + Ω_W̃(Γᵀ)]`.
pub fn objective_f2(
    data: &TaskDataset,
    theta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    edges: &EdgeWeights,
    hp: &Hyperparameters,
) -> Result<f64> {
    data.check_theta(theta, "theta")?;
    data.check_theta(gamma, "gamma")?;
    edges.check_shape(data.p(), data.k())?;
    Ok(unchecked_f2(data, theta, gamma, edges, hp))
}

pub(crate) fn unchecked_f2(
    data: &TaskDataset,
    theta: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    edges: &EdgeWeights,
    hp: &Hyperparameters,
) -> f64 {
    squared_loss(data, theta)
        + hp.lambda1 * l1_norm(theta)
        + hp.lambda2 * (theta - gamma).norm_squared()
        + hp.lambda3 * biclustering_penalty(gamma, edges)
}

pub(crate) fn nonfinite(stage: &'static str, what: &str) -> Error {
    Error::Divergence {
        stage,
        detail: format!("{what} became non-finite"),
    }
}
