use std::path::Path;

use bifuse::datagen::{synthetic_problem, GeneratorSpec};
use bifuse::metrics::{recovery_accuracy, rmse, AssignmentScores};
use bifuse::pipeline::{fit_and_cluster, pilot_weights, suggested_gamma, two_step_baseline, Formulation, NuSelection};
use bifuse::prox::ProxConfig;
use bifuse::selection::{cross_validate, solution_path, ClusterAssignment, CvConfig, CvGrid, PathParameter, Split};
use bifuse::{FusionMode, Hyperparameters, TaskDataset};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::io::{read_json, read_matrix, OutDir};
use crate::{BaselineArgs, CliError, CvArgs, DataArgs, FitArgs, ModelArgs, PathArgs, ScoreArgs, SimulateArgs};

fn load(data: &DataArgs) -> Result<TaskDataset, CliError> {
    load_pair(&data.x, &data.y)
}

fn load_pair(x: &Path, y: &Path) -> Result<TaskDataset, CliError> {
    Ok(TaskDataset::shared(read_matrix(x)?, read_matrix(y)?)?)
}

fn parse_grid(text: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| CliError::input(format!("{flag}: cannot parse {s:?} as a number"))))
        .collect()
}

fn hyperparameters(m: &ModelArgs, data: &TaskDataset) -> Result<Hyperparameters, CliError> {
    let gamma = if m.gamma == "auto" {
        suggested_gamma(data)
    } else {
        m.gamma
            .parse()
            .map_err(|_| CliError::input(format!("--gamma: expected a number or `auto`, got {:?}", m.gamma)))?
    };
    let defaults = Hyperparameters::default();
    let hp = Hyperparameters {
        lambda1: m.lambda1,
        lambda2: m.lambda2,
        lambda3: m.lambda3,
        phi: m.phi,
        kappa: m.kappa,
        gamma,
        tol: m.tol,
        max_iter: m.max_iter.unwrap_or(defaults.max_iter),
    };
    hp.validate()?;
    Ok(hp)
}

fn prox_config(tol: f64) -> ProxConfig {
    ProxConfig {
        inner_tol: tol.min(ProxConfig::default().inner_tol),
        ..Default::default()
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let spec: GeneratorSpec = read_json(&a.config)?;
    let prob = synthetic_problem(&spec, 1, a.n_test.unwrap_or(1))?;
    let out = OutDir::create(&a.out)?;
    out.matrix("X.csv", prob.train.task_design(0))?;
    out.matrix("Y.csv", prob.train.responses())?;
    out.matrix("theta_star.csv", prob.theta_star.values())?;
    out.json("truth.json", &prob.truth)?;
    if a.n_test.is_some() {
        out.matrix("X_test.csv", prob.test.task_design(0))?;
        out.matrix("Y_test.csv", prob.test.responses())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    formulation: Formulation,
    mode: FusionMode,
    hyperparameters: Hyperparameters,
    objective_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    sigma: f64,
    tau_r: f64,
    tau_c: f64,
    n_row_clusters: usize,
    n_col_clusters: usize,
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let data = load(&a.data)?;
    let hp = hyperparameters(&a.model, &data)?;
    let mode = FusionMode::from(a.model.mode);
    let formulation = Formulation::from(a.model.formulation);
    let edges = pilot_weights(&data, &hp, mode)?;
    let cf = fit_and_cluster(&data, &edges, &hp, &prox_config(hp.tol), formulation)?;
    let out = OutDir::create(&a.out)?;
    out.matrix("theta.csv", cf.fit.theta.values())?;
    if let Some(g) = &cf.fit.gamma {
        out.matrix("gamma.csv", g.values())?;
    }
    let assignment = &cf.clusters.assignment;
    out.json("clusters.json", assignment)?;
    out.json(
        "report.json",
        &FitReport {
            formulation,
            mode,
            hyperparameters: hp,
            objective_trace: cf.fit.objective_trace.clone(),
            iterations: cf.fit.iterations,
            converged: cf.fit.converged,
            sigma: cf.clusters.sigma,
            tau_r: cf.clusters.tau_r,
            tau_c: cf.clusters.tau_c,
            n_row_clusters: assignment.n_row_clusters(),
            n_col_clusters: assignment.n_col_clusters(),
        },
    )?;
    if !cf.fit.converged {
        eprintln!("warning: solver stopped at the iteration cap before converging");
    }
    Ok(())
}

pub fn path(a: &PathArgs) -> Result<(), CliError> {
    let data = load(&a.data)?;
    let hp = hyperparameters(&a.model, &data)?;
    let mode = FusionMode::from(a.model.mode);
    let grid = parse_grid(&a.grid, "--grid")?;
    let parameter = match Formulation::from(a.model.formulation) {
        Formulation::Direct => PathParameter::Lambda2F1,
        Formulation::Surrogate => PathParameter::Lambda3F2,
    };
    let edges = pilot_weights(&data, &hp, mode)?;
    let path = solution_path(&data, &edges, &grid, parameter, &hp, &prox_config(hp.tol))?;
    let out = OutDir::create(&a.out)?;
    let mut points = Vec::new();
    for (i, p) in path.points.iter().enumerate() {
        let theta_file = format!("theta_{i:03}.csv");
        out.matrix(&theta_file, p.theta.values())?;
        let gamma_file = match &p.gamma {
            Some(g) => {
                let name = format!("gamma_{i:03}.csv");
                out.matrix(&name, g.values())?;
                Some(name)
            }
            None => None,
        };
        points.push(json!({
            "penalty": p.penalty,
            "n_row_clusters": p.n_row_clusters,
            "n_col_clusters": p.n_col_clusters,
            "objective": p.objective,
            "iterations": p.iterations,
            "converged": p.converged,
            "sigma": p.clusters.sigma,
            "tau_r": p.clusters.tau_r,
            "tau_c": p.clusters.tau_c,
            "clusters": p.clusters.assignment,
            "theta": theta_file,
            "gamma": gamma_file,
        }));
    }
    out.json(
        "path.json",
        &json!({ "parameter": path.parameter, "mode": mode, "hyperparameters": hp, "points": points }),
    )
}

pub fn cv(a: &CvArgs) -> Result<(), CliError> {
    let data = load(&a.data)?;
    let base = hyperparameters(&a.model, &data)?;
    let split = match (&a.x_val, &a.y_val, a.folds) {
        (Some(x), Some(y), _) => Split::External(load_pair(x, y)?),
        (_, _, Some(folds)) => Split::KFold { folds, seed: a.seed },
        _ => Split::default_holdout(a.seed),
    };
    let grid = CvGrid {
        lambda1: parse_grid(&a.grid_lambda1, "--grid-lambda1")?,
        lambda2: parse_grid(&a.grid_lambda2, "--grid-lambda2")?,
        lambda3: parse_grid(&a.grid_lambda3, "--grid-lambda3")?,
    };
    let cfg = CvConfig {
        formulation: a.model.formulation.into(),
        split,
        mode: a.model.mode.into(),
        base,
        prox: prox_config(base.tol),
    };
    let report = cross_validate(&data, None, &grid, &cfg)?;
    let (dir, name) = split_path(&a.out)?;
    OutDir::create(dir)?.json(name, &report)
}

fn split_path(path: &Path) -> Result<(&Path, &str), CliError> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::input(format!("{}: not a file path", path.display())))?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    Ok((dir, name))
}

pub fn score(a: &ScoreArgs) -> Result<(), CliError> {
    let pred: ClusterAssignment = read_json(&a.clusters)?;
    let truth: ClusterAssignment = read_json(&a.truth)?;
    let scores = AssignmentScores::compute(&pred, &truth)?;
    let mut doc = json!({ "clusters": scores });
    let theta: Option<DMatrix<f64>> = a.theta.as_deref().map(read_matrix).transpose()?;
    if let (Some(theta), Some(star)) = (&theta, &a.theta_star) {
        doc["recovery"] = json!(recovery_accuracy(theta, &read_matrix(star)?)?);
    }
    if let (Some(theta), Some(x), Some(y)) = (&theta, &a.x_test, &a.y_test) {
        let test = load_pair(x, y)?;
        if theta.shape() != (test.p(), test.k()) {
            return Err(CliError::input(format!(
                "theta is {}x{} but the test set needs {}x{}",
                theta.nrows(),
                theta.ncols(),
                test.p(),
                test.k()
            )));
        }
        doc["rmse"] = json!(rmse(&test.predict(theta), test.responses())?);
    }
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::input(e.to_string()))?;
    text.push('\n');
    match &a.out {
        Some(path) => {
            let (dir, name) = split_path(path)?;
            OutDir::create(dir)?.write(name, &text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn baseline(a: &BaselineArgs) -> Result<(), CliError> {
    let data = load(&a.data)?;
    let hp = Hyperparameters {
        lambda1: a.lambda1,
        phi: a.phi,
        kappa: a.kappa,
        tol: a.tol,
        ..Default::default()
    };
    let grid = parse_grid(&a.grid, "--grid")?;
    let validation = match (&a.x_val, &a.y_val) {
        (Some(x), Some(y)) => Some(load_pair(x, y)?),
        _ => None,
    };
    let selection = match &validation {
        Some(v) => NuSelection::ValidationRmse(v),
        None => NuSelection::HeldOutEntries {
            fraction: a.holdout,
            seed: a.seed,
        },
    };
    let mode = FusionMode::from(a.mode);
    let fit = two_step_baseline(&data, None, &hp, mode, &grid, selection, &prox_config(a.tol))?;
    let out = OutDir::create(&a.out)?;
    out.matrix("lasso.csv", &fit.lasso)?;
    out.matrix("theta.csv", &fit.biclustered)?;
    out.json("clusters.json", &fit.clusters.assignment)?;
    out.json(
        "report.json",
        &json!({
            "lambda1": a.lambda1,
            "nu": fit.nu,
            "scores": fit.scores,
            "converged": fit.converged,
            "sigma": fit.clusters.sigma,
            "tau_r": fit.clusters.tau_r,
            "tau_c": fit.clusters.tau_c,
            "n_row_clusters": fit.clusters.assignment.n_row_clusters(),
            "n_col_clusters": fit.clusters.assignment.n_col_clusters(),
        }),
    )
}
