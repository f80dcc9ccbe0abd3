//! L1-regularized logistic regression for radiomic feature selection and
//! the pure-radiomics classifier.
//!
//! The solver is cyclic coordinate descent with soft-thresholding on
//! z-scored features: each coordinate takes a majorized Newton step with
//! the curvature bound `sum x^2 / (4N) = 1/4`, which makes the penalized
//! objective non-increasing sweep over sweep.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTable, FeatureVector};
use crate::harness::{binary_metrics, FoldPlan};

/// Objective change per sweep below which the fit stops.
pub const OBJECTIVE_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 20_000;

#[inline]
fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

#[inline]
fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Fitted model: intercept plus sparse coefficients over z-scored features,
/// with the standardization statistics captured at fit time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoModel {
    pub lambda: f64,
    pub intercept: f64,
    /// Retained (non-constant) training columns in table order.
    pub feature_keys: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Dense coefficients over `feature_keys`; most are exactly 0.
    pub coefficients: Vec<f64>,
}

impl LassoModel {
    /// Keys with nonzero coefficients, in table order.
    pub fn selected_keys(&self) -> Vec<String> {
        self.feature_keys
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, &c)| c != 0.0)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn coefficient(&self, key: &str) -> Option<f64> {
        self.feature_keys
            .iter()
            .position(|k| k == key)
            .map(|i| self.coefficients[i])
    }

    /// Persists lambda, intercept, standardization stats and the nonzero
    /// coefficients as structured text.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Z-scored design matrix over the usable (non-constant) columns.
struct Standardized {
    keys: Vec<String>,
    means: Vec<f64>,
    stds: Vec<f64>,
    /// Column-major: `cols[j][i]` = sample i, feature j.
    cols: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

fn standardize(table: &FeatureTable) -> Result<Standardized> {
    let n = table.n_samples();
    if n < 2 {
        return Err(Error::DegenerateData("need at least 2 samples".into()));
    }
    let pos = table.labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == n {
        return Err(Error::DegenerateData(
            "both labels must be present to fit".into(),
        ));
    }
    let mut keys = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut cols = Vec::new();
    for j in 0..table.n_features() {
        let raw = table.column(j);
        let mean = raw.iter().sum::<f64>() / n as f64;
        let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std == 0.0 {
            continue; // constant column carries no signal
        }
        keys.push(table.feature_keys[j].clone());
        means.push(mean);
        stds.push(std);
        cols.push(raw.iter().map(|v| (v - mean) / std).collect());
    }
    if cols.is_empty() {
        return Err(Error::DegenerateData("no usable feature columns".into()));
    }
    Ok(Standardized {
        keys,
        means,
        stds,
        cols,
        labels: table.labels.iter().map(|&l| f64::from(l)).collect(),
    })
}

fn objective(eta: &[f64], labels: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = labels.len() as f64;
    let mut nll = 0.0f64;
    for (&e, &y) in eta.iter().zip(labels) {
        // log(1 + exp(e)) - y * e, computed stably
        let log1pexp = if e > 30.0 { e } else { (1.0 + e.exp()).ln() };
        nll += log1pexp - y * e;
    }
    nll / n + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

struct FitResult {
    intercept: f64,
    beta: Vec<f64>,
    objective: f64,
    /// Objective after every sweep; non-increasing by construction.
    sweep_objectives: Vec<f64>,
}

fn fit_standardized(std_data: &Standardized, lambda: f64, warm: Option<(f64, Vec<f64>)>) -> FitResult {
    let n = std_data.labels.len();
    let nf = n as f64;
    let p = std_data.cols.len();
    let (mut intercept, mut beta) = warm.unwrap_or((0.0, vec![0.0; p]));
    let mut eta: Vec<f64> = (0..n)
        .map(|i| {
            intercept
                + (0..p)
                    .map(|j| beta[j] * std_data.cols[j][i])
                    .sum::<f64>()
        })
        .collect();
    let mut obj = objective(&eta, &std_data.labels, &beta, lambda);
    let mut sweep_objectives = Vec::new();
    for _ in 0..MAX_SWEEPS {
        // Intercept: unpenalized majorized Newton step (curvature bound 1/4).
        let g0: f64 = eta
            .iter()
            .zip(&std_data.labels)
            .map(|(&e, &y)| sigmoid(e) - y)
            .sum::<f64>()
            / nf;
        let d0 = -4.0 * g0;
        if d0 != 0.0 {
            intercept += d0;
            for e in eta.iter_mut() {
                *e += d0;
            }
        }
        for j in 0..p {
            let col = &std_data.cols[j];
            let gj: f64 = eta
                .iter()
                .zip(&std_data.labels)
                .zip(col)
                .map(|((&e, &y), &x)| (sigmoid(e) - y) * x)
                .sum::<f64>()
                / nf;
            let new_b = soft_threshold(beta[j] - 4.0 * gj, 4.0 * lambda);
            let delta = new_b - beta[j];
            if delta != 0.0 {
                beta[j] = new_b;
                for (e, &x) in eta.iter_mut().zip(col) {
                    *e += delta * x;
                }
            }
        }
        let new_obj = objective(&eta, &std_data.labels, &beta, lambda);
        sweep_objectives.push(new_obj);
        let done = (obj - new_obj).abs() <= OBJECTIVE_TOL;
        obj = new_obj;
        if done {
            break;
        }
    }
    FitResult {
        intercept,
        beta,
        objective: obj,
        sweep_objectives,
    }
}

/// Fits L1-penalized logistic regression at a fixed `lambda`. Zero-variance
/// columns are dropped; the intercept is unpenalized.
pub fn fit_lasso_logistic(table: &FeatureTable, lambda: f64) -> Result<LassoModel> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let std_data = standardize(table)?;
    let fit = fit_standardized(&std_data, lambda, None);
    Ok(LassoModel {
        lambda,
        intercept: fit.intercept,
        feature_keys: std_data.keys,
        means: std_data.means,
        stds: std_data.stds,
        coefficients: fit.beta,
    })
}

/// Penalized objective value attained by a fit; exposed for solver
/// cross-checks.
pub fn fit_objective(table: &FeatureTable, lambda: f64) -> Result<f64> {
    let std_data = standardize(table)?;
    Ok(fit_standardized(&std_data, lambda, None).objective)
}

/// Per-sweep objective trajectory of a cold-start fit.
pub fn fit_objective_trace(table: &FeatureTable, lambda: f64) -> Result<Vec<f64>> {
    let std_data = standardize(table)?;
    Ok(fit_standardized(&std_data, lambda, None).sweep_objectives)
}

/// Smallest lambda at which every coefficient is zero: the max absolute
/// z-scored gradient at the intercept-only optimum.
pub fn lambda_max(table: &FeatureTable) -> Result<f64> {
    let std_data = standardize(table)?;
    let n = std_data.labels.len() as f64;
    let ybar = std_data.labels.iter().sum::<f64>() / n;
    let mut max_g = 0.0f64;
    for col in &std_data.cols {
        let g: f64 = col
            .iter()
            .zip(&std_data.labels)
            .map(|(&x, &y)| (ybar - y) * x)
            .sum::<f64>()
            / n;
        max_g = max_g.max(g.abs());
    }
    Ok(max_g)
}

/// Descending log-spaced grid from `lambda_max` down to
/// `lambda_max * min_ratio`.
pub fn lambda_grid(lmax: f64, size: usize, min_ratio: f64) -> Vec<f64> {
    if size <= 1 {
        return vec![lmax];
    }
    let log_max = lmax.ln();
    let log_min = (lmax * min_ratio).ln();
    (0..size)
        .map(|i| (log_max + (log_min - log_max) * i as f64 / (size - 1) as f64).exp())
        .collect()
}

/// Cross-validated lambda selection: picks the grid value maximizing mean
/// validation AUC (ties toward the larger, sparser lambda), then refits on
/// the whole table.
pub fn select_lambda_cv(
    table: &FeatureTable,
    plan: &FoldPlan,
    grid: &[f64],
) -> Result<(f64, LassoModel, Vec<String>)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if grid.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidArgument("lambda grid must be descending".into()));
    }
    if plan.n_samples() != table.n_samples() {
        return Err(Error::DimMismatch(format!(
            "fold plan covers {} samples, table has {}",
            plan.n_samples(),
            table.n_samples()
        )));
    }
    // Per fold: fit the descending path with warm starts on the training
    // subsets, score AUC on the validation subset.
    let fold_aucs: Result<Vec<Vec<f64>>> = (0..plan.n_folds)
        .into_par_iter()
        .map(|fold| {
            let train = table.subset(&plan.train_indices(fold));
            let val_idx = plan.validation_indices(fold);
            let std_data = standardize(&train)?;
            let mut warm: Option<(f64, Vec<f64>)> = None;
            let mut aucs = Vec::with_capacity(grid.len());
            for &lambda in grid {
                let fit = fit_standardized(&std_data, lambda, warm.clone());
                warm = Some((fit.intercept, fit.beta.clone()));
                let model = LassoModel {
                    lambda,
                    intercept: fit.intercept,
                    feature_keys: std_data.keys.clone(),
                    means: std_data.means.clone(),
                    stds: std_data.stds.clone(),
                    coefficients: fit.beta,
                };
                let mut scores = Vec::with_capacity(val_idx.len());
                let mut labels = Vec::with_capacity(val_idx.len());
                for &i in &val_idx {
                    scores.push(predict_proba_row(&model, table, i)?);
                    labels.push(table.labels[i]);
                }
                aucs.push(binary_metrics(&scores, &labels)?.auc);
            }
            Ok(aucs)
        })
        .collect();
    let fold_aucs = fold_aucs?;

    let mut best_idx = 0usize;
    let mut best_auc = f64::NEG_INFINITY;
    for (gi, _) in grid.iter().enumerate() {
        let mean: f64 = fold_aucs.iter().map(|f| f[gi]).sum::<f64>() / fold_aucs.len() as f64;
        // strict improvement keeps the earliest (largest) lambda on ties
        if mean > best_auc {
            best_auc = mean;
            best_idx = gi;
        }
    }
    let lambda = grid[best_idx];
    let model = fit_lasso_logistic(table, lambda)?;
    let selected = model.selected_keys();
    Ok((lambda, model, selected))
}

fn predict_proba_row(model: &LassoModel, table: &FeatureTable, row: usize) -> Result<f64> {
    let mut eta = model.intercept;
    for (j, key) in model.feature_keys.iter().enumerate() {
        let c = model.coefficients[j];
        if c == 0.0 {
            continue;
        }
        let col = table
            .feature_keys
            .iter()
            .position(|k| k == key)
            .ok_or_else(|| Error::MissingFeature(key.clone()))?;
        eta += c * (table.values[row][col] - model.means[j]) / model.stds[j];
    }
    Ok(sigmoid(eta))
}

/// Probability that the sample is class 1, using the stored
/// standardization.
pub fn predict_proba(model: &LassoModel, features: &FeatureVector) -> Result<f64> {
    let mut eta = model.intercept;
    for (j, key) in model.feature_keys.iter().enumerate() {
        let c = model.coefficients[j];
        if c == 0.0 {
            continue;
        }
        let x = features
            .get(key)
            .ok_or_else(|| Error::MissingFeature(key.clone()))?;
        eta += c * (x - model.means[j]) / model.stds[j];
    }
    Ok(sigmoid(eta))
}

/// Scores every row of a table.
pub fn predict_table(model: &LassoModel, table: &FeatureTable) -> Result<Vec<f64>> {
    (0..table.n_samples())
        .map(|i| predict_proba_row(model, table, i))
        .collect()
}
