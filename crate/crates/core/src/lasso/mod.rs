//! L1-regularized logistic regression by cyclic coordinate descent.
//!
//! The solver is the usual quadratic-approximation scheme: an outer loop
//! builds a weighted least-squares model at the current iterate, an inner
//! cyclic coordinate-descent loop solves it with soft-thresholding over an
//! active set, and a backtracking step keeps the true penalized objective
//! non-increasing. Continuous covariates are scaled to unit variance for
//! penalization; coefficients are reported on the original scale. The
//! intercept is never penalized.
//!
//! Objective: `(1/n) * sum_i w_i * logloss_i + lambda * sum_j |beta_j|`
//! with `beta` in the scaled space.

pub mod metrics;

pub use metrics::{
    c_statistic, calibration_metrics, CStatistic, PerformanceSummary, PopulationLabel,
};

use crate::data::{CovariateId, CovariateKind, CovariateTable, SubjectId};
use crate::rng::{stream, Purpose};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LassoError {
    #[error("no contrast: labels contain a single class")]
    NoContrast,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("lambda must be non-negative and finite")]
    InvalidLambda,
    #[error("empty input")]
    EmptyInput,
    #[error("input length mismatch: {0}")]
    LengthMismatch(&'static str),
    #[error("degenerate predictions: no variation")]
    DegeneratePredictions,
    #[error("a cross-validation fold has single-class labels even after refolding")]
    SingleClassFold,
    #[error("invalid lambda grid: {0}")]
    InvalidGrid(String),
    #[error("solver failed to converge")]
    NonConvergence,
}

/// Fitted sparse logistic model. Coefficients are on the original covariate
/// scale; exact zeros are omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseLinearModel {
    pub intercept: f64,
    pub lambda: f64,
    pub coefficients: BTreeMap<CovariateId, f64>,
    #[serde(default)]
    pub training_meta: TrainingMeta,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n: usize,
    pub n_events: usize,
    /// Mean held-out log-likelihood per grid value, when selected by CV.
    pub fold_likelihoods: Vec<f64>,
}

/// `model.json` wire format: `{intercept, lambda, coefficients:
/// [{covariate_id, beta}]}` with coefficients in ascending id order.
pub fn model_to_json(model: &SparseLinearModel) -> String {
    #[derive(Serialize)]
    struct Coef {
        covariate_id: CovariateId,
        beta: f64,
    }
    #[derive(Serialize)]
    struct Wire {
        intercept: f64,
        lambda: f64,
        coefficients: Vec<Coef>,
    }
    let wire = Wire {
        intercept: model.intercept,
        lambda: model.lambda,
        coefficients: model
            .coefficients
            .iter()
            .map(|(&covariate_id, &beta)| Coef { covariate_id, beta })
            .collect(),
    };
    serde_json::to_string_pretty(&wire).expect("model serializes")
}

/// Parses the `model.json` wire format.
pub fn model_from_json(text: &str) -> Result<SparseLinearModel, serde_json::Error> {
    #[derive(Deserialize)]
    struct Coef {
        covariate_id: CovariateId,
        beta: f64,
    }
    #[derive(Deserialize)]
    struct Wire {
        intercept: f64,
        lambda: f64,
        coefficients: Vec<Coef>,
    }
    let wire: Wire = serde_json::from_str(text)?;
    Ok(SparseLinearModel {
        intercept: wire.intercept,
        lambda: wire.lambda,
        coefficients: wire
            .coefficients
            .into_iter()
            .map(|c| (c.covariate_id, c.beta))
            .collect(),
        training_meta: TrainingMeta::default(),
    })
}

impl SparseLinearModel {
    pub fn linear_predictor(&self, row: &[(CovariateId, f64)]) -> f64 {
        self.intercept
            + row
                .iter()
                .map(|(c, v)| self.coefficients.get(c).copied().unwrap_or(0.0) * v)
                .sum::<f64>()
    }
}

/// Per-subject probabilities under the model; covariates absent from a
/// subject's row count as zero.
pub fn predict_proba(
    model: &SparseLinearModel,
    cov: &CovariateTable,
    subjects: &[SubjectId],
) -> Vec<f64> {
    subjects
        .iter()
        .map(|&s| logistic(model.linear_predictor(cov.row(s).unwrap_or(&[]))))
        .collect()
}

pub(crate) fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable `log(1 + exp(eta)) - y * eta`.
fn cross_entropy(eta: f64, y: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p() - y * eta
    } else {
        eta.exp().ln_1p() - y * eta
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

const PROB_FLOOR: f64 = 1e-5;
const COEF_TOL: f64 = 1e-7;
const MAX_SWEEPS: usize = 10_000;

/// Column-compressed view of the covariates for one fitting task, with
/// continuous columns scaled to unit variance.
pub(crate) struct Design {
    n: usize,
    col_ids: Vec<CovariateId>,
    col_pos: HashMap<CovariateId, usize>,
    /// (row, scaled value) entries per column.
    cols: Vec<Vec<(u32, f64)>>,
    scales: Vec<f64>,
}

impl Design {
    pub(crate) fn build(
        cov: &CovariateTable,
        subjects: &[SubjectId],
        weights: Option<&[f64]>,
    ) -> Design {
        let n = subjects.len();
        let mut col_pos: HashMap<CovariateId, usize> = HashMap::new();
        let mut col_ids: Vec<CovariateId> = Vec::new();
        let mut cols: Vec<Vec<(u32, f64)>> = Vec::new();
        for (row, &s) in subjects.iter().enumerate() {
            for &(c, v) in cov.row(s).unwrap_or(&[]) {
                let pos = *col_pos.entry(c).or_insert_with(|| {
                    col_ids.push(c);
                    cols.push(Vec::new());
                    col_ids.len() - 1
                });
                cols[pos].push((row as u32, v));
            }
        }
        // Column order independent of row order.
        let mut order: Vec<usize> = (0..col_ids.len()).collect();
        order.sort_unstable_by_key(|&i| col_ids[i]);
        let col_ids: Vec<CovariateId> = order.iter().map(|&i| col_ids[i]).collect();
        let mut cols: Vec<Vec<(u32, f64)>> = order.iter().map(|&i| std::mem::take(&mut cols[i])).collect();
        let col_pos: HashMap<CovariateId, usize> =
            col_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();

        let total_weight: f64 = match weights {
            Some(w) => w.iter().sum(),
            None => n as f64,
        };
        let mut scales = vec![1.0; col_ids.len()];
        for (j, col) in cols.iter_mut().enumerate() {
            let continuous = cov
                .meta(col_ids[j])
                .is_some_and(|m| m.kind == CovariateKind::Continuous);
            if continuous && total_weight > 0.0 {
                let (mut sum, mut sum_sq) = (0.0, 0.0);
                for &(row, v) in col.iter() {
                    let w = weights.map_or(1.0, |w| w[row as usize]);
                    sum += w * v;
                    sum_sq += w * v * v;
                }
                let mean = sum / total_weight;
                let var = (sum_sq / total_weight - mean * mean).max(0.0);
                if var > 0.0 {
                    scales[j] = var.sqrt();
                }
            }
            if scales[j] != 1.0 {
                for entry in col.iter_mut() {
                    entry.1 /= scales[j];
                }
            }
        }
        Design {
            n,
            col_ids,
            col_pos,
            cols,
            scales,
        }
    }

    pub(crate) fn n_cols(&self) -> usize {
        self.col_ids.len()
    }

    /// Smallest penalty that forces every coefficient to zero:
    /// `max_j |sum_i w_i x_ij (y_i - ybar)| / n` on the scaled design.
    pub(crate) fn lambda_max(&self, y: &[f64], w: &[f64]) -> f64 {
        let total_w: f64 = w.iter().sum();
        let ybar = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / total_w;
        let n = self.n as f64;
        self.cols
            .iter()
            .map(|col| {
                col.iter()
                    .map(|&(row, v)| w[row as usize] * v * (y[row as usize] - ybar))
                    .sum::<f64>()
                    .abs()
                    / n
            })
            .fold(0.0, f64::max)
    }
}

/// 20 log-spaced values from `lambda_max` down to `0.001 * lambda_max`.
pub fn default_lambda_grid(lambda_max: f64) -> Vec<f64> {
    let top = lambda_max.max(1e-10);
    let bottom = top * 1e-3;
    let k = 20;
    (0..k)
        .map(|i| {
            let t = i as f64 / (k - 1) as f64;
            (top.ln() * (1.0 - t) + bottom.ln() * t).exp()
        })
        .collect()
}

struct FitState {
    intercept: f64,
    beta: Vec<f64>, // scaled space
    eta: Vec<f64>,
}

fn penalized_objective(
    eta: &[f64],
    y: &[f64],
    w: &[f64],
    beta: &[f64],
    lambda: f64,
) -> f64 {
    let n = y.len() as f64;
    let loss: f64 = eta
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &y), &w)| w * cross_entropy(e, y))
        .sum();
    loss / n + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// One pass of coordinate descent on the weighted least-squares model.
/// `residual` is the working residual `z - eta_quadratic`; returns the
/// largest absolute parameter change.
#[allow(clippy::too_many_arguments)]
fn cd_sweep(
    design: &Design,
    irls_w: &[f64],
    residual: &mut [f64],
    intercept: &mut f64,
    beta: &mut [f64],
    denoms: &[f64],
    lambda: f64,
    total_irls_w: f64,
    active_only: bool,
    active: &[bool],
) -> f64 {
    let n = design.n as f64;
    let mut max_delta: f64 = 0.0;

    if total_irls_w > 0.0 {
        let delta0 =
            residual.iter().zip(irls_w).map(|(r, w)| r * w).sum::<f64>() / total_irls_w;
        if delta0 != 0.0 {
            *intercept += delta0;
            for r in residual.iter_mut() {
                *r -= delta0;
            }
            max_delta = delta0.abs();
        }
    }

    for j in 0..design.n_cols() {
        if active_only && !active[j] {
            continue;
        }
        let den = denoms[j];
        if den <= 0.0 {
            continue;
        }
        let col = &design.cols[j];
        let mut num = 0.0;
        for &(row, v) in col {
            num += irls_w[row as usize] * v * residual[row as usize];
        }
        let z = num / n + den * beta[j];
        let new = soft_threshold(z, lambda) / den;
        let delta = new - beta[j];
        if delta != 0.0 {
            beta[j] = new;
            for &(row, v) in col {
                residual[row as usize] -= delta * v;
            }
            max_delta = max_delta.max(delta.abs());
        }
    }
    max_delta
}

/// Quadratic-model objective used for the debug monotonicity check.
fn quadratic_objective(residual: &[f64], irls_w: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = residual.len() as f64;
    residual
        .iter()
        .zip(irls_w)
        .map(|(r, w)| w * r * r)
        .sum::<f64>()
        / (2.0 * n)
        + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Fits one penalty value starting from `state`; `sweeps` is the shared
/// sweep budget for the call.
fn fit_at_lambda(
    design: &Design,
    y: &[f64],
    w: &[f64],
    lambda: f64,
    state: &mut FitState,
    sweeps: &mut usize,
) -> Result<(), LassoError> {
    let n = design.n as f64;
    let p = design.n_cols();
    let mut irls_w = vec![0.0; design.n];
    let mut residual = vec![0.0; design.n];
    let mut denoms = vec![0.0; p];
    let mut active = vec![false; p];

    let mut objective = penalized_objective(&state.eta, y, w, &state.beta, lambda);
    for _outer in 0..100 {
        // Quadratic model at the current iterate.
        let mut total_irls_w = 0.0;
        for i in 0..design.n {
            let prob = logistic(state.eta[i]).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            let wi = w[i] * prob * (1.0 - prob);
            irls_w[i] = wi;
            total_irls_w += wi;
            // working response z = eta + (y - p)/var; residual = z - eta
            residual[i] = (y[i] - prob) / (prob * (1.0 - prob));
        }
        for j in 0..p {
            denoms[j] = design.cols[j]
                .iter()
                .map(|&(row, v)| irls_w[row as usize] * v * v)
                .sum::<f64>()
                / n;
            active[j] = state.beta[j] != 0.0;
        }

        let old_intercept = state.intercept;
        let old_beta = state.beta.clone();
        let mut intercept = state.intercept;
        let mut beta = state.beta.clone();

        // Inner coordinate descent: full sweep, then iterate the active set.
        let inner_tol = COEF_TOL * 0.1;
        loop {
            #[cfg(debug_assertions)]
            let q_before = quadratic_objective(&residual, &irls_w, &beta, lambda);
            let delta = cd_sweep(
                design,
                &irls_w,
                &mut residual,
                &mut intercept,
                &mut beta,
                &denoms,
                lambda,
                total_irls_w,
                false,
                &active,
            );
            *sweeps += 1;
            #[cfg(debug_assertions)]
            debug_assert!(
                quadratic_objective(&residual, &irls_w, &beta, lambda)
                    <= q_before + 1e-9 * (1.0 + q_before.abs()),
                "coordinate descent increased the quadratic objective"
            );
            for j in 0..p {
                active[j] = beta[j] != 0.0;
            }
            if delta < inner_tol || *sweeps >= MAX_SWEEPS {
                break;
            }
            loop {
                let delta = cd_sweep(
                    design,
                    &irls_w,
                    &mut residual,
                    &mut intercept,
                    &mut beta,
                    &denoms,
                    lambda,
                    total_irls_w,
                    true,
                    &active,
                );
                *sweeps += 1;
                if delta < inner_tol || *sweeps >= MAX_SWEEPS {
                    break;
                }
            }
            if *sweeps >= MAX_SWEEPS {
                break;
            }
        }

        // Backtracking toward the quadratic solution keeps the true
        // objective non-increasing.
        let proposed_eta = compute_eta(design, intercept, &beta);
        let mut step = 1.0;
        let (accepted_obj, accepted) = loop {
            let (cand_intercept, cand_beta, cand_eta) = if step == 1.0 {
                (intercept, beta.clone(), proposed_eta.clone())
            } else {
                let ci = old_intercept + step * (intercept - old_intercept);
                let cb: Vec<f64> = old_beta
                    .iter()
                    .zip(&beta)
                    .map(|(o, n)| o + step * (n - o))
                    .collect();
                let ce: Vec<f64> = state
                    .eta
                    .iter()
                    .zip(&proposed_eta)
                    .map(|(o, n)| o + step * (n - o))
                    .collect();
                (ci, cb, ce)
            };
            let obj = penalized_objective(&cand_eta, y, w, &cand_beta, lambda);
            if obj <= objective + 1e-12 * (1.0 + objective.abs()) || step < 1e-4 {
                break (obj, (cand_intercept, cand_beta, cand_eta));
            }
            step *= 0.5;
        };
        let (new_intercept, new_beta, new_eta) = accepted;

        let max_change = new_beta
            .iter()
            .zip(&old_beta)
            .map(|(a, b)| (a - b).abs())
            .fold((new_intercept - old_intercept).abs(), f64::max);
        state.intercept = new_intercept;
        state.beta = new_beta;
        state.eta = new_eta;
        debug_assert!(
            accepted_obj <= objective + 1e-9 * (1.0 + objective.abs()),
            "penalized objective increased across an outer step"
        );
        objective = accepted_obj;
        if !objective.is_finite() {
            return Err(LassoError::NonFinite("objective"));
        }
        if max_change < COEF_TOL || *sweeps >= MAX_SWEEPS {
            return Ok(());
        }
    }
    Ok(())
}

fn compute_eta(design: &Design, intercept: f64, beta: &[f64]) -> Vec<f64> {
    let mut eta = vec![intercept; design.n];
    for (j, col) in design.cols.iter().enumerate() {
        let b = beta[j];
        if b != 0.0 {
            for &(row, v) in col {
                eta[row as usize] += b * v;
            }
        }
    }
    eta
}

fn validate_inputs(
    subjects: &[SubjectId],
    labels: &[bool],
    weights: Option<&[f64]>,
) -> Result<Vec<f64>, LassoError> {
    if subjects.is_empty() {
        return Err(LassoError::EmptyInput);
    }
    if subjects.len() != labels.len() {
        return Err(LassoError::LengthMismatch("labels"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(LassoError::NoContrast);
    }
    let w = match weights {
        Some(w) => {
            if w.len() != subjects.len() {
                return Err(LassoError::LengthMismatch("weights"));
            }
            if w.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(LassoError::NonFinite("weights"));
            }
            w.to_vec()
        }
        None => vec![1.0; subjects.len()],
    };
    Ok(w)
}

fn state_to_model(design: &Design, state: &FitState, lambda: f64) -> SparseLinearModel {
    let coefficients = design
        .col_ids
        .iter()
        .zip(&state.beta)
        .zip(&design.scales)
        .filter(|((_, &b), _)| b != 0.0)
        .map(|((&id, &b), &s)| (id, b / s))
        .collect();
    SparseLinearModel {
        intercept: state.intercept,
        lambda,
        coefficients,
        training_meta: TrainingMeta::default(),
    }
}

fn initial_state(design: &Design, y: &[f64], w: &[f64]) -> FitState {
    let total_w: f64 = w.iter().sum();
    let ybar = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / total_w;
    let intercept = (ybar / (1.0 - ybar)).ln();
    FitState {
        intercept,
        beta: vec![0.0; design.n_cols()],
        eta: vec![intercept; design.n],
    }
}

/// Fits at a single penalty value.
pub fn fit_logistic_lasso(
    cov: &CovariateTable,
    subjects: &[SubjectId],
    labels: &[bool],
    lambda: f64,
    weights: Option<&[f64]>,
) -> Result<SparseLinearModel, LassoError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LassoError::InvalidLambda);
    }
    let w = validate_inputs(subjects, labels, weights)?;
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let design = Design::build(cov, subjects, weights);
    let mut state = initial_state(&design, &y, &w);
    let mut sweeps = 0;
    fit_at_lambda(&design, &y, &w, lambda, &mut state, &mut sweeps)?;
    let mut model = state_to_model(&design, &state, lambda);
    model.training_meta = TrainingMeta {
        n: subjects.len(),
        n_events: labels.iter().filter(|&&l| l).count(),
        fold_likelihoods: Vec::new(),
    };
    Ok(model)
}

/// Warm-started fits along a descending penalty grid. Returns the state at
/// every grid value.
fn fit_path(
    design: &Design,
    y: &[f64],
    w: &[f64],
    grid: &[f64],
) -> Result<Vec<(f64, f64, Vec<f64>)>, LassoError> {
    let mut state = initial_state(design, y, w);
    let mut out = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut sweeps = 0;
        fit_at_lambda(design, y, w, lambda, &mut state, &mut sweeps)?;
        out.push((lambda, state.intercept, state.beta.clone()));
    }
    Ok(out)
}

/// Result of cross-validated penalty selection.
#[derive(Debug, Clone)]
pub struct CvSelection {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean held-out log-likelihood per grid value.
    pub mean_loglik: Vec<f64>,
}

fn stratified_folds(
    labels: &[bool],
    folds: usize,
    seed: u64,
    attempt: u64,
) -> Vec<usize> {
    let mut assignment = vec![0usize; labels.len()];
    for class in [false, true] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let mut rng = stream(seed, u64::from(class), Purpose::CvFolds, attempt);
        members.shuffle(&mut rng);
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    assignment
}

fn folds_have_contrast(labels: &[bool], assignment: &[usize], folds: usize) -> bool {
    for fold in 0..folds {
        let mut train = [false, false];
        let mut test = false;
        for (i, &l) in labels.iter().enumerate() {
            if assignment[i] == fold {
                test = true;
            } else {
                train[usize::from(l)] = true;
            }
        }
        if !test || !train[0] || !train[1] {
            return false;
        }
    }
    true
}

/// Selects the penalty maximizing mean held-out log-likelihood over
/// stratified folds; ties break toward the larger (sparser) value.
pub fn cv_select_lambda(
    cov: &CovariateTable,
    subjects: &[SubjectId],
    labels: &[bool],
    folds: usize,
    grid: Option<&[f64]>,
    seed: u64,
) -> Result<CvSelection, LassoError> {
    if folds < 2 {
        return Err(LassoError::InvalidGrid("folds must be >= 2".into()));
    }
    let w = validate_inputs(subjects, labels, None)?;
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();

    let grid: Vec<f64> = match grid {
        Some(g) => {
            if g.is_empty() {
                return Err(LassoError::InvalidGrid("empty grid".into()));
            }
            if g.iter().any(|&l| !(l > 0.0)) || g.windows(2).any(|p| p[1] >= p[0]) {
                return Err(LassoError::InvalidGrid(
                    "grid must be strictly positive and strictly decreasing".into(),
                ));
            }
            g.to_vec()
        }
        None => {
            let design = Design::build(cov, subjects, None);
            default_lambda_grid(design.lambda_max(&y, &w))
        }
    };

    let mut assignment = stratified_folds(labels, folds, seed, 0);
    if !folds_have_contrast(labels, &assignment, folds) {
        assignment = stratified_folds(labels, folds, seed, 1);
        if !folds_have_contrast(labels, &assignment, folds) {
            return Err(LassoError::SingleClassFold);
        }
    }

    let mut total_loglik = vec![0.0; grid.len()];
    let mut total_held = 0usize;
    for fold in 0..folds {
        let train_idx: Vec<usize> =
            (0..subjects.len()).filter(|&i| assignment[i] != fold).collect();
        let held_idx: Vec<usize> =
            (0..subjects.len()).filter(|&i| assignment[i] == fold).collect();
        let train_subjects: Vec<SubjectId> = train_idx.iter().map(|&i| subjects[i]).collect();
        let train_y: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
        let train_w: Vec<f64> = train_idx.iter().map(|&i| w[i]).collect();
        let design = Design::build(cov, &train_subjects, None);
        let path = fit_path(&design, &train_y, &train_w, &grid)?;
        for (g, (_, intercept, beta)) in path.iter().enumerate() {
            // Original-scale dense coefficients for held-out scoring.
            let coefs: Vec<f64> = beta
                .iter()
                .zip(&design.scales)
                .map(|(b, s)| b / s)
                .collect();
            for &i in &held_idx {
                let row = cov.row(subjects[i]).unwrap_or(&[]);
                let mut eta = *intercept;
                for &(c, v) in row {
                    if let Some(&pos) = design.col_pos.get(&c) {
                        eta += coefs[pos] * v;
                    }
                }
                total_loglik[g] -= cross_entropy(eta, y[i]);
            }
        }
        total_held += held_idx.len();
    }

    let mean_loglik: Vec<f64> = total_loglik
        .iter()
        .map(|t| t / total_held as f64)
        .collect();
    // Ties toward larger lambda: scan in grid order (descending lambda) and
    // keep the first strict improvement.
    let mut best = 0;
    for (g, &ll) in mean_loglik.iter().enumerate() {
        if ll > mean_loglik[best] {
            best = g;
        }
    }
    Ok(CvSelection {
        lambda: grid[best],
        grid,
        mean_loglik,
    })
}

/// Cross-validated selection followed by a final fit on all data, with the
/// training metadata filled in.
pub fn fit_cv(
    cov: &CovariateTable,
    subjects: &[SubjectId],
    labels: &[bool],
    folds: usize,
    grid: Option<&[f64]>,
    seed: u64,
) -> Result<SparseLinearModel, LassoError> {
    let selection = cv_select_lambda(cov, subjects, labels, folds, grid, seed)?;
    let w = vec![1.0; subjects.len()];
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let design = Design::build(cov, subjects, None);
    let path_grid: Vec<f64> = selection
        .grid
        .iter()
        .copied()
        .take_while(|&l| l >= selection.lambda)
        .collect();
    let path = fit_path(&design, &y, &w, &path_grid)?;
    let (lambda, intercept, beta) = path.last().expect("path is non-empty").clone();
    let state = FitState {
        intercept,
        beta,
        eta: Vec::new(),
    };
    let mut model = state_to_model(&design, &state, lambda);
    model.training_meta = TrainingMeta {
        n: subjects.len(),
        n_events: labels.iter().filter(|&&l| l).count(),
        fold_likelihoods: selection.mean_loglik,
    };
    Ok(model)
}
