//! The probabilistic rule combiner: logistic regression over ternary
//! judgment features with an elastic-net penalty.
//!
//! The model is p = sigma(z' w + b) and the training objective is
//!
//! ```text
//! (1/n) sum_i bce(y_i, p_i) + lambda * (alpha * |w|_1 + (1 - alpha)/2 * |w|_2^2)
//! ```
//!
//! The intercept is never penalized. Fitting is proximal gradient descent:
//! full gradient steps on the smooth part (cross-entropy + L2) with a fixed
//! step from a Lipschitz bound, and soft-thresholding for the L1 part.
//! Features stay in {-1, 0, +1}; no standardization, so the weights remain
//! directly interpretable as rule importances.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{Judgment, JudgmentMatrix};

/// Numeric floor used when clipping probabilities inside the cross-entropy,
/// keeping the objective finite for saturated predictions.
const PROB_CLIP: f64 = 1e-12;

/// Clamp applied to the class prior before taking its logit in the
/// zero-feature (bias-only) fit.
const PRIOR_CLIP: f64 = 1e-6;

fn exp(x: f64) -> f64 {
    libm::exp(x)
}

fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// Numerically stable logistic function, branching on the sign of `u`.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + exp(-u))
    } else {
        let e = exp(u);
        e / (1.0 + e)
    }
}

/// Soft-thresholding operator, the proximal map of `t * |.|_1`.
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Fitted combiner parameters, aligned to a rule-column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl CombinerParams {
    /// Checkpoint form: weights keyed by rule id rather than position, so
    /// stored params survive rule-set reordering.
    pub fn to_keyed(&self, rule_ids: &[String]) -> Result<KeyedCombinerParams> {
        if rule_ids.len() != self.weights.len() {
            return Err(CoreError::DimensionMismatch {
                expected: self.weights.len(),
                got: rule_ids.len(),
            });
        }
        let weights: BTreeMap<String, f64> = rule_ids
            .iter()
            .cloned()
            .zip(self.weights.iter().copied())
            .collect();
        if weights.len() != rule_ids.len() {
            return Err(CoreError::Integrity("duplicate rule id among params".into()));
        }
        Ok(KeyedCombinerParams {
            weights,
            bias: self.bias,
            lambda: self.lambda,
            alpha: self.alpha,
        })
    }
}

/// Serialized combiner parameters: rule_id -> weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyedCombinerParams {
    pub weights: BTreeMap<String, f64>,
    pub bias: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl KeyedCombinerParams {
    /// Realigns to a rule-column order; every id must be present on both
    /// sides.
    pub fn to_positional(&self, rule_ids: &[String]) -> Result<CombinerParams> {
        if rule_ids.len() != self.weights.len() {
            return Err(CoreError::Integrity(format!(
                "params cover {} rules, rule set has {}",
                self.weights.len(),
                rule_ids.len()
            )));
        }
        let weights = rule_ids
            .iter()
            .map(|id| {
                self.weights
                    .get(id)
                    .copied()
                    .ok_or_else(|| CoreError::Integrity(format!("params missing weight for rule {id:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(CombinerParams {
            weights,
            bias: self.bias,
            lambda: self.lambda,
            alpha: self.alpha,
        })
    }
}

/// Decision threshold for label prediction; tau must lie in (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    tau: f64,
}

impl PredictConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(CoreError::Config(format!("tau must be in (0, 1), got {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self { tau: 0.5 }
    }
}

/// Solver knobs for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop when the max absolute parameter change falls below this.
    pub tol: f64,
    /// Record the objective after every iteration (diagnostics and the
    /// monotone-descent property test).
    #[serde(default)]
    pub track_objective: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-8,
            track_objective: false,
        }
    }
}

/// Validation score for one grid point during hyperparameter selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    pub lambda: f64,
    pub alpha: f64,
    pub score: f64,
}

/// Fit diagnostics. `converged` means the final-step parameter change fell
/// below the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Per-candidate (lambda, alpha) validation scores, when this fit came
    /// out of a selection pass.
    #[serde(default)]
    pub grid_scores: Vec<GridScore>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub objective_trace: Option<Vec<f64>>,
}

/// sigma(features' w + b).
pub fn predict_proba(params: &CombinerParams, features: &[Judgment]) -> Result<f64> {
    if features.len() != params.weights.len() {
        return Err(CoreError::DimensionMismatch {
            expected: params.weights.len(),
            got: features.len(),
        });
    }
    let mut u = params.bias;
    for (w, z) in params.weights.iter().zip(features) {
        u += w * z.as_i8() as f64;
    }
    Ok(sigmoid(u))
}

/// 1 iff the predicted probability reaches tau (boundary inclusive).
pub fn predict_label(params: &CombinerParams, features: &[Judgment], config: &PredictConfig) -> Result<u8> {
    Ok((predict_proba(params, features)? >= config.tau) as u8)
}

fn validate_labels(labels: &[u8]) -> Result<()> {
    for &label in labels {
        if label > 1 {
            return Err(CoreError::Usage(format!(
                "label {label} outside {{0, 1}}"
            )));
        }
    }
    Ok(())
}

fn check_alignment(matrix: &JudgmentMatrix, labels: &[u8]) -> Result<()> {
    if matrix.n_examples() != labels.len() {
        return Err(CoreError::DimensionMismatch {
            expected: matrix.n_examples(),
            got: labels.len(),
        });
    }
    validate_labels(labels)
}

fn dense(matrix: &JudgmentMatrix) -> Vec<f64> {
    let d = matrix.n_rules();
    let mut out = Vec::with_capacity(matrix.n_examples() * d);
    for i in 0..matrix.n_examples() {
        out.extend(matrix.row(i).iter().map(|j| j.as_i8() as f64));
    }
    out
}

fn clipped_bce(y: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(y * ln(p) + (1.0 - y) * ln(1.0 - p))
}

/// Elastic-net penalty lambda * (alpha * |w|_1 + (1 - alpha)/2 * |w|_2^2).
pub fn elastic_net_penalty(weights: &[f64], lambda: f64, alpha: f64) -> f64 {
    let l1: f64 = weights.iter().map(|w| w.abs()).sum();
    let l2: f64 = weights.iter().map(|w| w * w).sum();
    lambda * (alpha * l1 + (1.0 - alpha) / 2.0 * l2)
}

/// Full training objective: mean clipped cross-entropy plus the elastic-net
/// penalty on the weights (the bias is not penalized).
pub fn objective(params: &CombinerParams, matrix: &JudgmentMatrix, labels: &[u8]) -> Result<f64> {
    check_alignment(matrix, labels)?;
    if labels.is_empty() {
        return Err(CoreError::Usage("objective over zero examples".into()));
    }
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let p = predict_proba(params, matrix.row(i))?;
        loss += clipped_bce(label as f64, p);
    }
    Ok(loss / labels.len() as f64 + elastic_net_penalty(&params.weights, params.lambda, params.alpha))
}

/// Smooth part of the objective: mean clipped cross-entropy plus the L2
/// term. The L1 term is handled by the proximal step, not by gradients.
pub fn smooth_objective(
    weights: &[f64],
    bias: f64,
    matrix: &JudgmentMatrix,
    labels: &[u8],
    lambda: f64,
    alpha: f64,
) -> Result<f64> {
    check_alignment(matrix, labels)?;
    if weights.len() != matrix.n_rules() {
        return Err(CoreError::DimensionMismatch {
            expected: matrix.n_rules(),
            got: weights.len(),
        });
    }
    let n = labels.len();
    if n == 0 {
        return Err(CoreError::Usage("smooth objective over zero examples".into()));
    }
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let mut u = bias;
        for (w, z) in weights.iter().zip(matrix.row(i)) {
            u += w * z.as_i8() as f64;
        }
        loss += clipped_bce(label as f64, sigmoid(u));
    }
    let ridge: f64 = weights.iter().map(|w| w * w).sum::<f64>() * lambda * (1.0 - alpha) / 2.0;
    Ok(loss / n as f64 + ridge)
}

/// Analytic gradient of [`smooth_objective`] with respect to (weights, bias).
pub fn smooth_gradient(
    weights: &[f64],
    bias: f64,
    matrix: &JudgmentMatrix,
    labels: &[u8],
    lambda: f64,
    alpha: f64,
) -> Result<(Vec<f64>, f64)> {
    check_alignment(matrix, labels)?;
    let n = labels.len();
    let d = matrix.n_rules();
    if weights.len() != d {
        return Err(CoreError::DimensionMismatch {
            expected: d,
            got: weights.len(),
        });
    }
    if n == 0 {
        return Err(CoreError::Usage("gradient over zero examples".into()));
    }
    let mut grad_w = vec![0.0; d];
    let mut grad_b = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = matrix.row(i);
        let mut u = bias;
        for (w, z) in weights.iter().zip(row) {
            u += w * z.as_i8() as f64;
        }
        let residual = sigmoid(u) - label as f64;
        grad_b += residual;
        for (g, z) in grad_w.iter_mut().zip(row) {
            *g += residual * z.as_i8() as f64;
        }
    }
    let inv_n = 1.0 / n as f64;
    let l2 = lambda * (1.0 - alpha);
    for (g, w) in grad_w.iter_mut().zip(weights) {
        *g = *g * inv_n + l2 * w;
    }
    Ok((grad_w, grad_b * inv_n))
}

fn logit(p: f64) -> f64 {
    ln(p / (1.0 - p))
}

/// Fits the combiner by proximal gradient descent from a zero start.
///
/// The step size is 1/L with L = (d + 1)/4 + lambda*(1 - alpha), a Lipschitz
/// bound for the smooth part valid for features in {-1, 0, +1} (Frobenius
/// bound on the augmented design, curvature of the logistic loss <= 1/4).
/// Zero-rule input returns the bias-only maximum likelihood solution with
/// the class prior clipped to [1e-6, 1 - 1e-6].
pub fn fit(
    matrix: &JudgmentMatrix,
    labels: &[u8],
    lambda: f64,
    alpha: f64,
    config: &SolverConfig,
) -> Result<(CombinerParams, FitReport)> {
    check_alignment(matrix, labels)?;
    if labels.is_empty() {
        return Err(CoreError::Usage("cannot fit on zero examples".into()));
    }
    if lambda < 0.0 {
        return Err(CoreError::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::Config(format!("alpha must be in [0, 1], got {alpha}")));
    }

    let n = labels.len();
    let d = matrix.n_rules();

    if d == 0 {
        let prior = (labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64)
            .clamp(PRIOR_CLIP, 1.0 - PRIOR_CLIP);
        let params = CombinerParams {
            weights: Vec::new(),
            bias: logit(prior),
            lambda,
            alpha,
        };
        let report = FitReport {
            objective: objective(&params, matrix, labels)?,
            iterations: 0,
            converged: true,
            grid_scores: Vec::new(),
            objective_trace: None,
        };
        return Ok((params, report));
    }

    let design = dense(matrix);
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    let l1 = lambda * alpha;
    let l2 = lambda * (1.0 - alpha);
    let lipschitz = (d as f64 + 1.0) / 4.0 + l2;
    let step = 1.0 / lipschitz;
    let inv_n = 1.0 / n as f64;

    let mut weights = vec![0.0f64; d];
    let mut bias = 0.0f64;
    let mut grad_w = vec![0.0f64; d];
    let mut iterations = 0;
    let mut converged = false;
    let mut trace = if config.track_objective { Some(Vec::new()) } else { None };

    for _ in 0..config.max_iter {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for i in 0..n {
            let row = &design[i * d..(i + 1) * d];
            let mut u = bias;
            for (w, x) in weights.iter().zip(row) {
                u += w * x;
            }
            let residual = sigmoid(u) - y[i];
            grad_b += residual;
            for (g, x) in grad_w.iter_mut().zip(row) {
                *g += residual * x;
            }
        }
        grad_b *= inv_n;

        let mut delta = 0.0f64;
        for j in 0..d {
            let g = grad_w[j] * inv_n + l2 * weights[j];
            let next = soft_threshold(weights[j] - step * g, step * l1);
            let change = (next - weights[j]).abs();
            if change > delta {
                delta = change;
            }
            weights[j] = next;
        }
        let next_bias = bias - step * grad_b;
        let change = (next_bias - bias).abs();
        if change > delta {
            delta = change;
        }
        bias = next_bias;
        iterations += 1;

        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(CoreError::Solver(format!(
                "non-finite parameters after iteration {iterations} (lambda={lambda}, alpha={alpha})"
            )));
        }
        if let Some(trace) = trace.as_mut() {
            let params = CombinerParams {
                weights: weights.clone(),
                bias,
                lambda,
                alpha,
            };
            trace.push(objective(&params, matrix, labels)?);
        }
        if delta < config.tol {
            converged = true;
            break;
        }
    }

    let params = CombinerParams {
        weights,
        bias,
        lambda,
        alpha,
    };
    let report = FitReport {
        objective: objective(&params, matrix, labels)?,
        iterations,
        converged,
        grid_scores: Vec::new(),
        objective_trace: trace,
    };
    Ok((params, report))
}

/// Default selection grid: lambda in {0.001, 0.01, 0.1, 1}, alpha in
/// {0, 0.5, 1}.
pub fn default_grid() -> Vec<(f64, f64)> {
    let mut grid = Vec::new();
    for &lambda in &[0.001, 0.01, 0.1, 1.0] {
        for &alpha in &[0.0, 0.5, 1.0] {
            grid.push((lambda, alpha));
        }
    }
    grid
}

/// Assigns validation indices to `k` folds, round-robin within each class in
/// index order. No randomness, so selection is fully deterministic.
pub fn stratified_folds(labels: &[u8], k: usize) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    for class in [1u8, 0u8] {
        let mut next = 0;
        for (i, &label) in labels.iter().enumerate() {
            if label == class {
                folds[next % k].push(i);
                next += 1;
            }
        }
    }
    folds
}

fn mean_log_loss(params: &CombinerParams, matrix: &JudgmentMatrix, labels: &[u8], indices: &[usize]) -> Result<f64> {
    let mut loss = 0.0;
    for &i in indices {
        let p = predict_proba(params, matrix.row(i))?;
        loss += clipped_bce(labels[i] as f64, p);
    }
    Ok(loss / indices.len() as f64)
}

/// Outcome of hyperparameter selection.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSelection {
    pub lambda: f64,
    pub alpha: f64,
    pub grid_scores: Vec<GridScore>,
}

/// For each grid point: fit once on the training matrix, then score the mean
/// log-loss across stratified folds of the validation set and average the
/// fold scores. Returns the point with minimal mean score; exact ties break
/// toward larger lambda, then larger alpha (sparser models). A single-class
/// validation set is a selection error; a single-class fold scores normally.
pub fn select_hyperparams(
    train_matrix: &JudgmentMatrix,
    train_labels: &[u8],
    val_matrix: &JudgmentMatrix,
    val_labels: &[u8],
    grid: &[(f64, f64)],
    folds: usize,
    solver: &SolverConfig,
) -> Result<HyperSelection> {
    if grid.is_empty() {
        return Err(CoreError::Usage("hyperparameter grid is empty".into()));
    }
    if folds < 2 {
        return Err(CoreError::Usage("fold count must be >= 2".into()));
    }
    check_alignment(val_matrix, val_labels)?;
    let positives = val_labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == val_labels.len() {
        return Err(CoreError::Selection(
            "validation set contains a single class; fold scores cannot rank models".into(),
        ));
    }

    let fold_indices = stratified_folds(val_labels, folds);
    let mut best: Option<(f64, f64, f64)> = None;
    let mut grid_scores = Vec::with_capacity(grid.len());

    for &(lambda, alpha) in grid {
        let (params, _) = fit(train_matrix, train_labels, lambda, alpha, solver)?;
        let mut total = 0.0;
        let mut counted = 0;
        for fold in &fold_indices {
            if fold.is_empty() {
                continue;
            }
            total += mean_log_loss(&params, val_matrix, val_labels, fold)?;
            counted += 1;
        }
        let score = total / counted as f64;
        grid_scores.push(GridScore { lambda, alpha, score });

        let better = match best {
            None => true,
            Some((best_score, best_lambda, best_alpha)) => {
                score < best_score
                    || (score == best_score
                        && (lambda > best_lambda || (lambda == best_lambda && alpha > best_alpha)))
            }
        };
        if better {
            best = Some((score, lambda, alpha));
        }
    }

    let (_, lambda, alpha) = best.unwrap();
    Ok(HyperSelection {
        lambda,
        alpha,
        grid_scores,
    })
}

/// One fit on the full training matrix with the selected pair; the returned
/// params carry (lambda*, alpha*).
pub fn refit_final(
    train_matrix: &JudgmentMatrix,
    train_labels: &[u8],
    lambda: f64,
    alpha: f64,
    solver: &SolverConfig,
) -> Result<(CombinerParams, FitReport)> {
    fit(train_matrix, train_labels, lambda, alpha, solver)
}
