//! Inference strategies over a learned checkpoint and the report formats.
//!
//! Four strategies: the combiner predicts directly (e1), or the model is
//! prompted with the rules (e2), the rules plus weights and bias (e3), or
//! all of that plus the combiner's own label as a reference (e4). Only e1
//! and e4 need judged test rows; e2 and e3 show the model the raw example.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use rlie_core::combiner::{predict_label, CombinerParams, PredictConfig};
use rlie_core::dataset::DatasetManifest;
use rlie_core::genesis::render_numbered_rules;
use rlie_core::judge::parse_binary_answer;
use rlie_core::metrics::{accuracy, aggregate_runs, format_mean_std, macro_f1, RunSummary};
use rlie_core::refine::Checkpoint;
use rlie_core::types::{Example, Rule};

use crate::backend::ChatBackend;
use crate::error::{Result, RlieError};
use crate::judge::{judge_matrix, JudgeBackend, JudgmentCache};
use crate::pipeline::checkpoint_params;
use crate::templates::TemplateSet;

/// The four inference strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    LinearOnly,
    LlmRules,
    LlmRulesWeights,
    LlmRulesWeightsPrediction,
}

pub const STRATEGY_NAMES: [&str; 4] = [
    "e1 (linear-only)",
    "e2 (llm-rules)",
    "e3 (llm-rules-weights)",
    "e4 (llm-rules-weights-prediction)",
];

impl Strategy {
    pub fn code(self) -> &'static str {
        match self {
            Strategy::LinearOnly => "e1",
            Strategy::LlmRules => "e2",
            Strategy::LlmRulesWeights => "e3",
            Strategy::LlmRulesWeightsPrediction => "e4",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::LinearOnly => "linear-only",
            Strategy::LlmRules => "llm-rules",
            Strategy::LlmRulesWeights => "llm-rules-weights",
            Strategy::LlmRulesWeightsPrediction => "llm-rules-weights-prediction",
        }
    }
}

impl FromStr for Strategy {
    type Err = RlieError;

    fn from_str(name: &str) -> Result<Self> {
        match name.to_lowercase().as_str() {
            "e1" | "linear-only" | "linear_only" => Ok(Strategy::LinearOnly),
            "e2" | "llm-rules" | "llm_rules" => Ok(Strategy::LlmRules),
            "e3" | "llm-rules-weights" | "llm_rules_weights" => Ok(Strategy::LlmRulesWeights),
            "e4" | "llm-rules-weights-prediction" | "llm_rules_weights_prediction" => {
                Ok(Strategy::LlmRulesWeightsPrediction)
            }
            other => Err(RlieError::Config(format!(
                "unknown strategy {other:?}; valid: {}",
                STRATEGY_NAMES.join(", ")
            ))),
        }
    }
}

/// One test example's outcome under a strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub label: u8,
    pub strategy: String,
    pub prediction: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// One strategy evaluated over one run's test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy: String,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Fraction of test examples whose answer parsed to a label (always 1.0
    /// for e1).
    pub parse_coverage: f64,
    pub predictions: Vec<PredictionRecord>,
}

/// Weight lines shown to the model, in rule-set order, weights to 4 decimal
/// places so prompts are stable across runs.
fn render_weighted_rules(rules: &[Rule], params: &CombinerParams) -> String {
    rules
        .iter()
        .zip(&params.weights)
        .enumerate()
        .map(|(i, (rule, weight))| format!("{}. {} (weight: {weight:+.4})", i + 1, rule.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders the prompt for one example under e2/e3/e4. `reference_label` is
/// the combiner's own prediction, required by e4 only.
pub fn render_inference_prompt(
    strategy: Strategy,
    checkpoint: &Checkpoint,
    params: Option<&CombinerParams>,
    example: &Example,
    manifest: &DatasetManifest,
    templates: &TemplateSet,
    reference_label: Option<u8>,
) -> Result<(String, String)> {
    let rules = checkpoint.rule_set.rules();
    let mut bindings: BTreeMap<String, String> = example
        .fields
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let template = match strategy {
        Strategy::LinearOnly => {
            return Err(RlieError::Config("e1 has no prompt to render".into()))
        }
        Strategy::LlmRules => {
            bindings.insert("hypotheses".into(), render_numbered_rules(rules));
            &templates.infer_rules
        }
        Strategy::LlmRulesWeights | Strategy::LlmRulesWeightsPrediction => {
            let params = params.ok_or_else(|| {
                RlieError::Integrity("strategy needs combiner params but the checkpoint has none".into())
            })?;
            bindings.insert("weighted_hypotheses".into(), render_weighted_rules(rules, params));
            bindings.insert("bias".into(), format!("{:+.4}", params.bias));
            bindings.insert("pos_label".into(), manifest.positive_token.clone());
            bindings.insert("neg_label".into(), manifest.negative_token.clone());
            if strategy == Strategy::LlmRulesWeightsPrediction {
                let label = reference_label.ok_or_else(|| {
                    RlieError::Config("e4 requires the combiner's reference label".into())
                })?;
                bindings.insert("model_prediction".into(), manifest.label_token(label).to_string());
                &templates.infer_full
            } else {
                &templates.infer_weights
            }
        }
    };
    let rendered = template.render(&bindings)?;
    Ok((rendered.system, rendered.user))
}

/// Evaluates one strategy over the test split. e1 consumes no chat backend;
/// e2-e4 attempt every example exactly once, record per-example parse
/// failures rather than imputing, and report parse coverage alongside
/// accuracy (computed over the parsed subset).
#[allow(clippy::too_many_arguments)]
pub fn evaluate_strategy(
    strategy: Strategy,
    checkpoint: &Checkpoint,
    test: &[Example],
    judge: &dyn JudgeBackend,
    cache: &JudgmentCache,
    chat: Option<&dyn ChatBackend>,
    templates: &TemplateSet,
    manifest: &DatasetManifest,
    predict: &PredictConfig,
    seed: u64,
) -> Result<StrategyRun> {
    if test.is_empty() {
        return Err(RlieError::Config("empty test split".into()));
    }
    let rules = checkpoint.rule_set.rules();
    if rules.is_empty() {
        return Err(RlieError::Integrity("checkpoint has an empty rule set".into()));
    }
    let params = checkpoint_params(checkpoint)?;
    let needs_params = !matches!(strategy, Strategy::LlmRules);
    if needs_params && params.is_none() {
        return Err(RlieError::Integrity(format!(
            "strategy {} needs combiner params but the checkpoint has none",
            strategy.code()
        )));
    }

    // Judged test rows are needed only where the combiner itself predicts.
    let needs_matrix = matches!(strategy, Strategy::LinearOnly | Strategy::LlmRulesWeightsPrediction);
    let matrix = if needs_matrix {
        let (matrix, _) = judge_matrix(judge, rules, test, cache)?;
        Some(matrix)
    } else {
        None
    };

    let mut predictions = Vec::with_capacity(test.len());
    for example in test {
        let outcome: Result<u8> = match strategy {
            Strategy::LinearOnly => {
                let row = matrix.as_ref().unwrap().feature_row(&example.id)?;
                Ok(predict_label(params.as_ref().unwrap(), &row, predict)?)
            }
            _ => {
                let chat = chat.ok_or_else(|| {
                    RlieError::Config(format!("strategy {} needs a chat backend", strategy.code()))
                })?;
                let reference = if strategy == Strategy::LlmRulesWeightsPrediction {
                    let row = matrix.as_ref().unwrap().feature_row(&example.id)?;
                    Some(predict_label(params.as_ref().unwrap(), &row, predict)?)
                } else {
                    None
                };
                let (system, user) = render_inference_prompt(
                    strategy,
                    checkpoint,
                    params.as_ref(),
                    example,
                    manifest,
                    templates,
                    reference,
                )?;
                let raw = chat.complete(&system, &user)?;
                parse_binary_answer(&raw, manifest).map_err(RlieError::Core)
            }
        };
        match outcome {
            Ok(label) => predictions.push(PredictionRecord {
                example_id: example.id.clone(),
                label: example.label,
                strategy: strategy.code().into(),
                prediction: Some(label),
                error: None,
            }),
            // Off-format answers are recorded, not imputed; transport and
            // structural errors abort the run.
            Err(RlieError::Core(rlie_core::CoreError::Parse { reason, raw })) => {
                predictions.push(PredictionRecord {
                    example_id: example.id.clone(),
                    label: example.label,
                    strategy: strategy.code().into(),
                    prediction: None,
                    error: Some(format!("{reason}; raw: {raw:?}")),
                })
            }
            Err(other) => return Err(other),
        }
    }

    let parsed: Vec<&PredictionRecord> = predictions.iter().filter(|p| p.prediction.is_some()).collect();
    if parsed.is_empty() {
        return Err(RlieError::Backend(format!(
            "strategy {}: no test answer parsed to a label",
            strategy.code()
        )));
    }
    let preds: Vec<u8> = parsed.iter().map(|p| p.prediction.unwrap()).collect();
    let labels: Vec<u8> = parsed.iter().map(|p| p.label).collect();
    Ok(StrategyRun {
        strategy: strategy.code().into(),
        seed,
        accuracy: accuracy(&preds, &labels)?,
        macro_f1: macro_f1(&preds, &labels)?,
        parse_coverage: parsed.len() as f64 / test.len() as f64,
        predictions,
    })
}

/// Per-run metric values plus their aggregate, one per strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub runs: Vec<RunMetrics>,
    pub accuracy: RunSummary,
    pub macro_f1: RunSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub parse_coverage: f64,
}

pub fn aggregate_strategy_runs(runs: &[StrategyRun]) -> Result<EvalReport> {
    if runs.is_empty() {
        return Err(RlieError::Config("no runs to aggregate".into()));
    }
    let accuracies: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let f1s: Vec<f64> = runs.iter().map(|r| r.macro_f1).collect();
    Ok(EvalReport {
        strategy: runs[0].strategy.clone(),
        runs: runs
            .iter()
            .map(|r| RunMetrics {
                seed: r.seed,
                accuracy: r.accuracy,
                macro_f1: r.macro_f1,
                parse_coverage: r.parse_coverage,
            })
            .collect(),
        accuracy: aggregate_runs(&accuracies)?,
        macro_f1: aggregate_runs(&f1s)?,
    })
}

/// Plain-text table, strategies as rows, mean±std (x 10^-2) per metric.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<34}{:>16}{:>16}{:>8}\n",
        "strategy", "accuracy", "macro-f1", "runs"
    ));
    out.push_str(&format!("{}\n", "-".repeat(74)));
    for report in reports {
        out.push_str(&format!(
            "{:<34}{:>16}{:>16}{:>8}\n",
            report.strategy,
            format_mean_std(&report.accuracy),
            format_mean_std(&report.macro_f1),
            report.runs.len(),
        ));
    }
    out
}
