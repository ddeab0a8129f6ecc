//! The refinement loop: generate candidates, judge them, filter by coverage,
//! merge under the capacity limit, retrain the combiner, mine hard examples,
//! and stop early on stalled validation accuracy. Returns the checkpoint
//! with the best validation accuracy (earliest on ties) plus the full run
//! log.

use std::collections::BTreeMap;
use std::path::Path;

use rlie_core::combiner::{self, PredictConfig, SolverConfig};
use rlie_core::dataset::{sample_initial, DatasetManifest};
use rlie_core::genesis::GenerationRequest;
use rlie_core::metrics::{accuracy, macro_f1};
use rlie_core::refine::{
    filter_by_coverage, merge_and_prune, rule_individual_accuracy, select_hard_examples,
    CacheStats, Checkpoint, EarlyStopping, IterationRecord, LoopConfig, RuleValStats, RunLog,
    StopVerdict,
};
use rlie_core::types::{coverage, Example, Rule, RuleSet, SplitBundle};
use rlie_core::CoreError;

use crate::backend::ChatBackend;
use crate::error::{Result, RlieError};
use crate::judge::{judge_matrix, JudgeBackend, JudgmentCache};
use crate::templates::{generate_rules, TemplateSet};

/// Everything a run needs besides the data splits.
pub struct PipelineContext<'a> {
    pub generator: &'a dyn ChatBackend,
    pub judge: &'a dyn JudgeBackend,
    pub cache: &'a JudgmentCache,
    pub templates: &'a TemplateSet,
    pub manifest: &'a DatasetManifest,
    pub loop_config: LoopConfig,
    pub grid: Vec<(f64, f64)>,
    pub folds: usize,
    pub solver: SolverConfig,
    pub predict: PredictConfig,
}

pub struct RunOutcome {
    pub best: Checkpoint,
    pub log: RunLog,
    pub total_cache: CacheStats,
}

// splitmix64-style mixing so per-iteration sampling streams are independent
// of each other while fully determined by (config seed, iteration).
fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn labels_of(examples: &[Example]) -> Vec<u8> {
    examples.iter().map(|e| e.label).collect()
}

fn ids_of(examples: &[Example]) -> Vec<String> {
    examples.iter().map(|e| e.id.clone()).collect()
}

pub fn run_rlie(splits: &SplitBundle, ctx: &PipelineContext) -> Result<RunOutcome> {
    ctx.loop_config.validate()?;
    if ctx.grid.is_empty() {
        return Err(RlieError::Config("combiner grid is empty".into()));
    }
    let config = &ctx.loop_config;
    let train_labels = labels_of(&splits.train);
    let train_ids = ids_of(&splits.train);
    let val_labels = labels_of(&splits.validation);
    let by_id: BTreeMap<&str, &Example> = splits.train.iter().map(|e| (e.id.as_str(), e)).collect();

    let mut current = RuleSet::empty(config.capacity)?;
    let mut log = RunLog::default();
    let mut total_cache = CacheStats::default();
    let mut stopper = EarlyStopping::new(config.improvement_margin, config.patience);
    let mut best: Option<Checkpoint> = None;
    let mut hard_observations: Vec<Example> = Vec::new();

    for iteration in 1..=config.max_iterations {
        let mut iter_cache = CacheStats::default();

        // Candidate generation. Iteration 1 samples observations at random;
        // later iterations reflect on the hardest examples plus the current
        // rules. A response with zero parseable rules is fatal only in
        // iteration 1; later it just makes a non-improving iteration.
        let request = if iteration == 1 {
            let observations = sample_initial(
                &splits.train,
                config.hard_example_count,
                derive_seed(config.seed, iteration as u64),
            )?;
            GenerationRequest::initial(observations, config.initial_rule_count)?
        } else {
            GenerationRequest::refinement(
                hard_observations.clone(),
                current.rules().to_vec(),
                config.refinement_rule_count,
            )?
        };
        let candidates =
            match generate_rules(ctx.generator, &request, ctx.templates, ctx.manifest, iteration) {
                Ok((rules, _raw)) => rules
                    .into_iter()
                    .filter(|rule| !current.contains_text(&rule.text))
                    .collect(),
                Err(RlieError::Core(CoreError::Generation { raw })) if iteration > 1 => {
                    log::warn!("iteration {iteration}: no parseable rules in response ({} bytes)", raw.len());
                    Vec::new()
                }
                Err(other) => return Err(other),
            };

        // Coverage filter over the training set.
        let (kept, dropped) = if candidates.is_empty() {
            (Vec::new(), Vec::new())
        } else {
            let (candidate_matrix, stats) =
                judge_matrix(ctx.judge, &candidates, &splits.train, ctx.cache)?;
            iter_cache.add(stats);
            let filter = filter_by_coverage(&candidates, &candidate_matrix, config.min_coverage)?;
            (filter.kept, filter.dropped)
        };
        if iteration == 1 && kept.is_empty() {
            return Err(RlieError::Integrity(
                "iteration 1 produced zero usable rules (nothing generated or everything below the coverage threshold)".into(),
            ));
        }

        // Merge and prune against validation statistics.
        let mut pruned: Vec<String> = Vec::new();
        let merged = if kept.is_empty() {
            current.clone()
        } else {
            let kept_rules: Vec<Rule> = kept.iter().map(|rc| rc.rule.clone()).collect();
            let mut union: Vec<Rule> = current.rules().to_vec();
            union.extend(kept_rules.iter().cloned());
            let (val_union_matrix, stats) =
                judge_matrix(ctx.judge, &union, &splits.validation, ctx.cache)?;
            iter_cache.add(stats);
            let mut val_stats = BTreeMap::new();
            for rule in &union {
                let column = val_union_matrix.column_for(&rule.rule_id)?;
                val_stats.insert(
                    rule.rule_id.clone(),
                    RuleValStats {
                        accuracy: rule_individual_accuracy(&column, &val_labels),
                        coverage: coverage(&column)?,
                    },
                );
            }
            let merged = merge_and_prune(&current, &kept_rules, &val_stats, config.capacity)?;
            pruned = union
                .iter()
                .filter(|r| !merged.rules().iter().any(|m| m.rule_id == r.rule_id))
                .map(|r| r.rule_id.clone())
                .collect();
            merged
        };
        debug_assert!(merged.len() <= config.capacity);

        // Judge the merged set (mostly cache hits) and retrain.
        let (train_matrix, stats) = judge_matrix(ctx.judge, merged.rules(), &splits.train, ctx.cache)?;
        iter_cache.add(stats);
        let (val_matrix, stats) = judge_matrix(ctx.judge, merged.rules(), &splits.validation, ctx.cache)?;
        iter_cache.add(stats);

        let selection = combiner::select_hyperparams(
            &train_matrix,
            &train_labels,
            &val_matrix,
            &val_labels,
            &ctx.grid,
            ctx.folds,
            &ctx.solver,
        )?;
        let (params, _report) =
            combiner::refit_final(&train_matrix, &train_labels, selection.lambda, selection.alpha, &ctx.solver)?;

        let val_preds: Vec<u8> = (0..val_matrix.n_examples())
            .map(|i| combiner::predict_label(&params, val_matrix.row(i), &ctx.predict))
            .collect::<std::result::Result<_, _>>()?;
        let val_accuracy = accuracy(&val_preds, &val_labels)?;
        let val_f1 = macro_f1(&val_preds, &val_labels)?;

        // Hard examples for the next iteration, mined from training error.
        let train_probas: Vec<f64> = (0..train_matrix.n_examples())
            .map(|i| combiner::predict_proba(&params, train_matrix.row(i)))
            .collect::<std::result::Result<_, _>>()?;
        let hard_ids =
            select_hard_examples(&train_probas, &train_labels, &train_ids, config.hard_example_count)?;
        hard_observations = hard_ids.iter().map(|id| by_id[id.as_str()].clone()).collect();

        log.push(IterationRecord {
            iteration,
            rules_added: kept,
            rules_dropped_by_coverage: dropped,
            rules_pruned: pruned,
            rule_count: merged.len(),
            selected_lambda: selection.lambda,
            selected_alpha: selection.alpha,
            grid_scores: selection.grid_scores,
            val_accuracy,
            val_macro_f1: val_f1,
            hard_example_ids: hard_ids,
            cache_stats: iter_cache,
        });
        total_cache.add(iter_cache);
        log::info!(
            "iteration {iteration}: {} rules, val accuracy {:.4}, lambda {}, alpha {}",
            merged.len(),
            val_accuracy,
            selection.lambda,
            selection.alpha
        );

        // Strictly-greater comparison keeps the earliest checkpoint on ties.
        if best.as_ref().map_or(true, |b| val_accuracy > b.val_accuracy) {
            best = Some(Checkpoint {
                iteration,
                rule_set: merged.clone(),
                params: Some(params.to_keyed(&merged.rule_ids())?),
                val_accuracy,
                val_macro_f1: val_f1,
                cache_stats: iter_cache,
            });
        }

        current = merged;
        if stopper.observe(val_accuracy) == StopVerdict::Stop {
            log::info!("early stopping after iteration {iteration}");
            break;
        }
    }

    let best = best.expect("at least one iteration ran");
    debug_assert_eq!(Some(best.val_accuracy), log.best_accuracy());
    Ok(RunOutcome {
        best,
        log,
        total_cache,
    })
}

/// Writes the run directory: config snapshot, run log, best checkpoint, and
/// the per-iteration generated rules for auditability.
pub fn write_run_artifacts(dir: &Path, outcome: &RunOutcome, config_snapshot: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| RlieError::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| RlieError::io(&path, e))
    };
    write("config.toml", config_snapshot.to_string())?;
    write("runlog.json", serde_json::to_string_pretty(&outcome.log)?)?;
    write(
        "best_checkpoint.json",
        serde_json::to_string_pretty(&outcome.best)?,
    )?;
    for record in &outcome.log.records {
        write(
            &format!("rules_iter_{:02}.json", record.iteration),
            serde_json::to_string_pretty(&record.rules_added)?,
        )?;
    }
    Ok(())
}

/// Loads a checkpoint written by [`write_run_artifacts`] (or by hand).
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let body = std::fs::read_to_string(path).map_err(|e| RlieError::io(path, e))?;
    Ok(serde_json::from_str(&body)?)
}

/// Re-derives the judgment matrix rows needed to apply a checkpoint to a
/// split, verifying that stored params align with the stored rule set.
pub fn checkpoint_params(checkpoint: &Checkpoint) -> Result<Option<combiner::CombinerParams>> {
    match &checkpoint.params {
        None => Ok(None),
        Some(keyed) => {
            let params = keyed
                .to_positional(&checkpoint.rule_set.rule_ids())
                .map_err(|e| RlieError::Integrity(format!("checkpoint params do not match its rule set: {e}")))?;
            Ok(Some(params))
        }
    }
}
