//! Policies of the iterative refinement loop: coverage filtering,
//! hard-example mining, merge-and-prune under the capacity limit, and the
//! early-stopping rule. The orchestration that drives backends with these
//! policies lives in the std companion crate.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::combiner::{GridScore, KeyedCombinerParams};
use crate::error::{CoreError, Result};
use crate::types::{coverage, Judgment, JudgmentMatrix, Rule, RuleSet};

/// Knobs of the refinement loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Capacity limit H on the rule set.
    pub capacity: usize,
    /// How many hard examples to mine per iteration; also the size of the
    /// random observation sample in iteration 1.
    pub hard_example_count: usize,
    /// Hypotheses requested per refinement iteration.
    pub refinement_rule_count: usize,
    /// Hypotheses requested in iteration 1, where the pool starts empty.
    pub initial_rule_count: usize,
    /// Minimum training coverage gamma a candidate must reach to survive.
    pub min_coverage: f64,
    /// Validation-accuracy margin delta an iteration must beat the best by
    /// to count as improvement.
    pub improvement_margin: f64,
    /// Consecutive non-improving iterations tolerated before stopping.
    pub patience: u32,
    pub max_iterations: u32,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            capacity: 10,
            hard_example_count: 20,
            refinement_rule_count: 5,
            initial_rule_count: 10,
            min_coverage: 0.2,
            improvement_margin: 0.01,
            patience: 2,
            max_iterations: 10,
            seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(CoreError::Config("capacity must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return Err(CoreError::Config(format!(
                "min_coverage must be in [0, 1], got {}",
                self.min_coverage
            )));
        }
        if self.improvement_margin < 0.0 {
            return Err(CoreError::Config("improvement_margin must be >= 0".into()));
        }
        if self.patience == 0 {
            return Err(CoreError::Config("patience must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(CoreError::Config("max_iterations must be >= 1".into()));
        }
        if self.hard_example_count == 0 || self.refinement_rule_count == 0 || self.initial_rule_count == 0
        {
            return Err(CoreError::Config(
                "hard_example_count, refinement_rule_count, initial_rule_count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A candidate rule annotated with its training coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCoverage {
    pub rule: Rule,
    pub coverage: f64,
}

/// Outcome of coverage filtering, keeping input order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageFilter {
    pub kept: Vec<RuleCoverage>,
    pub dropped: Vec<RuleCoverage>,
}

/// Keeps candidates whose training coverage reaches `gamma` (boundary
/// inclusive). Every candidate must have a judged column in the matrix.
pub fn filter_by_coverage(
    candidates: &[Rule],
    train_matrix: &JudgmentMatrix,
    gamma: f64,
) -> Result<CoverageFilter> {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for rule in candidates {
        let column = train_matrix.column_for(&rule.rule_id)?;
        let cov = coverage(&column)?;
        let entry = RuleCoverage {
            rule: rule.clone(),
            coverage: cov,
        };
        if cov >= gamma {
            kept.push(entry);
        } else {
            dropped.push(entry);
        }
    }
    Ok(CoverageFilter { kept, dropped })
}

/// Ids of the `k` examples with the largest prediction error
/// |p_hat - y|, ties broken by ascending example id. Returns all ids when
/// `k` exceeds the input size.
pub fn select_hard_examples(
    probas: &[f64],
    labels: &[u8],
    example_ids: &[String],
    k: usize,
) -> Result<Vec<String>> {
    if probas.is_empty() {
        return Err(CoreError::Usage("hard-example selection over zero examples".into()));
    }
    if probas.len() != labels.len() || probas.len() != example_ids.len() {
        return Err(CoreError::DimensionMismatch {
            expected: probas.len(),
            got: labels.len().min(example_ids.len()),
        });
    }
    if k == 0 {
        return Err(CoreError::Usage("hard-example count k must be >= 1".into()));
    }
    let mut scored: Vec<(f64, &String)> = probas
        .iter()
        .zip(labels)
        .zip(example_ids)
        .map(|((&p, &y), id)| ((p - y as f64).abs(), id))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, id)| id.clone()).collect())
}

/// Accuracy of a single rule over the validation examples it covers:
/// a match is (+1, y=1) or (-1, y=0); abstentions are excluded. `None` when
/// the rule covers nothing, which ranks below every defined accuracy.
pub fn rule_individual_accuracy(column: &[Judgment], labels: &[u8]) -> Option<f64> {
    let mut covered = 0usize;
    let mut matches = 0usize;
    for (judgment, &label) in column.iter().zip(labels) {
        match judgment {
            Judgment::Abstain => {}
            Judgment::Positive => {
                covered += 1;
                matches += (label == 1) as usize;
            }
            Judgment::Negative => {
                covered += 1;
                matches += (label == 0) as usize;
            }
        }
    }
    (covered > 0).then(|| matches as f64 / covered as f64)
}

/// Validation statistics that drive pruning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleValStats {
    pub accuracy: Option<f64>,
    pub coverage: f64,
}

/// Merges new rules after the current ones and, only when the union exceeds
/// the capacity, keeps the top `capacity` under the total order: individual
/// validation accuracy desc (undefined last), coverage desc, born_iteration
/// asc, rule_id asc. New rules must already be coverage-filtered and
/// deduplicated against `current`.
pub fn merge_and_prune(
    current: &RuleSet,
    new_rules: &[Rule],
    val_stats: &BTreeMap<String, RuleValStats>,
    capacity: usize,
) -> Result<RuleSet> {
    let mut union: Vec<Rule> = current.rules().to_vec();
    union.extend(new_rules.iter().cloned());
    if union.len() <= capacity {
        return RuleSet::new(union, capacity);
    }
    for rule in &union {
        if !val_stats.contains_key(&rule.rule_id) {
            return Err(CoreError::Integrity(format!(
                "no validation stats for rule {:?}",
                rule.rule_id
            )));
        }
    }
    let mut ranked = union;
    ranked.sort_by(|a, b| {
        let sa = &val_stats[&a.rule_id];
        let sb = &val_stats[&b.rule_id];
        rank_key(sb, &b.rule_id, b.born_iteration)
            .partial_cmp(&rank_key(sa, &a.rule_id, a.born_iteration))
            .unwrap()
            .then_with(|| a.born_iteration.cmp(&b.born_iteration))
            .then_with(|| a.rule_id.cmp(&b.rule_id))
    });
    ranked.truncate(capacity);
    RuleSet::new(ranked, capacity)
}

// Descending sort key for (accuracy, coverage); undefined accuracy ranks
// below every defined one.
fn rank_key(stats: &RuleValStats, _id: &str, _born: u32) -> (f64, f64) {
    (stats.accuracy.unwrap_or(f64::NEG_INFINITY), stats.coverage)
}

/// Early-stopping state: improvement is measured against the best validation
/// accuracy so far (not the previous iteration), so oscillation cannot reset
/// patience. Iteration 1 establishes the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub margin: f64,
    pub patience: u32,
    best: Option<f64>,
    streak: u32,
}

/// Verdict after observing one iteration's validation accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopVerdict {
    Continue,
    /// Patience exhausted: the score failed to beat best + margin for
    /// `patience` consecutive iterations.
    Stop,
}

impl EarlyStopping {
    pub fn new(margin: f64, patience: u32) -> Self {
        Self {
            margin,
            patience,
            best: None,
            streak: 0,
        }
    }

    pub fn observe(&mut self, accuracy: f64) -> StopVerdict {
        match self.best {
            None => {
                self.best = Some(accuracy);
                StopVerdict::Continue
            }
            Some(best) => {
                if accuracy > best + self.margin {
                    self.streak = 0;
                } else {
                    self.streak += 1;
                }
                if accuracy > best {
                    self.best = Some(accuracy);
                }
                if self.streak >= self.patience {
                    StopVerdict::Stop
                } else {
                    StopVerdict::Continue
                }
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Snapshot of one iteration's model: the loop's unit of progress and the
/// artifact the evaluation stage consumes. Params are keyed by rule id so a
/// stored checkpoint survives rule-set reordering; `params` may be absent in
/// hand-written rules-only checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u32,
    pub rule_set: RuleSet,
    pub params: Option<KeyedCombinerParams>,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub cache_stats: CacheStats,
}

/// Judgment-cache counters for one operation or run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn add(&mut self, other: CacheStats) {
        self.hits += other.hits;
        self.misses += other.misses;
    }
}

/// One completed iteration in the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub rules_added: Vec<RuleCoverage>,
    pub rules_dropped_by_coverage: Vec<RuleCoverage>,
    pub rules_pruned: Vec<String>,
    pub rule_count: usize,
    pub selected_lambda: f64,
    pub selected_alpha: f64,
    pub grid_scores: Vec<GridScore>,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    /// Hard examples mined from this iteration's model, feeding the next.
    pub hard_example_ids: Vec<String>,
    pub cache_stats: CacheStats,
}

/// Append-only per-iteration history of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<IterationRecord>,
}

impl RunLog {
    pub fn push(&mut self, record: IterationRecord) {
        self.records.push(record);
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.records
            .iter()
            .map(|r| r.val_accuracy)
            .fold(None, |best, acc| match best {
                None => Some(acc),
                Some(b) => Some(if acc > b { acc } else { b }),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RuleOrigin;
    use alloc::string::ToString;
    use alloc::vec;

    fn rule(id: &str, text: &str, born: u32) -> Rule {
        Rule::new(id, text, born, RuleOrigin::Initial).unwrap()
    }

    fn matrix_with_columns(columns: &[(&str, Vec<i8>)]) -> JudgmentMatrix {
        let n = columns[0].1.len();
        let mut values = Vec::new();
        for i in 0..n {
            for (_, col) in columns {
                values.push(Judgment::from_i8(col[i]).unwrap());
            }
        }
        JudgmentMatrix::new(
            (0..n).map(|i| format!("e{i:03}")).collect(),
            columns.iter().map(|(id, _)| id.to_string()).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn coverage_filter_boundary_is_inclusive() {
        // 100 training examples: 19 vs 20 non-abstentions around gamma=0.2.
        let col19: Vec<i8> = (0..100).map(|i| (i < 19) as i8).collect();
        let col20: Vec<i8> = (0..100).map(|i| (i < 20) as i8).collect();
        let matrix = matrix_with_columns(&[("low", col19), ("edge", col20)]);
        let candidates = vec![rule("low", "below threshold", 1), rule("edge", "at threshold", 1)];
        let filter = filter_by_coverage(&candidates, &matrix, 0.2).unwrap();
        assert_eq!(filter.kept.len(), 1);
        assert_eq!(filter.kept[0].rule.rule_id, "edge");
        assert!((filter.kept[0].coverage - 0.20).abs() < 1e-15);
        assert_eq!(filter.dropped.len(), 1);
        assert!((filter.dropped[0].coverage - 0.19).abs() < 1e-15);
    }

    #[test]
    fn zero_gamma_keeps_everything() {
        let matrix = matrix_with_columns(&[("a", vec![0, 0, 0])]);
        let filter = filter_by_coverage(&[rule("a", "never fires", 1)], &matrix, 0.0).unwrap();
        assert_eq!(filter.kept.len(), 1);
    }

    #[test]
    fn hard_examples_order_by_error_then_id() {
        let ids: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let picked = select_hard_examples(&[0.9, 0.4, 0.5], &[0, 1, 1], &ids, 2).unwrap();
        // errors: a=0.9, b=0.6, c=0.5
        assert_eq!(picked, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn hard_examples_pure_tiebreak_on_perfect_predictions() {
        let ids: Vec<String> = vec!["c".into(), "a".into(), "b".into(), "d".into()];
        let picked = select_hard_examples(&[0.0, 0.0, 0.0, 0.0], &[0, 0, 0, 0], &ids, 3).unwrap();
        assert_eq!(picked, vec!["a".to_string(), "b".to_string(), "c".to_string()]);
    }

    #[test]
    fn hard_examples_k_clamps_and_empty_errors() {
        let ids: Vec<String> = vec!["a".into()];
        assert_eq!(select_hard_examples(&[0.5], &[1], &ids, 10).unwrap().len(), 1);
        assert!(matches!(
            select_hard_examples(&[], &[], &[], 1),
            Err(CoreError::Usage(_))
        ));
    }

    #[test]
    fn individual_accuracy_excludes_abstentions() {
        let column = [Judgment::Positive, Judgment::Negative, Judgment::Abstain];
        assert_eq!(rule_individual_accuracy(&column, &[1, 0, 1]), Some(1.0));
        let column = [Judgment::Positive, Judgment::Positive];
        assert_eq!(rule_individual_accuracy(&column, &[1, 0]), Some(0.5));
        assert_eq!(rule_individual_accuracy(&[Judgment::Abstain; 3], &[1, 0, 1]), None);
    }

    fn stats(entries: &[(&str, Option<f64>, f64)]) -> BTreeMap<String, RuleValStats> {
        entries
            .iter()
            .map(|&(id, accuracy, coverage)| {
                (id.to_string(), RuleValStats { accuracy, coverage })
            })
            .collect()
    }

    #[test]
    fn under_capacity_union_is_kept_in_order() {
        let current = RuleSet::new((0..7).map(|i| rule(&format!("c{i}"), &format!("current {i}"), 1)).collect(), 10).unwrap();
        let new_rules = vec![rule("n0", "new 0", 2), rule("n1", "new 1", 2)];
        let merged = merge_and_prune(&current, &new_rules, &BTreeMap::new(), 10).unwrap();
        assert_eq!(merged.len(), 9);
        assert_eq!(merged.rules()[7].rule_id, "n0");
    }

    #[test]
    fn over_capacity_prunes_by_rank() {
        let current = RuleSet::new(
            (0..3).map(|i| rule(&format!("c{i}"), &format!("current {i}"), 1)).collect(),
            3,
        )
        .unwrap();
        let new_rules = vec![rule("n0", "new 0", 2), rule("n1", "new 1", 2)];
        let stats = stats(&[
            ("c0", Some(0.9), 0.5),
            ("c1", None, 0.8),        // undefined accuracy ranks last
            ("c2", Some(0.7), 0.5),
            ("n0", Some(0.7), 0.6),   // beats c2 on coverage
            ("n1", Some(0.95), 0.3),
        ]);
        let merged = merge_and_prune(&current, &new_rules, &stats, 3).unwrap();
        let ids: Vec<_> = merged.rules().iter().map(|r| r.rule_id.as_str()).collect();
        assert_eq!(ids, vec!["n1", "c0", "n0"]);
    }

    #[test]
    fn rank_ties_fall_back_to_age_then_id() {
        let current = RuleSet::new(vec![rule("b", "older b", 1), rule("z", "older z", 1)], 2).unwrap();
        let new_rules = vec![rule("a", "newer a", 3)];
        let stats = stats(&[
            ("b", Some(0.5), 0.4),
            ("z", Some(0.5), 0.4),
            ("a", Some(0.5), 0.4),
        ]);
        let merged = merge_and_prune(&current, &new_rules, &stats, 2).unwrap();
        let ids: Vec<_> = merged.rules().iter().map(|r| r.rule_id.as_str()).collect();
        // Same accuracy and coverage: older iteration wins, then id.
        assert_eq!(ids, vec!["b", "z"]);
    }

    #[test]
    fn pruning_respects_total_order_property() {
        // No rule may be dropped while a strictly worse-ranked rule survives.
        let current = RuleSet::new(
            (0..6).map(|i| rule(&format!("c{i}"), &format!("text {i}"), 1)).collect(),
            6,
        )
        .unwrap();
        let stats = stats(&[
            ("c0", Some(0.6), 0.1),
            ("c1", Some(0.8), 0.9),
            ("c2", None, 1.0),
            ("c3", Some(0.8), 0.2),
            ("c4", Some(0.2), 0.9),
            ("c5", Some(0.6), 0.3),
        ]);
        let merged = merge_and_prune(&current, &[rule("n0", "n0 text", 2)], &stats_with(&stats, "n0", Some(0.7), 0.5), 4).unwrap();
        let ids: Vec<_> = merged.rules().iter().map(|r| r.rule_id.as_str()).collect();
        assert_eq!(ids, vec!["c1", "c3", "n0", "c5"]);
    }

    fn stats_with(
        base: &BTreeMap<String, RuleValStats>,
        id: &str,
        accuracy: Option<f64>,
        coverage: f64,
    ) -> BTreeMap<String, RuleValStats> {
        let mut out = base.clone();
        out.insert(id.to_string(), RuleValStats { accuracy, coverage });
        out
    }

    #[test]
    fn early_stopping_patience_with_infinite_margin() {
        let mut stopper = EarlyStopping::new(f64::INFINITY, 2);
        assert_eq!(stopper.observe(0.5), StopVerdict::Continue); // baseline
        assert_eq!(stopper.observe(0.9), StopVerdict::Continue); // streak 1
        assert_eq!(stopper.observe(0.95), StopVerdict::Stop); // streak 2
    }

    #[test]
    fn early_stopping_resets_on_real_improvement() {
        let mut stopper = EarlyStopping::new(0.01, 2);
        assert_eq!(stopper.observe(0.5), StopVerdict::Continue);
        assert_eq!(stopper.observe(0.505), StopVerdict::Continue); // within margin
        assert_eq!(stopper.observe(0.52), StopVerdict::Continue); // beats best + margin
        assert_eq!(stopper.best(), Some(0.52));
        assert_eq!(stopper.observe(0.52), StopVerdict::Continue);
        assert_eq!(stopper.observe(0.51), StopVerdict::Stop);
    }

    #[test]
    fn improvement_is_against_best_not_previous() {
        let mut stopper = EarlyStopping::new(0.01, 3);
        stopper.observe(0.8);
        stopper.observe(0.5); // streak 1
        // 0.6 improves on the previous iteration but not on best: streak 2.
        stopper.observe(0.6);
        assert_eq!(stopper.observe(0.55), StopVerdict::Stop);
    }

    #[test]
    fn loop_config_validation() {
        assert!(LoopConfig::default().validate().is_ok());
        let bad = LoopConfig {
            min_coverage: 1.5,
            ..LoopConfig::default()
        };
        assert!(matches!(bad.validate(), Err(CoreError::Config(_))));
    }
}
