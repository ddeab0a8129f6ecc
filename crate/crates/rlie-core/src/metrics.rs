//! Evaluation metrics: accuracy, macro-F1 over the two classes, and
//! mean / sample standard deviation aggregation over repeated runs.

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

fn check_lengths(preds: &[u8], labels: &[u8]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(CoreError::DimensionMismatch {
            expected: labels.len(),
            got: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(CoreError::Usage("metrics over zero examples".into()));
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

// F1 as 2TP / (2TP + FP + FN); the 0/0 case (no predicted and no actual
// members) contributes 0 by convention.
fn class_f1(preds: &[u8], labels: &[u8], class: u8) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == class, y == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Unweighted mean of the per-class F1 scores of the positive and negative
/// classes.
pub fn macro_f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check_lengths(preds, labels)?;
    Ok((class_f1(preds, labels, 1) + class_f1(preds, labels, 0)) / 2.0)
}

/// Mean and sample standard deviation over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mean: f64,
    /// Sample (n - 1) standard deviation; 0 for a single run, flagged below.
    pub std: f64,
    pub runs: usize,
    /// Set when only one run was aggregated and the std is degenerate.
    pub single_run: bool,
}

/// Aggregates per-run metric values into mean and sample (n - 1) standard
/// deviation; a single run yields std 0 with the degenerate flag set.
pub fn aggregate_runs(values: &[f64]) -> Result<RunSummary> {
    if values.is_empty() {
        return Err(CoreError::Usage("aggregation over zero runs".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(RunSummary {
            mean,
            std: 0.0,
            runs: 1,
            single_run: true,
        });
    }
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(RunSummary {
        mean,
        std: libm::sqrt(variance),
        runs: n,
        single_run: false,
    })
}

/// Formats a `mean±std` cell the way reports print them.
pub fn format_mean_std(summary: &RunSummary) -> String {
    alloc::format!("{:.2}±{:.2}", summary.mean * 100.0, summary.std * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 0], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn macro_f1_perfect_is_one() {
        assert_eq!(macro_f1(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn macro_f1_hand_computed_case() {
        // class1: tp=1 fp=0 fn=1 -> 2/3; class0: tp=2 fp=1 fn=0 -> 0.8
        let value = macro_f1(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap();
        assert!((value - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert!((value - 0.7333333333333334).abs() < 1e-9);
    }

    #[test]
    fn macro_f1_all_positive_predictions() {
        // class1: tp=1 fp=1 fn=0 -> 2/3; class0: tp=0 fp=0 fn=1 -> 0
        let value = macro_f1(&[1, 1], &[1, 0]).unwrap();
        assert!((value - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn macro_f1_symmetric_under_relabeling() {
        let preds = [1, 0, 1, 1, 0, 0, 1];
        let labels = [1, 1, 0, 1, 0, 1, 0];
        let flipped_preds: Vec<u8> = preds.iter().map(|p| 1 - p).collect();
        let flipped_labels: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        let a = macro_f1(&preds, &labels).unwrap();
        let b = macro_f1(&flipped_preds, &flipped_labels).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_mean_and_sample_std() {
        let summary = aggregate_runs(&[0.70, 0.71, 0.72]).unwrap();
        assert_eq!(summary.mean, 0.71);
        // The sample std of the f64-rounded inputs differs from f64(0.01) by
        // a few ulps; anything beyond binary rounding noise must fail.
        assert!((summary.std - 0.01).abs() <= 1e-16, "{:e}", summary.std - 0.01);
        assert!(!summary.single_run);
    }

    #[test]
    fn aggregate_single_run_is_flagged() {
        let summary = aggregate_runs(&[0.5]).unwrap();
        assert_eq!(summary.mean, 0.5);
        assert_eq!(summary.std, 0.0);
        assert!(summary.single_run);
    }

    #[test]
    fn aggregate_identical_runs_zero_std() {
        let summary = aggregate_runs(&[0.6, 0.6, 0.6]).unwrap();
        assert_eq!(summary.std, 0.0);
        assert!(aggregate_runs(&[]).is_err());
    }
}
