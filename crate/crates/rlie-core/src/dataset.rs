//! Dataset manifest and the deterministic split/sampling primitives.
//!
//! All operations here are pure functions of (input, seed); file ingestion
//! lives in the std companion crate. The PRNG is ChaCha8 seeded with the
//! caller's `u64` seed, shuffling via Fisher-Yates.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::types::{Example, SplitBundle};

/// Names a task and the answer lexicon its judge prompts use: which textual
/// answers map to +1 / -1 / abstain, and which example fields the templates
/// expect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub positive_token: String,
    pub negative_token: String,
    pub abstain_token: String,
    pub field_names: Vec<String>,
}

impl DatasetManifest {
    pub fn new(
        name: impl Into<String>,
        positive_token: impl Into<String>,
        negative_token: impl Into<String>,
        abstain_token: impl Into<String>,
        field_names: Vec<String>,
    ) -> Result<Self> {
        let manifest = Self {
            name: name.into(),
            positive_token: positive_token.into(),
            negative_token: negative_token.into(),
            abstain_token: abstain_token.into(),
            field_names,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        let lower = [
            self.positive_token.to_lowercase(),
            self.negative_token.to_lowercase(),
            self.abstain_token.to_lowercase(),
        ];
        if lower[0] == lower[1] || lower[0] == lower[2] || lower[1] == lower[2] {
            return Err(CoreError::Config(format!(
                "answer tokens must be pairwise distinct (case-insensitive): {:?} / {:?} / {:?}",
                self.positive_token, self.negative_token, self.abstain_token
            )));
        }
        if self.positive_token.trim().is_empty()
            || self.negative_token.trim().is_empty()
            || self.abstain_token.trim().is_empty()
        {
            return Err(CoreError::Config("answer tokens must be non-empty".into()));
        }
        Ok(())
    }

    /// Token rendered for a binary label in observation and reference-label
    /// blocks.
    pub fn label_token(&self, label: u8) -> &str {
        if label == 1 {
            &self.positive_token
        } else {
            &self.negative_token
        }
    }
}

/// Deterministically shuffles the pool and slices train/validation/test of
/// the requested sizes. When the pool is smaller than the requested total,
/// the sizes shrink proportionally (largest-remainder rounding) so all data
/// stays in use and every split is non-empty.
pub fn make_splits(examples: &[Example], sizes: (usize, usize, usize), seed: u64) -> Result<SplitBundle> {
    if examples.len() < 3 {
        return Err(CoreError::CannotSplit {
            available: examples.len(),
        });
    }
    let (want_train, want_val, want_test) = sizes;
    if want_train == 0 || want_val == 0 || want_test == 0 {
        return Err(CoreError::Usage("requested split sizes must be >= 1".into()));
    }

    let mut pool: Vec<&Example> = examples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);

    let requested = want_train + want_val + want_test;
    let (n_train, n_val, n_test) = if pool.len() >= requested {
        (want_train, want_val, want_test)
    } else {
        shrink_proportionally(pool.len(), [want_train, want_val, want_test])
    };

    let train = pool[..n_train].iter().map(|e| (*e).clone()).collect();
    let validation = pool[n_train..n_train + n_val].iter().map(|e| (*e).clone()).collect();
    let test = pool[n_train + n_val..n_train + n_val + n_test]
        .iter()
        .map(|e| (*e).clone())
        .collect();
    SplitBundle::new(train, validation, test, seed)
}

/// Largest-remainder apportionment of `total` into three parts with the given
/// weights; every part gets at least one element. Remainder ties go to the
/// earlier split.
fn shrink_proportionally(total: usize, weights: [usize; 3]) -> (usize, usize, usize) {
    let weight_sum: usize = weights.iter().sum();
    let mut sizes = [0usize; 3];
    let mut remainders = [0.0f64; 3];
    for (i, &w) in weights.iter().enumerate() {
        let raw = total as f64 * w as f64 / weight_sum as f64;
        sizes[i] = raw as usize;
        remainders[i] = raw - sizes[i] as f64;
    }
    let mut leftover = total - sizes.iter().sum::<usize>();
    while leftover > 0 {
        let mut best = 0;
        for i in 1..3 {
            if remainders[i] > remainders[best] {
                best = i;
            }
        }
        sizes[best] += 1;
        remainders[best] = -1.0;
        leftover -= 1;
    }
    // Guarantee non-empty splits; steal from the currently largest.
    for i in 0..3 {
        while sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| sizes[j]).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    (sizes[0], sizes[1], sizes[2])
}

/// Draws `k` distinct examples uniformly without replacement under `seed`;
/// returns all of `train` when `k` exceeds its size.
pub fn sample_initial(train: &[Example], k: usize, seed: u64) -> Result<Vec<Example>> {
    if train.is_empty() {
        return Err(CoreError::Usage("cannot sample from an empty training set".into()));
    }
    if k == 0 {
        return Err(CoreError::Usage("sample size k must be >= 1".into()));
    }
    if k >= train.len() {
        return Ok(train.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = rand::seq::index::sample(&mut rng, train.len(), k);
    Ok(indices.iter().map(|i| train[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use alloc::string::ToString;
    use alloc::vec;

    fn pool(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let mut fields = BTreeMap::new();
                fields.insert("text".to_string(), format!("text {i}"));
                Example::new(format!("ex{i:04}"), fields, (i % 2) as u8).unwrap()
            })
            .collect()
    }

    #[test]
    fn full_pool_uses_requested_sizes() {
        let examples = pool(700);
        let bundle = make_splits(&examples, (200, 200, 300), 42).unwrap();
        assert_eq!(bundle.train.len(), 200);
        assert_eq!(bundle.validation.len(), 200);
        assert_eq!(bundle.test.len(), 300);
    }

    #[test]
    fn exact_fit_small_pool() {
        let examples = pool(7);
        let bundle = make_splits(&examples, (2, 2, 3), 1).unwrap();
        assert_eq!(
            (bundle.train.len(), bundle.validation.len(), bundle.test.len()),
            (2, 2, 3)
        );
    }

    #[test]
    fn same_seed_same_splits() {
        let examples = pool(50);
        let a = make_splits(&examples, (20, 20, 30), 9).unwrap();
        let b = make_splits(&examples, (20, 20, 30), 9).unwrap();
        assert_eq!(a, b);
        let c = make_splits(&examples, (20, 20, 30), 10).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn small_pool_shrinks_proportionally_using_all_data() {
        let examples = pool(70);
        let bundle = make_splits(&examples, (200, 200, 300), 3).unwrap();
        assert_eq!(bundle.train.len() + bundle.validation.len() + bundle.test.len(), 70);
        assert_eq!(bundle.train.len(), 20);
        assert_eq!(bundle.validation.len(), 20);
        assert_eq!(bundle.test.len(), 30);
    }

    #[test]
    fn tiny_pool_keeps_every_split_nonempty() {
        let examples = pool(3);
        let bundle = make_splits(&examples, (200, 200, 300), 3).unwrap();
        assert_eq!(
            (bundle.train.len(), bundle.validation.len(), bundle.test.len()),
            (1, 1, 1)
        );
        assert!(matches!(
            make_splits(&pool(2), (200, 200, 300), 3),
            Err(CoreError::CannotSplit { available: 2 })
        ));
    }

    #[test]
    fn sample_initial_is_distinct_and_deterministic() {
        let examples = pool(200);
        let a = sample_initial(&examples, 20, 5).unwrap();
        let b = sample_initial(&examples, 20, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        let mut ids: Vec<_> = a.iter().map(|e| e.id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn sample_initial_clamps_to_pool() {
        let examples = pool(3);
        let sample = sample_initial(&examples, 5, 1).unwrap();
        assert_eq!(sample.len(), 3);
    }

    #[test]
    fn sample_initial_empty_train_errors() {
        assert!(matches!(
            sample_initial(&[], 5, 1),
            Err(CoreError::Usage(_))
        ));
    }

    #[test]
    fn manifest_rejects_clashing_tokens() {
        assert!(DatasetManifest::new("t", "First", "first", "n/a", vec![]).is_err());
        assert!(DatasetManifest::new("t", "first", "second", "not applicable", vec![]).is_ok());
    }
}
