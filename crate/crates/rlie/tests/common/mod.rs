//! Shared fixtures for the end-to-end suites: a planted keyword task whose
//! ground truth is known by construction, a scripted generator that reveals
//! the true rules across iterations among distractors, and the synthetic
//! judge spec that evaluates them.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rlie_core::dataset::DatasetManifest;
use rlie_core::judge::SyntheticJudgeSpec;
use rlie_core::types::Example;
use rlie::templates::{load_template_set, TemplateSet};

/// The planted disjunction: label 1 iff any of these occurs in the text.
pub const PLANTED: [&str; 3] = ["crimson", "harbor", "velvet"];
/// Label-independent keywords present with probability 1/2.
pub const DISTRACTORS: [&str; 7] = ["orange", "quiet", "metal", "river", "sunny", "paper", "glass"];
/// Presence probability of each planted keyword.
pub const KEYWORD_PROB: f64 = 0.25;

const FILLER: [&str; 10] = [
    "the", "morning", "walk", "note", "coffee", "window", "garden", "stone", "cloud", "letter",
];

/// Deterministic sample of the planted model.
pub fn planted_examples(seed: u64, n: usize) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut words: Vec<&str> = Vec::new();
            for keyword in PLANTED {
                if rng.gen_bool(KEYWORD_PROB) {
                    words.push(keyword);
                }
            }
            let label = !words.is_empty() as u8;
            for keyword in DISTRACTORS {
                if rng.gen_bool(0.5) {
                    words.push(keyword);
                }
            }
            for _ in 0..rng.gen_range(2..=4usize) {
                words.push(FILLER[rng.gen_range(0..FILLER.len())]);
            }
            words.shuffle(&mut rng);
            let mut fields = BTreeMap::new();
            fields.insert("text".to_string(), words.join(" "));
            Example::new(format!("ex{i:04}"), fields, label).unwrap()
        })
        .collect()
}

/// Generation script: the first call proposes one true rule among
/// distractors plus one rule with no checkable keyword (it abstains
/// everywhere and dies at the coverage filter); the two refinement calls
/// surface the remaining true rules; later calls only repeat known
/// distractors.
pub fn scripted_generation_responses() -> Vec<String> {
    vec![
        "Proposed rules:\n\
         1. [The text mentions 'crimson' somewhere]\n\
         2. [The text mentions 'orange' somewhere]\n\
         3. [The text mentions 'quiet' somewhere]\n\
         4. [The text mentions 'metal' somewhere]\n\
         5. [The text mentions 'river' somewhere]\n\
         6. [The text mentions 'sunny' somewhere]\n\
         7. [Documents with elaborate phrasing are positive]"
            .into(),
        "1. [The text mentions 'harbor' somewhere]\n\
         2. [The text mentions 'paper' somewhere]\n\
         3. [The text mentions 'glass' somewhere]\n\
         4. [The text mentions 'orange' somewhere]\n\
         5. [Writing that meanders is negative]"
            .into(),
        "1. [The text mentions 'velvet' somewhere]\n\
         2. [The text mentions 'quiet' somewhere]\n\
         3. [The text mentions 'paper' somewhere]\n\
         4. [The text mentions 'river' somewhere]\n\
         5. [The text mentions 'metal' somewhere]"
            .into(),
        "1. [The text mentions 'orange' somewhere]\n\
         2. [The text mentions 'quiet' somewhere]\n\
         3. [The text mentions 'glass' somewhere]\n\
         4. [The text mentions 'sunny' somewhere]\n\
         5. [The text mentions 'paper' somewhere]"
            .into(),
    ]
}

pub fn synthetic_spec(noise: f64, noise_seed: u64) -> SyntheticJudgeSpec {
    SyntheticJudgeSpec {
        rules: BTreeMap::new(),
        extract_keywords: true,
        abstain: None,
        noise,
        noise_seed,
    }
}

pub fn keyword_manifest() -> DatasetManifest {
    DatasetManifest::new("keyword", "yes", "no", "not applicable", vec!["text".into()]).unwrap()
}

pub fn keyword_templates() -> TemplateSet {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../templates/keyword");
    load_template_set(&dir).unwrap()
}

/// Writes examples as the JSONL ingestion format.
pub fn write_jsonl(path: &Path, examples: &[Example]) {
    let mut body = String::new();
    for example in examples {
        let record = serde_json::json!({
            "id": example.id,
            "fields": example.fields,
            "label": example.label,
        });
        body.push_str(&record.to_string());
        body.push('\n');
    }
    std::fs::write(path, body).unwrap();
}
