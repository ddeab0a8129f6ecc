//! Response parsing for rule judgments, and the deterministic synthetic
//! judge used as an offline oracle.
//!
//! Parsing is total: every response maps to exactly one of {+1, -1, 0,
//! parse-error}. Unparseable responses are errors, never coerced to abstain,
//! because silent coercion would bias coverage statistics.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{CoreError, Result};
use crate::types::{Example, Judgment, Rule};

const FINAL_ANSWER_MARKER: &str = "final answer:";

/// Extracts the answer segment following the single `Final answer:` marker.
/// Multiple markers are ambiguous and zero markers unparseable; both error.
fn extract_final_answer(response: &str) -> Result<String> {
    let lower = response.to_lowercase();
    let mut occurrences = Vec::new();
    let mut from = 0;
    while let Some(at) = lower[from..].find(FINAL_ANSWER_MARKER) {
        occurrences.push(from + at);
        from += at + FINAL_ANSWER_MARKER.len();
    }
    match occurrences.as_slice() {
        [] => Err(CoreError::Parse {
            reason: "no final-answer marker present".into(),
            raw: response.to_string(),
        }),
        [at] => {
            let tail = &response[*at + FINAL_ANSWER_MARKER.len()..];
            let end = tail.find(['}', '\n']).unwrap_or(tail.len());
            Ok(tail[..end].trim().trim_end_matches('.').trim().to_string())
        }
        _ => Err(CoreError::Parse {
            reason: format!("{} final-answer markers present", occurrences.len()),
            raw: response.to_string(),
        }),
    }
}

/// True when `token` occurs in `segment` on word boundaries, case-insensitive.
fn contains_token(segment: &str, token: &str) -> bool {
    let segment = segment.to_lowercase();
    let token = token.to_lowercase();
    let mut from = 0;
    while let Some(at) = segment[from..].find(&token) {
        let start = from + at;
        let end = start + token.len();
        let left_ok = start == 0
            || !segment[..start].chars().next_back().unwrap().is_alphanumeric();
        let right_ok = end == segment.len()
            || !segment[end..].chars().next().unwrap().is_alphanumeric();
        if left_ok && right_ok {
            return true;
        }
        from = end;
    }
    false
}

/// Matches the answer segment against the manifest tokens. The segment may
/// be the bare token or a sentence containing exactly one of the tokens
/// ("The first tweet got more retweets" -> positive when the token is
/// "first").
fn match_token(segment: &str, manifest: &DatasetManifest) -> Result<Judgment> {
    let candidates = [
        (manifest.positive_token.as_str(), Judgment::Positive),
        (manifest.negative_token.as_str(), Judgment::Negative),
        (manifest.abstain_token.as_str(), Judgment::Abstain),
    ];
    for (token, judgment) in candidates {
        if segment.eq_ignore_ascii_case(token) {
            return Ok(judgment);
        }
    }
    let hits: Vec<Judgment> = candidates
        .iter()
        .filter(|(token, _)| contains_token(segment, token))
        .map(|&(_, judgment)| judgment)
        .collect();
    match hits.as_slice() {
        [one] => Ok(*one),
        [] => Err(CoreError::Parse {
            reason: format!("answer segment matches no manifest token: {segment:?}"),
            raw: segment.to_string(),
        }),
        _ => Err(CoreError::Parse {
            reason: format!("answer segment matches multiple manifest tokens: {segment:?}"),
            raw: segment.to_string(),
        }),
    }
}

/// Parses a single-rule judgment response into a ternary judgment.
pub fn parse_judgment(response: &str, manifest: &DatasetManifest) -> Result<Judgment> {
    let segment = extract_final_answer(response)?;
    match_token(&segment, manifest)
}

/// Parses an inference response into a binary label. The abstain token is
/// not permitted here; inference prompts demand a binary answer.
pub fn parse_binary_answer(response: &str, manifest: &DatasetManifest) -> Result<u8> {
    let segment = extract_final_answer(response)?;
    match match_token(&segment, manifest)? {
        Judgment::Positive => Ok(1),
        Judgment::Negative => Ok(0),
        Judgment::Abstain => Err(CoreError::Parse {
            reason: "abstain token in a binary-inference response".into(),
            raw: response.to_string(),
        }),
    }
}

/// A keyword test over example fields: true when the keyword occurs
/// (case-insensitive substring) in the named field, or in any field when
/// `field` is unset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordPredicate {
    pub keyword: String,
    #[serde(default)]
    pub field: Option<String>,
}

impl KeywordPredicate {
    pub fn matches(&self, example: &Example) -> bool {
        let needle = self.keyword.to_lowercase();
        match &self.field {
            Some(name) => example
                .field(name)
                .is_some_and(|text| text.to_lowercase().contains(&needle)),
            None => example
                .fields
                .values()
                .any(|text| text.to_lowercase().contains(&needle)),
        }
    }
}

/// Deterministic judge used as the offline oracle: rules resolve to keyword
/// predicates (registered by normalized text, or extracted from a quoted
/// keyword in the rule text), an optional abstain predicate short-circuits,
/// and a noise rate flips signs under a PRNG keyed by (rule, example).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticJudgeSpec {
    /// Predicates registered by normalized rule text.
    #[serde(default)]
    pub rules: BTreeMap<String, KeywordPredicate>,
    /// Fall back to the first 'quoted' keyword in unregistered rule text.
    #[serde(default = "default_true")]
    pub extract_keywords: bool,
    /// Checked first; a match abstains regardless of the rule predicate.
    #[serde(default)]
    pub abstain: Option<KeywordPredicate>,
    /// Probability of flipping a non-abstaining judgment's sign.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

fn default_true() -> bool {
    true
}

impl SyntheticJudgeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.noise) {
            return Err(CoreError::Config(format!(
                "synthetic judge noise must be in [0, 1), got {}",
                self.noise
            )));
        }
        Ok(())
    }

    fn predicate_for(&self, rule: &Rule) -> Option<KeywordPredicate> {
        if let Some(predicate) = self.rules.get(&rule.text) {
            return Some(predicate.clone());
        }
        if self.extract_keywords {
            if let Some(keyword) = extract_quoted_keyword(&rule.text) {
                return Some(KeywordPredicate {
                    keyword,
                    field: None,
                });
            }
        }
        None
    }
}

/// First substring enclosed in single or double quotes.
fn extract_quoted_keyword(text: &str) -> Option<String> {
    for quote in ['\'', '"'] {
        if let Some(start) = text.find(quote) {
            if let Some(len) = text[start + 1..].find(quote) {
                if len > 0 {
                    return Some(text[start + 1..start + 1 + len].to_string());
                }
            }
        }
    }
    None
}

/// Applies the synthetic judge to one (rule, example) pair. A rule with no
/// matchable predicate abstains. With noise = 0 this is a pure function of
/// its inputs; otherwise the flip is drawn from a PRNG keyed by (rule text,
/// example id, noise seed), so it is call-order independent.
pub fn synthetic_judge(spec: &SyntheticJudgeSpec, rule: &Rule, example: &Example) -> Judgment {
    if let Some(abstain) = &spec.abstain {
        if abstain.matches(example) {
            return Judgment::Abstain;
        }
    }
    let Some(predicate) = spec.predicate_for(rule) else {
        return Judgment::Abstain;
    };
    let mut judgment = if predicate.matches(example) {
        Judgment::Positive
    } else {
        Judgment::Negative
    };
    if spec.noise > 0.0 {
        let key = fnv1a64(rule.text.as_bytes())
            ^ fnv1a64(example.id.as_bytes()).rotate_left(17)
            ^ spec.noise_seed;
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        if rng.gen::<f64>() < spec.noise {
            judgment = match judgment {
                Judgment::Positive => Judgment::Negative,
                Judgment::Negative => Judgment::Positive,
                Judgment::Abstain => Judgment::Abstain,
            };
        }
    }
    judgment
}

/// FNV-1a, used only to key the noise PRNG; stable across platforms.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::RuleOrigin;
    use alloc::vec;

    fn manifest() -> DatasetManifest {
        DatasetManifest::new(
            "retweets",
            "first",
            "second",
            "not applicable",
            vec!["first_tweet".into(), "second_tweet".into()],
        )
        .unwrap()
    }

    fn example_with(text: &str) -> Example {
        let mut fields = BTreeMap::new();
        fields.insert("text".to_string(), text.to_string());
        Example::new("e1", fields, 1).unwrap()
    }

    #[test]
    fn parses_braced_final_answer() {
        let j = parse_judgment("Step by step... {Final answer: first}", &manifest()).unwrap();
        assert_eq!(j, Judgment::Positive);
    }

    #[test]
    fn parses_bare_abstain() {
        let j = parse_judgment("Final answer: not applicable", &manifest()).unwrap();
        assert_eq!(j, Judgment::Abstain);
    }

    #[test]
    fn parses_sentence_answer() {
        let j = parse_judgment(
            "Final answer: The second tweet got more retweets.",
            &manifest(),
        )
        .unwrap();
        assert_eq!(j, Judgment::Negative);
    }

    #[test]
    fn missing_marker_errors() {
        assert!(matches!(
            parse_judgment("I think maybe.", &manifest()),
            Err(CoreError::Parse { .. })
        ));
    }

    #[test]
    fn multiple_markers_error() {
        let raw = "{Final answer: first}\n{Final answer: second}";
        assert!(matches!(
            parse_judgment(raw, &manifest()),
            Err(CoreError::Parse { .. })
        ));
    }

    #[test]
    fn token_matching_is_case_insensitive() {
        let j = parse_judgment("{Final Answer: FIRST}", &manifest()).unwrap();
        assert_eq!(j, Judgment::Positive);
    }

    #[test]
    fn binary_answer_rejects_abstain() {
        assert_eq!(parse_binary_answer("{Final answer: second}", &manifest()).unwrap(), 0);
        assert!(matches!(
            parse_binary_answer("{Final answer: not applicable}", &manifest()),
            Err(CoreError::Parse { .. })
        ));
    }

    #[test]
    fn ambiguous_sentence_errors() {
        assert!(matches!(
            parse_judgment("Final answer: first or second", &manifest()),
            Err(CoreError::Parse { .. })
        ));
    }

    #[test]
    fn synthetic_judge_pure_at_zero_noise() {
        let spec = SyntheticJudgeSpec {
            rules: BTreeMap::new(),
            extract_keywords: true,
            abstain: None,
            noise: 0.0,
            noise_seed: 0,
        };
        let rule = Rule::new("r1", "The text mentions 'urgent' somewhere", 1, RuleOrigin::Initial).unwrap();
        assert_eq!(
            synthetic_judge(&spec, &rule, &example_with("this is urgent business")),
            Judgment::Positive
        );
        assert_eq!(
            synthetic_judge(&spec, &rule, &example_with("nothing here")),
            Judgment::Negative
        );
    }

    #[test]
    fn abstain_predicate_takes_precedence() {
        let spec = SyntheticJudgeSpec {
            rules: BTreeMap::new(),
            extract_keywords: true,
            abstain: Some(KeywordPredicate {
                keyword: "skip".into(),
                field: None,
            }),
            noise: 0.0,
            noise_seed: 0,
        };
        let rule = Rule::new("r1", "mentions 'urgent'", 1, RuleOrigin::Initial).unwrap();
        assert_eq!(
            synthetic_judge(&spec, &rule, &example_with("urgent but skip this")),
            Judgment::Abstain
        );
    }

    #[test]
    fn unmatchable_rule_abstains() {
        let spec = SyntheticJudgeSpec {
            rules: BTreeMap::new(),
            extract_keywords: true,
            abstain: None,
            noise: 0.0,
            noise_seed: 0,
        };
        let rule = Rule::new("r1", "Longer texts are positive", 1, RuleOrigin::Initial).unwrap();
        assert_eq!(
            synthetic_judge(&spec, &rule, &example_with("anything")),
            Judgment::Abstain
        );
    }

    #[test]
    fn noise_must_be_below_one() {
        let spec = SyntheticJudgeSpec {
            rules: BTreeMap::new(),
            extract_keywords: true,
            abstain: None,
            noise: 1.0,
            noise_seed: 0,
        };
        assert!(matches!(spec.validate(), Err(CoreError::Config(_))));
    }

    #[test]
    fn noise_is_keyed_not_sequenced() {
        let spec = SyntheticJudgeSpec {
            rules: BTreeMap::new(),
            extract_keywords: true,
            abstain: None,
            noise: 0.5,
            noise_seed: 3,
        };
        let rule = Rule::new("r1", "mentions 'urgent'", 1, RuleOrigin::Initial).unwrap();
        let e = example_with("urgent");
        let first = synthetic_judge(&spec, &rule, &e);
        for _ in 0..5 {
            assert_eq!(synthetic_judge(&spec, &rule, &e), first);
        }
    }

    #[test]
    fn registered_predicate_wins_over_extraction() {
        let mut rules = BTreeMap::new();
        rules.insert(
            "mentions 'urgent'".to_string(),
            KeywordPredicate {
                keyword: "calm".into(),
                field: None,
            },
        );
        let spec = SyntheticJudgeSpec {
            rules,
            extract_keywords: true,
            abstain: None,
            noise: 0.0,
            noise_seed: 0,
        };
        let rule = Rule::new("r1", "mentions 'urgent'", 1, RuleOrigin::Initial).unwrap();
        assert_eq!(
            synthetic_judge(&spec, &rule, &example_with("stay calm")),
            Judgment::Positive
        );
    }
}
