//! Domain types shared by the whole pipeline, plus the pure functions
//! (coverage, feature mapping, text normalization) that operate on them.
//!
//! All types here are immutable value objects after construction and safe to
//! share between threads.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// One labeled text record. `fields` maps field names to text so the same
/// type serves single-text tasks (one `"review"` field) and paired-text
/// tasks (`"first_tweet"` / `"second_tweet"`); prompt templates reference
/// fields by name, so map iteration order never reaches a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub fields: BTreeMap<String, String>,
    pub label: u8,
}

impl Example {
    pub fn new(id: impl Into<String>, fields: BTreeMap<String, String>, label: u8) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(CoreError::Integrity("example id is empty".into()));
        }
        if fields.is_empty() {
            return Err(CoreError::Integrity(format!("example {id} has no fields")));
        }
        if label > 1 {
            return Err(CoreError::Integrity(format!(
                "example {id} has label {label}, expected 0 or 1"
            )));
        }
        Ok(Self { id, fields, label })
    }

    pub fn field(&self, name: &str) -> Option<&str> {
        self.fields.get(name).map(String::as_str)
    }
}

/// Where a rule came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleOrigin {
    Initial,
    Refinement,
}

/// A natural-language rule with provenance. `text` is stored normalized
/// (see [`normalize_rule_text`]); duplicate detection is exact match on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: String,
    pub text: String,
    pub born_iteration: u32,
    pub origin: RuleOrigin,
}

impl Rule {
    /// Builds a rule, normalizing the text. Fails if the text is empty after
    /// normalization or the iteration is zero.
    pub fn new(
        rule_id: impl Into<String>,
        text: &str,
        born_iteration: u32,
        origin: RuleOrigin,
    ) -> Result<Self> {
        if born_iteration == 0 {
            return Err(CoreError::Config("born_iteration must be >= 1".into()));
        }
        Ok(Self {
            rule_id: rule_id.into(),
            text: normalize_rule_text(text)?,
            born_iteration,
            origin,
        })
    }
}

/// An ordered rule set bounded by the capacity limit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<Rule>,
    capacity: usize,
}

impl RuleSet {
    /// Validates capacity, id uniqueness, and text uniqueness (exact match
    /// after normalization).
    pub fn new(rules: Vec<Rule>, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CoreError::Config("rule-set capacity must be >= 1".into()));
        }
        if rules.len() > capacity {
            return Err(CoreError::Integrity(format!(
                "{} rules exceed capacity {capacity}",
                rules.len()
            )));
        }
        let mut ids = BTreeSet::new();
        let mut texts = BTreeSet::new();
        for rule in &rules {
            if !ids.insert(rule.rule_id.as_str()) {
                return Err(CoreError::Integrity(format!(
                    "duplicate rule id {:?}",
                    rule.rule_id
                )));
            }
            if !texts.insert(rule.text.as_str()) {
                return Err(CoreError::Integrity(format!(
                    "duplicate rule text {:?}",
                    rule.text
                )));
            }
        }
        Ok(Self { rules, capacity })
    }

    pub fn empty(capacity: usize) -> Result<Self> {
        Self::new(Vec::new(), capacity)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rule_ids(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.rule_id.clone()).collect()
    }

    pub fn contains_text(&self, normalized: &str) -> bool {
        self.rules.iter().any(|r| r.text == normalized)
    }
}

/// A single ternary judgment: the result of applying one rule to one example.
/// `Abstain` is a first-class value, never a missing entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Judgment {
    Negative,
    Abstain,
    Positive,
}

impl Judgment {
    pub fn as_i8(self) -> i8 {
        match self {
            Judgment::Negative => -1,
            Judgment::Abstain => 0,
            Judgment::Positive => 1,
        }
    }

    pub fn from_i8(value: i8) -> Result<Self> {
        match value {
            -1 => Ok(Judgment::Negative),
            0 => Ok(Judgment::Abstain),
            1 => Ok(Judgment::Positive),
            other => Err(CoreError::Integrity(format!(
                "judgment value {other} outside {{-1, 0, +1}}"
            ))),
        }
    }

    pub fn is_abstain(self) -> bool {
        matches!(self, Judgment::Abstain)
    }
}

impl Serialize for Judgment {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Judgment {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let value = i8::deserialize(deserializer)?;
        Judgment::from_i8(value).map_err(serde::de::Error::custom)
    }
}

/// Dense examples x rules array of ternary judgments, row per example,
/// column per rule. Every cell is populated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentMatrix {
    example_ids: Vec<String>,
    rule_ids: Vec<String>,
    values: Vec<Judgment>,
    #[serde(skip)]
    example_index: BTreeMap<String, usize>,
}

impl JudgmentMatrix {
    /// Builds a matrix from row-major values; `values.len()` must equal
    /// `example_ids.len() * rule_ids.len()`.
    pub fn new(example_ids: Vec<String>, rule_ids: Vec<String>, values: Vec<Judgment>) -> Result<Self> {
        let expected = example_ids.len() * rule_ids.len();
        if values.len() != expected {
            return Err(CoreError::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        let example_index: BTreeMap<String, usize> = example_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        if example_index.len() != example_ids.len() {
            return Err(CoreError::Integrity("duplicate example id in matrix".into()));
        }
        Ok(Self {
            example_ids,
            rule_ids,
            values,
            example_index,
        })
    }

    pub fn n_examples(&self) -> usize {
        self.example_ids.len()
    }

    pub fn n_rules(&self) -> usize {
        self.rule_ids.len()
    }

    pub fn example_ids(&self) -> &[String] {
        &self.example_ids
    }

    pub fn rule_ids(&self) -> &[String] {
        &self.rule_ids
    }

    /// Row for an example by position.
    pub fn row(&self, index: usize) -> &[Judgment] {
        let d = self.rule_ids.len();
        &self.values[index * d..(index + 1) * d]
    }

    /// Judgment vector for one example, in rule-column order.
    pub fn feature_row(&self, example_id: &str) -> Result<Vec<Judgment>> {
        let &index = self
            .example_index
            .get(example_id)
            .ok_or_else(|| CoreError::UnknownId(example_id.to_string()))?;
        Ok(self.row(index).to_vec())
    }

    /// Column for a rule by position.
    pub fn column(&self, index: usize) -> Vec<Judgment> {
        let d = self.rule_ids.len();
        self.values.iter().skip(index).step_by(d).copied().collect()
    }

    /// Column for a rule by id.
    pub fn column_for(&self, rule_id: &str) -> Result<Vec<Judgment>> {
        let index = self
            .rule_ids
            .iter()
            .position(|r| r == rule_id)
            .ok_or_else(|| CoreError::UnknownId(rule_id.to_string()))?;
        Ok(self.column(index))
    }

    /// Re-links the example index after deserialization.
    pub fn reindex(mut self) -> Result<Self> {
        self.example_index = self
            .example_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(self)
    }
}

/// Train/validation/test partition, pairwise disjoint by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub seed: u64,
}

impl SplitBundle {
    pub fn new(train: Vec<Example>, validation: Vec<Example>, test: Vec<Example>, seed: u64) -> Result<Self> {
        if train.is_empty() || validation.is_empty() || test.is_empty() {
            return Err(CoreError::Integrity("every split must be non-empty".into()));
        }
        let mut seen = BTreeSet::new();
        for example in train.iter().chain(&validation).chain(&test) {
            if !seen.insert(example.id.as_str()) {
                return Err(CoreError::Integrity(format!(
                    "example id {:?} appears in more than one split",
                    example.id
                )));
            }
        }
        Ok(Self {
            train,
            validation,
            test,
            seed,
        })
    }
}

/// Fraction of non-abstaining judgments in a rule's column.
pub fn coverage(column: &[Judgment]) -> Result<f64> {
    if column.is_empty() {
        return Err(CoreError::Usage("coverage of an empty column".into()));
    }
    let nonzero = column.iter().filter(|j| !j.is_abstain()).count();
    Ok(nonzero as f64 / column.len() as f64)
}

/// Canonicalizes rule text: trims, collapses internal whitespace runs to
/// single spaces, and strips one leading `N.` enumeration prefix. Used for
/// duplicate detection; errors if nothing remains.
pub fn normalize_rule_text(text: &str) -> Result<String> {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let stripped = strip_enumeration_prefix(&collapsed);
    let result = stripped.trim();
    if result.is_empty() {
        return Err(CoreError::InvalidRule(format!(
            "rule text {text:?} is empty after normalization"
        )));
    }
    Ok(result.to_string())
}

fn strip_enumeration_prefix(text: &str) -> &str {
    let digits = text.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        if let Some(rest) = text[digits..].strip_prefix('.') {
            return rest;
        }
    }
    text
}
