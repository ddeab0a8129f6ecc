//! Prompt templates and rule-candidate parsing.
//!
//! Templates are versioned text files with `${placeholder}` syntax. This
//! module holds the pure halves of generation: template parsing, rendering
//! (total and deterministic), observation formatting, and turning a numbered
//! model response into deduplicated [`Rule`] values. Issuing the backend
//! request lives in the std companion crate.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::error::{CoreError, Result};
use crate::types::{normalize_rule_text, Example, Rule, RuleOrigin};

/// A text fragment with `${placeholder}` slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextTemplate {
    pub text: String,
    pub placeholders: BTreeSet<String>,
}

impl TextTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let placeholders = scan_placeholders(text)?;
        Ok(Self {
            text: text.to_string(),
            placeholders,
        })
    }

    /// Substitutes every `${name}`; errors if a placeholder has no binding,
    /// so rendering never leaves a slot unexpanded.
    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String> {
        let mut out = self.text.clone();
        for name in &self.placeholders {
            let value = bindings
                .get(name)
                .ok_or_else(|| CoreError::Template(format!("no binding for placeholder ${{{name}}}")))?;
            out = out.replace(&format!("${{{name}}}"), value);
        }
        Ok(out)
    }
}

fn scan_placeholders(text: &str) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        let tail = &rest[start + 2..];
        let end = tail
            .find('}')
            .ok_or_else(|| CoreError::Template("unterminated ${...} placeholder".into()))?;
        let name = &tail[..end];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(CoreError::Template(format!(
                "invalid placeholder name {name:?}"
            )));
        }
        names.insert(name.to_string());
        rest = &tail[end + 1..];
    }
    Ok(names)
}

/// A system/user prompt pair parsed from a sectioned template file:
///
/// ```text
/// @name generation
/// @version 1
/// @system
/// ...
/// @user
/// ...
/// ```
///
/// Observation fragments use a single `@text` section instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub version: String,
    pub system: TextTemplate,
    pub user: TextTemplate,
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self> {
        let parsed = parse_sections(source)?;
        let system = parsed
            .sections
            .get("system")
            .ok_or_else(|| CoreError::Template("template missing @system section".into()))?;
        let user = parsed
            .sections
            .get("user")
            .ok_or_else(|| CoreError::Template("template missing @user section".into()))?;
        Ok(Self {
            name: parsed.name,
            version: parsed.version,
            system: TextTemplate::parse(system)?,
            user: TextTemplate::parse(user)?,
        })
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<RenderedPrompt> {
        Ok(RenderedPrompt {
            system: self.system.render(bindings)?,
            user: self.user.render(bindings)?,
        })
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        self.system
            .placeholders
            .union(&self.user.placeholders)
            .cloned()
            .collect()
    }
}

/// A single-section template (observation blocks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentTemplate {
    pub name: String,
    pub version: String,
    pub body: TextTemplate,
}

impl FragmentTemplate {
    pub fn parse(source: &str) -> Result<Self> {
        let parsed = parse_sections(source)?;
        let body = parsed
            .sections
            .get("text")
            .ok_or_else(|| CoreError::Template("fragment template missing @text section".into()))?;
        Ok(Self {
            name: parsed.name,
            version: parsed.version,
            body: TextTemplate::parse(body)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
}

struct ParsedSections {
    name: String,
    version: String,
    sections: BTreeMap<String, String>,
}

fn parse_sections(source: &str) -> Result<ParsedSections> {
    let mut name = String::new();
    let mut version = String::new();
    let mut sections: BTreeMap<String, String> = BTreeMap::new();
    let mut current: Option<String> = None;
    for line in source.lines() {
        if let Some(rest) = line.strip_prefix('@') {
            let (directive, value) = match rest.split_once(' ') {
                Some((d, v)) => (d.trim(), v.trim()),
                None => (rest.trim(), ""),
            };
            match directive {
                "name" => name = value.to_string(),
                "version" => version = value.to_string(),
                "system" | "user" | "text" => {
                    current = Some(directive.to_string());
                    sections.entry(directive.to_string()).or_default();
                }
                other => {
                    return Err(CoreError::Template(format!(
                        "unknown template directive @{other}"
                    )))
                }
            }
            continue;
        }
        match &current {
            Some(section) => {
                let body = sections.get_mut(section).unwrap();
                body.push_str(line);
                body.push('\n');
            }
            None if line.trim().is_empty() => {}
            None => {
                return Err(CoreError::Template(format!(
                    "content before any section marker: {line:?}"
                )))
            }
        }
    }
    if version.is_empty() {
        return Err(CoreError::Template("template missing @version".into()));
    }
    for body in sections.values_mut() {
        // Section bodies keep internal newlines; trailing blank lines are not
        // part of the prompt contract.
        while body.ends_with('\n') {
            body.pop();
        }
    }
    Ok(ParsedSections {
        name,
        version,
        sections,
    })
}

/// Whether candidates come from the random initial sample or from hard
/// examples plus the current rule set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Initial,
    Refinement,
}

/// One generation call: observations to show, prior rules (refinement only),
/// and how many hypotheses to ask for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub mode: GenerationMode,
    pub observations: Vec<Example>,
    pub prior_rules: Vec<Rule>,
    pub num_hypotheses: usize,
}

impl GenerationRequest {
    pub fn initial(observations: Vec<Example>, num_hypotheses: usize) -> Result<Self> {
        Self::validated(GenerationMode::Initial, observations, Vec::new(), num_hypotheses)
    }

    pub fn refinement(
        observations: Vec<Example>,
        prior_rules: Vec<Rule>,
        num_hypotheses: usize,
    ) -> Result<Self> {
        Self::validated(GenerationMode::Refinement, observations, prior_rules, num_hypotheses)
    }

    fn validated(
        mode: GenerationMode,
        observations: Vec<Example>,
        prior_rules: Vec<Rule>,
        num_hypotheses: usize,
    ) -> Result<Self> {
        if num_hypotheses == 0 {
            return Err(CoreError::Config("num_hypotheses must be >= 1".into()));
        }
        match mode {
            GenerationMode::Initial if !prior_rules.is_empty() => {
                return Err(CoreError::Usage("initial generation forbids prior rules".into()))
            }
            GenerationMode::Refinement if prior_rules.is_empty() => {
                return Err(CoreError::Usage(
                    "refinement generation requires prior rules".into(),
                ))
            }
            _ => {}
        }
        Ok(Self {
            mode,
            observations,
            prior_rules,
            num_hypotheses,
        })
    }
}

/// Renders one observation block per example, in input order, with the label
/// substituted through the manifest's token lexicon. Blocks are separated by
/// a blank line. A field named by the template but missing from an example
/// is a template error naming both.
pub fn render_observations(
    examples: &[Example],
    manifest: &DatasetManifest,
    template: &FragmentTemplate,
) -> Result<String> {
    let mut blocks = Vec::with_capacity(examples.len());
    for example in examples {
        let mut bindings = BTreeMap::new();
        for name in &template.body.placeholders {
            if name == "label" {
                bindings.insert("label".to_string(), manifest.label_token(example.label).to_string());
                continue;
            }
            let value = example.field(name).ok_or_else(|| {
                CoreError::Template(format!(
                    "example {:?} is missing field {name:?} required by the observation template",
                    example.id
                ))
            })?;
            bindings.insert(name.clone(), value.to_string());
        }
        blocks.push(template.body.render(&bindings)?);
    }
    Ok(blocks.join("\n\n"))
}

/// Numbers rules as `1. text` lines for prompts that show the current set.
pub fn render_numbered_rules(rules: &[Rule]) -> String {
    rules
        .iter()
        .enumerate()
        .map(|(i, rule)| format!("{}. {}", i + 1, rule.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Extracts the items of a numbered list: lines with an integer-dot prefix
/// start items, following non-numbered lines are joined into the current
/// item, preamble lines are dropped, and one surrounding bracket pair is
/// stripped. An empty result is a valid return.
pub fn parse_numbered_list(text: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(body) = split_numbered_line(trimmed) {
            items.push(body.to_string());
        } else if let Some(last) = items.last_mut() {
            last.push(' ');
            last.push_str(trimmed);
        }
    }
    items
        .into_iter()
        .map(|item| strip_brackets(item.trim()).trim().to_string())
        .filter(|item| !item.is_empty())
        .collect()
}

fn split_numbered_line(line: &str) -> Option<&str> {
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    line[digits..].strip_prefix('.')
}

fn strip_brackets(item: &str) -> &str {
    if let Some(inner) = item.strip_prefix('[') {
        if let Some(inner) = inner.strip_suffix(']') {
            return inner;
        }
        // Tolerate a lost closing bracket at end of response.
        if !inner.contains(']') {
            return inner;
        }
    }
    item
}

/// Parses a generation response into at most `num_hypotheses` rules, dropping
/// within-batch duplicates (normalized text) and tagging provenance. Zero
/// parseable rules is a generation error carrying the raw response.
pub fn parse_generated_rules(
    response: &str,
    num_hypotheses: usize,
    origin: RuleOrigin,
    born_iteration: u32,
) -> Result<Vec<Rule>> {
    let items = parse_numbered_list(response);
    let mut seen = BTreeSet::new();
    let mut rules = Vec::new();
    for item in items {
        let Ok(text) = normalize_rule_text(&item) else {
            continue;
        };
        if !seen.insert(text.clone()) {
            continue;
        }
        let rule_id = format!("r{born_iteration:02}-{:02}", rules.len() + 1);
        rules.push(Rule {
            rule_id,
            text,
            born_iteration,
            origin,
        });
        if rules.len() == num_hypotheses {
            break;
        }
    }
    if rules.is_empty() {
        return Err(CoreError::Generation {
            raw: response.to_string(),
        });
    }
    Ok(rules)
}
