//! Template sets on disk and the rule-generation call.
//!
//! A template directory holds one file per prompt with fixed names:
//! `observation.tmpl`, `generation.tmpl`, `refinement.tmpl`, `judge.tmpl`,
//! `infer_rules.tmpl`, `infer_weights.tmpl`, `infer_full.tmpl`. Template
//! versions feed the judgment-cache key, so prompt edits invalidate stale
//! judgments without a rebuild.

use std::collections::BTreeMap;
use std::path::Path;

use rlie_core::dataset::DatasetManifest;
use rlie_core::genesis::{
    parse_generated_rules, render_numbered_rules, render_observations, FragmentTemplate,
    GenerationMode, GenerationRequest, PromptTemplate, RenderedPrompt,
};
use rlie_core::types::{Rule, RuleOrigin};

use crate::backend::ChatBackend;
use crate::error::{Result, RlieError};

#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub observation: FragmentTemplate,
    pub generation: PromptTemplate,
    pub refinement: PromptTemplate,
    pub judge: PromptTemplate,
    pub infer_rules: PromptTemplate,
    pub infer_weights: PromptTemplate,
    pub infer_full: PromptTemplate,
}

fn read(dir: &Path, file: &str) -> Result<String> {
    let path = dir.join(file);
    std::fs::read_to_string(&path).map_err(|e| RlieError::io(&path, e))
}

pub fn load_template_set(dir: &Path) -> Result<TemplateSet> {
    Ok(TemplateSet {
        observation: FragmentTemplate::parse(&read(dir, "observation.tmpl")?)?,
        generation: PromptTemplate::parse(&read(dir, "generation.tmpl")?)?,
        refinement: PromptTemplate::parse(&read(dir, "refinement.tmpl")?)?,
        judge: PromptTemplate::parse(&read(dir, "judge.tmpl")?)?,
        infer_rules: PromptTemplate::parse(&read(dir, "infer_rules.tmpl")?)?,
        infer_weights: PromptTemplate::parse(&read(dir, "infer_weights.tmpl")?)?,
        infer_full: PromptTemplate::parse(&read(dir, "infer_full.tmpl")?)?,
    })
}

/// Renders the generation prompt for a request without issuing it (dry runs
/// share this path with [`generate_rules`]).
pub fn render_generation_prompt(
    request: &GenerationRequest,
    templates: &TemplateSet,
    manifest: &DatasetManifest,
) -> Result<RenderedPrompt> {
    let observations = render_observations(&request.observations, manifest, &templates.observation)?;
    let mut bindings = BTreeMap::new();
    bindings.insert("num_hypotheses".to_string(), request.num_hypotheses.to_string());
    bindings.insert("observations".to_string(), observations);
    let template = match request.mode {
        GenerationMode::Initial => &templates.generation,
        GenerationMode::Refinement => {
            bindings.insert(
                "hypotheses_text".to_string(),
                render_numbered_rules(&request.prior_rules),
            );
            &templates.refinement
        }
    };
    Ok(template.render(&bindings)?)
}

/// One backend call producing at most `num_hypotheses` parsed, batch-unique
/// rules tagged with origin and birth iteration. Returns the raw response
/// alongside for auditing.
pub fn generate_rules(
    backend: &dyn ChatBackend,
    request: &GenerationRequest,
    templates: &TemplateSet,
    manifest: &DatasetManifest,
    born_iteration: u32,
) -> Result<(Vec<Rule>, String)> {
    let prompt = render_generation_prompt(request, templates, manifest)?;
    let raw = backend.complete(&prompt.system, &prompt.user)?;
    let origin = match request.mode {
        GenerationMode::Initial => RuleOrigin::Initial,
        GenerationMode::Refinement => RuleOrigin::Refinement,
    };
    let rules = parse_generated_rules(&raw, request.num_hypotheses, origin, born_iteration)?;
    Ok((rules, raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedChat;
    use rlie_core::types::Example;

    fn repo_templates(set: &str) -> TemplateSet {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../templates").join(set);
        load_template_set(&dir).unwrap()
    }

    fn manifest() -> DatasetManifest {
        DatasetManifest::new("keyword", "yes", "no", "not applicable", vec!["text".into()]).unwrap()
    }

    fn example(id: &str, text: &str, label: u8) -> Example {
        let mut fields = BTreeMap::new();
        fields.insert("text".to_string(), text.to_string());
        Example::new(id, fields, label).unwrap()
    }

    #[test]
    fn keyword_template_set_loads_and_renders() {
        let templates = repo_templates("keyword");
        let request = GenerationRequest::initial(
            vec![example("e1", "crimson sky", 1), example("e2", "calm sea", 0)],
            5,
        )
        .unwrap();
        let prompt = render_generation_prompt(&request, &templates, &manifest()).unwrap();
        assert!(prompt.user.contains("crimson sky"));
        assert!(prompt.user.contains("Final answer: yes"));
        assert!(prompt.user.contains("5"));
        assert!(!prompt.user.contains("${"));
    }

    #[test]
    fn retweets_template_set_loads() {
        let templates = repo_templates("retweets");
        assert_eq!(templates.judge.name, "judge");
        assert!(templates
            .observation
            .body
            .placeholders
            .contains("first_tweet"));
    }

    #[test]
    fn generation_round_trip_through_scripted_backend() {
        let templates = repo_templates("keyword");
        let chat = ScriptedChat::new(vec!["1. [The text mentions 'alpha']\n2. [The text mentions 'beta']".into()]);
        let request = GenerationRequest::initial(vec![example("e1", "alpha beta", 1)], 5).unwrap();
        let (rules, raw) = generate_rules(&chat, &request, &templates, &manifest(), 1).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].text, "The text mentions 'alpha'");
        assert!(raw.contains("alpha"));
        assert_eq!(chat.call_count(), 1);
    }

    #[test]
    fn refinement_prompt_includes_prior_rules() {
        let templates = repo_templates("keyword");
        let prior = vec![Rule::new("r1", "The text mentions 'alpha'", 1, RuleOrigin::Initial).unwrap()];
        let request =
            GenerationRequest::refinement(vec![example("e1", "alpha", 1)], prior, 3).unwrap();
        let prompt = render_generation_prompt(&request, &templates, &manifest()).unwrap();
        assert!(prompt.user.contains("1. The text mentions 'alpha'"));
    }
}
