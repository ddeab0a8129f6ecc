//! Command surface: run, evaluate, inspect-cache, make-splits.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use rlie_core::dataset::make_splits;
use rlie_core::genesis::GenerationRequest;
use rlie_core::refine::CacheStats;
use rlie_core::types::{Rule, RuleOrigin, RuleSet, SplitBundle};

use crate::backend::{ChatBackend, OpenAiBackend, ScriptedChat};
use crate::config::RunConfig;
use crate::dataset::{load_jsonl, write_split_manifest, SplitManifest};
use crate::error::{Result, RlieError};
use crate::eval::{
    aggregate_strategy_runs, evaluate_strategy, render_inference_prompt, render_table, EvalReport,
    Strategy, StrategyRun,
};
use crate::judge::{
    read_last_run_stats, summarize_cache, write_last_run_stats, ChatJudge, JudgeBackend,
    JudgmentCache, SyntheticJudge,
};
use crate::pipeline::{load_checkpoint, run_rlie, write_run_artifacts, PipelineContext, RunOutcome};
use crate::synthetic::load_synthetic_spec;
use crate::templates::{load_template_set, render_generation_prompt, TemplateSet};

#[derive(Debug, Parser)]
#[command(
    name = "rlie",
    version,
    about = "Learn natural-language rule sets with a weighted logistic combiner and evaluate inference strategies"
)]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "rlie.toml")]
    pub config: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the full pipeline for each configured seed, then evaluate the
    /// requested strategies on each best checkpoint.
    Run {
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Strategy names, overriding the config (repeatable).
        #[arg(long)]
        strategy: Vec<String>,
        /// Render every prompt kind and exit without any backend call.
        #[arg(long)]
        dry_run: bool,
    },
    /// Evaluate one strategy on a saved checkpoint over the test split.
    Evaluate {
        checkpoint: PathBuf,
        #[arg(long)]
        strategy: String,
        /// Seed for re-deriving the data splits (defaults to the first
        /// configured seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Summarize a judgment cache file.
    InspectCache { cache: PathBuf },
    /// Write the split membership manifest for the configured dataset.
    MakeSplits {
        #[arg(long)]
        seed: Option<u64>,
        /// Output file (defaults to <out_dir>/splits-<seed>.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Backends {
    generator: Arc<dyn ChatBackend>,
    judge: Arc<dyn JudgeBackend>,
    /// Chat backend for e2-e4 inference prompts.
    inference: Arc<dyn ChatBackend>,
}

fn build_backends(config: &RunConfig, templates: &TemplateSet) -> Result<Backends> {
    match config.backend.kind.as_str() {
        "synthetic" => {
            let spec = load_synthetic_spec(config.backend.synthetic_spec.as_ref().unwrap())?;
            let generator: Arc<dyn ChatBackend> = Arc::new(ScriptedChat::new(spec.generator.responses));
            let judge: Arc<dyn JudgeBackend> = Arc::new(SyntheticJudge::new(spec.judge)?);
            Ok(Backends {
                inference: generator.clone(),
                generator,
                judge,
            })
        }
        "openai" => {
            let chat: Arc<dyn ChatBackend> = Arc::new(OpenAiBackend::from_env(config.model.clone())?);
            let judge: Arc<dyn JudgeBackend> = Arc::new(ChatJudge::new(
                chat.clone(),
                templates.judge.clone(),
                config.dataset.manifest.clone(),
            ));
            Ok(Backends {
                generator: chat.clone(),
                inference: chat,
                judge,
            })
        }
        other => Err(RlieError::Config(format!("unknown backend kind {other:?}"))),
    }
}

fn splits_for_seed(config: &RunConfig, seed: u64) -> Result<SplitBundle> {
    let examples = load_jsonl(&config.dataset.path)?;
    Ok(make_splits(&examples, config.split_sizes(), seed)?)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            seed,
            out_dir,
            strategy,
            dry_run,
        } => cmd_run(&cli.config, seed, out_dir, strategy, dry_run),
        Command::Evaluate {
            checkpoint,
            strategy,
            seed,
            out_dir,
        } => cmd_evaluate(&cli.config, &checkpoint, &strategy, seed, out_dir),
        Command::InspectCache { cache } => cmd_inspect_cache(&cache),
        Command::MakeSplits { seed, out } => cmd_make_splits(&cli.config, seed, out),
    }
}

fn load_validated_config(
    path: &std::path::Path,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    strategies: Vec<String>,
) -> Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed {
        config.run.seeds = vec![seed];
        config.run.repeats = None;
    }
    if let Some(out_dir) = out_dir {
        config.run.out_dir = out_dir;
    }
    if !strategies.is_empty() {
        config.run.strategies = strategies;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_run(
    config_path: &std::path::Path,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    strategies: Vec<String>,
    dry_run: bool,
) -> Result<()> {
    let config = load_validated_config(config_path, seed, out_dir, strategies)?;
    let templates = load_template_set(&config.dataset.template_dir)?;

    if dry_run {
        return dry_run_prompts(&config, &templates);
    }

    let backends = build_backends(&config, &templates)?;
    let cache = JudgmentCache::open(config.cache_path())?;
    let snapshot = config.snapshot()?;
    let strategies = config.strategies()?;
    let predict = config.combiner.predict()?;

    let mut per_strategy: Vec<Vec<StrategyRun>> = vec![Vec::new(); strategies.len()];
    let mut total_cache = CacheStats::default();

    for &run_seed in &config.effective_seeds() {
        let splits = splits_for_seed(&config, run_seed)?;
        let mut loop_config = config.refinement.clone();
        loop_config.seed = run_seed;
        let ctx = PipelineContext {
            generator: backends.generator.as_ref(),
            judge: backends.judge.as_ref(),
            cache: &cache,
            templates: &templates,
            manifest: &config.dataset.manifest,
            loop_config,
            grid: config.combiner.grid(),
            folds: config.combiner.folds,
            solver: config.combiner.solver(),
            predict,
        };
        let outcome: RunOutcome = run_rlie(&splits, &ctx)?;
        total_cache.add(outcome.total_cache);

        let run_dir = config.run.out_dir.join(format!("run-{run_seed:04}"));
        write_run_artifacts(&run_dir, &outcome, &snapshot)?;
        println!(
            "seed {run_seed}: best iteration {} of {}, val accuracy {:.4}, rules {}",
            outcome.best.iteration,
            outcome.log.records.len(),
            outcome.best.val_accuracy,
            outcome.best.rule_set.len()
        );

        for (slot, &strategy) in strategies.iter().enumerate() {
            let run = evaluate_strategy(
                strategy,
                &outcome.best,
                &splits.test,
                backends.judge.as_ref(),
                &cache,
                Some(backends.inference.as_ref()),
                &templates,
                &config.dataset.manifest,
                &predict,
                run_seed,
            )?;
            let path = run_dir.join(format!("eval_{}.json", strategy.code()));
            std::fs::write(&path, serde_json::to_string_pretty(&run)?)
                .map_err(|e| RlieError::io(&path, e))?;
            println!(
                "seed {run_seed} {}: test accuracy {:.4}, macro-f1 {:.4}, parse coverage {:.2}",
                strategy.code(),
                run.accuracy,
                run.macro_f1,
                run.parse_coverage
            );
            per_strategy[slot].push(run);
        }
    }

    write_last_run_stats(&config.cache_path(), total_cache)?;

    let reports: Vec<EvalReport> = per_strategy
        .iter()
        .map(|runs| aggregate_strategy_runs(runs))
        .collect::<Result<_>>()?;
    let aggregate_path = config.run.out_dir.join("aggregate_report.json");
    std::fs::write(&aggregate_path, serde_json::to_string_pretty(&reports)?)
        .map_err(|e| RlieError::io(&aggregate_path, e))?;
    let table = render_table(&reports);
    let table_path = config.run.out_dir.join("table.txt");
    std::fs::write(&table_path, &table).map_err(|e| RlieError::io(&table_path, e))?;
    print!("{table}");
    Ok(())
}

/// Renders one specimen of every prompt kind with real data and placeholder
/// params, printing them without touching any backend.
fn dry_run_prompts(config: &RunConfig, templates: &TemplateSet) -> Result<()> {
    let seed = config.effective_seeds()[0];
    let splits = splits_for_seed(config, seed)?;
    let manifest = &config.dataset.manifest;
    let sample = rlie_core::dataset::sample_initial(
        &splits.train,
        config.refinement.hard_example_count.min(3),
        seed,
    )?;

    let placeholder_rule = Rule::new(
        "r01-01",
        "The text mentions 'example' somewhere",
        1,
        RuleOrigin::Initial,
    )?;
    let second_rule = Rule::new(
        "r01-02",
        "Longer passages lean positive",
        1,
        RuleOrigin::Initial,
    )?;

    let mut sections: Vec<(String, String, String)> = Vec::new();

    let initial =
        GenerationRequest::initial(sample.clone(), config.refinement.initial_rule_count)?;
    let prompt = render_generation_prompt(&initial, templates, manifest)?;
    sections.push(("generation (initial)".into(), prompt.system, prompt.user));

    let refinement = GenerationRequest::refinement(
        sample.clone(),
        vec![placeholder_rule.clone(), second_rule.clone()],
        config.refinement.refinement_rule_count,
    )?;
    let prompt = render_generation_prompt(&refinement, templates, manifest)?;
    sections.push(("generation (refinement)".into(), prompt.system, prompt.user));

    let judge = ChatJudge::new(
        Arc::new(ScriptedChat::new(vec![String::new()])),
        templates.judge.clone(),
        manifest.clone(),
    );
    let (system, user) = judge.render(&placeholder_rule, &splits.train[0])?;
    sections.push(("judgment".into(), system, user));

    let rule_set = RuleSet::new(vec![placeholder_rule, second_rule], config.refinement.capacity)?;
    let params = rlie_core::combiner::CombinerParams {
        weights: vec![0.75, -0.25],
        bias: 0.1,
        lambda: 0.01,
        alpha: 0.5,
    };
    let checkpoint = rlie_core::refine::Checkpoint {
        iteration: 1,
        params: Some(params.to_keyed(&rule_set.rule_ids())?),
        rule_set,
        val_accuracy: 0.0,
        val_macro_f1: 0.0,
        cache_stats: CacheStats::default(),
    };
    for (strategy, reference) in [
        (Strategy::LlmRules, None),
        (Strategy::LlmRulesWeights, None),
        (Strategy::LlmRulesWeightsPrediction, Some(1)),
    ] {
        let (system, user) = render_inference_prompt(
            strategy,
            &checkpoint,
            Some(&params),
            &splits.train[0],
            manifest,
            templates,
            reference,
        )?;
        sections.push((format!("inference {}", strategy.code()), system, user));
    }

    for (name, system, user) in sections {
        println!("===== {name} =====");
        println!("--- system ---\n{system}");
        println!("--- user ---\n{user}\n");
    }
    println!("dry run: rendered all prompt kinds, no backend calls made");
    Ok(())
}

fn cmd_evaluate(
    config_path: &std::path::Path,
    checkpoint_path: &std::path::Path,
    strategy: &str,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
) -> Result<()> {
    let strategy: Strategy = strategy.parse()?;
    let config = load_validated_config(config_path, None, out_dir, Vec::new())?;
    let templates = load_template_set(&config.dataset.template_dir)?;
    let backends = build_backends(&config, &templates)?;
    let cache = JudgmentCache::open(config.cache_path())?;
    let predict = config.combiner.predict()?;

    let checkpoint = load_checkpoint(checkpoint_path)?;
    let seed = seed.unwrap_or_else(|| config.effective_seeds()[0]);
    let splits = splits_for_seed(&config, seed)?;

    let run = evaluate_strategy(
        strategy,
        &checkpoint,
        &splits.test,
        backends.judge.as_ref(),
        &cache,
        Some(backends.inference.as_ref()),
        &templates,
        &config.dataset.manifest,
        &predict,
        seed,
    )?;
    std::fs::create_dir_all(&config.run.out_dir).map_err(|e| RlieError::io(&config.run.out_dir, e))?;
    let path = config
        .run
        .out_dir
        .join(format!("eval_{}_seed{:04}.json", strategy.code(), seed));
    std::fs::write(&path, serde_json::to_string_pretty(&run)?).map_err(|e| RlieError::io(&path, e))?;
    println!(
        "{}: test accuracy {:.4}, macro-f1 {:.4}, parse coverage {:.2} -> {}",
        strategy.code(),
        run.accuracy,
        run.macro_f1,
        run.parse_coverage,
        path.display()
    );
    Ok(())
}

fn cmd_inspect_cache(cache_path: &std::path::Path) -> Result<()> {
    let summary = summarize_cache(cache_path)?;
    println!("{} entries", summary.entries);
    if summary.corrupt_lines > 0 {
        println!("warning: {} corrupt line(s) skipped", summary.corrupt_lines);
    }
    match read_last_run_stats(cache_path) {
        Some(stats) => {
            let total = stats.hits + stats.misses;
            let rate = if total == 0 {
                0.0
            } else {
                stats.hits as f64 / total as f64
            };
            println!(
                "last run: {} hits, {} misses (hit rate {:.1}%)",
                stats.hits,
                stats.misses,
                rate * 100.0
            );
        }
        None => println!("last run: no recorded stats"),
    }
    if !summary.per_rule.is_empty() {
        println!("per-rule coverage snapshot:");
        for (rule, (judged, nonzero)) in &summary.per_rule {
            println!(
                "  {:>5} judged, {:>5} firing ({:>5.1}%)  {}",
                judged,
                nonzero,
                *nonzero as f64 / *judged as f64 * 100.0,
                rule
            );
        }
    }
    Ok(())
}

fn cmd_make_splits(
    config_path: &std::path::Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = load_validated_config(config_path, None, None, Vec::new())?;
    let seed = seed.unwrap_or_else(|| config.effective_seeds()[0]);
    let splits = splits_for_seed(&config, seed)?;
    let manifest = SplitManifest::from_bundle(&splits);
    let path = out.unwrap_or_else(|| config.run.out_dir.join(format!("splits-{seed:04}.json")));
    write_split_manifest(&path, &manifest)?;
    println!(
        "{} train, {} validation, {} test (seed {seed}) -> {}",
        manifest.train.len(),
        manifest.validation.len(),
        manifest.test.len(),
        path.display()
    );
    Ok(())
}
