//! Judgment backends and the persistent judgment cache.
//!
//! `judge_matrix` fills every (example, rule) cell, consulting the cache
//! first and writing every new judgment back before returning, so an
//! interrupted run resumes losslessly. Cells are keyed by position, which
//! makes the assembled matrix independent of request completion order.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rlie_core::dataset::DatasetManifest;
use rlie_core::genesis::PromptTemplate;
use rlie_core::judge::{parse_judgment, synthetic_judge, SyntheticJudgeSpec};
use rlie_core::refine::CacheStats;
use rlie_core::types::{Example, Judgment, JudgmentMatrix, Rule};
use rlie_core::CoreError;

use crate::backend::{BackendInfo, ChatBackend};
use crate::error::{Result, RlieError};

/// Produces one ternary judgment for one (rule, example) pair.
pub trait JudgeBackend: Send + Sync {
    fn info(&self) -> BackendInfo;
    /// Tag mixed into cache keys; must change whenever the backend's
    /// behavior could (template version, model name, synthetic spec).
    fn cache_tag(&self) -> &str;
    fn judge(&self, rule: &Rule, example: &Example) -> Result<Judgment>;
}

/// Judge backed by a chat model: renders the single-rule judgment template
/// with the rule text and example fields, then parses the final-answer token
/// through the manifest lexicon.
pub struct ChatJudge {
    backend: Arc<dyn ChatBackend>,
    template: PromptTemplate,
    manifest: DatasetManifest,
    tag: String,
}

impl ChatJudge {
    pub fn new(backend: Arc<dyn ChatBackend>, template: PromptTemplate, manifest: DatasetManifest) -> Self {
        let tag = format!(
            "chat:{}:{}@{}",
            backend.info().name,
            template.name,
            template.version
        );
        Self {
            backend,
            template,
            manifest,
            tag,
        }
    }

    /// Prompt for one pair, also used by dry runs.
    pub fn render(&self, rule: &Rule, example: &Example) -> Result<(String, String)> {
        let mut bindings = std::collections::BTreeMap::new();
        for (name, value) in &example.fields {
            bindings.insert(name.clone(), value.clone());
        }
        bindings.insert("hypothesis".to_string(), rule.text.clone());
        let rendered = self.template.render(&bindings).map_err(|e| match e {
            CoreError::Template(msg) => {
                CoreError::Template(format!("judging example {:?}: {msg}", example.id)).into()
            }
            other => RlieError::Core(other),
        })?;
        Ok((rendered.system, rendered.user))
    }
}

impl JudgeBackend for ChatJudge {
    fn info(&self) -> BackendInfo {
        self.backend.info()
    }

    fn cache_tag(&self) -> &str {
        &self.tag
    }

    fn judge(&self, rule: &Rule, example: &Example) -> Result<Judgment> {
        let (system, user) = self.render(rule, example)?;
        let raw = self.backend.complete(&system, &user)?;
        Ok(parse_judgment(&raw, &self.manifest)?)
    }
}

/// Pure offline judge evaluating keyword predicates; the cache tag digests
/// the whole spec so edited predicates invalidate stale entries.
pub struct SyntheticJudge {
    spec: SyntheticJudgeSpec,
    tag: String,
}

impl SyntheticJudge {
    pub fn new(spec: SyntheticJudgeSpec) -> Result<Self> {
        spec.validate().map_err(RlieError::Core)?;
        let digest = hex_digest(&[serde_json::to_string(&spec)?.as_bytes()]);
        Ok(Self {
            spec,
            tag: format!("synthetic:{}", &digest[..16]),
        })
    }
}

impl JudgeBackend for SyntheticJudge {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "synthetic".into(),
            max_inflight: 4,
            supports_batching: false,
        }
    }

    fn cache_tag(&self) -> &str {
        &self.tag
    }

    fn judge(&self, rule: &Rule, example: &Example) -> Result<Judgment> {
        Ok(synthetic_judge(&self.spec, rule, example))
    }
}

/// Counts judge calls; test instrumentation and call accounting.
pub struct CountingJudge<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: JudgeBackend> CountingJudge<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: JudgeBackend> JudgeBackend for CountingJudge<B> {
    fn info(&self) -> BackendInfo {
        self.inner.info()
    }

    fn cache_tag(&self) -> &str {
        self.inner.cache_tag()
    }

    fn judge(&self, rule: &Rule, example: &Example) -> Result<Judgment> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.judge(rule, example)
    }
}

/// Fails every call once the budget is spent; simulates a run killed
/// mid-judging.
pub struct FailAfterJudge<B> {
    inner: B,
    remaining: AtomicI64,
}

impl<B: JudgeBackend> FailAfterJudge<B> {
    pub fn new(inner: B, budget: usize) -> Self {
        Self {
            inner,
            remaining: AtomicI64::new(budget as i64),
        }
    }
}

impl<B: JudgeBackend> JudgeBackend for FailAfterJudge<B> {
    fn info(&self) -> BackendInfo {
        self.inner.info()
    }

    fn cache_tag(&self) -> &str {
        self.inner.cache_tag()
    }

    fn judge(&self, rule: &Rule, example: &Example) -> Result<Judgment> {
        if self.remaining.fetch_sub(1, Ordering::SeqCst) <= 0 {
            return Err(RlieError::Backend("injected backend outage".into()));
        }
        self.inner.judge(rule, example)
    }
}

fn hex_digest(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
        hasher.update([0x1f]);
    }
    let out = hasher.finalize();
    let mut hex = String::with_capacity(out.len() * 2);
    for byte in out {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Digest of (backend tag, rule normalized text, example id, field
/// contents); the cache key for one judgment.
pub fn cache_key(tag: &str, rule: &Rule, example: &Example) -> String {
    let mut parts: Vec<&[u8]> = vec![tag.as_bytes(), rule.text.as_bytes(), example.id.as_bytes()];
    for (name, value) in &example.fields {
        parts.push(name.as_bytes());
        parts.push(value.as_bytes());
    }
    hex_digest(&parts)
}

/// One persisted cache entry. Rule text and example id ride along for
/// inspection; only (key, value) matter for lookups.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub rule: String,
    pub example_id: String,
    pub value: Judgment,
}

/// Append-only on-disk key-value store of judgments, one JSON record per
/// line. Loading tolerates corrupt lines (they are counted and skipped) so a
/// torn write cannot brick a run. Writers for distinct keys may race; the
/// mutex serializes appends and same-key writes.
pub struct JudgmentCache {
    path: PathBuf,
    state: Mutex<CacheState>,
}

struct CacheState {
    entries: HashMap<String, Judgment>,
    file: File,
}

impl JudgmentCache {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| RlieError::io(parent, e))?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| RlieError::io(&path, e))?;
            let mut corrupt = 0usize;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| RlieError::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(record) => {
                        entries.insert(record.key, record.value);
                    }
                    Err(_) => corrupt += 1,
                }
            }
            if corrupt > 0 {
                log::warn!("judgment cache {}: skipped {corrupt} corrupt line(s)", path.display());
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| RlieError::io(&path, e))?;
        Ok(Self {
            path,
            state: Mutex::new(CacheState { entries, file }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Judgment> {
        self.state.lock().unwrap().entries.get(key).copied()
    }

    /// Inserts and appends to disk; a key already present is left untouched.
    pub fn put(&self, key: &str, rule: &Rule, example: &Example, value: Judgment) -> Result<()> {
        let mut state = self.state.lock().unwrap();
        if state.entries.contains_key(key) {
            return Ok(());
        }
        let record = CacheRecord {
            key: key.to_string(),
            rule: rule.text.clone(),
            example_id: example.id.clone(),
            value,
        };
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        state
            .file
            .write_all(line.as_bytes())
            .and_then(|_| state.file.flush())
            .map_err(|e| RlieError::io(&self.path, e))?;
        state.entries.insert(key.to_string(), value);
        Ok(())
    }
}

/// Judges every (example, rule) pair, cache first. New judgments are fanned
/// out over up to `max_inflight` worker threads and written through to the
/// cache before this returns. On backend failure the remaining work is
/// abandoned, everything judged so far stays cached, and the error reports
/// the number of missing cells.
pub fn judge_matrix(
    backend: &dyn JudgeBackend,
    rules: &[Rule],
    examples: &[Example],
    cache: &JudgmentCache,
) -> Result<(JudgmentMatrix, CacheStats)> {
    if rules.is_empty() || examples.is_empty() {
        return Err(RlieError::Core(CoreError::Usage(
            "judge_matrix needs at least one rule and one example".into(),
        )));
    }
    let d = rules.len();
    let n = examples.len();
    let tag = backend.cache_tag();

    let mut values: Vec<Option<Judgment>> = vec![None; n * d];
    let mut pending: Vec<(usize, String)> = Vec::new();
    for (i, example) in examples.iter().enumerate() {
        for (j, rule) in rules.iter().enumerate() {
            let key = cache_key(tag, rule, example);
            match cache.get(&key) {
                Some(judgment) => values[i * d + j] = Some(judgment),
                None => pending.push((i * d + j, key)),
            }
        }
    }
    let stats = CacheStats {
        hits: (n * d - pending.len()) as u64,
        misses: pending.len() as u64,
    };

    if !pending.is_empty() {
        let workers = backend.info().max_inflight.clamp(1, pending.len());
        let cursor = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let results: Vec<Mutex<Option<Result<Judgment>>>> =
            (0..pending.len()).map(|_| Mutex::new(None)).collect();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let task = cursor.fetch_add(1, Ordering::SeqCst);
                    if task >= pending.len() || abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let (slot, key) = &pending[task];
                    let i = slot / d;
                    let j = slot % d;
                    let outcome = backend.judge(&rules[j], &examples[i]).and_then(|judgment| {
                        cache.put(key, &rules[j], &examples[i], judgment)?;
                        Ok(judgment)
                    });
                    if outcome.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    *results[task].lock().unwrap() = Some(outcome);
                });
            }
        });

        let mut first_error: Option<String> = None;
        let mut judged = 0usize;
        for (task, result) in results.into_iter().enumerate() {
            match result.into_inner().unwrap() {
                Some(Ok(judgment)) => {
                    values[pending[task].0] = Some(judgment);
                    judged += 1;
                }
                Some(Err(error)) => {
                    first_error.get_or_insert_with(|| error.to_string());
                }
                None => {}
            }
        }
        if judged < pending.len() {
            return Err(RlieError::MissingCells {
                missing: pending.len() - judged,
                first: first_error.unwrap_or_else(|| "work abandoned after failure".into()),
            });
        }
    }

    let matrix = JudgmentMatrix::new(
        examples.iter().map(|e| e.id.clone()).collect(),
        rules.iter().map(|r| r.rule_id.clone()).collect(),
        values.into_iter().map(Option::unwrap).collect(),
    )
    .map_err(RlieError::Core)?;
    Ok((matrix, stats))
}

/// Summary of a cache file for `inspect-cache`.
#[derive(Debug, Clone, Serialize)]
pub struct CacheSummary {
    pub entries: usize,
    pub corrupt_lines: usize,
    /// rule text -> (judged, non-abstaining) counts.
    pub per_rule: std::collections::BTreeMap<String, (usize, usize)>,
}

/// Reads a cache file directly, tolerating corrupt entries.
pub fn summarize_cache(path: &Path) -> Result<CacheSummary> {
    let mut summary = CacheSummary {
        entries: 0,
        corrupt_lines: 0,
        per_rule: Default::default(),
    };
    if !path.exists() {
        return Ok(summary);
    }
    let file = File::open(path).map_err(|e| RlieError::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| RlieError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CacheRecord>(&line) {
            Ok(record) => {
                summary.entries += 1;
                let counts = summary.per_rule.entry(record.rule).or_insert((0, 0));
                counts.0 += 1;
                counts.1 += (!record.value.is_abstain()) as usize;
            }
            Err(_) => summary.corrupt_lines += 1,
        }
    }
    Ok(summary)
}

/// Per-run cache statistics persisted next to the cache file so
/// `inspect-cache` can report the last run's hit rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LastRunStats {
    pub hits: u64,
    pub misses: u64,
}

pub fn stats_sidecar_path(cache_path: &Path) -> PathBuf {
    let mut name = cache_path.file_name().unwrap_or_default().to_os_string();
    name.push(".stats.json");
    cache_path.with_file_name(name)
}

pub fn write_last_run_stats(cache_path: &Path, stats: CacheStats) -> Result<()> {
    let sidecar = stats_sidecar_path(cache_path);
    let body = serde_json::to_string_pretty(&LastRunStats {
        hits: stats.hits,
        misses: stats.misses,
    })?;
    std::fs::write(&sidecar, body).map_err(|e| RlieError::io(&sidecar, e))
}

pub fn read_last_run_stats(cache_path: &Path) -> Option<LastRunStats> {
    let sidecar = stats_sidecar_path(cache_path);
    let body = std::fs::read_to_string(sidecar).ok()?;
    serde_json::from_str(&body).ok()
}
