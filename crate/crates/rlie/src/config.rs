//! Run configuration: one human-editable TOML file with sections. Every
//! knob has a default, so a minimal config names only the dataset and the
//! backend. API credentials never appear here; they come from the
//! environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rlie_core::combiner::{PredictConfig, SolverConfig};
use rlie_core::dataset::DatasetManifest;
use rlie_core::refine::LoopConfig;

use crate::backend::ModelConfig;
use crate::error::{Result, RlieError};
use crate::eval::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub splits: SplitSection,
    pub backend: BackendSection,
    pub model: ModelConfig,
    #[serde(rename = "loop")]
    pub refinement: LoopConfig,
    pub combiner: CombinerSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSection::default(),
            splits: SplitSection::default(),
            backend: BackendSection::default(),
            model: ModelConfig::default(),
            refinement: LoopConfig::default(),
            combiner: CombinerSection::default(),
            run: RunSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub template_dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            path: PathBuf::from("dataset.jsonl"),
            template_dir: PathBuf::from("templates/keyword"),
            manifest: DatasetManifest {
                name: "keyword".into(),
                positive_token: "yes".into(),
                negative_token: "no".into(),
                abstain_token: "not applicable".into(),
                field_names: vec!["text".into()],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub sizes: [usize; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { sizes: [200, 200, 300] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    /// "openai" or "synthetic".
    pub kind: String,
    /// Spec file for the synthetic backend (judge predicates plus scripted
    /// generator responses).
    pub synthetic_spec: Option<PathBuf>,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: "openai".into(),
            synthetic_spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombinerSection {
    pub lambda_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub folds: usize,
    pub tau: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CombinerSection {
    fn default() -> Self {
        Self {
            lambda_grid: vec![0.001, 0.01, 0.1, 1.0],
            alpha_grid: vec![0.0, 0.5, 1.0],
            folds: 5,
            tau: 0.5,
            max_iter: 10_000,
            tol: 1e-8,
        }
    }
}

impl CombinerSection {
    pub fn grid(&self) -> Vec<(f64, f64)> {
        let mut grid = Vec::with_capacity(self.lambda_grid.len() * self.alpha_grid.len());
        for &lambda in &self.lambda_grid {
            for &alpha in &self.alpha_grid {
                grid.push((lambda, alpha));
            }
        }
        grid
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            max_iter: self.max_iter,
            tol: self.tol,
            track_objective: false,
        }
    }

    pub fn predict(&self) -> Result<PredictConfig> {
        Ok(PredictConfig::new(self.tau)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    /// Explicit seeds, one pipeline run each.
    pub seeds: Vec<u64>,
    /// Alternative to `seeds`: run seeds 1..=repeats.
    pub repeats: Option<usize>,
    pub strategies: Vec<String>,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/judgments.jsonl`.
    pub cache_path: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            repeats: None,
            strategies: vec!["e1".into()],
            out_dir: PathBuf::from("runs/out"),
            cache_path: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| RlieError::io(path, e))?;
        let mut config: RunConfig =
            toml::from_str(&body).map_err(|e| RlieError::Config(format!("{}: {e}", path.display())))?;
        // Paths in the file are relative to the file's directory.
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.path);
        fix(&mut self.dataset.template_dir);
        if let Some(spec) = self.backend.synthetic_spec.as_mut() {
            fix(spec);
        }
        fix(&mut self.run.out_dir);
        if let Some(cache) = self.run.cache_path.as_mut() {
            fix(cache);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dataset.path.exists() {
            return Err(RlieError::Config(format!(
                "dataset path {} does not exist",
                self.dataset.path.display()
            )));
        }
        if !self.dataset.template_dir.is_dir() {
            return Err(RlieError::Config(format!(
                "template dir {} does not exist",
                self.dataset.template_dir.display()
            )));
        }
        self.dataset.manifest.validate()?;
        self.refinement.validate()?;
        self.model.validate()?;
        match self.backend.kind.as_str() {
            "openai" => {}
            "synthetic" => {
                let spec = self.backend.synthetic_spec.as_ref().ok_or_else(|| {
                    RlieError::Config("backend.kind = \"synthetic\" requires backend.synthetic_spec".into())
                })?;
                if !spec.exists() {
                    return Err(RlieError::Config(format!(
                        "synthetic spec {} does not exist",
                        spec.display()
                    )));
                }
            }
            other => {
                return Err(RlieError::Config(format!(
                    "unknown backend kind {other:?}; valid: openai, synthetic"
                )))
            }
        }
        if self.combiner.lambda_grid.is_empty() || self.combiner.alpha_grid.is_empty() {
            return Err(RlieError::Config("combiner grids must be non-empty".into()));
        }
        if self.combiner.folds < 2 {
            return Err(RlieError::Config("combiner.folds must be >= 2".into()));
        }
        self.combiner.predict()?;
        if self.splits.sizes.iter().any(|&s| s == 0) {
            return Err(RlieError::Config("split sizes must be >= 1".into()));
        }
        if let Some(repeats) = self.run.repeats {
            if repeats == 0 {
                return Err(RlieError::Config("run.repeats must be >= 1".into()));
            }
        }
        if self.effective_seeds().is_empty() {
            return Err(RlieError::Config("run.seeds (or run.repeats) must name at least one run".into()));
        }
        if self.run.strategies.is_empty() {
            return Err(RlieError::Config("run.strategies must name at least one strategy".into()));
        }
        for name in &self.run.strategies {
            name.parse::<Strategy>()?;
        }
        Ok(())
    }

    pub fn effective_seeds(&self) -> Vec<u64> {
        match self.run.repeats {
            Some(n) => (1..=n as u64).collect(),
            None => self.run.seeds.clone(),
        }
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        self.run.strategies.iter().map(|s| s.parse()).collect()
    }

    pub fn cache_path(&self) -> PathBuf {
        self.run
            .cache_path
            .clone()
            .unwrap_or_else(|| self.run.out_dir.join("judgments.jsonl"))
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let [a, b, c] = self.splits.sizes;
        (a, b, c)
    }

    pub fn snapshot(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| RlieError::Config(format!("serializing config: {e}")))
    }
}
