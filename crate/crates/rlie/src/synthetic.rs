//! Synthetic backend spec file: the judge's keyword predicates plus the
//! scripted generator responses, making a full pipeline run possible with
//! no network access.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rlie_core::judge::SyntheticJudgeSpec;

use crate::error::{Result, RlieError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpecFile {
    pub judge: SyntheticJudgeSpec,
    pub generator: GeneratorScript,
}

/// Responses replayed by the scripted generator, one per generation call;
/// the last repeats once exhausted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorScript {
    pub responses: Vec<String>,
}

pub fn load_synthetic_spec(path: &Path) -> Result<SyntheticSpecFile> {
    let body = std::fs::read_to_string(path).map_err(|e| RlieError::io(path, e))?;
    let spec: SyntheticSpecFile = serde_json::from_str(&body)?;
    spec.judge.validate().map_err(RlieError::Core)?;
    if spec.generator.responses.is_empty() {
        return Err(RlieError::Config(format!(
            "{}: generator.responses must be non-empty",
            path.display()
        )));
    }
    Ok(spec)
}
