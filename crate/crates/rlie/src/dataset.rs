//! Dataset ingestion (JSONL) and split-manifest persistence.
//!
//! One JSON object per line: `{"id": string, "fields": {string: string},
//! "label": 0|1}`. Parse errors name the offending line; duplicate ids name
//! both lines.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rlie_core::types::{Example, SplitBundle};

use crate::error::{Result, RlieError};

#[derive(Deserialize)]
struct RawExample {
    id: String,
    fields: BTreeMap<String, String>,
    label: i64,
}

/// Loads examples in file order.
pub fn load_jsonl(path: &Path) -> Result<Vec<Example>> {
    let body = std::fs::read_to_string(path).map_err(|e| RlieError::io(path, e))?;
    let mut examples = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (offset, line) in body.lines().enumerate() {
        let line_no = offset + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample = serde_json::from_str(line).map_err(|e| RlieError::Dataset {
            path: path.to_path_buf(),
            line: line_no,
            detail: format!("malformed record: {e}"),
        })?;
        if !(0..=1).contains(&raw.label) {
            return Err(RlieError::Dataset {
                path: path.to_path_buf(),
                line: line_no,
                detail: format!("label {} outside {{0, 1}}", raw.label),
            });
        }
        if let Some(first) = seen.insert(raw.id.clone(), line_no) {
            return Err(RlieError::Dataset {
                path: path.to_path_buf(),
                line: line_no,
                detail: format!("duplicate id {:?}, first seen on line {first}", raw.id),
            });
        }
        let example = Example::new(raw.id, raw.fields, raw.label as u8).map_err(|e| RlieError::Dataset {
            path: path.to_path_buf(),
            line: line_no,
            detail: e.to_string(),
        })?;
        examples.push(example);
    }
    Ok(examples)
}

/// Persisted split membership: the ids per split plus the seed that made
/// them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn from_bundle(bundle: &SplitBundle) -> Self {
        let ids = |examples: &[Example]| examples.iter().map(|e| e.id.clone()).collect();
        Self {
            seed: bundle.seed,
            train: ids(&bundle.train),
            validation: ids(&bundle.validation),
            test: ids(&bundle.test),
        }
    }
}

pub fn write_split_manifest(path: &Path, manifest: &SplitManifest) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| RlieError::io(parent, e))?;
        }
    }
    let body = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, body).map_err(|e| RlieError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    #[test]
    fn loads_records_in_order() {
        let file = write_lines(&[
            r#"{"id":"r1","fields":{"review":"nice"},"label":1}"#,
            r#"{"id":"r2","fields":{"review":"meh"},"label":0}"#,
        ]);
        let examples = load_jsonl(file.path()).unwrap();
        assert_eq!(examples.len(), 2);
        assert_eq!(examples[0].id, "r1");
        assert_eq!(examples[0].label, 1);
        assert_eq!(examples[1].field("review"), Some("meh"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let file = write_lines(&[r#"{"id":"r1","fields":{"t":"x"},"label":1}"#, "{oops"]);
        match load_jsonl(file.path()).unwrap_err() {
            RlieError::Dataset { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_cites_both_lines() {
        let file = write_lines(&[
            r#"{"id":"a","fields":{"t":"x"},"label":1}"#,
            r#"{"id":"b","fields":{"t":"y"},"label":0}"#,
            r#"{"id":"a","fields":{"t":"z"},"label":1}"#,
        ]);
        match load_jsonl(file.path()).unwrap_err() {
            RlieError::Dataset { line, detail, .. } => {
                assert_eq!(line, 3);
                assert!(detail.contains("line 1"), "{detail}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_is_integrity_error() {
        let file = write_lines(&[r#"{"id":"a","fields":{"t":"x"},"label":2}"#]);
        match load_jsonl(file.path()).unwrap_err() {
            RlieError::Dataset { detail, .. } => assert!(detail.contains("label 2")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
