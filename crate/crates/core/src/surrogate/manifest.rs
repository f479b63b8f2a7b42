//! Line-delimited pair manifests.
//!
//! Each line is one JSON object with exactly the fields `conditioning`,
//! `truth`, `split`, `mask` and `corpus_tag`. Relative paths resolve against
//! the manifest's directory.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ensure_parent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub conditioning: String,
    pub truth: String,
    pub split: Split,
    pub mask: Option<String>,
    pub corpus_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairManifest {
    pub records: Vec<PairRecord>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl PairManifest {
    pub fn new(records: Vec<PairRecord>, base_dir: impl Into<PathBuf>) -> Self {
        PairManifest { records, base_dir: base_dir.into() }
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        ensure_parent(path)?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: PairRecord = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(r);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(PairManifest::new(records, base))
    }

    /// Checks that every referenced file exists and that no truth image is in both splits.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Manifest("manifest has no records".into()));
        }
        for (i, r) in self.records.iter().enumerate() {
            let mut paths = vec![("conditioning", &r.conditioning), ("truth", &r.truth)];
            if let Some(m) = &r.mask {
                paths.push(("mask", m));
            }
            for (field, p) in paths {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Manifest(format!(
                        "record {i}: {field} file {} does not exist",
                        full.display()
                    )));
                }
            }
        }
        let train: HashSet<_> = self.split(Split::Train).map(|r| self.resolve(&r.truth)).collect();
        if let Some(r) = self.split(Split::Test).find(|r| train.contains(&self.resolve(&r.truth))) {
            return Err(Error::Manifest(format!("truth {} appears in both splits", r.truth)));
        }
        Ok(())
    }
}
