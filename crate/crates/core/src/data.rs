//! Dataset, split-manifest and knowledge-base file handling.
//!
//! Datasets are line-delimited JSON records
//! `{id, headline, body, images[], label?, timestamp?}`. A split manifest
//! lists disjoint train and test ids. Knowledge bases come either as raw
//! records `{id, text, timestamp?, source_tag?}`, embedded on load, or as an
//! embedded index written by `kb-build`.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::Backend;
use crate::model::{NewsInstance, TopicLabel};
use crate::retrieval::{ingest_reader, EvidenceItem, KnowledgeBase, RetrievalError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("line {line}: unknown label `{label}`")]
    UnknownLabel { line: usize, label: String },
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
    #[error("bad split manifest: {0}")]
    Split(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>, DataError> {
    std::fs::File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DataError::FileNotFound(path.display().to_string()),
        _ => DataError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        },
    })
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Parses dataset records, rejecting labels outside the taxonomy.
pub fn parse_instances(reader: impl BufRead) -> Result<Vec<NewsInstance>, DataError> {
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DataError::Schema {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| DataError::Schema {
            line: line_no,
            reason: e.to_string(),
        })?;
        if let Some(label) = value.get("label").and_then(|l| l.as_str()) {
            if label.parse::<TopicLabel>().is_err() {
                return Err(DataError::UnknownLabel {
                    line: line_no,
                    label: label.to_string(),
                });
            }
        }
        let instance: NewsInstance = serde_json::from_value(value).map_err(|e| DataError::Schema {
            line: line_no,
            reason: e.to_string(),
        })?;
        instance.validate().map_err(|e| DataError::Schema {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !ids.insert(instance.id.clone()) {
            return Err(DataError::DuplicateId(instance.id));
        }
        out.push(instance);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Split {
    #[default]
    All,
    Train,
    Test,
}

/// Disjoint train and test id lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// Seeded shuffle, then the first `round(train_fraction · n)` ids train.
    pub fn random(ids: &[String], train_fraction: f64, seed: u64) -> Self {
        let mut ids = ids.to_vec();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (train_fraction * ids.len() as f64).round() as usize;
        let test = ids.split_off(n_train.min(ids.len()));
        Self { train: ids, test }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let train: BTreeSet<&String> = self.train.iter().collect();
        if train.len() != self.train.len() {
            return Err(DataError::Split("duplicate id in train".into()));
        }
        let test: BTreeSet<&String> = self.test.iter().collect();
        if test.len() != self.test.len() {
            return Err(DataError::Split("duplicate id in test".into()));
        }
        if let Some(id) = train.intersection(&test).next() {
            return Err(DataError::Split(format!("`{id}` is in both train and test")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let m: Self = serde_json::from_reader(open(path)?).map_err(|e| DataError::Split(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    /// Instances of `split`, in file order. Ids listed in the manifest but
    /// missing from the dataset are an error.
    pub fn select(&self, instances: Vec<NewsInstance>, split: Split) -> Result<Vec<NewsInstance>, DataError> {
        let wanted: BTreeSet<&String> = match split {
            Split::All => return Ok(instances),
            Split::Train => self.train.iter().collect(),
            Split::Test => self.test.iter().collect(),
        };
        let present: BTreeSet<&String> = instances.iter().map(|i| &i.id).collect();
        if let Some(missing) = wanted.iter().find(|id| !present.contains(**id)) {
            return Err(DataError::Split(format!("manifest id `{missing}` not in dataset")));
        }
        Ok(instances.into_iter().filter(|i| wanted.contains(&i.id)).collect())
    }
}

/// Loads a dataset file and applies the split manifest if one is given.
pub fn load_dataset(path: &Path, split: Split, manifest: Option<&SplitManifest>) -> Result<Vec<NewsInstance>, DataError> {
    let instances = parse_instances(open(path)?)?;
    match (split, manifest) {
        (Split::All, _) => Ok(instances),
        (_, Some(m)) => m.select(instances, split),
        (_, None) => Err(DataError::Split("a train/test split needs a manifest".into())),
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<(), DataError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(|e| io_err(path, e))?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub const KB_INDEX_FORMAT: &str = "multipress-kb-index";
pub const KB_INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct KbIndexHeader {
    format: String,
    version: u32,
    dim: usize,
}

/// Writes an embedded KB index: a header line, then one item per line.
pub fn write_kb_index(path: &Path, kb: &KnowledgeBase) -> Result<(), DataError> {
    let mut out = Vec::new();
    let header = KbIndexHeader {
        format: KB_INDEX_FORMAT.into(),
        version: KB_INDEX_VERSION,
        dim: kb.dim(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| io_err(path, e))?;
    out.push(b'\n');
    for item in kb.items() {
        serde_json::to_writer(&mut out, item).map_err(|e| io_err(path, e))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&out).map_err(|e| io_err(path, e))
}

/// Loads a KB from either an embedded index or raw records (embedded with
/// `backend`). Returns the KB and the number of skipped raw lines.
pub fn load_kb(path: &Path, backend: &dyn Backend) -> Result<(KnowledgeBase, usize), DataError> {
    let mut reader = open(path)?;
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| io_err(path, e))?;
    if let Ok(h) = serde_json::from_str::<KbIndexHeader>(&first) {
        if h.format != KB_INDEX_FORMAT || h.version != KB_INDEX_VERSION {
            return Err(DataError::Schema {
                line: 1,
                reason: format!("unsupported KB index {} v{}", h.format, h.version),
            });
        }
        if h.dim != backend.embed_dim() {
            return Err(DataError::Schema {
                line: 1,
                reason: format!("index dimension {} does not match backend dimension {}", h.dim, backend.embed_dim()),
            });
        }
        let mut items = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let item: EvidenceItem = serde_json::from_str(&line).map_err(|e| DataError::Schema {
                line: idx + 2,
                reason: e.to_string(),
            })?;
            items.push(item);
        }
        return Ok((KnowledgeBase::build(items)?, 0));
    }
    let report = ingest_reader(first.as_bytes().chain(reader), backend)?;
    let skipped = report.malformed.len();
    Ok((KnowledgeBase::build(report.items)?, skipped))
}
