//! Exact nearest-neighbour search over training exemplars, partitioned by
//! label, so a query can ask for the `k` most similar TRUE and FALSE
//! examples independently.
//!
//! # Index file layout
//!
//! All integers are little-endian.
//!
//! | bytes            | content                                       |
//! |------------------|-----------------------------------------------|
//! | 4                | magic `LPIX`                                  |
//! | 4 (u32)          | format version, currently 1                   |
//! | 4 (u32)          | dim                                           |
//! | 4 (u32)          | number of FALSE entries                       |
//! | 4 (u32)          | number of TRUE entries                        |
//! | 4 (u32)          | fingerprint length `f`                        |
//! | `f`              | fingerprint, UTF-8 hex                        |
//! | per entry        | label u8 (0 FALSE, 1 TRUE), id length u32, id UTF-8, `dim` × f64 |
//!
//! FALSE entries precede TRUE entries; within a partition entries keep
//! dataset order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Instance};
use crate::embedding::{self, EmbeddingError, EmbeddingProvider, EmbeddingVector, KeyMode};
use crate::label::Label;

const MAGIC: &[u8; 4] = b"LPIX";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding training instance {id} failed: {source}")]
    Embed {
        id: String,
        #[source]
        source: EmbeddingError,
    },
    #[error("training instance {0} has no label")]
    Unlabeled(String),
    #[error("empty {0} partition")]
    EmptyPartition(Label),
    #[error("duplicate index entry {0}")]
    DuplicateId(String),
    #[error("dimension mismatch: index has {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{label} partition has {available} eligible candidates, {needed} requested")]
    InsufficientCandidates {
        label: Label,
        needed: usize,
        available: usize,
    },
    #[error("per_class_k must be at least 1")]
    InvalidK,
    #[error("index was built with fingerprint {found}, active provider is {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("index file is malformed: {0}")]
    Format(String),
    #[error("index io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub label: Label,
    pub vector: EmbeddingVector,
}

/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleIndex {
    dim: usize,
    fingerprint: String,
    false_entries: Vec<IndexEntry>,
    true_entries: Vec<IndexEntry>,
}

impl ExampleIndex {
    pub fn from_entries(
        dim: usize,
        fingerprint: impl Into<String>,
        entries: Vec<IndexEntry>,
    ) -> Result<Self, RetrievalError> {
        let mut seen = HashSet::new();
        let mut false_entries = Vec::new();
        let mut true_entries = Vec::new();
        for entry in entries {
            if entry.vector.dim() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    found: entry.vector.dim(),
                });
            }
            if !seen.insert(entry.id.clone()) {
                return Err(RetrievalError::DuplicateId(entry.id));
            }
            match entry.label {
                Label::False => false_entries.push(entry),
                Label::True => true_entries.push(entry),
            }
        }
        for (label, part) in [(Label::False, &false_entries), (Label::True, &true_entries)] {
            if part.is_empty() {
                return Err(RetrievalError::EmptyPartition(label));
            }
        }
        Ok(Self {
            dim,
            fingerprint: fingerprint.into(),
            false_entries,
            true_entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn partition(&self, label: Label) -> &[IndexEntry] {
        match label {
            Label::False => &self.false_entries,
            Label::True => &self.true_entries,
        }
    }

    pub fn len(&self) -> usize {
        self.false_entries.len() + self.true_entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.false_entries.iter().chain(&self.true_entries)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), RetrievalError> {
        let u32_of = |n: usize| {
            u32::try_from(n).map_err(|_| RetrievalError::Format(format!("{n} does not fit in u32")))
        };
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&u32_of(self.dim)?.to_le_bytes())?;
        w.write_all(&u32_of(self.false_entries.len())?.to_le_bytes())?;
        w.write_all(&u32_of(self.true_entries.len())?.to_le_bytes())?;
        w.write_all(&u32_of(self.fingerprint.len())?.to_le_bytes())?;
        w.write_all(self.fingerprint.as_bytes())?;
        for entry in self.entries() {
            w.write_all(&[u8::from(entry.label.is_true())])?;
            w.write_all(&u32_of(entry.id.len())?.to_le_bytes())?;
            w.write_all(entry.id.as_bytes())?;
            for v in entry.vector.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Load an index and check it was built by the active provider.
    pub fn load(path: impl AsRef<Path>, expected_fingerprint: &str) -> Result<Self, RetrievalError> {
        let bytes = fs::read(path)?;
        let index = Self::read_from(bytes.as_slice())?;
        if index.fingerprint != expected_fingerprint {
            return Err(RetrievalError::FingerprintMismatch {
                expected: expected_fingerprint.to_string(),
                found: index.fingerprint,
            });
        }
        Ok(index)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, RetrievalError> {
        let truncated = |e: io::Error| match e.kind() {
            io::ErrorKind::UnexpectedEof => RetrievalError::Format("unexpected end of file".into()),
            _ => RetrievalError::Io(e),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(RetrievalError::Format("bad magic".into()));
        }
        let read_u32 = |r: &mut R| -> Result<usize, RetrievalError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(truncated)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION as usize {
            return Err(RetrievalError::Format(format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r)?;
        let n_false = read_u32(&mut r)?;
        let n_true = read_u32(&mut r)?;
        let fp_len = read_u32(&mut r)?;
        let mut fp = vec![0u8; fp_len];
        r.read_exact(&mut fp).map_err(truncated)?;
        let fingerprint = String::from_utf8(fp).map_err(|_| RetrievalError::Format("fingerprint is not UTF-8".into()))?;
        let mut entries = Vec::with_capacity(n_false + n_true);
        for n in 0..n_false + n_true {
            let mut label = [0u8; 1];
            r.read_exact(&mut label).map_err(truncated)?;
            let label = match (label[0], n < n_false) {
                (0, true) => Label::False,
                (1, false) => Label::True,
                (other, _) => {
                    return Err(RetrievalError::Format(format!(
                        "entry {n}: label byte {other} out of place"
                    )))
                }
            };
            let id_len = read_u32(&mut r)?;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id).map_err(truncated)?;
            let id = String::from_utf8(id).map_err(|_| RetrievalError::Format(format!("entry {n}: id is not UTF-8")))?;
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(truncated)?;
                values.push(f64::from_le_bytes(b));
            }
            entries.push(IndexEntry {
                id,
                label,
                vector: EmbeddingVector::from_values(values),
            });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(RetrievalError::Format(format!("{} trailing bytes", rest.len())));
        }
        Self::from_entries(dim, fingerprint, entries)
    }
}

pub fn build_index(
    train: &Dataset,
    provider: &dyn EmbeddingProvider,
    key_mode: KeyMode,
) -> Result<ExampleIndex, RetrievalError> {
    let mut entries = Vec::with_capacity(train.len());
    for instance in train.instances() {
        let label = instance
            .label
            .ok_or_else(|| RetrievalError::Unlabeled(instance.id.clone()))?;
        let vector = embed_instance(provider, instance, key_mode).map_err(|source| RetrievalError::Embed {
            id: instance.id.clone(),
            source,
        })?;
        entries.push(IndexEntry {
            id: instance.id.clone(),
            label,
            vector,
        });
    }
    ExampleIndex::from_entries(provider.dim(), embedding::fingerprint(provider, key_mode), entries)
}

pub fn embed_instance(
    provider: &dyn EmbeddingProvider,
    instance: &Instance,
    key_mode: KeyMode,
) -> Result<EmbeddingVector, EmbeddingError> {
    embedding::embed_text(provider, &embedding::build_key(instance, key_mode))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingPolicy {
    /// All FALSE exemplars, then all TRUE exemplars.
    #[default]
    FalseThenTrue,
    /// Least similar first, so the closest exemplar sits next to the test block.
    ByAscendingSimilarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub per_class_k: usize,
    pub exclude_ids: BTreeSet<String>,
    pub ordering_policy: OrderingPolicy,
    /// Labels to retrieve exemplars for.
    pub classes: Vec<Label>,
    /// Also exclude training instances sharing the query's introduction and
    /// question.
    pub exclude_shared_introduction: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            per_class_k: 1,
            exclude_ids: BTreeSet::new(),
            ordering_policy: OrderingPolicy::FalseThenTrue,
            classes: Label::ALL.to_vec(),
            exclude_shared_introduction: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievedExamples {
    pub per_class: BTreeMap<Label, Vec<ScoredExample>>,
}

impl RetrievedExamples {
    pub fn class(&self, label: Label) -> &[ScoredExample] {
        self.per_class.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_empty(&self) -> bool {
        self.per_class.values().all(Vec::is_empty)
    }
}

/// Per requested class, the `per_class_k` entries with the highest cosine
/// similarity to `query`. Ties go to the smaller id. `query_id` and
/// `config.exclude_ids` are never returned.
pub fn retrieve(
    index: &ExampleIndex,
    query: &EmbeddingVector,
    query_id: &str,
    config: &RetrievalConfig,
) -> Result<RetrievedExamples, RetrievalError> {
    if config.per_class_k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if query.dim() != index.dim() {
        return Err(RetrievalError::DimensionMismatch {
            expected: index.dim(),
            found: query.dim(),
        });
    }
    let mut per_class = BTreeMap::new();
    for &label in &config.classes {
        // Index vectors and queries are unit-normalized, so cosine is the dot product.
        let mut scored: Vec<ScoredExample> = index
            .partition(label)
            .iter()
            .filter(|e| e.id != query_id && !config.exclude_ids.contains(&e.id))
            .map(|e| ScoredExample {
                id: e.id.clone(),
                label,
                score: e.vector.dot(query),
            })
            .collect();
        if scored.len() < config.per_class_k {
            return Err(RetrievalError::InsufficientCandidates {
                label,
                needed: config.per_class_k,
                available: scored.len(),
            });
        }
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        scored.truncate(config.per_class_k);
        per_class.insert(label, scored);
    }
    Ok(RetrievedExamples { per_class })
}

pub fn order_examples(retrieved: &RetrievedExamples, policy: OrderingPolicy) -> Vec<ScoredExample> {
    let mut all: Vec<ScoredExample> = retrieved.per_class.values().flatten().cloned().collect();
    match policy {
        OrderingPolicy::FalseThenTrue => {}
        OrderingPolicy::ByAscendingSimilarity => all.sort_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then_with(|| a.label.cmp(&b.label))
                .then_with(|| a.id.cmp(&b.id))
        }),
    }
    all
}

/// Ids of training instances sharing `query`'s normalized introduction and
/// question; feeds `RetrievalConfig::exclude_ids` when
/// `exclude_shared_introduction` is set.
pub fn shared_introduction_ids(train: &Dataset, query: &Instance) -> BTreeSet<String> {
    let key = query.introduction_question_key();
    train
        .instances()
        .iter()
        .filter(|i| i.introduction_question_key() == key)
        .map(|i| i.id.clone())
        .collect()
}
