//! Evidence store: labelled scam corpus, policy documents, user documents,
//! and an exact top-k cosine index over the corpus.
//!
//! # On-disk layout
//!
//! ```text
//! <dir>/corpus.jsonl        one CorpusRecord per line, sorted by entry_id
//! <dir>/policies.jsonl      one PolicyRecord per line
//! <dir>/documents.jsonl     one UserDocument per line
//! <dir>/embeddings.snapshot checksummed vectors for corpus and policies
//! ```
//!
//! The snapshot starts with a header of `key=value` lines (embedder id,
//! dimension, SHA-256 of each JSONL file and of the snapshot body), then a
//! `---` line, then one `E` or `P` record per vector:
//! `<kind>\t<json id>\t<base64 of little-endian f64s>`. Vectors round-trip
//! bit for bit.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use base64::Engine as _;
use chrono::{DateTime, Duration as ChronoDuration, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbedError, Embedder, EmbeddingVector};
use crate::segment::UserDocument;
use crate::vocab::{RedFlag, RedFlagVocabulary, VocabularyError};

pub use crate::llm::VerdictLabel as Label;

const SNAPSHOT_MAGIC: &str = "SEMGATE-SNAPSHOT 1";
const CORPUS_FILE: &str = "corpus.jsonl";
const POLICIES_FILE: &str = "policies.jsonl";
const DOCUMENTS_FILE: &str = "documents.jsonl";
const SNAPSHOT_FILE: &str = "embeddings.snapshot";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("unknown red-flag tag: {0}")]
    UnknownRedFlagTag(String),

    #[error("invalid entry: {0}")]
    InvalidEntry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("model-labelled entry {0} rejected; import with model labels allowed to accept it")]
    ModelLabelRejected(String),

    #[error("storage failure: {0}")]
    StorageFailure(String),

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("snapshot was built with embedder {found}, store uses {expected}")]
    EmbedderMismatch { expected: String, found: String },

    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl From<VocabularyError> for StoreError {
    fn from(e: VocabularyError) -> Self {
        match e {
            VocabularyError::UnknownTag(tag) => StoreError::UnknownRedFlagTag(tag),
            VocabularyError::Invalid(msg) => StoreError::InvalidArgument(msg),
        }
    }
}

fn io_err(context: &str, e: std::io::Error) -> StoreError {
    StoreError::StorageFailure(format!("{context}: {e}"))
}

/// Who assigned an entry's label and tags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelProvenance {
    #[default]
    Human,
    Model,
}

/// A corpus entry as written in JSONL files and import batches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub entry_id: String,
    pub text: String,
    pub label: Label,
    #[serde(default)]
    pub red_flags: Vec<String>,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub labeled_by: LabelProvenance,
}

/// A stored corpus entry with its materialised embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ScamCorpusEntry {
    pub entry_id: String,
    pub text: String,
    pub label: Label,
    pub red_flags: BTreeSet<RedFlag>,
    pub source: String,
    pub added_at: DateTime<Utc>,
    pub labeled_by: LabelProvenance,
    pub embedding: EmbeddingVector,
}

impl ScamCorpusEntry {
    pub fn record(&self) -> CorpusRecord {
        CorpusRecord {
            entry_id: self.entry_id.clone(),
            text: self.text.clone(),
            label: self.label,
            red_flags: self.red_flags.iter().map(|f| f.to_string()).collect(),
            source: self.source.clone(),
            added_at: Some(self.added_at),
            labeled_by: self.labeled_by,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub policy_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDocument {
    pub policy_id: String,
    pub title: String,
    pub text: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone)]
pub struct RetrievalHit {
    pub entry: Arc<ScamCorpusEntry>,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
}

/// Restricts retrieval and listing to matching entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntryFilter {
    pub label: Option<Label>,
    pub tag: Option<String>,
}

impl EntryFilter {
    pub fn matches(&self, entry: &ScamCorpusEntry) -> bool {
        self.label.is_none_or(|l| entry.label == l)
            && self
                .tag
                .as_deref()
                .is_none_or(|t| entry.red_flags.iter().any(|f| f.as_str() == t))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ImportOptions {
    /// Accept entries whose labels were assigned by a model rather than a
    /// human reviewer.
    pub accept_model_labels: bool,
}

#[derive(Default)]
struct StoreState {
    entries: BTreeMap<String, Arc<ScamCorpusEntry>>,
    policies: BTreeMap<String, Arc<PolicyDocument>>,
    documents: BTreeMap<String, UserDocument>,
}

/// Orders by similarity descending, then entry id ascending.
pub fn hit_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

pub struct EvidenceStore {
    embedder: Arc<dyn Embedder>,
    vocabulary: RedFlagVocabulary,
    state: RwLock<StoreState>,
}

impl std::fmt::Debug for EvidenceStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let state = self.state.read();
        f.debug_struct("EvidenceStore")
            .field("embedder", &self.embedder.id())
            .field("entries", &state.entries.len())
            .field("policies", &state.policies.len())
            .finish()
    }
}

impl EvidenceStore {
    pub fn new(embedder: Arc<dyn Embedder>, vocabulary: RedFlagVocabulary) -> Self {
        Self {
            embedder,
            vocabulary,
            state: RwLock::new(StoreState::default()),
        }
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn vocabulary(&self) -> &RedFlagVocabulary {
        &self.vocabulary
    }

    pub fn len(&self) -> usize {
        self.state.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, entry_id: &str) -> Option<Arc<ScamCorpusEntry>> {
        self.state.read().entries.get(entry_id).cloned()
    }

    fn validate(&self, record: &CorpusRecord) -> Result<BTreeSet<RedFlag>, StoreError> {
        if record.entry_id.trim().is_empty() {
            return Err(StoreError::InvalidEntry("entry_id is empty".into()));
        }
        if record.entry_id.chars().any(char::is_whitespace) {
            return Err(StoreError::InvalidEntry(format!("entry_id {:?} contains whitespace", record.entry_id)));
        }
        if record.text.trim().is_empty() {
            return Err(StoreError::InvalidEntry(format!("entry {} has empty text", record.entry_id)));
        }
        Ok(self.vocabulary.parse_all(&record.red_flags)?)
    }

    fn materialise(
        &self,
        record: CorpusRecord,
        red_flags: BTreeSet<RedFlag>,
        embedding: EmbeddingVector,
        added_at: DateTime<Utc>,
    ) -> ScamCorpusEntry {
        ScamCorpusEntry {
            entry_id: record.entry_id,
            text: record.text,
            label: record.label,
            red_flags,
            source: record.source,
            added_at,
            labeled_by: record.labeled_by,
            embedding,
        }
    }

    fn check_dimension(&self, embedding: &EmbeddingVector) -> Result<(), StoreError> {
        let existing = {
            let state = self.state.read();
            state.entries.values().next().map(|e| e.embedding.dimension())
        };
        match existing {
            Some(d) if d != embedding.dimension() => Err(EmbedError::DimensionMismatch {
                expected: d,
                actual: embedding.dimension(),
            }
            .into()),
            _ => Ok(()),
        }
    }

    /// Insert or overwrite an entry. It is visible to the next retrieval.
    pub fn upsert_entry(&self, record: CorpusRecord) -> Result<Arc<ScamCorpusEntry>, StoreError> {
        let red_flags = self.validate(&record)?;
        let embedding = self.embedder.embed(&record.text)?;
        self.check_dimension(&embedding)?;
        let mut state = self.state.write();
        let mut added_at = Utc::now();
        if let Some(previous) = state.entries.get(&record.entry_id) {
            if added_at <= previous.added_at {
                added_at = previous.added_at + ChronoDuration::microseconds(1);
            }
        }
        let entry = Arc::new(self.materialise(record, red_flags, embedding, added_at));
        state.entries.insert(entry.entry_id.clone(), entry.clone());
        Ok(entry)
    }

    /// Validate a whole JSONL batch, then insert it. Nothing is inserted if
    /// any line is invalid.
    pub fn import_jsonl(&self, reader: impl BufRead, options: ImportOptions) -> Result<Vec<String>, StoreError> {
        let records = parse_jsonl::<CorpusRecord>(reader)?;
        let mut prepared = Vec::with_capacity(records.len());
        for (line, record) in records {
            let at_line = |e: StoreError| StoreError::Line {
                line,
                message: e.to_string(),
            };
            if record.labeled_by == LabelProvenance::Model && !options.accept_model_labels {
                return Err(at_line(StoreError::ModelLabelRejected(record.entry_id)));
            }
            let flags = self.validate(&record).map_err(at_line)?;
            let embedding = self.embedder.embed(&record.text)?;
            prepared.push((record, flags, embedding));
        }
        if let Some((_, _, first)) = prepared.first() {
            self.check_dimension(first)?;
        }
        let mut state = self.state.write();
        let now = Utc::now();
        let mut ids = Vec::with_capacity(prepared.len());
        for (record, flags, embedding) in prepared {
            let added_at = record.added_at.unwrap_or(now);
            let entry = Arc::new(self.materialise(record, flags, embedding, added_at));
            ids.push(entry.entry_id.clone());
            state.entries.insert(entry.entry_id.clone(), entry);
        }
        Ok(ids)
    }

    /// Entries passing `filter`, by entry id, with the unpaged total.
    pub fn list(&self, filter: &EntryFilter, offset: usize, limit: usize) -> (Vec<Arc<ScamCorpusEntry>>, usize) {
        let state = self.state.read();
        let matching: Vec<&Arc<ScamCorpusEntry>> =
            state.entries.values().filter(|e| filter.matches(e)).collect();
        let total = matching.len();
        (
            matching.into_iter().skip(offset).take(limit).cloned().collect(),
            total,
        )
    }

    /// Exact top-k by cosine similarity to `query_text`.
    pub fn retrieve_top_k(
        &self,
        query_text: &str,
        k: usize,
        filter: Option<&EntryFilter>,
    ) -> Result<Vec<RetrievalHit>, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidArgument("k must be at least 1".into()));
        }
        let query = self.embedder.embed(query_text)?;
        self.retrieve_by_vector(&query, k, filter)
    }

    pub fn retrieve_by_vector(
        &self,
        query: &EmbeddingVector,
        k: usize,
        filter: Option<&EntryFilter>,
    ) -> Result<Vec<RetrievalHit>, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidArgument("k must be at least 1".into()));
        }
        let state = self.state.read();
        let mut scored = Vec::with_capacity(state.entries.len());
        for entry in state.entries.values() {
            if filter.is_some_and(|f| !f.matches(entry)) {
                continue;
            }
            scored.push((entry.clone(), cosine_similarity(query, &entry.embedding)?));
        }
        drop(state);
        scored.sort_by(|a, b| hit_order((&a.0.entry_id, a.1), (&b.0.entry_id, b.1)));
        Ok(scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (entry, similarity))| RetrievalHit {
                entry,
                similarity,
                rank: i + 1,
            })
            .collect())
    }

    pub fn upsert_policy(&self, record: PolicyRecord) -> Result<Arc<PolicyDocument>, StoreError> {
        if record.policy_id.trim().is_empty() || record.text.trim().is_empty() {
            return Err(StoreError::InvalidEntry("policy id and text must be non-empty".into()));
        }
        let embedding = self.embedder.embed(&record.text)?;
        let policy = Arc::new(PolicyDocument {
            policy_id: record.policy_id,
            title: record.title,
            text: record.text,
            embedding,
        });
        self.state
            .write()
            .policies
            .insert(policy.policy_id.clone(), policy.clone());
        Ok(policy)
    }

    pub fn import_policies_jsonl(&self, reader: impl BufRead) -> Result<usize, StoreError> {
        let records = parse_jsonl::<PolicyRecord>(reader)?;
        let n = records.len();
        for (line, record) in records {
            self.upsert_policy(record).map_err(|e| StoreError::Line {
                line,
                message: e.to_string(),
            })?;
        }
        Ok(n)
    }

    pub fn policies(&self) -> Vec<Arc<PolicyDocument>> {
        self.state.read().policies.values().cloned().collect()
    }

    /// The `k` policies most similar to `query_text`.
    pub fn retrieve_policies(&self, query_text: &str, k: usize) -> Result<Vec<(Arc<PolicyDocument>, f64)>, StoreError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let query = self.embedder.embed(query_text)?;
        let state = self.state.read();
        let mut scored = Vec::with_capacity(state.policies.len());
        for policy in state.policies.values() {
            scored.push((policy.clone(), cosine_similarity(&query, &policy.embedding)?));
        }
        drop(state);
        scored.sort_by(|a, b| hit_order((&a.0.policy_id, a.1), (&b.0.policy_id, b.1)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Store a user's document, replacing any earlier one for that user.
    pub fn put_document(&self, doc: UserDocument) -> Result<(), StoreError> {
        if doc.text.trim().is_empty() {
            return Err(StoreError::InvalidEntry("document text is empty".into()));
        }
        self.state.write().documents.insert(doc.user_id.clone(), doc);
        Ok(())
    }

    pub fn document_for_user(&self, user_id: &str) -> Option<UserDocument> {
        self.state.read().documents.get(user_id).cloned()
    }

    pub fn documents(&self) -> Vec<UserDocument> {
        self.state.read().documents.values().cloned().collect()
    }

    /// Write the store to `dir` (created if missing).
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err("create data dir", e))?;
        let state = self.state.read();
        let corpus = to_jsonl(state.entries.values().map(|e| e.record()))?;
        let policies = to_jsonl(state.policies.values().map(|p| PolicyRecord {
            policy_id: p.policy_id.clone(),
            title: p.title.clone(),
            text: p.text.clone(),
        }))?;
        let documents = to_jsonl(state.documents.values().cloned())?;

        let mut body = String::new();
        for entry in state.entries.values() {
            push_vector(&mut body, 'E', &entry.entry_id, &entry.embedding);
        }
        for policy in state.policies.values() {
            push_vector(&mut body, 'P', &policy.policy_id, &policy.embedding);
        }
        let dimension = state
            .entries
            .values()
            .map(|e| e.embedding.dimension())
            .chain(state.policies.values().map(|p| p.embedding.dimension()))
            .next()
            .or(self.embedder.dimension())
            .unwrap_or(0);
        drop(state);

        let snapshot = format!(
            "{SNAPSHOT_MAGIC}\nembedder={}\ndimension={dimension}\ncorpus_sha256={}\npolicies_sha256={}\ndocuments_sha256={}\nbody_sha256={}\n---\n{body}",
            self.embedder.id(),
            sha256_hex(&corpus),
            sha256_hex(&policies),
            sha256_hex(&documents),
            sha256_hex(&body),
        );
        write_atomic(&dir.join(CORPUS_FILE), &corpus)?;
        write_atomic(&dir.join(POLICIES_FILE), &policies)?;
        write_atomic(&dir.join(DOCUMENTS_FILE), &documents)?;
        write_atomic(&dir.join(SNAPSHOT_FILE), &snapshot)
    }

    /// Load a store saved with [`EvidenceStore::save`].
    pub fn load(dir: &Path, embedder: Arc<dyn Embedder>, vocabulary: RedFlagVocabulary) -> Result<Self, StoreError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name)).map_err(|e| io_err(&format!("read {name}"), e))
        };
        let snapshot = read(SNAPSHOT_FILE)?;
        let corpus = read(CORPUS_FILE)?;
        let policies = read(POLICIES_FILE)?;
        let documents = read(DOCUMENTS_FILE)?;

        let corrupt = |msg: &str| StoreError::CorruptSnapshot(msg.to_string());
        let (header, body) = snapshot
            .split_once("\n---\n")
            .ok_or_else(|| corrupt("missing header terminator"))?;
        let mut lines = header.lines();
        if lines.next() != Some(SNAPSHOT_MAGIC) {
            return Err(corrupt("bad magic line"));
        }
        let fields: BTreeMap<&str, &str> = lines.filter_map(|l| l.split_once('=')).collect();
        let field = |key: &str| fields.get(key).copied().ok_or_else(|| corrupt(&format!("missing {key}")));
        if field("body_sha256")? != sha256_hex(body) {
            return Err(corrupt("body checksum mismatch"));
        }
        for (key, content) in [
            ("corpus_sha256", &corpus),
            ("policies_sha256", &policies),
            ("documents_sha256", &documents),
        ] {
            if field(key)? != sha256_hex(content) {
                return Err(corrupt(&format!("{key} mismatch")));
            }
        }
        let found = field("embedder")?.to_string();
        if found != embedder.id() {
            return Err(StoreError::EmbedderMismatch {
                expected: embedder.id(),
                found,
            });
        }
        let dimension: usize = field("dimension")?.parse().map_err(|_| corrupt("bad dimension"))?;

        let mut entry_vectors = BTreeMap::new();
        let mut policy_vectors = BTreeMap::new();
        for line in body.lines() {
            let (kind, id, vector) = parse_vector_line(line).ok_or_else(|| corrupt("bad vector record"))?;
            if vector.dimension() != dimension {
                return Err(corrupt(&format!("vector {id} has dimension {}", vector.dimension())));
            }
            match kind {
                'E' => entry_vectors.insert(id, vector),
                _ => policy_vectors.insert(id, vector),
            };
        }

        let store = Self::new(embedder, vocabulary);
        {
            let mut state = store.state.write();
            for (line, record) in parse_jsonl::<CorpusRecord>(corpus.as_bytes()).map_err(|e| corrupt(&e.to_string()))? {
                let flags = store
                    .validate(&record)
                    .map_err(|e| corrupt(&format!("corpus line {line}: {e}")))?;
                let embedding = entry_vectors
                    .remove(&record.entry_id)
                    .ok_or_else(|| corrupt(&format!("no vector for entry {}", record.entry_id)))?;
                let added_at = record.added_at.ok_or_else(|| corrupt("entry without added_at"))?;
                let entry = store.materialise(record, flags, embedding, added_at);
                state.entries.insert(entry.entry_id.clone(), Arc::new(entry));
            }
            for (_, record) in parse_jsonl::<PolicyRecord>(policies.as_bytes()).map_err(|e| corrupt(&e.to_string()))? {
                let embedding = policy_vectors
                    .remove(&record.policy_id)
                    .ok_or_else(|| corrupt(&format!("no vector for policy {}", record.policy_id)))?;
                state.policies.insert(
                    record.policy_id.clone(),
                    Arc::new(PolicyDocument {
                        policy_id: record.policy_id,
                        title: record.title,
                        text: record.text,
                        embedding,
                    }),
                );
            }
            for (_, doc) in parse_jsonl::<UserDocument>(documents.as_bytes()).map_err(|e| corrupt(&e.to_string()))? {
                state.documents.insert(doc.user_id.clone(), doc);
            }
            if !entry_vectors.is_empty() || !policy_vectors.is_empty() {
                return Err(corrupt("snapshot has vectors for unknown records"));
            }
        }
        Ok(store)
    }

    /// Load from `dir` if it holds a snapshot, else start empty.
    pub fn open(dir: &Path, embedder: Arc<dyn Embedder>, vocabulary: RedFlagVocabulary) -> Result<Self, StoreError> {
        if dir.join(SNAPSHOT_FILE).exists() {
            Self::load(dir, embedder, vocabulary)
        } else {
            Ok(Self::new(embedder, vocabulary))
        }
    }

    /// Save to `dir` and load a fresh store back from it.
    pub fn snapshot_and_reload(&self, dir: &Path) -> Result<Self, StoreError> {
        self.save(dir)?;
        Self::load(dir, self.embedder.clone(), self.vocabulary.clone())
    }
}

/// Parse JSONL, skipping blank lines; errors carry 1-based line numbers.
pub fn parse_jsonl<T: for<'de> Deserialize<'de>>(reader: impl BufRead) -> Result<Vec<(usize, T)>, StoreError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err("read line", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| StoreError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn to_jsonl<T: Serialize>(items: impl Iterator<Item = T>) -> Result<String, StoreError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item).map_err(|e| StoreError::StorageFailure(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

fn sha256_hex(content: &str) -> String {
    hex::encode(Sha256::digest(content.as_bytes()))
}

fn push_vector(body: &mut String, kind: char, id: &str, vector: &EmbeddingVector) {
    let bytes: Vec<u8> = vector.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    body.push(kind);
    body.push('\t');
    body.push_str(&serde_json::to_string(id).expect("string serialises"));
    body.push('\t');
    body.push_str(&base64::engine::general_purpose::STANDARD.encode(bytes));
    body.push('\n');
}

fn parse_vector_line(line: &str) -> Option<(char, String, EmbeddingVector)> {
    let mut parts = line.split('\t');
    let kind = match parts.next()? {
        "E" => 'E',
        "P" => 'P',
        _ => return None,
    };
    let id: String = serde_json::from_str(parts.next()?).ok()?;
    let bytes = base64::engine::general_purpose::STANDARD.decode(parts.next()?).ok()?;
    if parts.next().is_some() || bytes.len() % 8 != 0 {
        return None;
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Some((kind, id, EmbeddingVector::new(values)))
}

fn write_atomic(path: &Path, content: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, content).map_err(|e| io_err(&format!("write {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(&format!("rename {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::OfflineEmbedder;

    fn store() -> EvidenceStore {
        EvidenceStore::new(Arc::new(OfflineEmbedder::default()), RedFlagVocabulary::bundled())
    }

    fn record(id: &str, text: &str, label: Label, flags: &[&str]) -> CorpusRecord {
        CorpusRecord {
            entry_id: id.into(),
            text: text.into(),
            label,
            red_flags: flags.iter().map(|s| s.to_string()).collect(),
            source: "test".into(),
            added_at: None,
            labeled_by: LabelProvenance::Human,
        }
    }

    #[test]
    fn upsert_then_retrieve() {
        let s = store();
        s.upsert_entry(record(
            "s1",
            "URGENT: verify at http://bank-login.example now",
            Label::Scam,
            &["urgent_language", "fake_link"],
        ))
        .unwrap();
        let hits = s
            .retrieve_top_k("URGENT: verify at http://bank-login.example now", 1, None)
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].entry.entry_id, "s1");
        assert_eq!(hits[0].rank, 1);
        assert!((hits[0].similarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_tag_is_rejected() {
        let err = store()
            .upsert_entry(record("s1", "hello", Label::Scam, &["scary_font"]))
            .unwrap_err();
        assert_eq!(err, StoreError::UnknownRedFlagTag("scary_font".into()));
    }

    #[test]
    fn duplicate_id_overwrites_with_newer_timestamp() {
        let s = store();
        let first = s.upsert_entry(record("s1", "one", Label::Scam, &[])).unwrap();
        let second = s.upsert_entry(record("s1", "two", Label::Legitimate, &[])).unwrap();
        assert_eq!(s.len(), 1);
        assert!(second.added_at > first.added_at);
        assert_eq!(s.get("s1").unwrap().text, "two");
    }

    #[test]
    fn small_store_returns_fewer_hits() {
        let s = store();
        for i in 0..3 {
            s.upsert_entry(record(&format!("e{i}"), &format!("text number {i}"), Label::Scam, &[]))
                .unwrap();
        }
        assert_eq!(s.retrieve_top_k("text", 5, None).unwrap().len(), 3);
        assert!(store().retrieve_top_k("anything", 3, None).unwrap().is_empty());
        assert!(s.retrieve_top_k("text", 0, None).is_err());
    }

    #[test]
    fn ties_break_by_entry_id() {
        let s = store();
        for id in ["c", "a", "b"] {
            s.upsert_entry(record(id, "identical text", Label::Scam, &[])).unwrap();
        }
        let ids: Vec<String> = s
            .retrieve_top_k("identical text", 3, None)
            .unwrap()
            .into_iter()
            .map(|h| h.entry.entry_id.clone())
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn filter_by_label_and_tag() {
        let s = store();
        s.upsert_entry(record("s", "pay now", Label::Scam, &["payment_request"])).unwrap();
        s.upsert_entry(record("l", "pay invoice", Label::Legitimate, &[])).unwrap();
        let only_legit = EntryFilter {
            label: Some(Label::Legitimate),
            tag: None,
        };
        let hits = s.retrieve_top_k("pay", 5, Some(&only_legit)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].entry.entry_id, "l");
        let (listed, total) = s.list(
            &EntryFilter {
                label: None,
                tag: Some("payment_request".into()),
            },
            0,
            10,
        );
        assert_eq!(total, 1);
        assert_eq!(listed[0].entry_id, "s");
    }

    #[test]
    fn import_reports_line_numbers_and_is_atomic() {
        let s = store();
        let jsonl = "{\"entry_id\":\"a\",\"text\":\"x\",\"label\":\"scam\"}\n\n{\"entry_id\":\"b\",\"text\":\"y\",\"label\":\"scam\",\"red_flags\":[\"nope\"]}\n";
        match s.import_jsonl(jsonl.as_bytes(), ImportOptions::default()) {
            Err(StoreError::Line { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(s.is_empty());
    }

    #[test]
    fn model_labels_need_opt_in() {
        let s = store();
        let jsonl = r#"{"entry_id":"a","text":"x","label":"scam","labeled_by":"model"}"#;
        assert!(s.import_jsonl(jsonl.as_bytes(), ImportOptions::default()).is_err());
        let ids = s
            .import_jsonl(jsonl.as_bytes(), ImportOptions { accept_model_labels: true })
            .unwrap();
        assert_eq!(ids, ["a"]);
    }

    #[test]
    fn empty_store_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let reloaded = store().snapshot_and_reload(dir.path()).unwrap();
        assert!(reloaded.is_empty());
    }

    #[test]
    fn truncated_snapshot_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let s = store();
        s.upsert_entry(record("s1", "some scam text", Label::Scam, &[])).unwrap();
        s.save(dir.path()).unwrap();
        let path = dir.path().join(SNAPSHOT_FILE);
        let content = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &content[..content.len() - 20]).unwrap();
        let err = EvidenceStore::load(
            dir.path(),
            Arc::new(OfflineEmbedder::default()),
            RedFlagVocabulary::bundled(),
        )
        .unwrap_err();
        assert!(matches!(err, StoreError::CorruptSnapshot(_)), "{err:?}");
    }

    #[test]
    fn embedder_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        store().save(dir.path()).unwrap();
        let err = EvidenceStore::load(
            dir.path(),
            Arc::new(OfflineEmbedder::new(64).unwrap()),
            RedFlagVocabulary::bundled(),
        )
        .unwrap_err();
        assert!(matches!(err, StoreError::EmbedderMismatch { .. }));
    }

    #[test]
    fn documents_and_policies_persist() {
        let dir = tempfile::tempdir().unwrap();
        let s = store();
        s.put_document(UserDocument::new("d1", "maria", "born in Lyon")).unwrap();
        s.upsert_policy(PolicyRecord {
            policy_id: "p1".into(),
            title: "No PIN requests".into(),
            text: "Staff never ask customers for their PIN.".into(),
        })
        .unwrap();
        let r = s.snapshot_and_reload(dir.path()).unwrap();
        assert_eq!(r.document_for_user("maria").unwrap().text, "born in Lyon");
        let pol = r.retrieve_policies("asked for my PIN", 1).unwrap();
        assert_eq!(pol[0].0.policy_id, "p1");
        assert_eq!(pol[0].0.embedding, s.policies()[0].embedding);
    }
}
