//! Bundled datasets for hermetic runs, examples, and the `--mock` CLI.

use std::sync::Arc;

use crate::embedding::Embedder;
use crate::eval::{load_labeled_messages, load_qa_records, LabeledMessage, QaRecord};
use crate::segment::UserDocument;
use crate::store::{parse_jsonl, EvidenceStore, ImportOptions, StoreError};
use crate::vocab::RedFlagVocabulary;

pub const QA_RECORDS: &str = include_str!("../fixtures/qa_records.jsonl");
pub const MESSAGES: &str = include_str!("../fixtures/messages.jsonl");
pub const SCAM_CORPUS: &str = include_str!("../fixtures/scam_corpus.jsonl");
pub const POLICIES: &str = include_str!("../fixtures/policies.jsonl");
pub const DOCUMENTS: &str = include_str!("../fixtures/documents.jsonl");

/// The 50-record QA fixture.
pub fn qa_records() -> Vec<QaRecord> {
    load_qa_records(QA_RECORDS.as_bytes()).expect("bundled QA fixture is valid")
}

/// The 80-message labelled fixture (40 scam, 40 legitimate).
pub fn messages() -> Vec<LabeledMessage> {
    load_labeled_messages(MESSAGES.as_bytes()).expect("bundled message fixture is valid")
}

/// Three personal documents, one per user.
pub fn documents() -> Vec<UserDocument> {
    parse_jsonl::<UserDocument>(DOCUMENTS.as_bytes())
        .expect("bundled documents are valid")
        .into_iter()
        .map(|(_, d)| d)
        .collect()
}

/// A store holding the bundled corpus, policies, and documents.
pub fn seeded_store(embedder: Arc<dyn Embedder>) -> Result<EvidenceStore, StoreError> {
    let store = EvidenceStore::new(embedder, RedFlagVocabulary::bundled());
    seed(&store)?;
    Ok(store)
}

/// Load the bundled corpus, policies, and documents into `store`.
pub fn seed(store: &EvidenceStore) -> Result<(), StoreError> {
    store.import_jsonl(SCAM_CORPUS.as_bytes(), ImportOptions::default())?;
    store.import_policies_jsonl(POLICIES.as_bytes())?;
    for doc in documents() {
        store.put_document(doc)?;
    }
    Ok(())
}
