//! Evidence store: import, filtered top-k retrieval, and snapshot persistence.
//!
//! Run: `cargo run -p semgate --example evidence_store`

use std::sync::Arc;

use semgate::embedding::OfflineEmbedder;
use semgate::fixtures;
use semgate::store::{EntryFilter, EvidenceStore, Label};
use semgate::vocab::RedFlagVocabulary;

fn main() {
    let embedder = Arc::new(OfflineEmbedder::default());
    let store = fixtures::seeded_store(embedder.clone()).expect("fixtures load");
    println!("{} corpus entries, {} policies", store.len(), store.policies().len());

    let query = "Your account is locked, verify your details at this link";
    let scams_only = EntryFilter { label: Some(Label::Scam), tag: None };
    for hit in store.retrieve_top_k(query, 3, Some(&scams_only)).expect("retrieval") {
        let tags: Vec<&str> = hit.entry.red_flags.iter().map(|f| f.as_str()).collect();
        println!("  [{}] {} {:.3} {}", hit.rank, hit.entry.entry_id, hit.similarity, tags.join(","));
    }

    let dir = std::env::temp_dir().join(format!("semgate-example-{}", std::process::id()));
    store.save(&dir).expect("save");
    let reloaded = EvidenceStore::load(&dir, embedder, RedFlagVocabulary::bundled()).expect("load");
    println!("reloaded {} entries from {}", reloaded.len(), dir.display());
    let _ = std::fs::remove_dir_all(&dir);
}
