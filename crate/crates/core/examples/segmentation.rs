//! Split a document into equal word-count segments and spread questions over them.
//!
//! Run: `cargo run -p semgate --example segmentation`

use semgate::fixtures;
use semgate::segment::{balanced_counts, segment_document};

fn main() {
    let doc = &fixtures::documents()[0];
    let segments = segment_document(doc, 4).expect("document has words");
    let per_segment = balanced_counts(6, segments.len());
    println!("{} ({} words) -> {} segments", doc.doc_id, doc.word_count(), segments.len());
    for (segment, questions) in segments.iter().zip(per_segment) {
        let preview: String = segment.text.chars().take(60).collect();
        println!(
            "  segment {}: {:>3} words, {questions} questions  \"{preview}...\"",
            segment.segment_index, segment.word_count
        );
    }
}
