//! Cosine similarity between answers with the offline hashing embedder.
//!
//! Run: `cargo run -p semgate --example embedding`

use semgate::embedding::{text_similarity, Embedder, OfflineEmbedder};

fn main() {
    let embedder = OfflineEmbedder::default();
    println!("embedder: {}", embedder.id());
    let reference = "a beagle named Biscuit";
    for answer in ["a beagle named Biscuit", "Biscuit, my beagle", "the beagle was called Biscuit", "a cat named Tom"] {
        let sim = text_similarity(&embedder, reference, answer).expect("same dimension");
        println!("  {sim:.3}  {answer:?}");
    }
}
