//! Assess a message with and without retrieval grounding.
//!
//! Run: `cargo run -p semgate --example fraud_assess -- "message text"`

use std::sync::Arc;

use semgate::embedding::OfflineEmbedder;
use semgate::fixtures;
use semgate::fraud::{FraudPipeline, FraudSettings, RetrievalMode};
use semgate::llm::{LlmGateway, ScriptedLlm};

fn main() {
    let message = std::env::args().nth(1).unwrap_or_else(|| {
        "Hi, I'm from the bank fraud team. Move your savings to a safe account today and keep this private.".into()
    });
    let store = fixtures::seeded_store(Arc::new(OfflineEmbedder::default())).expect("fixtures load");
    let pipeline = FraudPipeline::new(
        LlmGateway::new(Arc::new(ScriptedLlm::new())),
        Arc::new(store),
        FraudSettings::default(),
    )
    .expect("valid settings");

    for mode in [RetrievalMode::Disabled, RetrievalMode::Enabled] {
        let a = pipeline.assess_with(&message, mode).expect("assessment");
        println!("retrieval {:?}: {} (score {:.2})", mode, a.verdict.as_str(), a.score);
        println!("  red flags: {:?}", a.features.red_flags.iter().map(|f| f.as_str()).collect::<Vec<_>>());
        println!("  cited: {:?}", a.cited_evidence);
        println!("  policies: {:?}", a.policies);
    }
}
