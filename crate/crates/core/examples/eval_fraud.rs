//! False positive and false negative rates with and without retrieval.
//!
//! Run: `cargo run -p semgate --example eval_fraud`

use std::sync::Arc;

use semgate::embedding::OfflineEmbedder;
use semgate::eval::run_fraud_eval;
use semgate::fixtures;
use semgate::fraud::{FraudPipeline, FraudSettings};
use semgate::llm::{LlmGateway, ScriptedLlm};

fn main() {
    let store = fixtures::seeded_store(Arc::new(OfflineEmbedder::default())).expect("fixtures load");
    let pipeline = Arc::new(
        FraudPipeline::new(LlmGateway::new(Arc::new(ScriptedLlm::new())), Arc::new(store), FraudSettings::default())
            .expect("valid settings"),
    );
    let report = run_fraud_eval(&fixtures::messages(), &pipeline).expect("evaluation");
    print!("{}", report.to_table());
}
