//! Positional-bias analysis of unsegmented question generation.
//!
//! Run: `cargo run -p semgate --example eval_bias`

use std::sync::Arc;

use semgate::embedding::OfflineEmbedder;
use semgate::eval::run_bias_analysis;
use semgate::fixtures;
use semgate::llm::{GenerationBias, LlmGateway, ScriptedLlm};

fn main() {
    for bias in [GenerationBias::HeadTail, GenerationBias::Spread] {
        let generator = LlmGateway::new(Arc::new(ScriptedLlm::with_bias(bias)));
        let dist = run_bias_analysis(&fixtures::documents(), 20, 4, &generator, &OfflineEmbedder::default())
            .expect("bias analysis");
        let shares: Vec<String> = dist.segment_percentages.iter().map(|p| format!("{p:.1}%")).collect();
        let (edges, middle) = dist.edge_and_middle_share();
        println!("{bias:?}: [{}] first+last {edges:.1}% middle {middle:.1}%", shares.join(", "));
    }
}
