//! FAR/FRR threshold sweep over the bundled QA records.
//!
//! Run: `cargo run -p semgate --example eval_sweep`

use std::sync::Arc;

use semgate::embedding::OfflineEmbedder;
use semgate::eval::{run_far_frr_sweep, OverrideGate, SweepConfig};
use semgate::fixtures;
use semgate::llm::{LlmGateway, ScriptedLlm};

fn main() {
    let judge = LlmGateway::new(Arc::new(ScriptedLlm::new()));
    for gate in [OverrideGate::default(), OverrideGate::Tracking] {
        let config = SweepConfig { override_gate: gate, ..SweepConfig::default() };
        let report = run_far_frr_sweep(&fixtures::qa_records(), &config, &judge, &OfflineEmbedder::default())
            .expect("sweep");
        println!("override gate {gate:?}");
        print!("{}", report.to_csv());
    }
}
