//! Structured calls through the gateway: question generation and answer judging.
//!
//! Uses the deterministic scripted provider. Point `SEMGATE_LLM_ENDPOINT` at an
//! OpenAI-compatible server and use `ApiConfig::llm_provider(false)` for a live model.
//!
//! Run: `cargo run -p semgate --example llm_gateway`

use std::sync::Arc;

use semgate::fixtures;
use semgate::llm::{LlmGateway, ScriptedLlm};
use semgate::segment::segment_document;

fn main() {
    let gateway = LlmGateway::new(Arc::new(ScriptedLlm::new()));
    let doc = &fixtures::documents()[0];
    let segment = &segment_document(doc, 4).expect("segments")[1];
    let questions = gateway.generate_questions(segment, 2, &[]).expect("generation");
    for q in &questions {
        println!("Q: {}\n   reference: {}", q.question, q.reference_answer);
    }
    let q = &questions[0];
    for answer in [q.reference_answer.to_uppercase(), "no idea".to_string()] {
        let verdict = gateway.judge_answer(&q.question, &q.reference_answer, &answer).expect("judge");
        println!("judge({answer:?}) = {} ({})", verdict.accept, verdict.rationale);
    }
}
