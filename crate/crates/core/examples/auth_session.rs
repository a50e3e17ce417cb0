//! A full authentication session: 4-of-N pass rule, regeneration, and verdicts.
//!
//! Run: `cargo run -p semgate --example auth_session`

use std::sync::Arc;

use semgate::auth::{AuthEngine, AuthPolicy, Verdict};
use semgate::embedding::OfflineEmbedder;
use semgate::fixtures;
use semgate::llm::{LlmGateway, ScriptedLlm};

fn main() {
    let engine = AuthEngine::new(
        LlmGateway::new(Arc::new(ScriptedLlm::new())),
        Arc::new(OfflineEmbedder::default()),
    );
    let doc = &fixtures::documents()[0];
    let mut session = engine
        .start_session(&doc.user_id, doc, AuthPolicy::default())
        .expect("session starts");
    println!(
        "{} questions per round, {} needed to pass",
        session.questions_per_round, session.policy.passing_requirement
    );

    // Round 1: answer only two correctly.
    // Round 2: answer everything correctly.
    for correct in [2, usize::MAX] {
        let items: Vec<_> = session.items.clone();
        for (i, item) in items.iter().enumerate() {
            let answer = if i < correct { item.reference_answer.clone() } else { "I forget".into() };
            let graded = engine.evaluate_answer(&mut session, &item.item_id, &answer).expect("graded");
            println!(
                "  round {} {}: {:?} (similarity {:.3})",
                session.round_index,
                item.item_id,
                graded.outcome,
                graded.similarity.unwrap_or(0.0)
            );
        }
        let verdict = engine.conclude_round(&mut session).expect("round complete");
        println!("=> {verdict}");
        if verdict != Verdict::NewRoundRequired {
            break;
        }
    }
}
