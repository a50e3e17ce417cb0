//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed. Built with `harness = false`.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semgate::api::{router, AppState, LogSink, SharedBuffer};
use semgate::auth::{
    hybrid_pass, AuthEngine, AuthPolicy, AuthSession, Outcome, Verdict,
};
use semgate::config::ApiConfig;
use semgate::embedding::{cosine_similarity, Embedder, OfflineEmbedder, SIMILARITY_EPSILON};
use semgate::eval::{
    reference, run_bias_analysis, run_far_frr_sweep, run_fraud_eval, threshold_grid, OverrideGate,
    SweepConfig, SweepReport, VariantKind,
};
use semgate::fixtures;
use semgate::fraud::{FraudPipeline, FraudSettings, RetrievalMode};
use semgate::llm::{
    Completion, CompletionRequest, ExactMatchJudge, GenerationBias, HostileProvider, LlmGateway,
    LlmProvider, ProviderError, ScriptedLlm, TemplateId, FABRICATED_ID_PREFIX,
};
use semgate::segment::{balanced_counts, segment_text, tokenize, UserDocument};
use semgate::store::{CorpusRecord, EntryFilter, EvidenceStore, Label, LabelProvenance};
use semgate::vocab::RedFlagVocabulary;
use tower::ServiceExt;

use common::{offline, seeded_store, OpaqueAnswers, RejectingJudge};

type Check = fn(&Captured) -> Result<String, String>;

/// Tracing output captured for the whole run.
struct Captured {
    tracing: SharedBuffer,
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let tracing = SharedBuffer::default();
    let writer = tracing.clone();
    tracing_subscriber::fmt()
        .with_writer(move || writer.clone())
        .with_ansi(false)
        .with_max_level(tracing::Level::WARN)
        .init();
    let captured = Captured { tracing };

    let criteria: [(u32, &str, Option<Duration>, Check); 12] = [
        (1, "exact-match boundary", Some(Duration::from_secs(10)), exact_match_boundary),
        (2, "sweep monotonicity", Some(Duration::from_secs(30)), sweep_monotonicity),
        (3, "sweep audit equality", None, sweep_audit),
        (4, "segment balance", Some(Duration::from_secs(5)), segment_balance),
        (5, "state-machine equivalence", Some(Duration::from_secs(5)), state_machine_equivalence),
        (6, "retrieval exactness", Some(Duration::from_secs(5)), retrieval_exactness),
        (7, "fraud metrics shape and direction", Some(Duration::from_secs(20)), fraud_metrics),
        (8, "citation soundness", Some(Duration::from_secs(10)), citation_soundness),
        (9, "grounding freshness", None, grounding_freshness),
        (10, "hybrid override", None, hybrid_override),
        (11, "redaction", None, redaction),
        (12, "bias protocol", None, bias_protocol),
    ];

    let mut failed = 0;
    for (n, name, bound, check) in criteria {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| check(&captured)))
            .unwrap_or_else(|panic| Err(format!("panicked: {}", panic_text(&panic))));
        let elapsed = started.elapsed();
        let result = match (result, bound) {
            (Ok(_), Some(limit)) if elapsed >= limit => {
                Err(format!("took {elapsed:.2?}, limit {limit:.0?}"))
            }
            (r, _) => r,
        };
        let timing = match bound {
            Some(limit) => format!("{elapsed:.2?} < {limit:.0?}"),
            None => format!("{elapsed:.2?}"),
        };
        match result {
            Ok(detail) => println!("criterion {n:>2}: PASS  {name} [{timing}] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2}: FAIL  {name} [{timing}] {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(panic: &Box<dyn std::any::Any + Send>) -> String {
    panic
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn mock_gateway() -> LlmGateway {
    LlmGateway::new(Arc::new(ScriptedLlm::new()))
}

fn default_grid() -> Vec<f64> {
    threshold_grid(0.70, 1.00, 0.05).expect("grid")
}

fn sweep(thresholds: Vec<f64>, gate: OverrideGate, judge: &LlmGateway) -> Result<SweepReport, String> {
    let config = SweepConfig {
        thresholds,
        override_gate: gate,
        ..SweepConfig::default()
    };
    run_far_frr_sweep(&fixtures::qa_records(), &config, judge, &OfflineEmbedder::default()).map_err(|e| e.to_string())
}

// 1. Exact-match judge at θ = θ_hi = 1.0 accepts no incorrect variant.
fn exact_match_boundary(_: &Captured) -> Result<String, String> {
    let records = fixtures::qa_records();
    ensure!(records.len() == 50, "fixture has {} records", records.len());
    let report = sweep(vec![1.0], OverrideGate::Tracking, &LlmGateway::new(Arc::new(ExactMatchJudge)))?;
    ensure!(report.rows.len() == 1, "expected one row");
    let row = &report.rows[0];
    ensure!(row.far == 0.0, "FAR {} at θ=1.0", row.far);
    Ok(format!(
        "FAR={} FRR={:.4} over {} incorrect variants",
        row.far, row.frr, report.header.incorrect_variants
    ))
}

fn monotone(report: &SweepReport) -> Result<(), String> {
    for w in report.rows.windows(2) {
        ensure!(w[1].far <= w[0].far, "FAR rises {} -> {} at θ={}", w[0].far, w[1].far, w[1].threshold);
        ensure!(w[1].frr >= w[0].frr, "FRR falls {} -> {} at θ={}", w[0].frr, w[1].frr, w[1].threshold);
    }
    Ok(())
}

// 2. FAR non-increasing and FRR non-decreasing over the default grid.
fn sweep_monotonicity(_: &Captured) -> Result<String, String> {
    let judge = mock_gateway();
    let tracking = sweep(default_grid(), OverrideGate::Tracking, &judge)?;
    let fixed = sweep(default_grid(), OverrideGate::default(), &judge)?;
    ensure!(tracking.rows.len() == 7, "grid has {} rows", tracking.rows.len());
    monotone(&tracking).map_err(|e| format!("tracking gate: {e}"))?;
    monotone(&fixed).map_err(|e| format!("fixed gate: {e}"))?;
    let render = |r: &SweepReport| {
        r.rows
            .iter()
            .map(|row| format!("{:.2}:{:.3}/{:.3}", row.threshold, row.far, row.frr))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok(format!(
        "tracking FAR/FRR {}; fixed FAR/FRR {}; reference non-exact acceptance {:.1}% false acceptance {:.1}% (report only)",
        render(&tracking),
        render(&fixed),
        reference::NONEXACT_ACCEPTANCE * 100.0,
        reference::FALSE_ACCEPTANCE * 100.0
    ))
}

// 3. Rows equal a from-scratch per-pair recomputation of the hybrid rule.
fn sweep_audit(_: &Captured) -> Result<String, String> {
    let records = fixtures::qa_records();
    let judge = mock_gateway();
    let embedder = OfflineEmbedder::default();
    let mut checked = 0;
    for gate in [OverrideGate::Tracking, OverrideGate::default()] {
        let report = sweep(default_grid(), gate, &judge)?;

        // Oracle inputs: judge verdict and similarity per pair, computed afresh.
        let oracle_judge = mock_gateway();
        let mut pairs = Vec::new();
        for record in &records {
            let reference_vec = embedder.embed_text(&record.model_answer);
            for variant in &record.variants {
                let accept = oracle_judge
                    .judge_answer(&record.question, &record.model_answer, &variant.text)
                    .map_err(|e| e.to_string())?
                    .accept;
                let sim = cosine_similarity(&embedder.embed_text(&variant.text), &reference_vec).map_err(|e| e.to_string())?;
                pairs.push((variant.kind, accept, sim));
            }
        }
        let incorrect = pairs.iter().filter(|p| p.0 == VariantKind::Incorrect).count();
        let nonexact = pairs.len() - incorrect;

        for row in &report.rows {
            let theta = row.threshold;
            let theta_hi = match gate {
                OverrideGate::Tracking => theta,
                OverrideGate::Fixed(v) => if v > theta { v } else { theta },
            };
            let passes = |accept: bool, sim: f64| {
                (accept && sim >= theta - SIMILARITY_EPSILON) || sim >= theta_hi - SIMILARITY_EPSILON
            };
            let false_accepts = pairs
                .iter()
                .filter(|(kind, a, s)| *kind == VariantKind::Incorrect && passes(*a, *s))
                .count();
            let false_rejects = pairs
                .iter()
                .filter(|(kind, a, s)| *kind == VariantKind::CorrectNonexact && !passes(*a, *s))
                .count();

            // Counts per trial from the decision log must match the oracle exactly.
            for trial in 0..report.header.trials {
                let log: Vec<_> = report
                    .decisions
                    .iter()
                    .filter(|d| d.trial == trial && d.threshold == theta)
                    .collect();
                ensure!(log.len() == pairs.len(), "trial {trial} θ={theta}: {} decisions", log.len());
                let fa = log.iter().filter(|d| d.kind == VariantKind::Incorrect && d.accepted).count();
                let fr = log.iter().filter(|d| d.kind == VariantKind::CorrectNonexact && !d.accepted).count();
                ensure!(fa == false_accepts, "θ={theta} trial {trial}: {fa} false accepts, oracle {false_accepts}");
                ensure!(fr == false_rejects, "θ={theta} trial {trial}: {fr} false rejects, oracle {false_rejects}");
            }
            let far = false_accepts as f64 / incorrect as f64;
            let frr = false_rejects as f64 / nonexact as f64;
            ensure!((row.far - far).abs() <= 1e-12, "θ={theta}: FAR {} vs oracle {far}", row.far);
            ensure!((row.frr - frr).abs() <= 1e-12, "θ={theta}: FRR {} vs oracle {frr}", row.frr);
            ensure!(row.trial_count == report.header.trials, "trial count mismatch");
            checked += 1;
        }
    }
    Ok(format!("{checked} rows match the oracle (counts exact, rates within 1e-12)"))
}

/// Generates trivially cheap questions; used where generation content is irrelevant.
#[derive(Default)]
struct CheapQuestions(std::sync::atomic::AtomicU64);

impl LlmProvider for CheapQuestions {
    fn name(&self) -> &str {
        "cheap"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        assert_eq!(request.template_id, TemplateId::QuestionGen, "only generation is expected");
        let count: usize = request.bindings["count"].parse().expect("count");
        let pairs: Vec<_> = (0..count)
            .map(|_| {
                let n = self.0.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                serde_json::json!({ "question": format!("q{n}?"), "answer": format!("a{n}") })
            })
            .collect();
        Ok(Completion::text(serde_json::json!({ "pairs": pairs }).to_string()))
    }
}

fn cheap_engine() -> AuthEngine {
    AuthEngine::new(LlmGateway::new(Arc::new(CheapQuestions::default())), offline())
}

fn flat_policy(segments: usize, n: usize, m: usize, attempts: u32) -> AuthPolicy {
    AuthPolicy {
        segment_count: segments,
        questions_per_round: n,
        passing_requirement: m,
        max_attempts: attempts,
        escalation_table: Vec::new(),
        ..AuthPolicy::default()
    }
}

// 4. Balanced per-segment question counts and lossless segmentation.
fn segment_balance(_: &Captured) -> Result<String, String> {
    let engine = cheap_engine();
    let words: Vec<String> = (0..40).map(|i| format!("word{i}")).collect();
    let doc = UserDocument::new("d", "u", words.join(" "));
    let mut sessions = 0;
    for s in 1..=6 {
        for n in 1..=12 {
            let counts = balanced_counts(n, s);
            ensure!(counts.iter().sum::<usize>() == n, "balanced_counts({n},{s}) sums wrong");
            ensure!(
                counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1,
                "balanced_counts({n},{s}) = {counts:?}"
            );
            let session = engine
                .start_session("u", &doc, flat_policy(s, n, 1, 1))
                .map_err(|e| e.to_string())?;
            let per = session.questions_per_segment();
            ensure!(per.len() == s, "S={s}: {} segments", per.len());
            ensure!(per.iter().sum::<usize>() == n, "S={s} N={n}: {per:?}");
            ensure!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1, "S={s} N={n}: {per:?}");
            sessions += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let separators = [" ", "  ", "\t", "\n", " \n "];
    for doc_index in 0..200 {
        let len = rng.gen_range(1..=120);
        let mut text = String::new();
        for i in 0..len {
            if i > 0 {
                text.push_str(separators.choose(&mut rng).unwrap());
            }
            let w: String = (0..rng.gen_range(1..8)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
            text.push_str(&w);
            if rng.gen_bool(0.1) {
                text.push(',');
            }
        }
        let s = rng.gen_range(1..=8);
        let segments = segment_text(&text, s).map_err(|e| e.to_string())?;
        let rebuilt: Vec<&str> = segments.iter().flat_map(|seg| tokenize(&seg.text)).collect();
        ensure!(rebuilt == tokenize(&text), "doc {doc_index}: tokens not reconstructed");
        ensure!(segments.len() == s.min(len), "doc {doc_index}: {} segments", segments.len());
        let sizes: Vec<usize> = segments.iter().map(|seg| seg.word_count).collect();
        ensure!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "doc {doc_index}: {sizes:?}");
    }
    Ok(format!("{sessions} (S,N) sessions balanced; 200 random documents reconstructed"))
}

/// Verdict after a sequence of per-round pass counts, recounted from scratch.
fn oracle_verdict(rounds: &[usize], m: usize, max_attempts: u32) -> Verdict {
    let passes = *rounds.last().expect("at least one round");
    if passes >= m {
        Verdict::Authenticated
    } else if (rounds.len() as u32) < max_attempts {
        Verdict::NewRoundRequired
    } else {
        Verdict::Rejected
    }
}

fn explore(
    engine: &AuthEngine,
    session: &AuthSession,
    history: &mut Vec<usize>,
    m: usize,
    attempts: u32,
    visited: &mut usize,
) -> Result<(), String> {
    let n = session.items.len();
    for mask in 0u32..(1 << n) {
        let mut s = session.clone();
        for (i, item) in s.items.iter_mut().enumerate() {
            item.outcome = if mask & (1 << i) != 0 { Outcome::Passed } else { Outcome::Failed };
        }
        history.push(mask.count_ones() as usize);
        let verdict = engine.conclude_round(&mut s).map_err(|e| e.to_string())?;
        let expected = oracle_verdict(history, m, attempts);
        ensure!(verdict == expected, "N={n} M={m} A={attempts} history {history:?}: {verdict} vs {expected}");
        ensure!(s.verdict == verdict, "session verdict not recorded");
        *visited += 1;
        if verdict == Verdict::NewRoundRequired {
            ensure!(s.round_index as usize == history.len(), "round index {}", s.round_index);
            ensure!(s.items.len() == n && s.items.iter().all(|i| i.outcome == Outcome::Pending), "new round not fresh");
            explore(engine, &s, history, m, attempts, visited)?;
        } else {
            ensure!(engine.conclude_round(&mut s).is_err(), "terminal session accepted another conclude");
        }
        history.pop();
    }
    Ok(())
}

// 5. conclude_round matches a recount oracle on every outcome sequence.
fn state_machine_equivalence(_: &Captured) -> Result<String, String> {
    let engine = cheap_engine();
    let doc = UserDocument::new("d", "u", "one two three four five six seven eight");
    let mut visited = 0;
    for n in 1..=6 {
        for m in 1..=n {
            for attempts in 1..=3 {
                let session = engine
                    .start_session("u", &doc, flat_policy(1, n, m, attempts))
                    .map_err(|e| e.to_string())?;
                explore(&engine, &session, &mut Vec::new(), m, attempts, &mut visited)?;
            }
        }
    }
    Ok(format!("{visited} round conclusions match the oracle"))
}

// 6. retrieve_top_k equals a brute-force cosine sort, ties included.
fn retrieval_exactness(_: &Captured) -> Result<String, String> {
    let vocab = RedFlagVocabulary::bundled();
    let tags: Vec<String> = vocab.tag_names().map(str::to_string).collect();
    let words = ["pay", "now", "bank", "parcel", "fee", "link", "account", "locked", "hello", "lunch", "refund", "code"];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut queries = 0;
    let mut ties = 0;
    for fixture in 0..100 {
        let embedder = offline();
        let store = EvidenceStore::new(embedder.clone(), vocab.clone());
        let n = rng.gen_range(1..=40);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        for id in ids {
            let len = rng.gen_range(1..=4);
            let text = (0..len).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
            store
                .upsert_entry(CorpusRecord {
                    entry_id: format!("e{id:03}"),
                    text,
                    label: if rng.gen_bool(0.5) { Label::Scam } else { Label::Legitimate },
                    red_flags: {
                        let count = rng.gen_range(0..=2);
                        tags.choose_multiple(&mut rng, count).cloned().collect()
                    },
                    source: String::new(),
                    added_at: None,
                    labeled_by: LabelProvenance::Human,
                })
                .map_err(|e| e.to_string())?;
        }
        for _ in 0..4 {
            let query = (0..rng.gen_range(1..=4)).map(|_| *words.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ");
            let k = rng.gen_range(1..=n + 3);
            let filter = match rng.gen_range(0..3) {
                0 => None,
                1 => Some(EntryFilter { label: Some(Label::Scam), tag: None }),
                _ => Some(EntryFilter { label: None, tag: Some(tags.choose(&mut rng).unwrap().clone()) }),
            };
            let got = store.retrieve_top_k(&query, k, filter.as_ref()).map_err(|e| e.to_string())?;

            let q = embedder.embed(&query).map_err(|e| e.to_string())?;
            let (all, _) = store.list(&EntryFilter::default(), 0, usize::MAX);
            let mut expected: Vec<(String, f64)> = all
                .iter()
                .filter(|e| filter.as_ref().is_none_or(|f| f.matches(e)))
                .map(|e| {
                    let v = embedder.embed(&e.text).unwrap();
                    (e.entry_id.clone(), cosine_similarity(&q, &v).unwrap())
                })
                .collect();
            // Selection sort: repeatedly take the best remaining (highest sim, then lowest id).
            let mut ranked = Vec::new();
            while !expected.is_empty() && ranked.len() < k {
                let mut best = 0;
                for i in 1..expected.len() {
                    let (bi, bs) = (&expected[best].0, expected[best].1);
                    let (ci, cs) = (&expected[i].0, expected[i].1);
                    if cs > bs || (cs == bs && ci < bi) {
                        best = i;
                    }
                }
                ranked.push(expected.remove(best));
            }
            ensure!(got.len() == ranked.len(), "fixture {fixture}: {} hits vs {}", got.len(), ranked.len());
            for (rank, (hit, (id, sim))) in got.iter().zip(&ranked).enumerate() {
                ensure!(hit.entry.entry_id == *id, "fixture {fixture} rank {}: {} vs {id}", rank + 1, hit.entry.entry_id);
                ensure!(hit.similarity == *sim, "fixture {fixture}: similarity {} vs {sim}", hit.similarity);
                ensure!(hit.rank == rank + 1, "rank numbering");
            }
            ties += ranked.windows(2).filter(|w| w[0].1 == w[1].1).count();
            queries += 1;
        }
    }
    ensure!(ties > 0, "no tie cases were exercised");
    Ok(format!("{queries} queries over 100 stores match brute force ({ties} adjacent ties)"))
}

fn pipeline_over(provider: Arc<dyn LlmProvider>, store: Arc<EvidenceStore>) -> Arc<FraudPipeline> {
    Arc::new(FraudPipeline::new(LlmGateway::new(provider), store, FraudSettings::default()).expect("pipeline"))
}

// 7. Report shape and FP(with retrieval) <= FP(without).
fn fraud_metrics(_: &Captured) -> Result<String, String> {
    let messages = fixtures::messages();
    ensure!(messages.len() == 80, "fixture has {} messages", messages.len());
    let pipeline = pipeline_over(Arc::new(ScriptedLlm::new()), seeded_store());
    let report = run_fraud_eval(&messages, &pipeline).map_err(|e| e.to_string())?;
    ensure!(report.messages == 80 && report.outcomes.len() == 80, "report covers {} messages", report.messages);
    ensure!(!report.without_rag.rag_enabled && report.with_rag.rag_enabled, "column flags");
    for m in [&report.without_rag, &report.with_rag] {
        let c = m.counts;
        ensure!(c.tp + c.fp + c.tn + c.fn_ == 80, "counts do not sum to 80");
        ensure!(c.tp + c.fn_ == 40 && c.fp + c.tn == 40, "class totals");
    }
    let table = report.to_table();
    for needle in ["false positive rate", "false negative rate", "17.20%", "3.50%", "7.30%", "5.80%"] {
        ensure!(table.to_lowercase().contains(&needle.to_lowercase()), "table lacks {needle:?}");
    }
    ensure!(
        report.with_rag.false_positive_rate <= report.without_rag.false_positive_rate,
        "FP rises with retrieval: {} > {}",
        report.with_rag.false_positive_rate,
        report.without_rag.false_positive_rate
    );
    Ok(format!(
        "measured FP {:.2}% -> {:.2}%, FN {:.2}% -> {:.2}%; reference FP {:.2}% -> {:.2}%, FN {:.2}% -> {:.2}% (report only)",
        report.without_rag.false_positive_rate * 100.0,
        report.with_rag.false_positive_rate * 100.0,
        report.without_rag.false_negative_rate * 100.0,
        report.with_rag.false_negative_rate * 100.0,
        reference::FP_WITHOUT_RAG * 100.0,
        reference::FP_WITH_RAG * 100.0,
        reference::FN_WITHOUT_RAG * 100.0,
        reference::FN_WITH_RAG * 100.0,
    ))
}

// 8. Every citation is a retrieved hit; fabricated ones are stripped and logged.
fn citation_soundness(captured: &Captured) -> Result<String, String> {
    let messages = fixtures::messages();
    let store = seeded_store();
    let honest = pipeline_over(Arc::new(ScriptedLlm::new()), store.clone());
    let suffixes = ["", " Thanks.", " Reply soon.", " See you later.", " Call me back."];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut citations = 0;
    for i in 0..500 {
        let text = format!("{}{}", messages[i % messages.len()].text, suffixes.choose(&mut rng).unwrap());
        let mode = if rng.gen_bool(0.8) { RetrievalMode::Enabled } else { RetrievalMode::Disabled };
        let a = honest.assess_with(&text, mode).map_err(|e| e.to_string())?;
        let hits: BTreeSet<&str> = a.evidence.iter().map(|e| e.entry_id.as_str()).collect();
        for id in &a.cited_evidence {
            ensure!(hits.contains(id.as_str()), "assessment {i} cites {id} outside its hits");
        }
        ensure!(a.discarded_citations.is_empty(), "honest provider produced discarded citations");
        citations += a.cited_evidence.len();
    }
    ensure!(citations > 0, "no citations were exercised");

    let hostile = pipeline_over(Arc::new(HostileProvider::new(ScriptedLlm::new())), store);
    let mut stripped = 0;
    for message in messages.iter().take(40) {
        let a = hostile.assess(&message.text).map_err(|e| e.to_string())?;
        let hits: BTreeSet<&str> = a.evidence.iter().map(|e| e.entry_id.as_str()).collect();
        ensure!(a.cited_evidence.iter().all(|id| hits.contains(id.as_str())), "fabricated citation survived");
        let fabricated: Vec<_> = a.discarded_citations.iter().filter(|id| id.starts_with(FABRICATED_ID_PREFIX)).collect();
        ensure!(!fabricated.is_empty(), "fabricated citation not reported as discarded");
        for id in fabricated {
            ensure!(captured.tracing.contents().contains(id.as_str()), "discarded {id} was not logged");
            stripped += 1;
        }
    }
    Ok(format!("500 honest assessments, {citations} citations sound; {stripped} fabricated ids stripped and logged"))
}

// 9. Adding confirmed scam evidence never lowers a retrieval-grounded score.
fn grounding_freshness(_: &Captured) -> Result<String, String> {
    let messages = fixtures::messages();
    let store = seeded_store();
    let pipeline = pipeline_over(Arc::new(ScriptedLlm::new()), store.clone());
    let mut insertions = 0;
    let mut raised = 0;
    for (i, message) in messages.iter().enumerate() {
        let before = pipeline.assess(&message.text).map_err(|e| e.to_string())?;
        let flags: Vec<String> = before.features.red_flags.iter().map(|f| f.to_string()).collect();
        if flags.is_empty() {
            continue;
        }
        let mut previous = before.score;
        for (j, text) in [message.text.clone(), format!("Reported scam pattern: {}", flags.join(" "))].into_iter().enumerate() {
            store
                .upsert_entry(CorpusRecord {
                    entry_id: format!("fresh-{i:02}-{j}"),
                    text,
                    label: Label::Scam,
                    red_flags: flags.clone(),
                    source: "analyst".into(),
                    added_at: None,
                    labeled_by: LabelProvenance::Human,
                })
                .map_err(|e| e.to_string())?;
            let after = pipeline.assess(&message.text).map_err(|e| e.to_string())?;
            ensure!(after.score >= previous, "{}: score fell {previous} -> {}", message.message_id, after.score);
            raised += usize::from(after.score > previous);
            previous = after.score;
            insertions += 1;
        }
    }
    ensure!(insertions > 0, "no message carried red flags");
    Ok(format!("{insertions} insertions, score never decreased ({raised} raised it)"))
}

// 10. A judge rejection is overridden by similarity at or above θ_hi.
fn hybrid_override(_: &Captured) -> Result<String, String> {
    let policy = AuthPolicy::default();
    ensure!(hybrid_pass(false, policy.override_threshold, policy.cosine_threshold, policy.override_threshold), "rule at θ_hi");
    ensure!(hybrid_pass(false, 1.0, policy.cosine_threshold, policy.override_threshold), "rule at 1.0");
    ensure!(!hybrid_pass(false, 0.9, policy.cosine_threshold, policy.override_threshold), "rule below θ_hi");

    let engine = AuthEngine::new(LlmGateway::new(Arc::new(RejectingJudge::default())), offline());
    let doc = &fixtures::documents()[0];
    let mut session = engine.start_session(&doc.user_id, doc, policy).map_err(|e| e.to_string())?;
    let items: Vec<(String, String)> =
        session.items.iter().map(|i| (i.item_id.clone(), i.reference_answer.clone())).collect();
    for (id, answer) in &items {
        let graded = engine.evaluate_answer(&mut session, id, answer).map_err(|e| e.to_string())?;
        ensure!(graded.judge_accept == Some(false), "judge did not reject");
        ensure!(graded.outcome == Outcome::Passed, "item {id} not passed at similarity {:?}", graded.similarity);
    }
    let verdict = engine.conclude_round(&mut session).map_err(|e| e.to_string())?;
    ensure!(verdict == Verdict::Authenticated, "verdict {verdict}");
    Ok(format!("{} items passed with judge_accept=false; session authenticated", items.len()))
}

struct Traffic {
    captured: String,
    requests: usize,
    statuses: BTreeMap<u16, usize>,
}

async fn call(app: &axum::Router, traffic: &mut Traffic, method: &str, uri: &str, body: Option<String>) -> (StatusCode, serde_json::Value) {
    let mut builder = Request::builder().method(method).uri(uri).header("origin", "http://ui.test");
    if body.is_some() {
        builder = builder.header("content-type", "application/json");
    }
    let request = builder.body(body.map(Body::from).unwrap_or_else(Body::empty)).expect("request");
    let response = app.clone().oneshot(request).await.expect("infallible router");
    let status = response.status();
    for (name, value) in response.headers() {
        traffic.captured.push_str(&format!("{name}: {}\n", value.to_str().unwrap_or("")));
    }
    let bytes = response.into_body().collect().await.expect("body").to_bytes();
    let text = String::from_utf8_lossy(&bytes).into_owned();
    traffic.captured.push_str(&text);
    traffic.captured.push('\n');
    traffic.requests += 1;
    *traffic.statuses.entry(status.as_u16()).or_default() += 1;
    (status, serde_json::from_str(&text).unwrap_or(serde_json::Value::Null))
}

/// The answer token embedded in an opaque question.
fn answer_for(question: &str) -> Option<String> {
    let n: u64 = question.split("detail number ").nth(1)?.trim_end_matches('?').parse().ok()?;
    Some(format!("qzv{n:05}kx"))
}

// 11. No reference answer or credential appears in responses or logs.
fn redaction(captured: &Captured) -> Result<String, String> {
    const CANARY: &str = "sk-canary-5b1f09d2e7";
    std::env::set_var("SEMGATE_ACCEPTANCE_KEY", CANARY);

    let provider = Arc::new(OpaqueAnswers::default());
    let log = SharedBuffer::default();
    let config = ApiConfig { cors_allowlist: vec!["*".into()], reveal_threshold: true, ..ApiConfig::default() };
    let state = AppState::new(config, provider.clone(), seeded_store(), LogSink::new(log.clone())).map_err(|e| e.to_string())?;
    let app = router(state);

    // A second server pointed at an unreachable provider with the canary credential.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut remote_config = ApiConfig { data_dir: dir.path().to_path_buf(), ..ApiConfig::default() };
    remote_config.llm.endpoint = Some("http://127.0.0.1:9/v1".into());
    remote_config.llm.api_key_env = "SEMGATE_ACCEPTANCE_KEY".into();
    remote_config.llm.timeout_secs = 2;
    remote_config.llm.repair_retries = 0;
    let remote = router(AppState::from_config(remote_config, false, LogSink::new(log.clone())).map_err(|e| e.to_string())?);

    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let mut traffic = Traffic { captured: String::new(), requests: 0, statuses: BTreeMap::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let messages = fixtures::messages();
    let users = ["maria", "tomasz", "amara", "nobody"];
    runtime.block_on(async {
        // session id -> (current item, its question)
        let mut sessions: HashMap<String, Option<(String, String)>> = HashMap::new();
        let mut answered: Vec<(String, String, String)> = Vec::new();
        for _ in 0..400 {
            let pick = rng.gen_range(0..100);
            let session_id = {
                let mut ids: Vec<&String> = sessions.keys().collect();
                ids.sort();
                ids.choose(&mut rng).map(|s| s.to_string())
            };
            match (pick, session_id) {
                (0..=14, _) | (_, None) => {
                    let body = match rng.gen_range(0..5) {
                        0 => "{not json".to_string(),
                        1 => serde_json::json!({ "user_id": "inline-user", "document": "Kept a red kite named Orbit near Leeds." }).to_string(),
                        _ => serde_json::json!({ "user_id": users.choose(&mut rng).unwrap() }).to_string(),
                    };
                    let (status, v) = call(&app, &mut traffic, "POST", "/v1/auth/sessions", Some(body)).await;
                    if status == StatusCode::CREATED {
                        let current = v["item_id"].as_str().map(|id| (id.to_string(), v["question"].as_str().unwrap_or("").to_string()));
                        sessions.insert(v["session_id"].as_str().unwrap().to_string(), current);
                    }
                }
                (15..=59, Some(sid)) => {
                    let current = sessions[&sid].clone();
                    let (item_id, answer) = match (rng.gen_range(0..10), &current) {
                        (0..=5, Some((id, q))) => (id.clone(), answer_for(q).unwrap_or_default()),
                        (6, Some((id, _))) => (id.clone(), String::new()),
                        (7, Some((id, _))) => (id.clone(), "definitely not it".into()),
                        (8, _) if !answered.is_empty() => {
                            let (_, id, a) = answered.choose(&mut rng).unwrap().clone();
                            (id, a)
                        }
                        _ => ("r9-q99".into(), "qzv99999kx".into()),
                    };
                    let body = if rng.gen_bool(0.05) {
                        format!("{{\"item_id\": 7, \"answer\": \"{answer}\"}}")
                    } else {
                        serde_json::json!({ "item_id": item_id, "answer": answer }).to_string()
                    };
                    let uri = format!("/v1/auth/sessions/{sid}/answers");
                    let (status, v) = call(&app, &mut traffic, "POST", &uri, Some(body)).await;
                    if status == StatusCode::OK {
                        answered.push((sid.clone(), item_id, answer));
                        let next = match v["next"]["type"].as_str() {
                            Some("question") => Some((
                                v["next"]["item_id"].as_str().unwrap().to_string(),
                                v["next"]["question"].as_str().unwrap().to_string(),
                            )),
                            _ => None,
                        };
                        sessions.insert(sid, next);
                    }
                }
                (60..=69, Some(sid)) => {
                    let uri = if rng.gen_bool(0.9) { format!("/v1/auth/sessions/{sid}") } else { "/v1/auth/sessions/unknown".into() };
                    call(&app, &mut traffic, "GET", &uri, None).await;
                }
                (70..=84, _) => {
                    let message = &messages.choose(&mut rng).unwrap().text;
                    let body = serde_json::json!({ "message": message, "rag_enabled": rng.gen_bool(0.7) }).to_string();
                    call(&app, &mut traffic, "POST", "/v1/fraud/assessments", Some(body)).await;
                }
                (85..=94, _) => {
                    let uri = match rng.gen_range(0..3) {
                        0 => "/v1/corpus/entries?label=scam&limit=5".to_string(),
                        1 => "/v1/corpus/entries?tag=not_a_tag".to_string(),
                        _ => "/v1/corpus/entries?tag=fake_link".to_string(),
                    };
                    call(&app, &mut traffic, "GET", &uri, None).await;
                }
                _ => {
                    call(&app, &mut traffic, "GET", "/v1/healthz", None).await;
                }
            }
        }
        for body in [
            serde_json::json!({ "message": "Your parcel is held, pay the fee at this link" }).to_string(),
            serde_json::json!({ "user_id": "x", "document": "A short inline document about a lighthouse." }).to_string(),
        ] {
            let uri = if body.contains("message") { "/v1/fraud/assessments" } else { "/v1/auth/sessions" };
            let (status, _) = call(&remote, &mut traffic, "POST", uri, Some(body)).await;
            assert_eq!(status, StatusCode::BAD_GATEWAY, "unreachable provider must map to 502");
        }
        call(&remote, &mut traffic, "GET", "/v1/healthz", None).await;
    });

    let issued = provider.issued();
    ensure!(issued.len() > 20, "only {} reference answers were issued", issued.len());
    ensure!(traffic.statuses.get(&200).copied().unwrap_or(0) > 50, "too little successful traffic: {:?}", traffic.statuses);
    let logs = log.contents();
    ensure!(logs.lines().count() == traffic.requests, "request log has {} lines for {} requests", logs.lines().count(), traffic.requests);
    let corpus = format!("{}\n{}\n{}", traffic.captured, logs, captured.tracing.contents());
    for secret in issued.iter().map(String::as_str).chain([CANARY]) {
        ensure!(!corpus.contains(secret), "capture contains {secret:?}");
    }
    let authenticated = traffic.captured.matches("\"authenticated\"").count();
    ensure!(authenticated > 0, "fuzzing never authenticated a session");
    Ok(format!(
        "{} requests {:?}, {} reference answers and 1 credential absent from capture",
        traffic.requests,
        traffic.statuses,
        issued.len()
    ))
}

// 12. 3 documents x 20 questions x 4 segments with a head/tail-biased generator.
fn bias_protocol(_: &Captured) -> Result<String, String> {
    let documents = fixtures::documents();
    ensure!(documents.len() == 3, "{} documents", documents.len());
    let generator = LlmGateway::new(Arc::new(ScriptedLlm::with_bias(GenerationBias::HeadTail)));
    let dist = run_bias_analysis(&documents, 20, 4, &generator, &OfflineEmbedder::default()).map_err(|e| e.to_string())?;
    ensure!(dist.documents_analyzed == 3 && dist.questions_per_document == 20, "protocol shape");
    ensure!(dist.segment_percentages.len() == 4, "segment count");
    for p in dist.per_document.iter().chain([&dist.segment_percentages]) {
        ensure!((p.iter().sum::<f64>() - 100.0).abs() < 1e-9, "shares do not sum to 100: {p:?}");
    }
    let (edges, middle) = dist.edge_and_middle_share();
    ensure!(edges > middle, "edges {edges:.1}% <= middle {middle:.1}%");
    let shares: Vec<String> = dist.segment_percentages.iter().map(|p| format!("{p:.1}%")).collect();
    Ok(format!("segments [{}], edges {edges:.1}% > middle {middle:.1}%", shares.join(", ")))
}
