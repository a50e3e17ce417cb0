//! Desk-scale experiments: FAR/FRR threshold sweeps, positional-bias
//! distribution of unsegmented question generation, and fraud metrics with
//! and without retrieval.
//!
//! Every sweep row can be rebuilt from its per-pair decision log with
//! [`rows_from_decisions`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::hybrid_pass;
use crate::embedding::{cosine_similarity, EmbedError, Embedder, EmbeddingVector};
use crate::fraud::{FraudError, FraudPipeline, RetrievalMode};
use crate::llm::{LlmError, LlmGateway, VerdictLabel};
use crate::segment::{attribute_to_segment, segment_document, DocumentSegment, SegmentError, UserDocument};
use crate::store::{parse_jsonl, StoreError};

/// Published hosted-model figures, printed next to measured values only.
pub mod reference {
    /// Share of correct-but-non-exact answers accepted.
    pub const NONEXACT_ACCEPTANCE: f64 = 0.995;
    pub const FALSE_ACCEPTANCE: f64 = 0.001;
    pub const FP_WITHOUT_RAG: f64 = 0.1720;
    pub const FP_WITH_RAG: f64 = 0.0350;
    pub const FN_WITHOUT_RAG: f64 = 0.0730;
    pub const FN_WITH_RAG: f64 = 0.0580;
}

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_TRIALS: u32 = 3;
pub const DEFAULT_OVERRIDE: f64 = 0.97;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    DatasetEmpty,

    #[error("dataset has no {0} variants")]
    MissingVariantKind(VariantKind),

    #[error("dataset has no {0} messages; the matching error rate is undefined")]
    MissingLabel(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Line { line: usize, message: String },

    #[error("question generation failed: {0}")]
    GenerationFailed(LlmError),

    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error(transparent)]
    Embed(#[from] EmbedError),

    #[error(transparent)]
    Segment(#[from] SegmentError),

    #[error(transparent)]
    Fraud(#[from] FraudError),
}

impl From<StoreError> for EvalError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Line { line, message } => EvalError::Line { line, message },
            other => EvalError::InvalidArgument(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    CorrectNonexact,
    Incorrect,
}

impl std::fmt::Display for VariantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VariantKind::CorrectNonexact => "correct_nonexact",
            VariantKind::Incorrect => "incorrect",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub text: String,
    pub kind: VariantKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub qa_id: String,
    pub question: String,
    pub model_answer: String,
    pub variants: Vec<Variant>,
}

/// Load and validate QA records from JSON lines.
pub fn load_qa_records(reader: impl BufRead) -> Result<Vec<QaRecord>, EvalError> {
    let mut out = Vec::new();
    for (line, record) in parse_jsonl::<QaRecord>(reader)? {
        let bad = |message: &str| EvalError::Line {
            line,
            message: format!("{}: {message}", record.qa_id),
        };
        if record.qa_id.trim().is_empty() || record.question.trim().is_empty() {
            return Err(bad("qa_id and question must be non-empty"));
        }
        if record.model_answer.trim().is_empty() {
            return Err(bad("model_answer is empty"));
        }
        if record.variants.is_empty() {
            return Err(bad("record has no variants"));
        }
        if record.variants.iter().any(|v| v.text.trim().is_empty()) {
            return Err(bad("variant text is empty"));
        }
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledMessage {
    pub message_id: String,
    pub text: String,
    pub label: VerdictLabel,
}

pub fn load_labeled_messages(reader: impl BufRead) -> Result<Vec<LabeledMessage>, EvalError> {
    let mut out = Vec::new();
    for (line, message) in parse_jsonl::<LabeledMessage>(reader)? {
        if message.text.trim().is_empty() {
            return Err(EvalError::Line {
                line,
                message: format!("{}: text is empty", message.message_id),
            });
        }
        out.push(message);
    }
    Ok(out)
}

/// How the high-similarity override gate relates to the swept threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum OverrideGate {
    /// θ_hi = θ.
    Tracking,
    /// θ_hi = max(θ, value).
    Fixed(f64),
}

impl OverrideGate {
    pub fn at(self, threshold: f64) -> f64 {
        match self {
            OverrideGate::Tracking => threshold,
            OverrideGate::Fixed(value) => value.max(threshold),
        }
    }
}

impl Default for OverrideGate {
    fn default() -> Self {
        OverrideGate::Fixed(DEFAULT_OVERRIDE)
    }
}

/// Thresholds `start, start+step, ..., end`, with float drift rounded away.
pub fn threshold_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>, EvalError> {
    if step.is_nan() || step <= 0.0 || start > end || start < 0.0 || end > 1.0 {
        return Err(EvalError::InvalidArgument(format!("bad grid {start}:{end}:{step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub thresholds: Vec<f64>,
    pub trials: u32,
    pub seed: u64,
    pub override_gate: OverrideGate,
    /// Parallel workers per trial; clamped to at least one.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            thresholds: threshold_grid(0.70, 1.00, 0.05).expect("default grid is valid"),
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            override_gate: OverrideGate::default(),
            workers: 4,
        }
    }
}

/// One (trial, threshold, question, variant) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDecision {
    pub trial: u32,
    pub threshold: f64,
    pub override_threshold: f64,
    pub qa_id: String,
    pub variant_index: usize,
    pub kind: VariantKind,
    pub judge_accept: bool,
    pub similarity: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub trial_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepHeader {
    pub records: usize,
    pub correct_nonexact_variants: usize,
    pub incorrect_variants: usize,
    pub trials: u32,
    pub seed: u64,
    pub override_gate: OverrideGate,
    pub judge: String,
    pub embedder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub header: SweepHeader,
    pub rows: Vec<SweepRow>,
    #[serde(skip)]
    pub decisions: Vec<PairDecision>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,far,frr,trials\n");
        for row in &self.rows {
            let _ = writeln!(out, "{:.2},{:.6},{:.6},{}", row.threshold, row.far, row.frr, row.trial_count);
        }
        out
    }

    pub fn decisions_jsonl(&self) -> String {
        self.decisions
            .iter()
            .map(|d| serde_json::to_string(d).expect("decision serialises") + "\n")
            .collect()
    }

    /// Measured rates at the top threshold next to the published reference.
    pub fn reference_summary(&self) -> String {
        let mut out = String::from("published hosted-model reference (report only):\n");
        let _ = writeln!(
            out,
            "  non-exact acceptance  reference {:>6.2}%",
            reference::NONEXACT_ACCEPTANCE * 100.0
        );
        let _ = writeln!(out, "  false acceptance      reference {:>6.2}%", reference::FALSE_ACCEPTANCE * 100.0);
        for row in &self.rows {
            let _ = writeln!(
                out,
                "  measured θ={:.2}  non-exact acceptance {:>6.2}%  false acceptance {:>6.2}%",
                row.threshold,
                (1.0 - row.frr) * 100.0,
                row.far * 100.0
            );
        }
        out
    }
}

struct PairJob<'a> {
    record: &'a QaRecord,
    variant_index: usize,
}

/// Judge verdict and similarity for one pair; independent of the threshold.
fn grade_pair(
    judge: &LlmGateway,
    embedder: &dyn Embedder,
    reference_vec: &EmbeddingVector,
    job: &PairJob<'_>,
) -> Result<(bool, f64), EvalError> {
    let variant = &job.record.variants[job.variant_index];
    let verdict = judge.judge_answer(&job.record.question, &job.record.model_answer, &variant.text)?;
    let similarity = cosine_similarity(&embedder.embed(&variant.text)?, reference_vec)?;
    Ok((verdict.accept, similarity))
}

/// Evaluate every (question, variant) pair at every threshold, `trials`
/// times, shuffling pair order per trial from `seed`.
pub fn run_far_frr_sweep(
    dataset: &[QaRecord],
    config: &SweepConfig,
    judge: &LlmGateway,
    embedder: &dyn Embedder,
) -> Result<SweepReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::DatasetEmpty);
    }
    if config.trials == 0 || config.thresholds.is_empty() {
        return Err(EvalError::InvalidArgument("need at least one trial and one threshold".into()));
    }
    if config.thresholds.windows(2).any(|w| w[0] > w[1])
        || config.thresholds.iter().any(|t| !(0.0..=1.0).contains(t))
    {
        return Err(EvalError::InvalidArgument("thresholds must be ascending within [0, 1]".into()));
    }
    let count = |kind| dataset.iter().flat_map(|r| &r.variants).filter(|v| v.kind == kind).count();
    let (correct, incorrect) = (count(VariantKind::CorrectNonexact), count(VariantKind::Incorrect));
    if correct == 0 {
        return Err(EvalError::MissingVariantKind(VariantKind::CorrectNonexact));
    }
    if incorrect == 0 {
        return Err(EvalError::MissingVariantKind(VariantKind::Incorrect));
    }

    let references: Vec<EmbeddingVector> = dataset
        .iter()
        .map(|r| embedder.embed(&r.model_answer))
        .collect::<Result<_, _>>()?;
    let reference_of: BTreeMap<&str, &EmbeddingVector> =
        dataset.iter().map(|r| r.qa_id.as_str()).zip(&references).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let workers = config.workers.max(1);
    let mut decisions = Vec::new();
    for trial in 0..config.trials {
        let mut jobs: Vec<PairJob<'_>> = dataset
            .iter()
            .flat_map(|record| (0..record.variants.len()).map(move |variant_index| PairJob { record, variant_index }))
            .collect();
        jobs.shuffle(&mut rng);

        let chunk = jobs.len().div_ceil(workers);
        let graded: Vec<Result<(bool, f64), EvalError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| {
                    let reference_of = &reference_of;
                    scope.spawn(move || {
                        part.iter()
                            .map(|job| grade_pair(judge, embedder, reference_of[job.record.qa_id.as_str()], job))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });

        for (job, result) in jobs.iter().zip(graded) {
            let (judge_accept, similarity) = result?;
            for &threshold in &config.thresholds {
                let override_threshold = config.override_gate.at(threshold);
                decisions.push(PairDecision {
                    trial,
                    threshold,
                    override_threshold,
                    qa_id: job.record.qa_id.clone(),
                    variant_index: job.variant_index,
                    kind: job.record.variants[job.variant_index].kind,
                    judge_accept,
                    similarity,
                    accepted: hybrid_pass(judge_accept, similarity, threshold, override_threshold),
                });
            }
        }
    }

    Ok(SweepReport {
        header: SweepHeader {
            records: dataset.len(),
            correct_nonexact_variants: correct,
            incorrect_variants: incorrect,
            trials: config.trials,
            seed: config.seed,
            override_gate: config.override_gate,
            judge: judge.provider().name().to_string(),
            embedder: embedder.id(),
        },
        rows: rows_from_decisions(&decisions),
        decisions,
    })
}

/// Rebuild sweep rows from a decision log: per-trial rates, then the mean
/// over trials, for each threshold in ascending order.
pub fn rows_from_decisions(decisions: &[PairDecision]) -> Vec<SweepRow> {
    #[derive(Default)]
    struct Tally {
        accepted_incorrect: usize,
        incorrect: usize,
        rejected_correct: usize,
        correct: usize,
    }
    let mut by_threshold: BTreeMap<u64, BTreeMap<u32, Tally>> = BTreeMap::new();
    for d in decisions {
        let tally = by_threshold
            .entry(d.threshold.to_bits())
            .or_default()
            .entry(d.trial)
            .or_default();
        match d.kind {
            VariantKind::Incorrect => {
                tally.incorrect += 1;
                tally.accepted_incorrect += usize::from(d.accepted);
            }
            VariantKind::CorrectNonexact => {
                tally.correct += 1;
                tally.rejected_correct += usize::from(!d.accepted);
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut rows: Vec<SweepRow> = by_threshold
        .into_iter()
        .map(|(bits, trials)| {
            let n = trials.len() as f64;
            SweepRow {
                threshold: f64::from_bits(bits),
                far: trials.values().map(|t| ratio(t.accepted_incorrect, t.incorrect)).sum::<f64>() / n,
                frr: trials.values().map(|t| ratio(t.rejected_correct, t.correct)).sum::<f64>() / n,
                trial_count: trials.len() as u32,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDistribution {
    /// Mean share of questions per segment, in percent.
    pub segment_percentages: Vec<f64>,
    pub per_document: Vec<Vec<f64>>,
    pub documents_analyzed: usize,
    pub questions_per_document: usize,
}

impl BiasDistribution {
    /// First plus last segment share versus everything in between.
    pub fn edge_and_middle_share(&self) -> (f64, f64) {
        let p = &self.segment_percentages;
        match p.len() {
            0 => (0.0, 0.0),
            1 => (p[0], 0.0),
            n => (p[0] + p[n - 1], p[1..n - 1].iter().sum()),
        }
    }
}

/// Integer counts as percentages of their total.
pub fn percentages(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| 100.0 * c as f64 / total as f64).collect()
}

/// Generate questions from each whole document, attribute each to one of
/// `segment_count` equal segments, and average the per-document shares.
pub fn run_bias_analysis(
    documents: &[UserDocument],
    questions_per_document: usize,
    segment_count: usize,
    generator: &LlmGateway,
    embedder: &dyn Embedder,
) -> Result<BiasDistribution, EvalError> {
    if documents.is_empty() {
        return Err(EvalError::DatasetEmpty);
    }
    if questions_per_document == 0 || segment_count == 0 {
        return Err(EvalError::InvalidArgument("question and segment counts must be positive".into()));
    }
    let mut per_document = Vec::with_capacity(documents.len());
    for doc in documents {
        let segments = segment_document(doc, segment_count)?;
        if segments.len() != segment_count {
            return Err(EvalError::InvalidArgument(format!(
                "document {} has fewer words than segments",
                doc.doc_id
            )));
        }
        let whole = DocumentSegment {
            segment_index: 0,
            text: doc.text.clone(),
            word_count: doc.word_count(),
        };
        let generated = generator
            .generate_questions(&whole, questions_per_document, &[])
            .map_err(EvalError::GenerationFailed)?;
        let mut counts = vec![0usize; segment_count];
        for q in &generated {
            counts[attribute_to_segment(&q.question, &q.reference_answer, &segments, embedder)?] += 1;
        }
        per_document.push(percentages(&counts));
    }
    let n = per_document.len() as f64;
    let segment_percentages = (0..segment_count)
        .map(|i| per_document.iter().map(|p| p[i]).sum::<f64>() / n)
        .collect();
    Ok(BiasDistribution {
        segment_percentages,
        per_document,
        documents_analyzed: documents.len(),
        questions_per_document,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FraudMetrics {
    pub rag_enabled: bool,
    pub false_positive_rate: f64,
    pub false_negative_rate: f64,
    pub counts: Confusion,
}

impl FraudMetrics {
    pub fn from_counts(rag_enabled: bool, counts: Confusion) -> Result<Self, EvalError> {
        if counts.fp + counts.tn == 0 {
            return Err(EvalError::MissingLabel("legitimate"));
        }
        if counts.fn_ + counts.tp == 0 {
            return Err(EvalError::MissingLabel("scam"));
        }
        Ok(Self {
            rag_enabled,
            false_positive_rate: counts.fp as f64 / (counts.fp + counts.tn) as f64,
            false_negative_rate: counts.fn_ as f64 / (counts.fn_ + counts.tp) as f64,
            counts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageOutcome {
    pub message_id: String,
    pub truth: VerdictLabel,
    pub score_without_rag: f64,
    pub score_with_rag: f64,
    pub verdict_without_rag: VerdictLabel,
    pub verdict_with_rag: VerdictLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FraudReport {
    pub without_rag: FraudMetrics,
    pub with_rag: FraudMetrics,
    pub messages: usize,
    pub decision_threshold: f64,
    pub outcomes: Vec<MessageOutcome>,
}

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

impl FraudReport {
    /// Two-column table (without / with retrieval) plus the published
    /// reference values, which are printed and never checked.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28}{:>18}{:>18}", "", "LLM without RAG", "LLM with RAG");
        let _ = writeln!(
            out,
            "{:<28}{:>18}{:>18}",
            "False negative rate",
            pct(self.without_rag.false_negative_rate),
            pct(self.with_rag.false_negative_rate)
        );
        let _ = writeln!(
            out,
            "{:<28}{:>18}{:>18}",
            "False positive rate",
            pct(self.without_rag.false_positive_rate),
            pct(self.with_rag.false_positive_rate)
        );
        let _ = writeln!(out, "published hosted-model reference (report only):");
        let _ = writeln!(
            out,
            "{:<28}{:>18}{:>18}",
            "False negative rate",
            pct(reference::FN_WITHOUT_RAG),
            pct(reference::FN_WITH_RAG)
        );
        let _ = writeln!(
            out,
            "{:<28}{:>18}{:>18}",
            "False positive rate",
            pct(reference::FP_WITHOUT_RAG),
            pct(reference::FP_WITH_RAG)
        );
        let counts = |c: &Confusion| format!("tp={} fp={} tn={} fn={}", c.tp, c.fp, c.tn, c.fn_);
        let _ = writeln!(
            out,
            "messages={} threshold={} | without RAG {} | with RAG {}",
            self.messages,
            self.decision_threshold,
            counts(&self.without_rag.counts),
            counts(&self.with_rag.counts)
        );
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let column = |m: &FraudMetrics, fp: f64, fn_: f64| {
            serde_json::json!({
                "false_negative_rate": m.false_negative_rate,
                "false_positive_rate": m.false_positive_rate,
                "counts": m.counts,
                "reference": { "false_negative_rate": fn_, "false_positive_rate": fp },
            })
        };
        serde_json::json!({
            "messages": self.messages,
            "decision_threshold": self.decision_threshold,
            "llm_without_rag": column(&self.without_rag, reference::FP_WITHOUT_RAG, reference::FN_WITHOUT_RAG),
            "llm_with_rag": column(&self.with_rag, reference::FP_WITH_RAG, reference::FN_WITH_RAG),
        })
    }
}

fn tally(counts: &mut Confusion, truth: VerdictLabel, predicted: VerdictLabel) {
    match (truth, predicted) {
        (VerdictLabel::Scam, VerdictLabel::Scam) => counts.tp += 1,
        (VerdictLabel::Scam, VerdictLabel::Legitimate) => counts.fn_ += 1,
        (VerdictLabel::Legitimate, VerdictLabel::Scam) => counts.fp += 1,
        (VerdictLabel::Legitimate, VerdictLabel::Legitimate) => counts.tn += 1,
    }
}

/// Assess every message with retrieval off and on.
pub fn run_fraud_eval(messages: &[LabeledMessage], pipeline: &Arc<FraudPipeline>) -> Result<FraudReport, EvalError> {
    if messages.is_empty() {
        return Err(EvalError::DatasetEmpty);
    }
    for (label, name) in [(VerdictLabel::Legitimate, "legitimate"), (VerdictLabel::Scam, "scam")] {
        if !messages.iter().any(|m| m.label == label) {
            return Err(EvalError::MissingLabel(name));
        }
    }
    let (mut without, mut with) = (Confusion::default(), Confusion::default());
    let mut outcomes = Vec::with_capacity(messages.len());
    for message in messages {
        let off = pipeline.assess_with(&message.text, RetrievalMode::Disabled)?;
        let on = pipeline.assess_with(&message.text, RetrievalMode::Enabled)?;
        tally(&mut without, message.label, off.verdict);
        tally(&mut with, message.label, on.verdict);
        outcomes.push(MessageOutcome {
            message_id: message.message_id.clone(),
            truth: message.label,
            score_without_rag: off.score,
            score_with_rag: on.score,
            verdict_without_rag: off.verdict,
            verdict_with_rag: on.verdict,
        });
    }
    Ok(FraudReport {
        without_rag: FraudMetrics::from_counts(false, without)?,
        with_rag: FraudMetrics::from_counts(true, with)?,
        messages: messages.len(),
        decision_threshold: pipeline.settings().decision_threshold,
        outcomes,
    })
}
