//! The challenge-response authentication state machine.
//!
//! A session segments the user's document, asks the LLM for an equal share
//! of questions per segment, and grades each free-text answer in two stages:
//! an LLM accept/reject judgment and the cosine similarity between the
//! embedded answer and the embedded reference answer. An item passes when
//!
//! ```text
//! (judge_accept && similarity >= threshold) || similarity >= override_threshold
//! ```
//!
//! A round with at least `passing_requirement` passes authenticates the user.
//! A failed round regenerates fresh questions until `max_attempts` rounds
//! have been used, after which the session is rejected.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbedError, Embedder, SIMILARITY_EPSILON};
use crate::llm::{LlmError, LlmGateway};
use crate::segment::{balanced_counts, segment_document, DocumentSegment, SegmentError, UserDocument};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuthError {
    #[error("document has no tokens and cannot seed questions")]
    EmptyDocument,

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("escalation table is empty")]
    EmptyEscalationTable,

    #[error("threshold {threshold} is below the lowest escalation row ({lowest})")]
    ThresholdBelowTable { threshold: f64, lowest: f64 },

    #[error("unknown challenge item {0}")]
    UnknownItem(String),

    #[error("challenge item {0} is not pending")]
    ItemNotPending(String),

    #[error("round {0} still has pending items")]
    RoundIncomplete(u32),

    #[error("session already concluded with verdict {0}")]
    SessionClosed(Verdict),

    #[error("provider unavailable: {reason}")]
    ProviderUnavailable {
        reason: String,
        retry_after_secs: Option<u64>,
    },

    #[error(transparent)]
    Llm(LlmError),

    #[error(transparent)]
    Embed(EmbedError),
}

impl From<LlmError> for AuthError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::ProviderUnavailable {
                reason,
                retry_after_secs,
            } => AuthError::ProviderUnavailable {
                reason,
                retry_after_secs,
            },
            other => AuthError::Llm(other),
        }
    }
}

impl From<EmbedError> for AuthError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::ProviderUnavailable {
                reason,
                retry_after_secs,
            } => AuthError::ProviderUnavailable {
                reason,
                retry_after_secs,
            },
            other => AuthError::Embed(other),
        }
    }
}

impl From<SegmentError> for AuthError {
    fn from(e: SegmentError) -> Self {
        match e {
            SegmentError::EmptyDocument => AuthError::EmptyDocument,
            SegmentError::Embed(e) => e.into(),
            other => AuthError::InvalidPolicy(other.to_string()),
        }
    }
}

/// One row of the escalation table: thresholds at or above `min_threshold`
/// ask `questions` per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscalationRow {
    pub min_threshold: f64,
    pub questions: usize,
}

pub fn default_escalation_table() -> Vec<EscalationRow> {
    vec![
        EscalationRow { min_threshold: 0.9, questions: 5 },
        EscalationRow { min_threshold: 0.8, questions: 6 },
        EscalationRow { min_threshold: 0.7, questions: 7 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuthPolicy {
    pub segment_count: usize,
    /// Floor on questions per round; escalation can only raise it.
    pub questions_per_round: usize,
    pub passing_requirement: usize,
    pub cosine_threshold: f64,
    pub override_threshold: f64,
    pub max_attempts: u32,
    /// Empty disables escalation.
    pub escalation_table: Vec<EscalationRow>,
}

impl Default for AuthPolicy {
    fn default() -> Self {
        Self {
            segment_count: 4,
            questions_per_round: 5,
            passing_requirement: 4,
            cosine_threshold: 0.85,
            override_threshold: 0.97,
            max_attempts: 3,
            escalation_table: default_escalation_table(),
        }
    }
}

impl AuthPolicy {
    pub fn validate(&self) -> Result<(), AuthError> {
        let bad = |msg: String| Err(AuthError::InvalidPolicy(msg));
        if self.segment_count == 0 {
            return bad("segment_count must be at least 1".into());
        }
        if self.questions_per_round == 0 || self.passing_requirement == 0 || self.max_attempts == 0 {
            return bad("questions_per_round, passing_requirement and max_attempts must be positive".into());
        }
        if self.passing_requirement > self.questions_per_round {
            return bad(format!(
                "passing_requirement {} exceeds questions_per_round {}",
                self.passing_requirement, self.questions_per_round
            ));
        }
        for (name, value) in [
            ("cosine_threshold", self.cosine_threshold),
            ("override_threshold", self.override_threshold),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return bad(format!("{name} {value} outside [0, 1]"));
            }
        }
        if self.cosine_threshold > self.override_threshold {
            return bad("cosine_threshold exceeds override_threshold".into());
        }
        for pair in self.escalation_table.windows(2) {
            if pair[1].min_threshold >= pair[0].min_threshold || pair[1].questions < pair[0].questions {
                return bad(
                    "escalation rows must be strictly decreasing in threshold with non-decreasing question counts"
                        .into(),
                );
            }
        }
        if self.escalation_table.iter().any(|r| r.questions == 0) {
            return bad("escalation rows must ask at least one question".into());
        }
        Ok(())
    }
}

/// Question count the table assigns to `policy.cosine_threshold`.
pub fn apply_escalation(policy: &AuthPolicy) -> Result<usize, AuthError> {
    let lowest = policy
        .escalation_table
        .last()
        .ok_or(AuthError::EmptyEscalationTable)?;
    policy
        .escalation_table
        .iter()
        .find(|row| row.min_threshold <= policy.cosine_threshold)
        .map(|row| row.questions)
        .ok_or(AuthError::ThresholdBelowTable {
            threshold: policy.cosine_threshold,
            lowest: lowest.min_threshold,
        })
}

/// Questions asked per round: the policy floor raised by escalation.
pub fn effective_questions(policy: &AuthPolicy) -> Result<usize, AuthError> {
    if policy.escalation_table.is_empty() {
        return Ok(policy.questions_per_round);
    }
    Ok(apply_escalation(policy)?.max(policy.questions_per_round))
}

/// The hybrid pass rule.
pub fn hybrid_pass(judge_accept: bool, similarity: f64, threshold: f64, override_threshold: f64) -> bool {
    let meets = |gate: f64| similarity >= gate - SIMILARITY_EPSILON;
    (judge_accept && meets(threshold)) || meets(override_threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pending,
    Passed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    InProgress,
    Authenticated,
    NewRoundRequired,
    Rejected,
}

impl Verdict {
    pub fn is_terminal(self) -> bool {
        matches!(self, Verdict::Authenticated | Verdict::Rejected)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::InProgress => "in_progress",
            Verdict::Authenticated => "authenticated",
            Verdict::NewRoundRequired => "new_round_required",
            Verdict::Rejected => "rejected",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a round's pass count means.
pub fn round_verdict(pass_count: usize, passing_requirement: usize, round_index: u32, max_attempts: u32) -> Verdict {
    if pass_count >= passing_requirement {
        Verdict::Authenticated
    } else if round_index + 1 < max_attempts {
        Verdict::NewRoundRequired
    } else {
        Verdict::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeItem {
    pub item_id: String,
    pub question: String,
    pub reference_answer: String,
    pub segment_index: usize,
    pub outcome: Outcome,
    pub judge_accept: Option<bool>,
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthSession {
    pub session_id: String,
    pub user_id: String,
    pub policy: AuthPolicy,
    pub questions_per_round: usize,
    pub round_index: u32,
    pub items: Vec<ChallengeItem>,
    pub verdict: Verdict,
    segments: Vec<DocumentSegment>,
    asked: Vec<String>,
}

impl AuthSession {
    pub fn pass_count(&self) -> usize {
        self.items.iter().filter(|i| i.outcome == Outcome::Passed).count()
    }

    pub fn item(&self, item_id: &str) -> Option<&ChallengeItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// First pending item of the current round.
    pub fn current_item(&self) -> Option<&ChallengeItem> {
        if self.verdict.is_terminal() {
            return None;
        }
        self.items.iter().find(|i| i.outcome == Outcome::Pending)
    }

    pub fn round_complete(&self) -> bool {
        self.items.iter().all(|i| i.outcome != Outcome::Pending)
    }

    pub fn segments(&self) -> &[DocumentSegment] {
        &self.segments
    }

    /// Per-segment question counts for the current round.
    pub fn questions_per_segment(&self) -> Vec<usize> {
        let mut counts = vec![0; self.segments.len()];
        for item in &self.items {
            counts[item.segment_index] += 1;
        }
        counts
    }

    /// Every question asked so far, across rounds.
    pub fn asked_questions(&self) -> &[String] {
        &self.asked
    }
}

/// Drives sessions against an LLM gateway and an embedder.
#[derive(Clone)]
pub struct AuthEngine {
    gateway: LlmGateway,
    embedder: Arc<dyn Embedder>,
}

impl AuthEngine {
    pub fn new(gateway: LlmGateway, embedder: Arc<dyn Embedder>) -> Self {
        Self { gateway, embedder }
    }

    pub fn gateway(&self) -> &LlmGateway {
        &self.gateway
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn start_session(
        &self,
        user_id: &str,
        doc: &UserDocument,
        policy: AuthPolicy,
    ) -> Result<AuthSession, AuthError> {
        policy.validate()?;
        let questions_per_round = effective_questions(&policy)?;
        let segments = segment_document(doc, policy.segment_count)?;
        let mut session = AuthSession {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            user_id: user_id.to_string(),
            policy,
            questions_per_round,
            round_index: 0,
            items: Vec::new(),
            verdict: Verdict::InProgress,
            segments,
            asked: Vec::new(),
        };
        session.items = self.generate_round(&session, 0)?;
        session.asked.extend(session.items.iter().map(|i| i.question.clone()));
        tracing::info!(session = %session.session_id, questions = questions_per_round, "auth session started");
        Ok(session)
    }

    fn generate_round(&self, session: &AuthSession, round_index: u32) -> Result<Vec<ChallengeItem>, AuthError> {
        let counts = balanced_counts(session.questions_per_round, session.segments.len());
        let mut items = Vec::with_capacity(session.questions_per_round);
        for (segment, count) in session.segments.iter().zip(counts) {
            if count == 0 {
                continue;
            }
            for generated in self.gateway.generate_questions(segment, count, &session.asked)? {
                items.push(ChallengeItem {
                    item_id: format!("r{round_index}-q{}", items.len()),
                    question: generated.question,
                    reference_answer: generated.reference_answer,
                    segment_index: generated.segment_index,
                    outcome: Outcome::Pending,
                    judge_accept: None,
                    similarity: None,
                });
            }
        }
        Ok(items)
    }

    /// Grade one answer. On a provider failure the item stays pending.
    pub fn evaluate_answer(
        &self,
        session: &mut AuthSession,
        item_id: &str,
        user_answer: &str,
    ) -> Result<ChallengeItem, AuthError> {
        if session.verdict.is_terminal() {
            return Err(AuthError::SessionClosed(session.verdict));
        }
        let index = session
            .items
            .iter()
            .position(|i| i.item_id == item_id)
            .ok_or_else(|| AuthError::UnknownItem(item_id.to_string()))?;
        let item = &session.items[index];
        if item.outcome != Outcome::Pending {
            return Err(AuthError::ItemNotPending(item_id.to_string()));
        }

        let (judge_accept, similarity) = if user_answer.trim().is_empty() {
            (false, 0.0)
        } else {
            let verdict = self
                .gateway
                .judge_answer(&item.question, &item.reference_answer, user_answer)?;
            let answer_vec = self.embedder.embed(user_answer)?;
            let reference_vec = self.embedder.embed(&item.reference_answer)?;
            (verdict.accept, cosine_similarity(&answer_vec, &reference_vec)?)
        };
        let policy = &session.policy;
        let passed = hybrid_pass(judge_accept, similarity, policy.cosine_threshold, policy.override_threshold);

        let item = &mut session.items[index];
        item.judge_accept = Some(judge_accept);
        item.similarity = Some(similarity);
        item.outcome = if passed { Outcome::Passed } else { Outcome::Failed };
        if session.verdict == Verdict::NewRoundRequired {
            session.verdict = Verdict::InProgress;
        }
        Ok(session.items[index].clone())
    }

    /// Count passes and move to the next state.
    ///
    /// A failed round with attempts left regenerates questions from the same
    /// document and sets `new_round_required`.
    pub fn conclude_round(&self, session: &mut AuthSession) -> Result<Verdict, AuthError> {
        if session.verdict.is_terminal() {
            return Err(AuthError::SessionClosed(session.verdict));
        }
        if !session.round_complete() {
            return Err(AuthError::RoundIncomplete(session.round_index));
        }
        let verdict = round_verdict(
            session.pass_count(),
            session.policy.passing_requirement,
            session.round_index,
            session.policy.max_attempts,
        );
        if verdict == Verdict::NewRoundRequired {
            let next_round = session.round_index + 1;
            let items = self.generate_round(session, next_round)?;
            session.asked.extend(items.iter().map(|i| i.question.clone()));
            session.items = items;
            session.round_index = next_round;
        }
        session.verdict = verdict;
        tracing::info!(session = %session.session_id, round = session.round_index, %verdict, "round concluded");
        Ok(verdict)
    }
}
