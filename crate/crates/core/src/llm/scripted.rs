//! Deterministic providers for hermetic runs.
//!
//! [`ScriptedLlm`] answers every template with a fixed rule:
//!
//! * `question_gen`: cloze deletion. Salient tokens (numbers, capitalised
//!   words, long non-stop-words) are candidates; one is blanked out per
//!   question and becomes the reference answer.
//! * `answer_judge`: accept iff the lowercase token sets of the reference and
//!   the user answer agree after removing [`MOCK_STOP_WORDS`].
//! * `feature_extract`: keyword regexes from `fixtures/mock_feature_rules.json`.
//! * `fraud_assess`: without retrieval the score is a flag-count prior that
//!   over-flags anything carrying a red flag; with retrieval it is `0.2` per
//!   retrieved confirmed-scam hit sharing a red flag with the message, capped
//!   at `1.0`.
//!
//! The remaining types wrap or replace it to inject faults.

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU32, Ordering};

use regex::{Regex, RegexBuilder};
use serde::Deserialize;

use super::output::{AssessmentOutput, FeatureOutput, JudgeVerdict, QaPair, Urgency, VerdictLabel};
use super::{Completion, CompletionRequest, LlmProvider, ProviderError, TemplateId};
use crate::embedding::hashing_tokens;
use crate::fraud::{EvidenceLine, NO_RAG_MARKER};

/// Words the scripted judge treats as non-essential.
pub const MOCK_STOP_WORDS: &[&str] = crate::embedding::FUNCTION_WORDS;

const MOCK_RULES: &str = include_str!("../../fixtures/mock_feature_rules.json");

/// Where the scripted question generator looks in a text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GenerationBias {
    /// Candidates evenly spread over the text.
    #[default]
    Spread,
    /// Arcsine-shaped: favours the beginning and the end, like unsegmented
    /// live models do.
    HeadTail,
}

#[derive(Deserialize)]
struct RuleFile {
    red_flags: std::collections::BTreeMap<String, Vec<String>>,
    urgency_low: Vec<String>,
    requested_actions: std::collections::BTreeMap<String, Vec<String>>,
    intents: Vec<IntentRule>,
}

#[derive(Deserialize)]
struct IntentRule {
    when: String,
    intent: String,
}

struct Rules {
    red_flags: Vec<(String, Vec<Regex>)>,
    urgency_low: Vec<Regex>,
    actions: Vec<(String, Vec<Regex>)>,
    intents: Vec<IntentRule>,
}

fn compile(patterns: &[String]) -> Vec<Regex> {
    patterns
        .iter()
        .map(|p| {
            RegexBuilder::new(p)
                .case_insensitive(true)
                .build()
                .expect("mock rule fixture contains valid regexes")
        })
        .collect()
}

impl Rules {
    fn bundled() -> Self {
        let file: RuleFile = serde_json::from_str(MOCK_RULES).expect("mock rule fixture parses");
        Self {
            red_flags: file
                .red_flags
                .iter()
                .map(|(tag, p)| (tag.clone(), compile(p)))
                .collect(),
            urgency_low: compile(&file.urgency_low),
            actions: file
                .requested_actions
                .iter()
                .map(|(a, p)| (a.clone(), compile(p)))
                .collect(),
            intents: file.intents,
        }
    }
}

fn any_match(regexes: &[Regex], text: &str) -> bool {
    regexes.iter().any(|r| r.is_match(text))
}

/// Rule-based stand-in for every template.
pub struct ScriptedLlm {
    bias: GenerationBias,
    rules: Rules,
}

impl Default for ScriptedLlm {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedLlm {
    pub fn new() -> Self {
        Self::with_bias(GenerationBias::Spread)
    }

    pub fn with_bias(bias: GenerationBias) -> Self {
        Self {
            bias,
            rules: Rules::bundled(),
        }
    }

    pub fn bias(&self) -> GenerationBias {
        self.bias
    }

    fn questions(&self, text: &str, count: usize, avoid: &HashSet<String>) -> Vec<QaPair> {
        cloze_pairs(text, count, avoid, self.bias)
    }

    /// The feature rule table applied to `message`.
    pub fn features(&self, message: &str) -> FeatureOutput {
        let red_flags: Vec<String> = self
            .rules
            .red_flags
            .iter()
            .filter(|(_, res)| any_match(res, message))
            .map(|(tag, _)| tag.clone())
            .collect();
        let has = |t: &str| red_flags.iter().any(|f| f == t);
        let urgency = if has("urgent_language") {
            Urgency::High
        } else if any_match(&self.rules.urgency_low, message) {
            Urgency::Low
        } else {
            Urgency::None
        };
        let intent = self
            .rules
            .intents
            .iter()
            .find(|rule| has(&rule.when))
            .map(|rule| rule.intent.clone())
            .unwrap_or_else(|| {
                if message.contains('?') {
                    "ask a question".into()
                } else {
                    "share information".into()
                }
            });
        let tone = if has("account_lock_threat") {
            "threatening"
        } else if urgency == Urgency::High {
            "urgent"
        } else if has("prize_offer") {
            "excited"
        } else {
            "neutral"
        }
        .to_string();
        let requested_actions = self
            .rules
            .actions
            .iter()
            .filter(|(_, res)| any_match(res, message))
            .map(|(a, _)| a.clone())
            .collect();
        let entities = message
            .split_whitespace()
            .filter_map(|raw| {
                let t = raw.trim_matches(|c: char| !(c.is_alphanumeric() || "/:.$£€".contains(c)));
                let t = t.trim_end_matches(['.', ':']);
                let looks_like = t.contains("://")
                    || t.starts_with("www.")
                    || t.chars().any(|c| c.is_ascii_digit())
                    || t.chars().skip(1).any(char::is_uppercase);
                (looks_like && !t.is_empty()).then(|| t.to_string())
            })
            .collect();
        let mut contextual_clues = Vec::new();
        if has("fake_link") {
            contextual_clues.push("contains a link".to_string());
        }
        if urgency != Urgency::None {
            contextual_clues.push("mentions a deadline or time pressure".to_string());
        }
        if message.chars().filter(|c| *c == '!').count() >= 2 {
            contextual_clues.push("repeated exclamation marks".to_string());
        }
        FeatureOutput {
            intent,
            tone,
            urgency,
            requested_actions,
            entities,
            contextual_clues,
            red_flag_candidates: red_flags,
        }
    }
}

fn core_token(raw: &str) -> &str {
    raw.trim_matches(|c: char| !(c.is_alphanumeric() || c == '_'))
}

fn is_stop_word(word: &str) -> bool {
    MOCK_STOP_WORDS.contains(&word.to_lowercase().as_str())
}

/// Token positions the cloze generator may blank out, most salient tier first.
fn cloze_candidates(tokens: &[&str]) -> Vec<usize> {
    let sentence_start = |i: usize| {
        i == 0 || tokens[i - 1].ends_with(['.', '!', '?'])
    };
    let salient: Vec<usize> = (0..tokens.len())
        .filter(|&i| {
            let core = core_token(tokens[i]);
            if core.is_empty() {
                return false;
            }
            core.chars().any(|c| c.is_ascii_digit())
                || (core.chars().next().is_some_and(char::is_uppercase) && !sentence_start(i))
                || (core.chars().count() >= 6 && !is_stop_word(core))
        })
        .collect();
    if !salient.is_empty() {
        return salient;
    }
    let content: Vec<usize> = (0..tokens.len())
        .filter(|&i| {
            let core = core_token(tokens[i]);
            !core.is_empty() && !is_stop_word(core)
        })
        .collect();
    if !content.is_empty() {
        return content;
    }
    (0..tokens.len()).collect()
}

fn cloze_question(tokens: &[&str], position: usize) -> (String, String) {
    const CONTEXT: usize = 6;
    let raw = tokens[position];
    let core = core_token(raw);
    let (answer, blanked) = if core.is_empty() {
        (raw.to_string(), "_____".to_string())
    } else {
        (core.to_string(), raw.replacen(core, "_____", 1))
    };
    let start = position.saturating_sub(CONTEXT);
    let end = (position + CONTEXT + 1).min(tokens.len());
    let window: Vec<&str> = (start..end)
        .map(|i| if i == position { blanked.as_str() } else { tokens[i] })
        .collect();
    let lead = if start > 0 { "... " } else { "" };
    let tail = if end < tokens.len() { " ..." } else { "" };
    (
        format!("Fill in the blank from your records: \"{lead}{}{tail}\"", window.join(" ")),
        answer,
    )
}

fn cloze_pairs(text: &str, count: usize, avoid: &HashSet<String>, bias: GenerationBias) -> Vec<QaPair> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Vec::new();
    }
    let candidates = cloze_candidates(&tokens);
    let n = candidates.len();
    let questions: Vec<(String, String)> = candidates.iter().map(|&p| cloze_question(&tokens, p)).collect();
    let mut used = vec![false; n];
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let u = (i as f64 + 0.5) / count as f64;
        let target = match bias {
            GenerationBias::Spread => u,
            GenerationBias::HeadTail => 0.5 * (1.0 - (PI * u).cos()),
        };
        let preferred = ((target * n as f64) as usize).min(n - 1);
        // Nearest free candidate not asked before; then nearest free; then the
        // preferred one again (only when count exceeds the candidate pool).
        let nearest = |allow_avoided: bool| {
            (0..n).find_map(|offset| {
                [preferred.checked_add(offset), preferred.checked_sub(offset)]
                    .into_iter()
                    .flatten()
                    .filter(|&c| c < n)
                    .find(|&c| !used[c] && (allow_avoided || !avoid.contains(&questions[c].0)))
            })
        };
        let pick = nearest(false).or_else(|| nearest(true)).unwrap_or(preferred);
        used[pick] = true;
        let (question, answer) = questions[pick].clone();
        pairs.push(QaPair { question, answer });
    }
    pairs
}

fn essential_tokens(text: &str) -> BTreeSet<String> {
    hashing_tokens(text).filter(|t| !is_stop_word(t)).collect()
}

/// The scripted judge's decision rule.
pub fn scripted_judge(reference: &str, user: &str) -> JudgeVerdict {
    let (mut expected, mut given) = (essential_tokens(reference), essential_tokens(user));
    if expected.is_empty() {
        expected = hashing_tokens(reference).collect();
        given = hashing_tokens(user).collect();
    }
    if expected == given {
        JudgeVerdict {
            accept: true,
            rationale: "The answer carries the same essential content as the model answer.".into(),
        }
    } else {
        let missing: Vec<&str> = expected.difference(&given).map(String::as_str).collect();
        let extra: Vec<&str> = given.difference(&expected).map(String::as_str).collect();
        JudgeVerdict {
            accept: false,
            rationale: format!(
                "The essential content differs from the model answer (missing: [{}]; unexpected: [{}]).",
                missing.join(", "),
                extra.join(", ")
            ),
        }
    }
}

fn parse_flags_line(features: &str) -> BTreeSet<String> {
    features
        .lines()
        .find_map(|l| l.trim().strip_prefix("red_flag_candidates:"))
        .map(|rest| {
            rest.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty() && *t != "(none)")
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn parse_urgency_line(features: &str) -> Urgency {
    match features
        .lines()
        .find_map(|l| l.trim().strip_prefix("urgency:"))
        .map(str::trim)
    {
        Some("high") => Urgency::High,
        Some("low") => Urgency::Low,
        _ => Urgency::None,
    }
}

/// Score without retrieval: anything with a red flag is pushed over 0.5.
pub fn scripted_prior_score(flag_count: usize, urgency: Urgency) -> f64 {
    if flag_count == 0 {
        match urgency {
            Urgency::None => 0.05,
            Urgency::Low => 0.15,
            Urgency::High => 0.30,
        }
    } else {
        let bonus = match urgency {
            Urgency::None => 0.0,
            Urgency::Low => 0.05,
            Urgency::High => 0.10,
        };
        (0.40 + 0.15 * flag_count as f64 + bonus).min(1.0)
    }
}

fn scripted_assessment(features: &str, evidence: &str) -> AssessmentOutput {
    let flags = parse_flags_line(features);
    if evidence.trim_start().starts_with(NO_RAG_MARKER) {
        let urgency = parse_urgency_line(features);
        let score = scripted_prior_score(flags.len(), urgency);
        let rationale = if flags.is_empty() {
            "No red flags were identified in the message.".to_string()
        } else {
            format!(
                "The message shows red flags ({}), which are typical of scams.",
                flags.iter().cloned().collect::<Vec<_>>().join(", ")
            )
        };
        return AssessmentOutput {
            score,
            verdict: if score >= 0.5 { VerdictLabel::Scam } else { VerdictLabel::Legitimate },
            rationale,
            cited_evidence: Vec::new(),
        };
    }
    let matching: Vec<EvidenceLine> = evidence
        .lines()
        .filter_map(EvidenceLine::parse)
        .filter(|hit| hit.label == "scam" && hit.red_flags.iter().any(|f| flags.contains(f)))
        .collect();
    let score = (matching.len() as f64 * 0.2).min(1.0);
    let rationale = if matching.is_empty() {
        "No retrieved confirmed-scam example shares this message's red flags.".to_string()
    } else {
        format!(
            "{} retrieved confirmed-scam example(s) share red flags with this message.",
            matching.len()
        )
    };
    AssessmentOutput {
        score,
        verdict: if score >= 0.5 { VerdictLabel::Scam } else { VerdictLabel::Legitimate },
        rationale,
        cited_evidence: matching.into_iter().map(|h| h.id).collect(),
    }
}

fn avoid_set(request: &CompletionRequest) -> HashSet<String> {
    request
        .bindings
        .get("avoid")
        .map(|a| {
            a.lines()
                .filter_map(|l| l.strip_prefix("- "))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn binding<'a>(request: &'a CompletionRequest, name: &str) -> Result<&'a str, ProviderError> {
    request
        .bindings
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| ProviderError::new(format!("scripted provider needs binding {name:?}")))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("output types serialise")
}

impl LlmProvider for ScriptedLlm {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let text = match request.template_id {
            TemplateId::QuestionGen => {
                let count: usize = binding(request, "count")?
                    .trim()
                    .parse()
                    .map_err(|_| ProviderError::new("count binding is not a number"))?;
                let pairs = self.questions(binding(request, "segment_text")?, count, &avoid_set(request));
                to_json(&serde_json::json!({ "pairs": pairs }))
            }
            TemplateId::AnswerJudge => to_json(&scripted_judge(
                binding(request, "reference_answer")?,
                binding(request, "user_answer")?,
            )),
            TemplateId::FeatureExtract => to_json(&self.features(binding(request, "message")?)),
            TemplateId::FraudAssess => to_json(&scripted_assessment(
                binding(request, "features")?,
                binding(request, "evidence")?,
            )),
        };
        Ok(Completion {
            text,
            latency_ms: Some(0),
        })
    }
}

/// Judge stand-in that accepts only byte-identical answers.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExactMatchJudge;

impl LlmProvider for ExactMatchJudge {
    fn name(&self) -> &str {
        "exact-match"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        if request.template_id != TemplateId::AnswerJudge {
            return Err(ProviderError::new("exact-match judge only answers answer_judge"));
        }
        let accept = binding(request, "reference_answer")? == binding(request, "user_answer")?;
        let verdict = JudgeVerdict {
            accept,
            rationale: if accept { "Exact match." } else { "Not an exact match." }.into(),
        };
        Ok(Completion {
            text: to_json(&verdict),
            latency_ms: Some(0),
        })
    }
}

/// Emits junk for the first `n` calls, then defers to `inner`.
pub struct JunkFirst<P> {
    inner: P,
    remaining: AtomicU32,
}

impl<P> JunkFirst<P> {
    pub fn new(inner: P, junk_replies: u32) -> Self {
        Self {
            inner,
            remaining: AtomicU32::new(junk_replies),
        }
    }
}

impl<P: LlmProvider> LlmProvider for JunkFirst<P> {
    fn name(&self) -> &str {
        "junk-first"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let junk = self
            .remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if junk {
            Ok(Completion::text("I'm sorry, I can't produce JSON right now."))
        } else {
            self.inner.complete(request)
        }
    }
}

/// Always returns the same text.
pub struct FixedReply(pub String);

impl LlmProvider for FixedReply {
    fn name(&self) -> &str {
        "fixed"
    }

    fn complete(&self, _request: &CompletionRequest) -> Result<Completion, ProviderError> {
        Ok(Completion::text(self.0.clone()))
    }
}

/// Every call fails at the transport level.
#[derive(Debug, Default, Clone, Copy)]
pub struct UnavailableProvider;

impl LlmProvider for UnavailableProvider {
    fn name(&self) -> &str {
        "unavailable"
    }

    fn complete(&self, _request: &CompletionRequest) -> Result<Completion, ProviderError> {
        Err(ProviderError {
            reason: "connection refused".into(),
            retry_after_secs: Some(5),
        })
    }

    fn is_reachable(&self) -> bool {
        false
    }
}

/// Wraps a provider and pollutes its structured output: fabricated citation
/// ids on `fraud_assess` and out-of-vocabulary tags on `feature_extract`.
pub struct HostileProvider<P> {
    inner: P,
    calls: AtomicU32,
}

impl<P> HostileProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicU32::new(0),
        }
    }
}

pub const FABRICATED_ID_PREFIX: &str = "fabricated-";

impl<P: LlmProvider> LlmProvider for HostileProvider<P> {
    fn name(&self) -> &str {
        "hostile"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let mut completion = self.inner.complete(request)?;
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        match request.template_id {
            TemplateId::FraudAssess => {
                if let Ok(mut out) = serde_json::from_str::<AssessmentOutput>(&completion.text) {
                    out.cited_evidence.push(format!("{FABRICATED_ID_PREFIX}{n:04}"));
                    out.cited_evidence.push("scam-does-not-exist".into());
                    completion.text = to_json(&out);
                }
            }
            TemplateId::FeatureExtract => {
                if let Ok(mut out) = serde_json::from_str::<FeatureOutput>(&completion.text) {
                    out.red_flag_candidates.push("scary_font".into());
                    completion.text = to_json(&out);
                }
            }
            _ => {}
        }
        Ok(completion)
    }
}
