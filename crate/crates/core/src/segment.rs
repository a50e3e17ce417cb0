//! Equal word-count document segmentation and question-to-segment attribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbedError, Embedder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("document has no tokens and cannot seed questions")]
    EmptyDocument,

    #[error("segment count must be at least 1")]
    ZeroSegments,

    #[error("no segments to attribute against")]
    NoSegments,

    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Personal text that seeds challenge questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDocument {
    pub doc_id: String,
    pub user_id: String,
    pub text: String,
}

impl UserDocument {
    pub fn new(doc_id: impl Into<String>, user_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            user_id: user_id.into(),
            text: text.into(),
        }
    }

    pub fn word_count(&self) -> usize {
        tokenize(&self.text).len()
    }
}

/// A contiguous, near-equal slice of a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSegment {
    pub segment_index: usize,
    pub text: String,
    pub word_count: usize,
}

/// Whitespace tokenisation; punctuation stays attached to its word.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Split `total` items into `buckets` counts differing by at most one, with
/// the remainder assigned to the lowest-index buckets.
///
/// # Panics
///
/// Panics if `buckets` is zero.
pub fn balanced_counts(total: usize, buckets: usize) -> Vec<usize> {
    assert!(buckets > 0, "balanced_counts needs at least one bucket");
    let base = total / buckets;
    let remainder = total % buckets;
    (0..buckets)
        .map(|i| base + usize::from(i < remainder))
        .collect()
}

/// Split a document into `min(segment_count, word_count)` segments.
pub fn segment_document(
    doc: &UserDocument,
    segment_count: usize,
) -> Result<Vec<DocumentSegment>, SegmentError> {
    segment_text(&doc.text, segment_count)
}

/// Same as [`segment_document`] on bare text.
pub fn segment_text(text: &str, segment_count: usize) -> Result<Vec<DocumentSegment>, SegmentError> {
    if segment_count == 0 {
        return Err(SegmentError::ZeroSegments);
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(SegmentError::EmptyDocument);
    }
    let effective = segment_count.min(tokens.len());
    let mut start = 0;
    Ok(balanced_counts(tokens.len(), effective)
        .into_iter()
        .enumerate()
        .map(|(segment_index, size)| {
            let slice = &tokens[start..start + size];
            start += size;
            DocumentSegment {
                segment_index,
                text: slice.join(" "),
                word_count: size,
            }
        })
        .collect())
}

/// Index of the segment most similar to `question + " " + answer`.
///
/// Ties resolve to the lowest index.
pub fn attribute_to_segment(
    question: &str,
    answer: &str,
    segments: &[DocumentSegment],
    embedder: &dyn Embedder,
) -> Result<usize, SegmentError> {
    if segments.is_empty() {
        return Err(SegmentError::NoSegments);
    }
    if segments.len() == 1 {
        return Ok(0);
    }
    let probe = embedder.embed(&format!("{question} {answer}"))?;
    let mut best = (0, f64::NEG_INFINITY);
    for (index, segment) in segments.iter().enumerate() {
        let sim = cosine_similarity(&probe, &embedder.embed(&segment.text)?)?;
        if sim > best.1 {
            best = (index, sim);
        }
    }
    Ok(best.0)
}
