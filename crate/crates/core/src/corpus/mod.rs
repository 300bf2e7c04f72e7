//! Datasets of questions over character-indexed documents.
//!
//! Offsets everywhere in this crate count Unicode scalar values, never bytes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub mod canonical;
mod formats;

pub use formats::{
    load_dataset, parse_squad, parse_techqa, DatasetFormat, DatasetSource, LoadOptions, Loaded,
    Repair, REPAIR_WINDOW,
};

/// Half-open character range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub const fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Non-empty and inside a document of `doc_len` characters.
    pub fn is_valid_within(&self, doc_len: usize) -> bool {
        self.start < self.end && self.end <= doc_len
    }

    pub fn contains(&self, other: &CharSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Number of characters shared by both ranges.
    pub fn overlap(&self, other: &CharSpan) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

impl fmt::Display for CharSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    id: String,
    text: String,
    char_len: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let char_len = text.chars().count();
        Document {
            id: id.into(),
            text,
            char_len,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn char_len(&self) -> usize {
        self.char_len
    }

    fn byte_offset(&self, char_idx: usize) -> Option<usize> {
        if char_idx == self.char_len {
            return Some(self.text.len());
        }
        self.text.char_indices().nth(char_idx).map(|(b, _)| b)
    }

    /// Text covered by `span`, or `None` when the span is empty or out of bounds.
    pub fn slice(&self, span: CharSpan) -> Option<&str> {
        if !span.is_valid_within(self.char_len) {
            return None;
        }
        let start = self.byte_offset(span.start)?;
        let end = self.byte_offset(span.end)?;
        Some(&self.text[start..end])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub doc_id: String,
    pub span: CharSpan,
    pub text: String,
}

impl Answer {
    /// Answer whose text is taken from `doc` at `span`.
    pub fn from_document(doc: &Document, span: CharSpan) -> Result<Self> {
        let text = doc.slice(span).ok_or_else(|| Error::InvalidSpan {
            doc_id: doc.id().to_owned(),
            span,
            doc_len: doc.char_len(),
        })?;
        Ok(Answer {
            doc_id: doc.id().to_owned(),
            span,
            text: text.to_owned(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub candidate_doc_ids: Vec<String>,
    /// `None` for unanswerable questions.
    pub gold: Option<Answer>,
}

impl Question {
    pub fn is_answerable(&self) -> bool {
        self.gold.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub split_name: String,
    pub documents: BTreeMap<String, Document>,
    pub questions: Vec<Question>,
}

impl Dataset {
    pub fn new(split_name: impl Into<String>) -> Self {
        Dataset {
            split_name: split_name.into(),
            ..Default::default()
        }
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.get(id)
    }

    pub fn insert_document(&mut self, doc: Document) {
        self.documents.insert(doc.id.clone(), doc);
    }

    pub fn num_answerable(&self) -> usize {
        self.questions.iter().filter(|q| q.is_answerable()).count()
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(canonical::to_bytes(self)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DocumentIdMismatch,
    EmptyDocument,
    DuplicateQuestionId,
    EmptyCandidates,
    DuplicateCandidate,
    UnknownCandidate,
    GoldOutsideCandidates,
    UnknownGoldDocument,
    SpanBounds,
    AnswerTextMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// `None` for document-level problems.
    pub question_id: Option<String>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.question_id {
            Some(q) => write!(f, "{q}: {:?}: {}", self.rule, self.detail),
            None => write!(f, "<documents>: {:?}: {}", self.rule, self.detail),
        }
    }
}

/// Checks every type invariant; an empty result means the dataset is well formed.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let doc_violation = |rule, detail: String| Violation {
        question_id: None,
        rule,
        detail,
    };
    for (key, doc) in &d.documents {
        if key != doc.id() {
            out.push(doc_violation(
                Rule::DocumentIdMismatch,
                format!("map key {key:?} holds document {:?}", doc.id()),
            ));
        }
        if doc.char_len() == 0 {
            out.push(doc_violation(Rule::EmptyDocument, format!("document {key:?} is empty")));
        }
    }

    let mut seen_questions = HashSet::new();
    for q in &d.questions {
        let mut flag = |rule, detail: String| {
            out.push(Violation {
                question_id: Some(q.id.clone()),
                rule,
                detail,
            })
        };
        if !seen_questions.insert(q.id.as_str()) {
            flag(Rule::DuplicateQuestionId, "question id appears more than once".into());
        }
        if q.candidate_doc_ids.is_empty() {
            flag(Rule::EmptyCandidates, "candidate list is empty".into());
        }
        let mut seen_docs = HashSet::new();
        for c in &q.candidate_doc_ids {
            if !seen_docs.insert(c.as_str()) {
                flag(Rule::DuplicateCandidate, format!("candidate {c:?} listed twice"));
            }
            if !d.documents.contains_key(c) {
                flag(Rule::UnknownCandidate, format!("candidate {c:?} is not a loaded document"));
            }
        }
        let Some(gold) = &q.gold else { continue };
        if !seen_docs.contains(gold.doc_id.as_str()) {
            flag(
                Rule::GoldOutsideCandidates,
                format!("gold document {:?} is not among the candidates", gold.doc_id),
            );
        }
        let Some(doc) = d.documents.get(&gold.doc_id) else {
            flag(
                Rule::UnknownGoldDocument,
                format!("gold document {:?} is not loaded", gold.doc_id),
            );
            continue;
        };
        match doc.slice(gold.span) {
            None => flag(
                Rule::SpanBounds,
                format!("span {} outside document of length {}", gold.span, doc.char_len()),
            ),
            Some(found) if found != gold.text => flag(
                Rule::AnswerTextMismatch,
                format!("expected {:?}, document has {found:?}", gold.text),
            ),
            Some(_) => {}
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_questions: usize,
    pub num_answerable: usize,
    pub avg_answer_len_tokens: f64,
    pub avg_question_len_tokens: f64,
    pub avg_candidate_pool: f64,
}

fn whitespace_tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

fn mean(total: usize, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

/// Whitespace-token statistics. Answer length is averaged over answerable
/// questions, the rest over all questions.
pub fn compute_stats(d: &Dataset) -> DatasetStats {
    let num_questions = d.questions.len();
    let answers: Vec<&Answer> = d.questions.iter().filter_map(|q| q.gold.as_ref()).collect();
    let answer_tokens: usize = answers.iter().map(|a| whitespace_tokens(&a.text)).sum();
    let question_tokens: usize = d.questions.iter().map(|q| whitespace_tokens(&q.text)).sum();
    let pool: usize = d.questions.iter().map(|q| q.candidate_doc_ids.len()).sum();
    DatasetStats {
        num_questions,
        num_answerable: answers.len(),
        avg_answer_len_tokens: mean(answer_tokens, answers.len()),
        avg_question_len_tokens: mean(question_tokens, num_questions),
        avg_candidate_pool: mean(pool, num_questions),
    }
}
