//! Training-free span scorer. Slides token windows over each candidate
//! document and scores them by idf-weighted overlap with the question.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::corpus::{CharSpan, Dataset, Document, Question};
use crate::error::{Error, Result};
use crate::metrics::SpanPrediction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased, with leading and trailing punctuation removed. May be empty.
    pub norm: String,
    pub span: CharSpan,
}

fn normalize(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Whitespace tokens with their character spans.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None; // (char idx, byte idx)
    let mut push = |s: (usize, usize), end_char: usize, end_byte: usize| {
        out.push(Token {
            norm: normalize(&text[s.1..end_byte]),
            span: CharSpan::new(s.0, end_char),
        })
    };
    let mut n = 0;
    for (ci, (bi, ch)) in text.char_indices().enumerate() {
        n = ci + 1;
        match (ch.is_whitespace(), start) {
            (true, Some(s)) => {
                push(s, ci, bi);
                start = None;
            }
            (false, None) => start = Some((ci, bi)),
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s, n, text.len());
    }
    out
}

/// Per-token weights. Unknown tokens get `default`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    pub weights: HashMap<String, f64>,
    pub default: f64,
}

impl IdfTable {
    /// Smoothed idf `ln((1 + N) / (1 + df)) + 1` over the given documents.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n = 0usize;
        for doc in docs {
            n += 1;
            let distinct: HashSet<String> = tokenize(doc.text())
                .into_iter()
                .map(|t| t.norm)
                .filter(|t| !t.is_empty())
                .collect();
            for t in distinct {
                *df.entry(t).or_default() += 1;
            }
        }
        let idf = |df: usize| ((1 + n) as f64 / (1 + df) as f64).ln() + 1.0;
        IdfTable {
            weights: df.into_iter().map(|(t, c)| (t, idf(c))).collect(),
            default: idf(0),
        }
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(self.default)
    }
}

fn weight(idf: Option<&IdfTable>, token: &str) -> f64 {
    idf.map_or(1.0, |t| t.weight(token))
}

/// Distinct non-empty tokens in first-occurrence order.
fn distinct<S: AsRef<str>>(tokens: &[S]) -> Vec<&str> {
    let mut seen = HashSet::new();
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !t.is_empty() && seen.insert(*t))
        .collect()
}

/// Sum of idf over distinct shared tokens, divided by `sqrt(|window|)`.
/// Tokens are expected to be normalized already; a missing table means unit
/// weights.
pub fn score_window<Q: AsRef<str>, W: AsRef<str>>(question: &[Q], window: &[W], idf: Option<&IdfTable>) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    let in_window: HashSet<&str> = window.iter().map(AsRef::as_ref).collect();
    let shared: f64 = distinct(question)
        .into_iter()
        .filter(|t| in_window.contains(t))
        .map(|t| weight(idf, t))
        .sum();
    shared / (window.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    /// Window lengths in tokens.
    pub window_tokens: Vec<usize>,
    pub max_spans_per_doc: usize,
    pub idf_table: Option<IdfTable>,
}

impl Default for ExtractorParams {
    fn default() -> Self {
        ExtractorParams {
            window_tokens: vec![20, 40],
            max_spans_per_doc: 5,
            idf_table: None,
        }
    }
}

impl ExtractorParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_tokens.is_empty() || self.window_tokens.contains(&0) {
            return Err(Error::InvalidParams("window lengths must be non-empty and at least 1".into()));
        }
        if self.max_spans_per_doc == 0 {
            return Err(Error::InvalidParams("max_spans_per_doc must be at least 1".into()));
        }
        Ok(())
    }
}

fn score_document(
    question_id: &str,
    q_terms: &[&str],
    q_weights: &[f64],
    doc: &Document,
    params: &ExtractorParams,
) -> Result<Vec<SpanPrediction>> {
    let tokens = tokenize(doc.text());
    if tokens.is_empty() {
        return Err(Error::EmptyDocument(doc.id().to_owned()));
    }
    let index: HashMap<&str, usize> = q_terms.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let term_of: Vec<Option<usize>> = tokens.iter().map(|t| index.get(t.norm.as_str()).copied()).collect();

    let mut best: HashMap<CharSpan, f64> = HashMap::new();
    for &w in &params.window_tokens {
        let w = w.min(tokens.len());
        let mut counts = vec![0u32; q_terms.len()];
        for t in term_of[..w].iter().flatten() {
            counts[*t] += 1;
        }
        for start in 0..=tokens.len() - w {
            if start > 0 {
                if let Some(t) = term_of[start - 1] {
                    counts[t] -= 1;
                }
                if let Some(t) = term_of[start + w - 1] {
                    counts[t] += 1;
                }
            }
            // Summed in question-token order, matching score_window.
            let shared: f64 = counts
                .iter()
                .zip(q_weights)
                .filter(|(c, _)| **c > 0)
                .map(|(_, wgt)| *wgt)
                .sum();
            let score = shared / (w as f64).sqrt();
            let span = CharSpan::new(tokens[start].span.start, tokens[start + w - 1].span.end);
            let slot = best.entry(span).or_insert(score);
            if score > *slot {
                *slot = score;
            }
        }
    }

    let mut ranked: Vec<(CharSpan, f64)> = best.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(params.max_spans_per_doc);
    Ok(ranked
        .into_iter()
        .map(|(span, score)| SpanPrediction::span(question_id, doc.id(), span, score))
        .collect())
}

/// Top `max_spans_per_doc` windows of every document, documents in the
/// order given and spans by descending score (ties by start).
pub fn extract_spans(q: &Question, docs: &[&Document], params: &ExtractorParams) -> Result<Vec<SpanPrediction>> {
    params.validate()?;
    let q_tokens: Vec<String> = tokenize(&q.text).into_iter().map(|t| t.norm).collect();
    let q_terms = distinct(&q_tokens);
    let q_weights: Vec<f64> = q_terms.iter().map(|t| weight(params.idf_table.as_ref(), t)).collect();
    let mut out = Vec::new();
    for doc in docs {
        out.extend(score_document(&q.id, &q_terms, &q_weights, doc, params)?);
    }
    Ok(out)
}

/// Runs the extractor over every question's candidate documents. Output is
/// in question order regardless of thread count.
pub fn extract_dataset(d: &Dataset, params: &ExtractorParams) -> Result<Vec<SpanPrediction>> {
    params.validate()?;
    let per_question: Vec<Vec<SpanPrediction>> = d
        .questions
        .par_iter()
        .map(|q| {
            let docs = q
                .candidate_doc_ids
                .iter()
                .map(|id| d.document(id).ok_or_else(|| Error::UnknownDocument(id.clone())))
                .collect::<Result<Vec<_>>>()?;
            extract_spans(q, &docs, params)
        })
        .collect::<Result<_>>()?;
    Ok(per_question.into_iter().flatten().collect())
}
