//! Span-level answer metrics (character-overlap F1, exact match, recall) and
//! document retrieval accuracy at k.
//!
//! Overlap is measured on character ranges, so the same text found at a
//! different offset does not count.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{Answer, CharSpan, Dataset, Question};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredictedSpan {
    pub doc_id: String,
    pub span: CharSpan,
}

/// One scored span from any extractor. `answer == None` means "no answer".
#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction {
    pub question_id: String,
    pub answer: Option<PredictedSpan>,
    pub score: f64,
}

impl SpanPrediction {
    pub fn span(question_id: impl Into<String>, doc_id: impl Into<String>, span: CharSpan, score: f64) -> Self {
        SpanPrediction {
            question_id: question_id.into(),
            answer: Some(PredictedSpan {
                doc_id: doc_id.into(),
                span,
            }),
            score,
        }
    }

    pub fn no_answer(question_id: impl Into<String>, score: f64) -> Self {
        SpanPrediction {
            question_id: question_id.into(),
            answer: None,
            score,
        }
    }
}

fn check_nonempty(doc_id: &str, span: CharSpan) -> Result<()> {
    if span.start < span.end {
        Ok(())
    } else {
        Err(Error::InvalidSpan {
            doc_id: doc_id.to_owned(),
            span,
            doc_len: 0,
        })
    }
}

enum Pairing {
    BothAbsent,
    Disjoint,
    /// (overlap, predicted length, gold length)
    Overlap(usize, usize, usize),
}

fn pair(pred: Option<&PredictedSpan>, gold: Option<&Answer>) -> Result<Pairing> {
    if let Some(p) = pred {
        check_nonempty(&p.doc_id, p.span)?;
    }
    if let Some(g) = gold {
        check_nonempty(&g.doc_id, g.span)?;
    }
    Ok(match (pred, gold) {
        (None, None) => Pairing::BothAbsent,
        (Some(p), Some(g)) if p.doc_id == g.doc_id => {
            Pairing::Overlap(p.span.overlap(&g.span), p.span.len(), g.span.len())
        }
        _ => Pairing::Disjoint,
    })
}

/// Harmonic mean of character precision and recall. A correct "no answer"
/// scores 1.
pub fn char_overlap_f1(pred: Option<&PredictedSpan>, gold: Option<&Answer>) -> Result<f64> {
    Ok(match pair(pred, gold)? {
        Pairing::BothAbsent => 1.0,
        Pairing::Disjoint | Pairing::Overlap(0, _, _) => 0.0,
        Pairing::Overlap(ov, plen, glen) => {
            let precision = ov as f64 / plen as f64;
            let recall = ov as f64 / glen as f64;
            2.0 * precision * recall / (precision + recall)
        }
    })
}

pub fn exact_match(pred: Option<&PredictedSpan>, gold: Option<&Answer>) -> Result<f64> {
    Ok(match pair(pred, gold)? {
        Pairing::BothAbsent => 1.0,
        Pairing::Overlap(..) if pred.map(|p| p.span) == gold.map(|g| g.span) => 1.0,
        _ => 0.0,
    })
}

/// Fraction of the gold characters covered by the prediction.
pub fn char_recall(pred: Option<&PredictedSpan>, gold: Option<&Answer>) -> Result<f64> {
    Ok(match pair(pred, gold)? {
        Pairing::BothAbsent => 1.0,
        Pairing::Disjoint => 0.0,
        Pairing::Overlap(ov, _, glen) => ov as f64 / glen as f64,
    })
}

/// 1 when `gold_doc` is among the first `k` retrieved documents.
pub fn dra_at_k(retrieved: &[String], gold_doc: &str, k: usize) -> f64 {
    if retrieved.iter().take(k).any(|d| d == gold_doc) {
        1.0
    } else {
        0.0
    }
}

/// How unanswerable questions enter the F1/EM/recall means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnanswerableScoring {
    /// Predicting "no answer" scores 1, anything else 0.
    #[default]
    Reward,
    /// Means are taken over answerable questions only.
    Exclude,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub unanswerable: UnanswerableScoring,
    /// Keep the highest-scoring of several predictions for one question
    /// instead of failing.
    pub best_per_question: bool,
    /// Include per-question diagnostics in the report.
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub answerable: bool,
    pub f1: f64,
    pub em: f64,
    pub recall: f64,
    /// 1-based rank of the gold document in the retrieved list.
    pub gold_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f1: f64,
    pub em: f64,
    pub recall: f64,
    /// DRA@k over answerable questions, keyed by k.
    pub dra: BTreeMap<usize, f64>,
    pub n_questions: usize,
    pub n_answerable: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_question: Option<Vec<QuestionScore>>,
}

impl EvalReport {
    /// One-row markdown table in percent: DRA@k columns, then F1, Recall, EM.
    pub fn to_table(&self) -> String {
        let mut head = String::from("|");
        let mut rule = String::from("|");
        let mut row = String::from("|");
        let mut col = |name: String, v: f64| {
            let _ = write!(head, " {name} |");
            let _ = write!(rule, " {} |", "-".repeat(name.len().max(5)));
            let _ = write!(row, " {:.2} |", v * 100.0);
        };
        for (k, v) in &self.dra {
            col(format!("DRA@{k}"), *v);
        }
        col("F1".into(), self.f1);
        col("Recall".into(), self.recall);
        col("EM".into(), self.em);
        format!("{head}\n{rule}\n{row}\n")
    }
}

fn better(a: &SpanPrediction, b: &SpanPrediction) -> bool {
    // Higher score wins; ties go to the smaller (doc_id, span).
    match a.score.total_cmp(&b.score) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Equal => a.answer < b.answer,
    }
}

fn check_against(d: &Dataset, p: &SpanPrediction) -> Result<()> {
    let Some(a) = &p.answer else { return Ok(()) };
    let doc = d
        .document(&a.doc_id)
        .ok_or_else(|| Error::UnknownDocument(a.doc_id.clone()))?;
    if !a.span.is_valid_within(doc.char_len()) {
        return Err(Error::InvalidSpan {
            doc_id: a.doc_id.clone(),
            span: a.span,
            doc_len: doc.char_len(),
        });
    }
    Ok(())
}

/// Scores one prediction per question against `d`.
///
/// Without `retrievals`, the predicted document alone stands in as the
/// retrieved list. DRA is averaged over answerable questions only, and sums
/// are accumulated in question-id order.
pub fn evaluate(
    preds: &[SpanPrediction],
    retrievals: Option<&BTreeMap<String, Vec<String>>>,
    d: &Dataset,
    ks: &[usize],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if let Some(k) = ks.iter().find(|k| **k == 0) {
        return Err(Error::InvalidParams(format!("DRA cut-off k = {k} must be at least 1")));
    }
    let questions: HashMap<&str, &Question> = d.questions.iter().map(|q| (q.id.as_str(), q)).collect();

    let mut best: BTreeMap<&str, &SpanPrediction> = BTreeMap::new();
    for p in preds {
        if !questions.contains_key(p.question_id.as_str()) {
            return Err(Error::UnknownQuestion(p.question_id.clone()));
        }
        check_against(d, p)?;
        match best.get(p.question_id.as_str()) {
            None => {
                best.insert(&p.question_id, p);
            }
            Some(_) if !opts.best_per_question => {
                return Err(Error::DuplicatePrediction(p.question_id.clone()))
            }
            Some(cur) => {
                if better(p, cur) {
                    best.insert(&p.question_id, p);
                }
            }
        }
    }

    let mut ids: Vec<&str> = questions.keys().copied().collect();
    ids.sort_unstable();

    let (mut f1_sum, mut em_sum, mut recall_sum) = (0.0, 0.0, 0.0);
    let mut scored = 0usize;
    let mut dra_sums: BTreeMap<usize, f64> = ks.iter().map(|k| (*k, 0.0)).collect();
    let mut n_answerable = 0usize;
    let mut per_question = Vec::new();

    for id in ids {
        let q = questions[id];
        let pred = best.get(id).ok_or_else(|| Error::MissingPrediction(id.to_owned()))?;
        let answer = pred.answer.as_ref();
        let gold = q.gold.as_ref();
        let f1 = char_overlap_f1(answer, gold)?;
        let em = exact_match(answer, gold)?;
        let recall = char_recall(answer, gold)?;
        if gold.is_some() || opts.unanswerable == UnanswerableScoring::Reward {
            f1_sum += f1;
            em_sum += em;
            recall_sum += recall;
            scored += 1;
        }

        let mut gold_rank = None;
        if let Some(g) = gold {
            n_answerable += 1;
            let fallback: Vec<String> = answer.map(|a| a.doc_id.clone()).into_iter().collect();
            let retrieved = match retrievals {
                Some(r) => r.get(id).map(Vec::as_slice).unwrap_or(&[]),
                None => fallback.as_slice(),
            };
            for (k, sum) in dra_sums.iter_mut() {
                *sum += dra_at_k(retrieved, &g.doc_id, *k);
            }
            gold_rank = retrieved.iter().position(|r| *r == g.doc_id).map(|i| i + 1);
        }
        if opts.verbose {
            per_question.push(QuestionScore {
                question_id: id.to_owned(),
                answerable: gold.is_some(),
                f1,
                em,
                recall,
                gold_rank,
            });
        }
    }

    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    Ok(EvalReport {
        f1: mean(f1_sum, scored),
        em: mean(em_sum, scored),
        recall: mean(recall_sum, scored),
        dra: dra_sums.into_iter().map(|(k, s)| (k, mean(s, n_answerable))).collect(),
        n_questions: d.questions.len(),
        n_answerable,
        per_question: opts.verbose.then_some(per_question),
    })
}

/// Line format of the predictions interchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub doc_id: Option<String>,
    #[serde(default)]
    pub start: Option<usize>,
    #[serde(default)]
    pub end: Option<usize>,
    pub score: f64,
}

impl From<&SpanPrediction> for PredictionRecord {
    fn from(p: &SpanPrediction) -> Self {
        PredictionRecord {
            question_id: p.question_id.clone(),
            doc_id: p.answer.as_ref().map(|a| a.doc_id.clone()),
            start: p.answer.as_ref().map(|a| a.span.start),
            end: p.answer.as_ref().map(|a| a.span.end),
            score: p.score,
        }
    }
}

impl PredictionRecord {
    pub fn into_prediction(self, location: &str) -> Result<SpanPrediction> {
        let answer = match (self.doc_id, self.start, self.end) {
            (None, _, _) => None,
            (Some(doc_id), Some(start), Some(end)) => Some(PredictedSpan {
                doc_id,
                span: CharSpan::new(start, end),
            }),
            (Some(_), _, _) => {
                return Err(Error::malformed(location, "doc_id given without start and end"))
            }
        };
        Ok(SpanPrediction {
            question_id: self.question_id,
            answer,
            score: self.score,
        })
    }
}

pub fn read_predictions<R: BufRead>(reader: R, location: &str) -> Result<Vec<SpanPrediction>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(location, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{location}:{}", idx + 1);
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::malformed(&at, e))?;
        out.push(rec.into_prediction(&at)?);
    }
    Ok(out)
}

pub fn write_predictions<W: Write + ?Sized>(w: &mut W, preds: &[SpanPrediction]) -> io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut *w, &PredictionRecord::from(p))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
