//! Candidate-pool reduction from span scores: keep the documents that own the
//! top-k spans of a question, ranked by each document's best span.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::metrics::SpanPrediction;

pub const DEFAULT_K: usize = 10;

/// question id → ranked document ids.
pub type Pools = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrievalParams {
    pub k: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams { k: DEFAULT_K }
    }
}

/// Ranked documents for one question. "No answer" predictions are ignored.
pub fn rerank_question(spans: &[SpanPrediction], k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidParams("k must be at least 1".into()));
    }
    if let Some(first) = spans.first() {
        if let Some(other) = spans.iter().find(|s| s.question_id != first.question_id) {
            return Err(Error::MixedQuestions {
                expected: first.question_id.clone(),
                found: other.question_id.clone(),
            });
        }
    }
    let mut ranked: Vec<_> = spans
        .iter()
        .filter_map(|s| s.answer.as_ref().map(|a| (s.score, a)))
        .collect();
    ranked.sort_by(|(sa, a), (sb, b)| {
        sb.total_cmp(sa)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
            .then_with(|| a.span.cmp(&b.span))
    });

    // Spans are already in (score desc, doc_id asc) order, so first
    // occurrence of a document is its best span and the order is final.
    let mut seen = HashSet::new();
    Ok(ranked
        .into_iter()
        .take(k)
        .filter(|(_, a)| seen.insert(a.doc_id.as_str()))
        .map(|(_, a)| a.doc_id.clone())
        .collect())
}

/// Pools for every question that appears in `preds`.
pub fn rerank_all(preds: &[SpanPrediction], k: usize) -> Result<Pools> {
    let mut grouped: BTreeMap<&str, Vec<SpanPrediction>> = BTreeMap::new();
    for p in preds {
        grouped.entry(&p.question_id).or_default().push(p.clone());
    }
    grouped
        .into_iter()
        .map(|(q, spans)| Ok((q.to_owned(), rerank_question(&spans, k)?)))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FilterSummary {
    /// Questions left with no candidates.
    pub empty_pool: Vec<String>,
    /// Answerable questions whose gold document was dropped.
    pub gold_dropped: Vec<String>,
    /// Questions with no pool entry; their candidates are unchanged.
    pub unpooled: Vec<String>,
}

/// Replaces each pooled question's candidates with its pool. Gold answers
/// are left alone even when their document is no longer a candidate.
pub fn filter_dataset(d: &Dataset, pools: &Pools) -> Result<(Dataset, FilterSummary)> {
    let known: HashSet<&str> = d.questions.iter().map(|q| q.id.as_str()).collect();
    for (qid, pool) in pools {
        if !known.contains(qid.as_str()) {
            return Err(Error::UnknownQuestion(qid.clone()));
        }
        if let Some(doc) = pool.iter().find(|doc| !d.documents.contains_key(*doc)) {
            return Err(Error::UnknownDocument(doc.clone()));
        }
    }

    let mut out = d.clone();
    let mut summary = FilterSummary::default();
    for q in &mut out.questions {
        let Some(pool) = pools.get(&q.id) else {
            summary.unpooled.push(q.id.clone());
            continue;
        };
        q.candidate_doc_ids = pool.clone();
        if pool.is_empty() {
            summary.empty_pool.push(q.id.clone());
        }
        if let Some(g) = &q.gold {
            if !pool.contains(&g.doc_id) {
                summary.gold_dropped.push(q.id.clone());
            }
        }
    }
    Ok((out, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoolStats {
    pub avg_pool: f64,
    pub max_pool: usize,
    pub n_questions: usize,
}

pub fn pool_stats(pools: &Pools) -> PoolStats {
    let n = pools.len();
    let total: usize = pools.values().map(Vec::len).sum();
    PoolStats {
        avg_pool: if n == 0 { 0.0 } else { total as f64 / n as f64 },
        max_pool: pools.values().map(Vec::len).max().unwrap_or(0),
        n_questions: n,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub question_id: String,
    pub doc_ids: Vec<String>,
}

pub fn write_pools<W: Write + ?Sized>(w: &mut W, pools: &Pools) -> io::Result<()> {
    for (q, docs) in pools {
        serde_json::to_writer(
            &mut *w,
            &PoolRecord {
                question_id: q.clone(),
                doc_ids: docs.clone(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pools<R: BufRead>(reader: R, location: &str) -> Result<Pools> {
    let mut pools = Pools::new();
    let mut seen = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(location, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{location}:{}", idx + 1);
        let rec: PoolRecord = serde_json::from_str(&line).map_err(|e| Error::malformed(&at, e))?;
        if let Some(prev) = seen.insert(rec.question_id.clone(), idx + 1) {
            return Err(Error::malformed(
                at,
                format!("question {:?} already pooled on line {prev}", rec.question_id),
            ));
        }
        pools.insert(rec.question_id, rec.doc_ids);
    }
    Ok(pools)
}
