//! Fuzzy answer spans: extra positive examples made by pushing one boundary
//! of a gold span outward, and the two training-stage manifests built from
//! them.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::canonical::{self, Header, QuestionRecord, Record};
use crate::corpus::{Answer, CharSpan, Dataset, Document, Question};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Fraction of answerable questions selected for augmentation.
    pub p: f64,
    /// Fuzzy spans requested per selected answer.
    pub n: usize,
    pub d_left: usize,
    pub d_right: usize,
    pub seed: u64,
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidParams(format!("p = {} is outside [0, 1]", self.p)));
        }
        if self.n == 0 {
            return Err(Error::InvalidParams("n must be at least 1".into()));
        }
        if self.d_left + self.d_right == 0 {
            return Err(Error::InvalidParams("d_left + d_right must be at least 1".into()));
        }
        Ok(())
    }

    /// Every signed displacement the params allow, negatives first.
    fn displacement_pool(&self) -> Vec<i64> {
        (-(self.d_left as i64)..=-1).chain(1..=self.d_right as i64).collect()
    }
}

/// Tuned configurations for the two reference datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Techqa,
    Policyqa,
}

impl Profile {
    pub fn params(self, seed: u64) -> AugmentParams {
        match self {
            Profile::Techqa => AugmentParams {
                p: 0.8,
                n: 6,
                d_left: 15,
                d_right: 20,
                seed,
            },
            Profile::Policyqa => AugmentParams {
                p: 0.04,
                n: 6,
                d_left: 5,
                d_right: 10,
                seed,
            },
        }
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "techqa" => Ok(Profile::Techqa),
            "policyqa" => Ok(Profile::Policyqa),
            other => Err(format!("unknown profile {other:?} (expected techqa or policyqa)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    Augmented,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Original => "original",
            Origin::Augmented => "augmented",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzySpan {
    pub question_id: String,
    pub answer: Answer,
    pub displacement: i64,
    pub origin: Origin,
}

/// One record of a training manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub question_id: String,
    pub question_text: String,
    pub candidate_doc_ids: Vec<String>,
    pub answer: Option<Answer>,
    pub origin: Origin,
    pub displacement: i64,
}

impl TrainingExample {
    pub fn original(q: &Question) -> Self {
        TrainingExample {
            question_id: q.id.clone(),
            question_text: q.text.clone(),
            candidate_doc_ids: q.candidate_doc_ids.clone(),
            answer: q.gold.clone(),
            origin: Origin::Original,
            displacement: 0,
        }
    }

    pub fn fuzzy(q: &Question, span: FuzzySpan) -> Self {
        TrainingExample {
            question_id: q.id.clone(),
            question_text: q.text.clone(),
            candidate_doc_ids: q.candidate_doc_ids.clone(),
            answer: Some(span.answer),
            origin: span.origin,
            displacement: span.displacement,
        }
    }

    pub fn to_record(&self) -> QuestionRecord {
        QuestionRecord {
            id: self.question_id.clone(),
            text: self.question_text.clone(),
            candidate_doc_ids: self.candidate_doc_ids.clone(),
            answer: self.answer.as_ref().map(Into::into),
            origin: Some(self.origin),
            displacement: Some(self.displacement),
        }
    }

    fn from_record(r: QuestionRecord, location: &str) -> Result<Self> {
        let origin = r
            .origin
            .ok_or_else(|| Error::malformed(location, format!("record {:?} has no origin", r.id)))?;
        let answer = r.answer();
        Ok(TrainingExample {
            question_id: r.id,
            question_text: r.text,
            candidate_doc_ids: r.candidate_doc_ids,
            answer,
            origin,
            displacement: r.displacement.unwrap_or(0),
        })
    }
}

/// Picks `round(p * answerable)` answerable questions by a seeded shuffle of
/// the id-sorted answerable ids. The result is in selection order.
pub fn select_questions(d: &Dataset, p: f64, seed: u64) -> Vec<String> {
    let mut ids: Vec<&str> = d
        .questions
        .iter()
        .filter(|q| q.is_answerable())
        .map(|q| q.id.as_str())
        .collect();
    ids.sort_unstable();
    let take = (p.clamp(0.0, 1.0) * ids.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.into_iter().take(take).map(str::to_owned).collect()
}

/// Extends `span` outward by `d` characters: the start moves left for
/// negative `d`, the end moves right for positive `d`, clamped to the document.
pub fn displace_span(span: CharSpan, d: i64, doc_len: usize) -> Result<CharSpan> {
    if d == 0 {
        return Err(Error::ZeroDisplacement);
    }
    if !span.is_valid_within(doc_len) {
        return Err(Error::InvalidSpan {
            doc_id: String::new(),
            span,
            doc_len,
        });
    }
    let by = d.unsigned_abs() as usize;
    Ok(if d < 0 {
        CharSpan::new(span.start.saturating_sub(by), span.end)
    } else {
        CharSpan::new(span.start, span.end.saturating_add(by).min(doc_len))
    })
}

/// Sub-seed for one question, so per-question generation does not depend on
/// processing order.
pub fn question_seed(seed: u64, question_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(question_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// Up to `params.n` fuzzy spans with pairwise distinct ranges. Displacements
/// are drawn without replacement; draws that clamp back onto the gold span or
/// onto an earlier result are dropped, so fewer than `n` may come back.
pub fn generate_fuzzy_spans<R: Rng + ?Sized>(
    question_id: &str,
    answer: &Answer,
    doc: &Document,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<Vec<FuzzySpan>> {
    if answer.doc_id != doc.id() || !answer.span.is_valid_within(doc.char_len()) {
        return Err(Error::InvalidSpan {
            doc_id: doc.id().to_owned(),
            span: answer.span,
            doc_len: doc.char_len(),
        });
    }
    let mut pool = params.displacement_pool();
    pool.shuffle(rng);

    let mut seen = HashSet::from([answer.span]);
    let mut out = Vec::with_capacity(params.n);
    for d in pool {
        if out.len() == params.n {
            break;
        }
        let span = displace_span(answer.span, d, doc.char_len())?;
        if !seen.insert(span) {
            continue;
        }
        out.push(FuzzySpan {
            question_id: question_id.to_owned(),
            answer: Answer::from_document(doc, span)?,
            displacement: d,
            origin: Origin::Augmented,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Shortfall {
    pub question_id: String,
    pub requested: usize,
    pub generated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    /// Digest of the dataset this was derived from.
    pub source_digest: String,
    pub split_name: String,
    pub params: AugmentParams,
    /// Every question of the source, in input order.
    pub original: Vec<TrainingExample>,
    /// Fuzzy examples grouped by question, in selection order.
    pub fuzzy: Vec<TrainingExample>,
    pub shortfalls: Vec<Shortfall>,
}

impl AugmentedDataset {
    pub fn examples(&self) -> impl Iterator<Item = &TrainingExample> {
        self.original.iter().chain(&self.fuzzy)
    }

    pub fn len(&self) -> usize {
        self.original.len() + self.fuzzy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn augment_dataset(d: &Dataset, params: &AugmentParams) -> Result<AugmentedDataset> {
    params.validate()?;
    let by_id: HashMap<&str, &Question> = d.questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let selected = select_questions(d, params.p, params.seed);

    let generated: Vec<(&Question, Vec<FuzzySpan>)> = selected
        .par_iter()
        .map(|id| {
            let q = by_id[id.as_str()];
            let gold = q.gold.as_ref().expect("only answerable questions are selected");
            let doc = d
                .document(&gold.doc_id)
                .ok_or_else(|| Error::UnknownDocument(gold.doc_id.clone()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(question_seed(params.seed, id));
            Ok((q, generate_fuzzy_spans(id, gold, doc, params, &mut rng)?))
        })
        .collect::<Result<_>>()?;

    let mut fuzzy = Vec::new();
    let mut shortfalls = Vec::new();
    for (q, spans) in generated {
        if spans.len() < params.n {
            log::warn!(
                "question {}: generated {} of {} fuzzy spans",
                q.id,
                spans.len(),
                params.n
            );
            shortfalls.push(Shortfall {
                question_id: q.id.clone(),
                requested: params.n,
                generated: spans.len(),
            });
        }
        fuzzy.extend(spans.into_iter().map(|s| TrainingExample::fuzzy(q, s)));
    }

    Ok(AugmentedDataset {
        source_digest: d.digest(),
        split_name: d.split_name.clone(),
        params: *params,
        original: d.questions.iter().map(TrainingExample::original).collect(),
        fuzzy,
        shortfalls,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Original and fuzzy examples.
    One,
    /// Original examples only.
    Two,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::One => "stage1",
            Stage::Two => "stage2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageManifests {
    pub source_digest: String,
    pub stage1: Vec<TrainingExample>,
    pub stage2: Vec<TrainingExample>,
}

pub fn emit_stage_manifests(original: &Dataset, augmented: &AugmentedDataset) -> Result<StageManifests> {
    let digest = original.digest();
    if digest != augmented.source_digest {
        return Err(Error::ProvenanceMismatch {
            expected: digest,
            found: augmented.source_digest.clone(),
        });
    }
    let stage2: Vec<TrainingExample> = original.questions.iter().map(TrainingExample::original).collect();
    let mut stage1 = stage2.clone();
    stage1.extend(augmented.fuzzy.iter().cloned());
    Ok(StageManifests {
        source_digest: digest,
        stage1,
        stage2,
    })
}

impl StageManifests {
    pub fn examples(&self, stage: Stage) -> &[TrainingExample] {
        match stage {
            Stage::One => &self.stage1,
            Stage::Two => &self.stage2,
        }
    }

    /// Writes one manifest in the canonical layout; `dataset` supplies the documents.
    pub fn write<W: Write + ?Sized>(&self, stage: Stage, dataset: &Dataset, w: &mut W) -> io::Result<()> {
        let header = Header {
            stage: Some(stage.name().to_owned()),
            source_digest: Some(self.source_digest.clone()),
            ..Header::new(&dataset.split_name)
        };
        write_examples(w, header, dataset, self.examples(stage))
    }
}

fn write_examples<W: Write + ?Sized>(
    w: &mut W,
    header: Header,
    dataset: &Dataset,
    examples: &[TrainingExample],
) -> io::Result<()> {
    canonical::write_record(w, &Record::Header(header))?;
    canonical::write_documents(w, dataset.documents.values())?;
    for ex in examples {
        canonical::write_record(w, &Record::Question(ex.to_record()))?;
    }
    Ok(())
}

pub fn write_augmented<W: Write + ?Sized>(w: &mut W, dataset: &Dataset, aug: &AugmentedDataset) -> io::Result<()> {
    let header = Header {
        stage: Some("augmented".to_owned()),
        source_digest: Some(aug.source_digest.clone()),
        augment: Some(aug.params),
        ..Header::new(&aug.split_name)
    };
    let all: Vec<TrainingExample> = aug.examples().cloned().collect();
    write_examples(w, header, dataset, &all)
}

/// Reads a file produced by [`write_augmented`].
pub fn read_augmented<R: BufRead>(reader: R, location: &str) -> Result<AugmentedDataset> {
    let file = canonical::read(reader, location)?;
    let source_digest = file
        .header
        .source_digest
        .ok_or_else(|| Error::malformed(location, "header has no source_digest"))?;
    let params = file
        .header
        .augment
        .ok_or_else(|| Error::malformed(location, "header has no augmentation parameters"))?;
    let mut original = Vec::new();
    let mut fuzzy = Vec::new();
    for r in file.questions {
        let ex = TrainingExample::from_record(r, location)?;
        match ex.origin {
            Origin::Original => original.push(ex),
            Origin::Augmented => fuzzy.push(ex),
        }
    }
    Ok(AugmentedDataset {
        source_digest,
        split_name: file.header.split,
        params,
        original,
        fuzzy,
        shortfalls: Vec::new(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::tests::mini;

    const SENTENCE: &str = "Libraries missing, install the gtk2 libraries (32 and 64 bit)";

    fn params(p: f64, n: usize, d_left: usize, d_right: usize) -> AugmentParams {
        AugmentParams {
            p,
            n,
            d_left,
            d_right,
            seed: 42,
        }
    }

    /// `count` answerable questions with mid-document answers plus
    /// `unanswerable` more without.
    pub(crate) fn synthetic(count: usize, unanswerable: usize) -> Dataset {
        let mut d = Dataset::new("synthetic");
        let filler = "x".repeat(40);
        for i in 0..count {
            let doc = Document::new(format!("d{i:03}"), format!("{filler} answer number {i:03} {filler}"));
            let span = CharSpan::new(41, 58);
            let gold = Answer::from_document(&doc, span).unwrap();
            d.questions.push(Question {
                id: format!("q{i:03}"),
                text: format!("what is answer {i}?"),
                candidate_doc_ids: vec![doc.id().to_owned()],
                gold: Some(gold),
            });
            d.insert_document(doc);
        }
        for i in 0..unanswerable {
            d.questions.push(Question {
                id: format!("u{i:03}"),
                text: "unanswerable".into(),
                candidate_doc_ids: vec!["d000".into()],
                gold: None,
            });
        }
        d
    }

    #[test]
    fn selection_sizes() {
        let d = synthetic(450, 150);
        assert_eq!(select_questions(&d, 0.8, 7).len(), 360);
        assert!(select_questions(&d, 0.0, 7).is_empty());
        let mut all = select_questions(&d, 1.0, 7);
        all.sort();
        let mut expected: Vec<String> = (0..450).map(|i| format!("q{i:03}")).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn selection_is_seeded() {
        let d = synthetic(50, 5);
        assert_eq!(select_questions(&d, 0.5, 1), select_questions(&d, 0.5, 1));
        assert_ne!(select_questions(&d, 0.5, 1), select_questions(&d, 0.5, 2));
        let mut shuffled = d.clone();
        shuffled.questions.reverse();
        assert_eq!(select_questions(&d, 0.5, 1), select_questions(&shuffled, 0.5, 1));
    }

    #[test]
    fn worked_example_offsets() {
        let doc = Document::new("d", SENTENCE);
        assert_eq!(doc.char_len(), 61);
        let gold = CharSpan::new(19, 45);
        let left = displace_span(gold, -19, 61).unwrap();
        let right = displace_span(gold, 16, 61).unwrap();
        assert_eq!(left, CharSpan::new(0, 45));
        assert_eq!(right, CharSpan::new(19, 61));
        assert_eq!(doc.slice(left), Some("Libraries missing, install the gtk2 libraries"));
        assert_eq!(doc.slice(right), Some("install the gtk2 libraries (32 and 64 bit)"));
    }

    #[test]
    fn displacement_clamps_and_rejects_zero() {
        assert_eq!(displace_span(CharSpan::new(10, 20), 5, 100).unwrap(), CharSpan::new(10, 25));
        assert_eq!(displace_span(CharSpan::new(3, 8), -10, 100).unwrap(), CharSpan::new(0, 8));
        assert_eq!(displace_span(CharSpan::new(90, 98), 10, 100).unwrap(), CharSpan::new(90, 100));
        assert!(matches!(displace_span(CharSpan::new(3, 8), 0, 100), Err(Error::ZeroDisplacement)));
        assert!(displace_span(CharSpan::new(3, 108), 1, 100).is_err());
    }

    #[test]
    fn techqa_profile_mid_document_gives_six() {
        let doc = Document::new("d", format!("{}{}{}", "a".repeat(100), "b".repeat(30), "c".repeat(100)));
        let gold = Answer::from_document(&doc, CharSpan::new(100, 130)).unwrap();
        let p = Profile::Techqa.params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spans = generate_fuzzy_spans("q", &gold, &doc, &p, &mut rng).unwrap();
        assert_eq!(spans.len(), 6);
        let distinct: HashSet<CharSpan> = spans.iter().map(|s| s.answer.span).collect();
        assert_eq!(distinct.len(), 6);
        for s in &spans {
            assert!(s.answer.span.contains(&gold.span));
            assert!((-15..=20).contains(&s.displacement) && s.displacement != 0);
            assert_eq!(s.origin, Origin::Augmented);
        }
    }

    #[test]
    fn whole_document_answer_yields_nothing() {
        let doc = Document::new("d", "entire");
        let gold = Answer::from_document(&doc, CharSpan::new(0, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spans = generate_fuzzy_spans("q", &gold, &doc, &params(1.0, 6, 15, 20), &mut rng).unwrap();
        assert!(spans.is_empty());
    }

    #[test]
    fn clamped_collisions_leave_one_span() {
        // Enumerating d in {-3,-2,-1,+1,+2} on [0,5) of a 6-char doc: every
        // negative clamps to [0,5), both positives clamp to [0,6).
        let doc = Document::new("d", "abcdef");
        let gold = Answer::from_document(&doc, CharSpan::new(0, 5)).unwrap();
        let mut distinct = HashSet::new();
        for d in [-3i64, -2, -1, 1, 2] {
            let s = displace_span(gold.span, d, 6).unwrap();
            if s != gold.span {
                distinct.insert(s);
            }
        }
        assert_eq!(distinct, HashSet::from([CharSpan::new(0, 6)]));
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spans = generate_fuzzy_spans("q", &gold, &doc, &params(1.0, 6, 3, 2), &mut rng).unwrap();
            assert_eq!(spans.len(), 1);
            assert_eq!(spans[0].answer.span, CharSpan::new(0, 6));
        }
    }

    #[test]
    fn augment_counts() {
        let d = synthetic(100, 0);
        let aug = augment_dataset(&d, &params(0.8, 6, 15, 20)).unwrap();
        assert_eq!(aug.original.len(), 100);
        assert_eq!(aug.fuzzy.len(), 480);
        assert!(aug.shortfalls.is_empty());
    }

    #[test]
    fn fuzzy_grouped_in_selection_order() {
        let d = synthetic(30, 3);
        let p = params(0.5, 4, 5, 5);
        let aug = augment_dataset(&d, &p).unwrap();
        let selected = select_questions(&d, p.p, p.seed);
        let grouped: Vec<String> = aug.fuzzy.chunks(4).map(|c| c[0].question_id.clone()).collect();
        assert_eq!(grouped, selected);
        for chunk in aug.fuzzy.chunks(4) {
            assert!(chunk.iter().all(|e| e.question_id == chunk[0].question_id));
        }
    }

    #[test]
    fn p_zero_is_identity() {
        let d = mini();
        let aug = augment_dataset(&d, &params(0.0, 6, 15, 20)).unwrap();
        assert!(aug.fuzzy.is_empty());
        let back: Vec<Question> = aug
            .original
            .iter()
            .map(|e| Question {
                id: e.question_id.clone(),
                text: e.question_text.clone(),
                candidate_doc_ids: e.candidate_doc_ids.clone(),
                gold: e.answer.clone(),
            })
            .collect();
        assert_eq!(back, d.questions);
    }

    #[test]
    fn invalid_params_rejected() {
        let d = mini();
        assert!(augment_dataset(&d, &params(1.5, 6, 1, 1)).is_err());
        assert!(augment_dataset(&d, &params(0.5, 0, 1, 1)).is_err());
        assert!(augment_dataset(&d, &params(0.5, 6, 0, 0)).is_err());
    }

    #[test]
    fn policyqa_profile() {
        let p = Profile::Policyqa.params(9);
        assert_eq!((p.p, p.n, p.d_left, p.d_right, p.seed), (0.04, 6, 5, 10, 9));
        assert!(p.validate().is_ok());
    }

    #[test]
    fn manifests_add_up() {
        let d = synthetic(100, 20);
        let aug = augment_dataset(&d, &params(0.8, 6, 15, 20)).unwrap();
        let m = emit_stage_manifests(&d, &aug).unwrap();
        assert_eq!(m.stage2.len(), 120);
        assert_eq!(m.stage1.len(), 600);
        assert_eq!(&m.stage1[..120], &m.stage2[..]);

        let mut one = Vec::new();
        let mut two = Vec::new();
        m.write(Stage::One, &d, &mut one).unwrap();
        m.write(Stage::Two, &d, &mut two).unwrap();
        let one = String::from_utf8(one).unwrap();
        let lines: HashSet<&str> = one.lines().skip(1).collect();
        for line in String::from_utf8(two).unwrap().lines().skip(1) {
            assert!(lines.contains(line));
        }
    }

    #[test]
    fn no_fuzzy_means_equal_stages() {
        let d = mini();
        let aug = augment_dataset(&d, &params(0.0, 6, 15, 20)).unwrap();
        let m = emit_stage_manifests(&d, &aug).unwrap();
        assert_eq!(m.stage1, m.stage2);
    }

    #[test]
    fn manifests_check_provenance() {
        let d = synthetic(10, 0);
        let aug = augment_dataset(&d, &params(0.5, 2, 3, 3)).unwrap();
        let err = emit_stage_manifests(&mini(), &aug).unwrap_err();
        assert!(matches!(err, Error::ProvenanceMismatch { .. }));
    }

    #[test]
    fn augmented_file_round_trip() {
        let d = synthetic(10, 2);
        let aug = augment_dataset(&d, &params(0.5, 3, 4, 4)).unwrap();
        let mut buf = Vec::new();
        write_augmented(&mut buf, &d, &aug).unwrap();
        let back = read_augmented(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, aug);
        assert!(emit_stage_manifests(&d, &back).is_ok());
    }
}
