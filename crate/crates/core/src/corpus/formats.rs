use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use serde_json::Value;

use super::{canonical, Answer, CharSpan, Dataset, Document, Question};
use crate::error::{Error, RecordError, RecordErrorKind, Result};

/// Characters searched on either side of a stated offset in repair mode.
pub const REPAIR_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Techqa,
    SquadStyle,
    Canonical,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "techqa" => Ok(DatasetFormat::Techqa),
            "squad" | "squad_style" | "squad-style" => Ok(DatasetFormat::SquadStyle),
            "canonical" | "jsonl" => Ok(DatasetFormat::Canonical),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::Techqa => "techqa",
            DatasetFormat::SquadStyle => "squad_style",
            DatasetFormat::Canonical => "canonical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// Question array plus a separate document collection.
    Techqa { questions: PathBuf, documents: PathBuf },
    SquadStyle(PathBuf),
    Canonical(PathBuf),
}

impl DatasetSource {
    pub fn format(&self) -> DatasetFormat {
        match self {
            DatasetSource::Techqa { .. } => DatasetFormat::Techqa,
            DatasetSource::SquadStyle(_) => DatasetFormat::SquadStyle,
            DatasetSource::Canonical(_) => DatasetFormat::Canonical,
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Techqa {
                questions,
                documents,
            } => vec![questions, documents],
            DatasetSource::SquadStyle(p) | DatasetSource::Canonical(p) => vec![p],
        }
    }

    fn default_split(&self) -> String {
        let p = self.paths()[0];
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_owned())
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Search near the stated offsets for the answer text instead of failing.
    pub repair: bool,
    /// Overrides the split name taken from the file.
    pub split_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Repair {
    pub question_id: String,
    pub from: CharSpan,
    pub to: CharSpan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub dataset: Dataset,
    pub repairs: Vec<Repair>,
}

struct RawAnswer {
    doc_id: String,
    start: usize,
    /// Derived from the text length when absent.
    end: Option<usize>,
    text: String,
}

struct RawQuestion {
    id: String,
    text: String,
    candidates: Vec<String>,
    answer: Option<RawAnswer>,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(source: &DatasetSource, options: &LoadOptions) -> Result<Loaded> {
    let mut options = options.clone();
    if options.split_name.is_none() && source.format() != DatasetFormat::Canonical {
        options.split_name = Some(source.default_split());
    }
    match source {
        DatasetSource::Techqa {
            questions,
            documents,
        } => parse_techqa(&read_to_string(questions)?, &read_to_string(documents)?, &options),
        DatasetSource::SquadStyle(path) => parse_squad(&read_to_string(path)?, &options),
        DatasetSource::Canonical(path) => {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let parsed = canonical::read(BufReader::new(file), &path.display().to_string())?;
            let split = options.split_name.clone().unwrap_or(parsed.header.split);
            let raws = parsed
                .questions
                .into_iter()
                .map(|q| RawQuestion {
                    answer: q.answer.map(|a| RawAnswer {
                        doc_id: a.doc_id,
                        start: a.start,
                        end: Some(a.end),
                        text: a.text,
                    }),
                    id: q.id,
                    text: q.text,
                    candidates: q.candidate_doc_ids,
                })
                .collect();
            link(split, parsed.documents, raws, options.repair)
        }
    }
}

#[derive(Deserialize)]
struct GenericAnswer {
    doc_id: String,
    start_offset: usize,
    end_offset: usize,
    text: String,
}

#[derive(Deserialize)]
struct GenericQuestion {
    id: String,
    text: String,
    #[serde(alias = "candidates", alias = "doc_ids")]
    candidate_doc_ids: Vec<String>,
    #[serde(default)]
    answer: Option<GenericAnswer>,
}

/// Field layout of the released TechQA question files.
#[derive(Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
struct NativeQuestion {
    question_id: String,
    #[serde(default)]
    question_title: String,
    #[serde(default)]
    question_text: String,
    doc_ids: Vec<String>,
    answerable: String,
    #[serde(default)]
    document: Option<String>,
    #[serde(default)]
    start_offset: Option<Value>,
    #[serde(default)]
    end_offset: Option<Value>,
    #[serde(default)]
    answer: Option<String>,
}

fn offset_value(v: &Option<Value>) -> Option<usize> {
    match v.as_ref()? {
        Value::Number(n) => n.as_u64().map(|n| n as usize),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

impl NativeQuestion {
    fn into_raw(self, location: &str) -> Result<RawQuestion> {
        let text = match (self.question_title.trim(), self.question_text.trim()) {
            (t, "") => t.to_owned(),
            ("", b) => b.to_owned(),
            (t, b) => format!("{t}\n{b}"),
        };
        let answer = if self.answerable.eq_ignore_ascii_case("y") {
            let doc_id = self
                .document
                .ok_or_else(|| Error::malformed(location, "answerable question without DOCUMENT"))?;
            let start = offset_value(&self.start_offset)
                .ok_or_else(|| Error::malformed(location, "answerable question without START_OFFSET"))?;
            Some(RawAnswer {
                doc_id,
                start,
                end: offset_value(&self.end_offset),
                text: self.answer.unwrap_or_default(),
            })
        } else {
            None
        };
        Ok(RawQuestion {
            id: self.question_id,
            text,
            candidates: self.doc_ids,
            answer,
        })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DocumentEntry {
    Text(String),
    Object { text: String },
}

#[derive(Deserialize)]
struct ListedDocument {
    id: String,
    text: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DocumentCollection {
    Map(BTreeMap<String, DocumentEntry>),
    List(Vec<ListedDocument>),
}

/// Parses a question array and a document collection (id → text, id →
/// `{text, ..}`, or a list of `{id, text}`).
pub fn parse_techqa(questions: &str, documents: &str, options: &LoadOptions) -> Result<Loaded> {
    let docs: DocumentCollection =
        serde_json::from_str(documents).map_err(|e| Error::malformed("documents", e))?;
    let docs = match docs {
        DocumentCollection::Map(m) => m
            .into_iter()
            .map(|(id, entry)| match entry {
                DocumentEntry::Text(text) | DocumentEntry::Object { text } => Document::new(id, text),
            })
            .collect(),
        DocumentCollection::List(l) => l.into_iter().map(|d| Document::new(d.id, d.text)).collect(),
    };

    let values: Vec<Value> =
        serde_json::from_str(questions).map_err(|e| Error::malformed("questions", e))?;
    let mut raws = Vec::with_capacity(values.len());
    for (idx, value) in values.into_iter().enumerate() {
        let location = format!("questions[{idx}]");
        let raw = if value.get("QUESTION_ID").is_some() {
            serde_json::from_value::<NativeQuestion>(value)
                .map_err(|e| Error::malformed(&location, e))?
                .into_raw(&location)?
        } else {
            let q: GenericQuestion =
                serde_json::from_value(value).map_err(|e| Error::malformed(&location, e))?;
            RawQuestion {
                id: q.id,
                text: q.text,
                candidates: q.candidate_doc_ids,
                answer: q.answer.map(|a| RawAnswer {
                    doc_id: a.doc_id,
                    start: a.start_offset,
                    end: Some(a.end_offset),
                    text: a.text,
                }),
            }
        };
        raws.push(raw);
    }
    let split = options.split_name.clone().unwrap_or_else(|| "techqa".to_owned());
    link(split, docs, raws, options.repair)
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Each paragraph becomes one document with id `<article>-<paragraph>`
/// (zero-based indices), and is the sole candidate of its questions. Only the
/// first listed answer is kept.
pub fn parse_squad(json: &str, options: &LoadOptions) -> Result<Loaded> {
    let file: SquadFile = serde_json::from_str(json).map_err(|e| Error::malformed("squad", e))?;
    let mut docs = Vec::new();
    let mut raws = Vec::new();
    for (ai, article) in file.data.into_iter().enumerate() {
        for (pi, para) in article.paragraphs.into_iter().enumerate() {
            let doc_id = format!("{ai}-{pi}");
            for qa in para.qas {
                let answer = if qa.is_impossible {
                    None
                } else {
                    qa.answers.into_iter().next().map(|a| RawAnswer {
                        doc_id: doc_id.clone(),
                        start: a.answer_start,
                        end: None,
                        text: a.text,
                    })
                };
                raws.push(RawQuestion {
                    id: qa.id,
                    text: qa.question,
                    candidates: vec![doc_id.clone()],
                    answer,
                });
            }
            docs.push(Document::new(doc_id, para.context));
        }
    }
    let split = options.split_name.clone().unwrap_or_else(|| "squad".to_owned());
    link(split, docs, raws, options.repair)
}

/// Nearest occurrence of `text` whose start lies within `REPAIR_WINDOW` of `near`.
fn find_near(doc: &Document, text: &str, near: usize) -> Option<CharSpan> {
    let len = text.chars().count();
    if len == 0 || len > doc.char_len() {
        return None;
    }
    let lo = near.saturating_sub(REPAIR_WINDOW);
    let hi = (near + REPAIR_WINDOW).min(doc.char_len() - len);
    (lo..=hi)
        .map(|s| CharSpan::new(s, s + len))
        .filter(|span| doc.slice(*span) == Some(text))
        .min_by_key(|span| (span.start.abs_diff(near), span.start))
}

fn link(split: String, docs: Vec<Document>, raws: Vec<RawQuestion>, repair: bool) -> Result<Loaded> {
    let mut errors = Vec::new();
    let mut dataset = Dataset::new(split);
    for doc in docs {
        let kind = if doc.char_len() == 0 {
            Some(RecordErrorKind::EmptyDocument(doc.id().to_owned()))
        } else if dataset.documents.contains_key(doc.id()) {
            Some(RecordErrorKind::DuplicateDocument(doc.id().to_owned()))
        } else {
            None
        };
        match kind {
            Some(kind) => errors.push(RecordError {
                question_id: String::new(),
                kind,
            }),
            None => dataset.insert_document(doc),
        }
    }

    let mut repairs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for raw in raws {
        let mut fail = |kind| {
            errors.push(RecordError {
                question_id: raw.id.clone(),
                kind,
            })
        };
        if !seen.insert(raw.id.clone()) {
            fail(RecordErrorKind::DuplicateQuestion);
        }
        for c in &raw.candidates {
            if !dataset.documents.contains_key(c) {
                fail(RecordErrorKind::UnknownDocument(c.clone()));
            }
        }
        let gold = match raw.answer {
            None => None,
            Some(a) => match dataset.documents.get(&a.doc_id) {
                None => {
                    fail(RecordErrorKind::UnknownDocument(a.doc_id.clone()));
                    None
                }
                Some(doc) => {
                    let end = a.end.unwrap_or(a.start + a.text.chars().count());
                    let span = CharSpan::new(a.start, end);
                    match doc.slice(span) {
                        Some(found) if found == a.text => Some(Answer {
                            doc_id: a.doc_id,
                            span,
                            text: a.text,
                        }),
                        found => match find_near(doc, &a.text, a.start).filter(|_| repair) {
                            Some(fixed) => {
                                log::warn!(
                                    "question {}: answer offsets repaired {span} -> {fixed}",
                                    raw.id
                                );
                                repairs.push(Repair {
                                    question_id: raw.id.clone(),
                                    from: span,
                                    to: fixed,
                                });
                                Some(Answer {
                                    doc_id: a.doc_id,
                                    span: fixed,
                                    text: a.text,
                                })
                            }
                            None => {
                                fail(match found {
                                    Some(found) => RecordErrorKind::AnswerMismatch {
                                        span,
                                        expected: a.text,
                                        found: found.to_owned(),
                                    },
                                    None => RecordErrorKind::SpanOutOfBounds {
                                        span,
                                        doc_len: doc.char_len(),
                                    },
                                });
                                None
                            }
                        },
                    }
                }
            },
        };
        dataset.questions.push(Question {
            id: raw.id,
            text: raw.text,
            candidate_doc_ids: raw.candidates,
            gold,
        });
    }

    if errors.is_empty() {
        Ok(Loaded { dataset, repairs })
    } else {
        Err(Error::Records(errors))
    }
}
