//! Newline-delimited canonical dump.
//!
//! Line 1 is a header record; document records and question records follow,
//! one JSON object per line. Manifests use the same layout with `origin` and
//! `displacement` on every question record.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Answer, CharSpan, Dataset, Document, Question};
use crate::augment::{AugmentParams, Origin};
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "spanforge-canonical";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentParams>,
}

impl Header {
    pub fn new(split: impl Into<String>) -> Self {
        Header {
            format: FORMAT_NAME.to_owned(),
            version: FORMAT_VERSION,
            split: split.into(),
            stage: None,
            source_digest: None,
            augment: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    pub candidate_doc_ids: Vec<String>,
    pub answer: Option<AnswerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacement: Option<i64>,
}

impl QuestionRecord {
    pub fn answer(&self) -> Option<Answer> {
        self.answer.as_ref().map(|a| Answer {
            doc_id: a.doc_id.clone(),
            span: CharSpan::new(a.start, a.end),
            text: a.text.clone(),
        })
    }
}

impl From<&Answer> for AnswerRecord {
    fn from(a: &Answer) -> Self {
        AnswerRecord {
            doc_id: a.doc_id.clone(),
            start: a.span.start,
            end: a.span.end,
            text: a.text.clone(),
        }
    }
}

impl From<&Question> for QuestionRecord {
    fn from(q: &Question) -> Self {
        QuestionRecord {
            id: q.id.clone(),
            text: q.text.clone(),
            candidate_doc_ids: q.candidate_doc_ids.clone(),
            answer: q.gold.as_ref().map(AnswerRecord::from),
            origin: None,
            displacement: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Header(Header),
    Document(DocumentRecord),
    Question(QuestionRecord),
}

pub fn write_record<W: Write + ?Sized>(w: &mut W, record: &Record) -> io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

pub fn write_documents<'a, W: Write + ?Sized>(
    w: &mut W,
    docs: impl IntoIterator<Item = &'a Document>,
) -> io::Result<()> {
    for doc in docs {
        write_record(
            w,
            &Record::Document(DocumentRecord {
                id: doc.id().to_owned(),
                text: doc.text().to_owned(),
            }),
        )?;
    }
    Ok(())
}

pub fn write_dataset<W: Write + ?Sized>(w: &mut W, d: &Dataset) -> io::Result<()> {
    write_record(w, &Record::Header(Header::new(&d.split_name)))?;
    write_documents(w, d.documents.values())?;
    for q in &d.questions {
        write_record(w, &Record::Question(QuestionRecord::from(q)))?;
    }
    Ok(())
}

pub fn to_bytes(d: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, d).expect("writing to a Vec cannot fail");
    buf
}

/// Parsed records of a canonical file, not yet linked or validated.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFile {
    pub header: Header,
    pub documents: Vec<Document>,
    pub questions: Vec<QuestionRecord>,
}

pub fn read<R: BufRead>(reader: R, location: &str) -> Result<CanonicalFile> {
    let mut header = None;
    let mut documents = Vec::new();
    let mut questions = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(location, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{location}:{}", idx + 1);
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::malformed(at(), e))?;
        match (record, header.is_some()) {
            (Record::Header(h), false) => {
                if h.format != FORMAT_NAME || h.version != FORMAT_VERSION {
                    return Err(Error::malformed(
                        at(),
                        format!("unsupported format {} v{}", h.format, h.version),
                    ));
                }
                header = Some(h);
            }
            (Record::Header(_), true) => return Err(Error::malformed(at(), "second header record")),
            (_, false) => return Err(Error::malformed(at(), "first record must be a header")),
            (Record::Document(d), true) => documents.push(Document::new(d.id, d.text)),
            (Record::Question(q), true) => questions.push(q),
        }
    }
    let header = header.ok_or_else(|| Error::malformed(location, "empty file"))?;
    Ok(CanonicalFile {
        header,
        documents,
        questions,
    })
}
