//! Line-delimited JSON files exchanged between pipeline stages.
//!
//! * distributions: a header `{"vocabulary": [...], "normalized": bool}`, then
//!   one `{"doc_id", "sentence_index", "rows"}` object per sentence;
//! * tags: one `{"doc_id", "sentence_index", "tags": [names]}` per sentence;
//! * antecedent scores: one `{"doc_id", "mentions": [{sentence, start, end}],
//!   "rows"}` per document;
//! * transitions: a single JSON object (see [`TransitionFile`]).
//!
//! Errors carry the source name and 1-based line number.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{
    DecoderError, DistributionTensor, SentenceScores, TransitionFile, TransitionMatrix,
};
use crate::linker::{AntecedentScores, LinkError, MentionRef};
use crate::tags::{Tag, TagError, TagVocabulary};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{source_name}:{line}: {message}")]
    Syntax {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}: {message}")]
    Content {
        source_name: String,
        message: String,
    },
}

fn syntax(source_name: &str, line: usize, message: impl ToString) -> FormatError {
    FormatError::Syntax {
        source_name: source_name.to_string(),
        line,
        message: message.to_string(),
    }
}

fn content(source_name: &str, message: impl ToString) -> FormatError {
    FormatError::Content {
        source_name: source_name.to_string(),
        message: message.to_string(),
    }
}

/// Non-blank lines parsed as JSON, with their line numbers.
fn records<T: DeserializeOwned>(
    text: &str,
    source_name: &str,
) -> Result<Vec<(usize, T)>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| syntax(source_name, i + 1, e))
        })
        .collect()
}

fn to_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("plain data serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionHeader {
    pub vocabulary: Vec<String>,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRecord {
    pub doc_id: String,
    pub sentence_index: usize,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_distributions(
    text: &str,
    source_name: &str,
) -> Result<DistributionTensor, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((i, first)) = lines.next() else {
        return Err(content(source_name, "missing header line"));
    };
    let header: DistributionHeader =
        serde_json::from_str(first).map_err(|e| syntax(source_name, i + 1, e))?;
    let vocab =
        TagVocabulary::from_names(&header.vocabulary).map_err(|e| syntax(source_name, i + 1, e))?;
    let mut sentences = Vec::new();
    for (i, l) in lines {
        let r: DistributionRecord =
            serde_json::from_str(l).map_err(|e| syntax(source_name, i + 1, e))?;
        sentences.push(SentenceScores::new(r.doc_id, r.sentence_index, r.rows));
    }
    DistributionTensor::new(vocab, sentences, header.normalized)
        .map_err(|e| decoder_error(source_name, e))
}

fn decoder_error(source_name: &str, e: DecoderError) -> FormatError {
    content(source_name, e)
}

pub fn write_distributions(tensor: &DistributionTensor) -> String {
    let mut out = to_line(&DistributionHeader {
        vocabulary: tensor.vocabulary().names().to_vec(),
        normalized: tensor.is_normalized(),
    });
    for s in tensor.sentences() {
        out.push_str(&to_line(&DistributionRecord {
            doc_id: s.doc_id.clone(),
            sentence_index: s.sentence_index,
            rows: s.rows.clone(),
        }));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    pub doc_id: String,
    pub sentence_index: usize,
    pub tags: Vec<String>,
}

impl TagRecord {
    pub fn new(doc_id: impl Into<String>, sentence_index: usize, tags: &[Tag]) -> Self {
        TagRecord {
            doc_id: doc_id.into(),
            sentence_index,
            tags: tags.iter().map(Tag::to_string).collect(),
        }
    }

    pub fn parse_tags(&self) -> Result<Vec<Tag>, TagError> {
        self.tags.iter().map(|t| t.parse()).collect()
    }
}

pub fn read_tags(text: &str, source_name: &str) -> Result<Vec<TagRecord>, FormatError> {
    let recs: Vec<(usize, TagRecord)> = records(text, source_name)?;
    for (line, r) in &recs {
        r.parse_tags().map_err(|e| syntax(source_name, *line, e))?;
    }
    Ok(recs.into_iter().map(|(_, r)| r).collect())
}

pub fn write_tags(records: &[TagRecord]) -> String {
    records.iter().map(to_line).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntecedentRecord {
    pub doc_id: String,
    pub mentions: Vec<MentionRef>,
    pub rows: Vec<Vec<f64>>,
}

pub fn read_antecedents(
    text: &str,
    source_name: &str,
) -> Result<Vec<(String, AntecedentScores)>, FormatError> {
    let recs: Vec<(usize, AntecedentRecord)> = records(text, source_name)?;
    recs.into_iter()
        .map(|(line, r)| {
            let scores = AntecedentScores::new(r.mentions, r.rows).map_err(|e: LinkError| {
                syntax(source_name, line, format!("document `{}`: {e}", r.doc_id))
            })?;
            Ok((r.doc_id, scores))
        })
        .collect()
}

pub fn write_antecedents(docs: &[(String, AntecedentScores)]) -> String {
    docs.iter()
        .map(|(doc_id, s)| {
            to_line(&AntecedentRecord {
                doc_id: doc_id.clone(),
                mentions: s.mentions().to_vec(),
                rows: s.rows().to_vec(),
            })
        })
        .collect()
}

pub fn read_transitions(text: &str, source_name: &str) -> Result<TransitionMatrix, FormatError> {
    let file: TransitionFile =
        serde_json::from_str(text).map_err(|e| syntax(source_name, e.line(), e))?;
    TransitionMatrix::from_file(file).map_err(|e| content(source_name, e))
}

pub fn write_transitions(matrix: &TransitionMatrix) -> String {
    let mut s = serde_json::to_string_pretty(&matrix.to_file()).expect("plain data serializes");
    s.push('\n');
    s
}
