//! Turning per-token tag distributions into tag sequences.
//!
//! Three decoders are provided:
//!
//! * [`decode_constrained`]: Viterbi over a lattice whose state is the stack
//!   depth. Only tag sequences that start and end with an empty stack and never
//!   exceed `max_depth` open mentions are considered; every valid transition
//!   has the same (zero) weight, so the score is the plain sum of per-token
//!   log-probabilities.
//! * [`decode_greedy`]: per-token argmax, no validity enforcement.
//! * [`decode_crf`]: linear-chain Viterbi with an explicit transition matrix,
//!   optionally restricted to valid sequences.
//!
//! Tie-breaking is deterministic. Within the lattice a state keeps the
//! candidate with the lowest tag index (then the lowest predecessor depth).
//! For the constrained decoder this means that, among all optimal sequences,
//! the one returned has the lowest-index last tag, then the lowest-index
//! second-to-last tag, and so on.

mod crf;
mod tensor;

pub use crf::{decode_crf, decode_crf_with, TransitionFile, TransitionMatrix, TransitionScore};
pub use tensor::{
    ensemble, ensemble_with, DistributionTensor, SentenceScores, NORMALIZATION_TOLERANCE,
};

use thiserror::Error;

use crate::exec::{self, Execution};
use crate::tags::{Tag, TagVocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error("sentence {sentence}: {reason}")]
    Shape { sentence: String, reason: String },
    #[error("sentence {sentence}, token {token}: non-finite score")]
    NonFinite { sentence: String, token: usize },
    #[error("sentence {sentence}, token {token}: row is not normalized")]
    NotNormalized { sentence: String, token: usize },
    #[error("input {input} uses a different tag vocabulary")]
    VocabularyMismatch { input: usize },
    #[error("sentence {sentence}: no valid tag sequence exists")]
    Infeasible { sentence: String },
    #[error("invalid decoder configuration: {0}")]
    Config(String),
    #[error("transition matrix: {0}")]
    Transitions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    #[default]
    Constrained,
    Greedy,
    Crf,
}

impl std::str::FromStr for DecodeMode {
    type Err = DecoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constrained" => Ok(DecodeMode::Constrained),
            "greedy" => Ok(DecodeMode::Greedy),
            "crf" => Ok(DecodeMode::Crf),
            _ => Err(DecoderError::Config(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub max_depth: usize,
    pub mode: DecodeMode,
    /// For [`DecodeMode::Crf`]: restrict to valid sequences.
    pub enforce_constraints: bool,
    /// Accept sequences that leave mentions open at the end of a sentence.
    pub allow_open_final: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            max_depth: 10,
            mode: DecodeMode::Constrained,
            enforce_constraints: false,
            allow_open_final: false,
        }
    }
}

impl DecoderConfig {
    pub fn with_max_depth(max_depth: usize) -> Self {
        DecoderConfig {
            max_depth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        if self.max_depth == 0 {
            return Err(DecoderError::Config("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// A decoded sentence: vocabulary indices and the sum of their scores.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSentence {
    pub tags: Vec<usize>,
    pub score: f64,
}

impl DecodedSentence {
    pub fn to_tags(&self, vocabulary: &TagVocabulary) -> Vec<Tag> {
        self.tags
            .iter()
            .map(|&k| vocabulary.tag(k).clone())
            .collect()
    }
}

/// Sum of `rows[t][tags[t]]`, accumulated left to right.
pub fn sequence_score(rows: &[Vec<f64>], tags: &[usize]) -> f64 {
    rows.iter()
        .zip(tags)
        .fold(0.0, |acc, (row, &k)| acc + row[k])
}

/// For every depth, the tags executable there and the depth they lead to.
#[derive(Debug, Clone)]
pub(crate) struct DepthTable {
    pub(crate) moves: Vec<Vec<(usize, usize)>>,
}

impl DepthTable {
    pub(crate) fn new(vocabulary: &TagVocabulary, max_depth: usize) -> Self {
        let moves = (0..=max_depth)
            .map(|d| {
                vocabulary
                    .tags()
                    .iter()
                    .enumerate()
                    .filter_map(|(k, tag)| {
                        tag.apply(d).filter(|&nd| nd <= max_depth).map(|nd| (k, nd))
                    })
                    .collect()
            })
            .collect();
        DepthTable { moves }
    }

    fn max_depth(&self) -> usize {
        self.moves.len() - 1
    }
}

#[derive(Clone, Copy)]
struct Back {
    tag: usize,
    prev: usize,
}

fn better(cand: f64, cand_back: Back, cur: f64, cur_back: Option<Back>) -> bool {
    if cand > cur {
        return true;
    }
    if cand < cur || cand == f64::NEG_INFINITY {
        return false;
    }
    match cur_back {
        None => true,
        Some(b) => (cand_back.tag, cand_back.prev) < (b.tag, b.prev),
    }
}

fn viterbi_depth(
    rows: &[Vec<f64>],
    table: &DepthTable,
    allow_open_final: bool,
) -> Option<DecodedSentence> {
    let width = table.max_depth() + 1;
    if rows.is_empty() {
        return Some(DecodedSentence {
            tags: Vec::new(),
            score: 0.0,
        });
    }
    let mut score = vec![f64::NEG_INFINITY; width];
    score[0] = 0.0;
    let mut back: Vec<Vec<Option<Back>>> = Vec::with_capacity(rows.len());
    for row in rows {
        let mut next = vec![f64::NEG_INFINITY; width];
        let mut ptr: Vec<Option<Back>> = vec![None; width];
        for (d, &s) in score.iter().enumerate() {
            if s == f64::NEG_INFINITY {
                continue;
            }
            for &(k, nd) in &table.moves[d] {
                let cand = s + row[k];
                let b = Back { tag: k, prev: d };
                if better(cand, b, next[nd], ptr[nd]) {
                    next[nd] = cand;
                    ptr[nd] = Some(b);
                }
            }
        }
        score = next;
        back.push(ptr);
    }
    let end = if allow_open_final {
        (0..width).filter(|&d| score[d] > f64::NEG_INFINITY).fold(
            None,
            |best: Option<usize>, d| match best {
                Some(b) if score[b] >= score[d] => Some(b),
                _ => Some(d),
            },
        )?
    } else {
        0
    };
    if score[end] == f64::NEG_INFINITY {
        return None;
    }
    let mut tags = vec![0; rows.len()];
    let mut d = end;
    for t in (0..rows.len()).rev() {
        let b = back[t][d].expect("finite state has a back pointer");
        tags[t] = b.tag;
        d = b.prev;
    }
    Some(DecodedSentence {
        tags,
        score: score[end],
    })
}

fn sentence_label(s: &SentenceScores) -> String {
    format!("{}#{}", s.doc_id, s.sentence_index)
}

/// Best valid tag sequence per sentence under the stack-depth constraints.
pub fn decode_constrained(
    tensor: &DistributionTensor,
    cfg: &DecoderConfig,
) -> Result<Vec<DecodedSentence>, DecoderError> {
    decode_constrained_with(tensor, cfg, Execution::default())
}

pub fn decode_constrained_with(
    tensor: &DistributionTensor,
    cfg: &DecoderConfig,
    exec: Execution,
) -> Result<Vec<DecodedSentence>, DecoderError> {
    cfg.validate()?;
    let table = DepthTable::new(tensor.vocabulary(), cfg.max_depth);
    let normalized;
    let tensor = if tensor.is_normalized() {
        tensor
    } else {
        normalized = tensor.normalize_with(exec);
        &normalized
    };
    exec::try_map(tensor.sentences(), exec, |s| {
        viterbi_depth(&s.rows, &table, cfg.allow_open_final).ok_or_else(|| {
            DecoderError::Infeasible {
                sentence: sentence_label(s),
            }
        })
    })
}

/// Per-token argmax (lowest index on ties); output may be unbalanced.
pub fn decode_greedy(tensor: &DistributionTensor) -> Vec<DecodedSentence> {
    decode_greedy_with(tensor, Execution::default())
}

pub fn decode_greedy_with(tensor: &DistributionTensor, exec: Execution) -> Vec<DecodedSentence> {
    exec::map(tensor.sentences(), exec, |s| {
        let tags: Vec<usize> = s
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(0, |best, (k, &v)| if v > row[best] { k } else { best })
            })
            .collect();
        let score = sequence_score(&s.rows, &tags);
        DecodedSentence { tags, score }
    })
}

/// Dispatches on `cfg.mode`. `transitions` is required for CRF decoding.
pub fn decode(
    tensor: &DistributionTensor,
    cfg: &DecoderConfig,
    transitions: Option<&TransitionMatrix>,
    exec: Execution,
) -> Result<Vec<DecodedSentence>, DecoderError> {
    match cfg.mode {
        DecodeMode::Constrained => decode_constrained_with(tensor, cfg, exec),
        DecodeMode::Greedy => Ok(decode_greedy_with(tensor, exec)),
        DecodeMode::Crf => {
            let transitions = transitions.ok_or_else(|| {
                DecoderError::Config("CRF decoding needs a transition matrix".into())
            })?;
            decode_crf_with(tensor, transitions, cfg, exec)
        }
    }
}
