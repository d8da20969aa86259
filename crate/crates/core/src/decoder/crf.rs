use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::tags::TagVocabulary;

use super::{
    sentence_label, DecodedSentence, DecoderConfig, DecoderError, DepthTable, DistributionTensor,
};

/// Linear-chain transition scores between tags, plus per-tag start and end
/// scores. Entries are finite or negative infinity (a forbidden transition).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    vocabulary: Vec<String>,
    matrix: Vec<Vec<f64>>,
    start: Vec<f64>,
    end: Vec<f64>,
}

fn check_entries<'a>(values: impl Iterator<Item = &'a f64>) -> Result<(), DecoderError> {
    for &v in values {
        if v.is_nan() || v == f64::INFINITY {
            return Err(DecoderError::Transitions(format!("invalid entry {v}")));
        }
    }
    Ok(())
}

impl TransitionMatrix {
    pub fn new(
        vocabulary: Vec<String>,
        matrix: Vec<Vec<f64>>,
        start: Option<Vec<f64>>,
        end: Option<Vec<f64>>,
    ) -> Result<Self, DecoderError> {
        let n = vocabulary.len();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(DecoderError::Transitions(format!("matrix must be {n}x{n}")));
        }
        let start = start.unwrap_or_else(|| vec![0.0; n]);
        let end = end.unwrap_or_else(|| vec![0.0; n]);
        if start.len() != n || end.len() != n {
            return Err(DecoderError::Transitions(format!(
                "start and end scores must have {n} entries"
            )));
        }
        check_entries(matrix.iter().flatten().chain(&start).chain(&end))?;
        Ok(TransitionMatrix {
            vocabulary,
            matrix,
            start,
            end,
        })
    }

    pub fn zeros(vocabulary: &TagVocabulary) -> Self {
        let n = vocabulary.len();
        TransitionMatrix {
            vocabulary: vocabulary.names().to_vec(),
            matrix: vec![vec![0.0; n]; n],
            start: vec![0.0; n],
            end: vec![0.0; n],
        }
    }

    /// Zero for valid transitions, negative infinity for invalid ones.
    ///
    /// Only meaningful for depth-dependent vocabularies, where a tag's
    /// annotation pins the depth it runs at: `b` may follow `a` iff `b`
    /// executes at the depth `a` leaves behind, and that depth never exceeds
    /// `max_depth`. The first tag must run at depth 0 and the last must
    /// return to it.
    pub fn constraint_mask(vocabulary: &TagVocabulary, max_depth: usize) -> Self {
        let tags = vocabulary.tags();
        let result: Vec<Option<usize>> = tags
            .iter()
            .map(|t| {
                t.depth()
                    .and_then(|d| t.apply(d))
                    .filter(|&r| r <= max_depth)
            })
            .collect();
        let score = |ok: bool| if ok { 0.0 } else { f64::NEG_INFINITY };
        let matrix = result
            .iter()
            .map(|r| {
                tags.iter()
                    .zip(&result)
                    .map(|(b, rb)| score(rb.is_some() && r.is_some_and(|d| b.depth() == Some(d))))
                    .collect()
            })
            .collect();
        let start = tags
            .iter()
            .zip(&result)
            .map(|(t, r)| score(r.is_some() && t.depth() == Some(0)))
            .collect();
        let end = result.iter().map(|r| score(*r == Some(0))).collect();
        TransitionMatrix {
            vocabulary: vocabulary.names().to_vec(),
            matrix,
            start,
            end,
        }
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn score(&self, from: usize, to: usize) -> f64 {
        self.matrix[from][to]
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn end(&self) -> &[f64] {
        &self.end
    }

    pub fn to_file(&self) -> TransitionFile {
        let enc = |v: &f64| TransitionScore::from(*v);
        TransitionFile {
            vocabulary: self.vocabulary.clone(),
            matrix: self
                .matrix
                .iter()
                .map(|r| r.iter().map(enc).collect())
                .collect(),
            start: Some(self.start.iter().map(enc).collect()),
            end: Some(self.end.iter().map(enc).collect()),
        }
    }

    pub fn from_file(file: TransitionFile) -> Result<Self, DecoderError> {
        let dec = |v: Vec<TransitionScore>| -> Result<Vec<f64>, DecoderError> {
            v.into_iter().map(f64::try_from).collect()
        };
        let matrix = file.matrix.into_iter().map(dec).collect::<Result<_, _>>()?;
        let start = file.start.map(dec).transpose()?;
        let end = file.end.map(dec).transpose()?;
        TransitionMatrix::new(file.vocabulary, matrix, start, end)
    }
}

/// A score as stored in a transition file: a number, or `"-inf"` / `null`
/// for a forbidden transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransitionScore {
    Number(f64),
    Text(String),
    Null(()),
}

impl From<f64> for TransitionScore {
    fn from(v: f64) -> Self {
        if v == f64::NEG_INFINITY {
            TransitionScore::Text("-inf".into())
        } else {
            TransitionScore::Number(v)
        }
    }
}

impl TryFrom<TransitionScore> for f64 {
    type Error = DecoderError;

    fn try_from(v: TransitionScore) -> Result<f64, DecoderError> {
        match v {
            TransitionScore::Number(x) => Ok(x),
            TransitionScore::Null(()) => Ok(f64::NEG_INFINITY),
            TransitionScore::Text(s) if s == "-inf" || s == "-Infinity" => Ok(f64::NEG_INFINITY),
            TransitionScore::Text(s) => Err(DecoderError::Transitions(format!("bad score `{s}`"))),
        }
    }
}

/// On-disk form: `{"vocabulary": [...], "matrix": [[...]], "start": [...], "end": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionFile {
    pub vocabulary: Vec<String>,
    pub matrix: Vec<Vec<TransitionScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<TransitionScore>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<Vec<TransitionScore>>,
}

fn crf_plain(emissions: &[Vec<f64>], tr: &TransitionMatrix) -> Option<DecodedSentence> {
    let n = tr.vocabulary.len();
    let Some(first) = emissions.first() else {
        return Some(DecodedSentence {
            tags: Vec::new(),
            score: 0.0,
        });
    };
    let mut score: Vec<f64> = (0..n).map(|k| tr.start[k] + first[k]).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(emissions.len());
    back.push(vec![0; n]);
    for row in &emissions[1..] {
        let mut next = vec![f64::NEG_INFINITY; n];
        let mut ptr = vec![0; n];
        for k in 0..n {
            for (j, &s) in score.iter().enumerate() {
                let cand = s + tr.matrix[j][k] + row[k];
                if cand > next[k] {
                    next[k] = cand;
                    ptr[k] = j;
                }
            }
        }
        score = next;
        back.push(ptr);
    }
    let (mut best, mut best_score) = (0, f64::NEG_INFINITY);
    for (k, &at) in score.iter().enumerate() {
        let s = at + tr.end[k];
        if s > best_score {
            best = k;
            best_score = s;
        }
    }
    if best_score == f64::NEG_INFINITY {
        return None;
    }
    let mut tags = vec![0; emissions.len()];
    for t in (0..emissions.len()).rev() {
        tags[t] = best;
        best = back[t][best];
    }
    Some(DecodedSentence {
        tags,
        score: best_score,
    })
}

/// CRF Viterbi over (depth, previous tag) states; only valid sequences.
fn crf_constrained(
    emissions: &[Vec<f64>],
    tr: &TransitionMatrix,
    table: &DepthTable,
    allow_open_final: bool,
) -> Option<DecodedSentence> {
    let n = tr.vocabulary.len();
    let width = table.max_depth() + 1;
    let Some(first) = emissions.first() else {
        return Some(DecodedSentence {
            tags: Vec::new(),
            score: 0.0,
        });
    };
    let idx = |d: usize, k: usize| d * n + k;
    let mut score = vec![f64::NEG_INFINITY; width * n];
    for &(k, nd) in &table.moves[0] {
        let cand = tr.start[k] + first[k];
        if cand > score[idx(nd, k)] {
            score[idx(nd, k)] = cand;
        }
    }
    // back[t][state] = previous state
    let mut back: Vec<Vec<usize>> = vec![vec![usize::MAX; width * n]];
    for row in &emissions[1..] {
        let mut next = vec![f64::NEG_INFINITY; width * n];
        let mut ptr = vec![usize::MAX; width * n];
        for d in 0..width {
            for j in 0..n {
                let s = score[idx(d, j)];
                if s == f64::NEG_INFINITY {
                    continue;
                }
                for &(k, nd) in &table.moves[d] {
                    let cand = s + tr.matrix[j][k] + row[k];
                    let to = idx(nd, k);
                    if cand > next[to] {
                        next[to] = cand;
                        ptr[to] = idx(d, j);
                    }
                }
            }
        }
        score = next;
        back.push(ptr);
    }
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for d in 0..width {
        if d > 0 && !allow_open_final {
            break;
        }
        for k in 0..n {
            let s = score[idx(d, k)] + tr.end[k];
            if s > best_score {
                best = Some(idx(d, k));
                best_score = s;
            }
        }
    }
    let mut state = best?;
    let mut tags = vec![0; emissions.len()];
    for t in (0..emissions.len()).rev() {
        tags[t] = state % n;
        state = back[t][state];
    }
    Some(DecodedSentence {
        tags,
        score: best_score,
    })
}

/// Viterbi decoding with learned transitions. With
/// `cfg.enforce_constraints` the search is additionally restricted to tag
/// sequences that are executable from and back to an empty stack within
/// `cfg.max_depth`.
pub fn decode_crf(
    tensor: &DistributionTensor,
    transitions: &TransitionMatrix,
    cfg: &DecoderConfig,
) -> Result<Vec<DecodedSentence>, DecoderError> {
    decode_crf_with(tensor, transitions, cfg, Execution::default())
}

pub fn decode_crf_with(
    tensor: &DistributionTensor,
    transitions: &TransitionMatrix,
    cfg: &DecoderConfig,
    exec: Execution,
) -> Result<Vec<DecodedSentence>, DecoderError> {
    cfg.validate()?;
    if transitions.vocabulary.as_slice() != tensor.vocabulary().names() {
        return Err(DecoderError::Transitions(
            "vocabulary differs from the distribution file".into(),
        ));
    }
    let normalized;
    let tensor = if tensor.is_normalized() {
        tensor
    } else {
        normalized = tensor.normalize_with(exec);
        &normalized
    };
    let table = cfg
        .enforce_constraints
        .then(|| DepthTable::new(tensor.vocabulary(), cfg.max_depth));
    exec::try_map(tensor.sentences(), exec, |s| {
        let out = match &table {
            Some(table) => crf_constrained(&s.rows, transitions, table, cfg.allow_open_final),
            None => crf_plain(&s.rows, transitions),
        };
        out.ok_or_else(|| DecoderError::Infeasible {
            sentence: sentence_label(s),
        })
    })
}
