use crate::exec::{self, Execution};
use crate::tags::TagVocabulary;

use super::DecoderError;

/// Scores for one sentence: a row per token, a column per vocabulary tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceScores {
    pub doc_id: String,
    pub sentence_index: usize,
    pub rows: Vec<Vec<f64>>,
}

impl SentenceScores {
    pub fn new(doc_id: impl Into<String>, sentence_index: usize, rows: Vec<Vec<f64>>) -> Self {
        SentenceScores {
            doc_id: doc_id.into(),
            sentence_index,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn label(&self) -> String {
        format!("{}#{}", self.doc_id, self.sentence_index)
    }
}

/// Per-token tag scores for a batch of sentences, either raw logits or
/// per-row log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTensor {
    vocabulary: TagVocabulary,
    sentences: Vec<SentenceScores>,
    normalized: bool,
}

/// Tolerance on `logsumexp(row) == 0` for rows claimed to be normalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row.iter().copied());
    row.iter().map(|v| v - lse).collect()
}

impl DistributionTensor {
    pub fn new(
        vocabulary: TagVocabulary,
        sentences: Vec<SentenceScores>,
        normalized: bool,
    ) -> Result<Self, DecoderError> {
        let width = vocabulary.len();
        for s in &sentences {
            for (t, row) in s.rows.iter().enumerate() {
                if row.len() != width {
                    return Err(DecoderError::Shape {
                        sentence: s.label(),
                        reason: format!(
                            "row {t} has {} columns, vocabulary has {width}",
                            row.len()
                        ),
                    });
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(DecoderError::NonFinite {
                        sentence: s.label(),
                        token: t,
                    });
                }
                if normalized {
                    let lse = log_sum_exp(row.iter().copied());
                    if lse.abs() > NORMALIZATION_TOLERANCE {
                        return Err(DecoderError::NotNormalized {
                            sentence: s.label(),
                            token: t,
                        });
                    }
                }
            }
        }
        Ok(DistributionTensor {
            vocabulary,
            sentences,
            normalized,
        })
    }

    pub fn vocabulary(&self) -> &TagVocabulary {
        &self.vocabulary
    }

    pub fn sentences(&self) -> &[SentenceScores] {
        &self.sentences
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn into_parts(self) -> (TagVocabulary, Vec<SentenceScores>, bool) {
        (self.vocabulary, self.sentences, self.normalized)
    }

    /// Per-row log-softmax. Rows already normalized are left essentially
    /// unchanged.
    pub fn normalize(&self) -> DistributionTensor {
        self.normalize_with(Execution::default())
    }

    pub fn normalize_with(&self, exec: Execution) -> DistributionTensor {
        let sentences = exec::map(&self.sentences, exec, |s| SentenceScores {
            doc_id: s.doc_id.clone(),
            sentence_index: s.sentence_index,
            rows: s.rows.iter().map(|r| log_softmax(r)).collect(),
        });
        DistributionTensor {
            vocabulary: self.vocabulary.clone(),
            sentences,
            normalized: true,
        }
    }

    fn normalized_view(&self) -> std::borrow::Cow<'_, DistributionTensor> {
        if self.normalized {
            std::borrow::Cow::Borrowed(self)
        } else {
            std::borrow::Cow::Owned(self.normalize())
        }
    }
}

/// Averages the predicted distributions of several models token by token,
/// in probability space, and returns log-probabilities.
pub fn ensemble(tensors: &[DistributionTensor]) -> Result<DistributionTensor, DecoderError> {
    ensemble_with(tensors, Execution::default())
}

pub fn ensemble_with(
    tensors: &[DistributionTensor],
    exec: Execution,
) -> Result<DistributionTensor, DecoderError> {
    let Some(first) = tensors.first() else {
        return Err(DecoderError::Shape {
            sentence: String::new(),
            reason: "nothing to ensemble".into(),
        });
    };
    for (m, other) in tensors.iter().enumerate().skip(1) {
        if other.vocabulary.names() != first.vocabulary.names() {
            return Err(DecoderError::VocabularyMismatch { input: m });
        }
        if other.sentences.len() != first.sentences.len() {
            return Err(DecoderError::Shape {
                sentence: String::new(),
                reason: format!(
                    "input {m} has {} sentences, input 0 has {}",
                    other.sentences.len(),
                    first.sentences.len()
                ),
            });
        }
        for (a, b) in first.sentences.iter().zip(&other.sentences) {
            if a.doc_id != b.doc_id || a.sentence_index != b.sentence_index || a.len() != b.len() {
                return Err(DecoderError::Shape {
                    sentence: a.label(),
                    reason: format!(
                        "input {m} differs here ({} with {} tokens)",
                        b.label(),
                        b.len()
                    ),
                });
            }
        }
    }
    let views: Vec<_> = tensors.iter().map(|t| t.normalized_view()).collect();
    let models = views.len() as f64;
    let indices: Vec<usize> = (0..first.sentences.len()).collect();
    let sentences = exec::map(&indices, exec, |&s| {
        let base = &views[0].sentences[s];
        let rows = (0..base.len())
            .map(|t| {
                let row: Vec<f64> = (0..first.vocabulary.len())
                    .map(|k| {
                        log_sum_exp(views.iter().map(|v| v.sentences[s].rows[t][k])) - models.ln()
                    })
                    .collect();
                log_softmax(&row)
            })
            .collect();
        SentenceScores {
            doc_id: base.doc_id.clone(),
            sentence_index: base.sentence_index,
            rows,
        }
    });
    Ok(DistributionTensor {
        vocabulary: first.vocabulary.clone(),
        sentences,
        normalized: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn vocab2() -> TagVocabulary {
        TagVocabulary::from_names(&["O", "PUSH"]).unwrap()
    }

    fn tensor(rows: Vec<Vec<f64>>, normalized: bool) -> DistributionTensor {
        DistributionTensor::new(
            vocab2(),
            vec![SentenceScores::new("d", 0, rows)],
            normalized,
        )
        .unwrap()
    }

    #[test]
    fn normalize_symmetric_row() {
        let t = tensor(vec![vec![0.0, 0.0]], false).normalize();
        let row = &t.sentences()[0].rows[0];
        assert_abs_diff_eq!(row[0], 0.5f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn normalize_softmax_arithmetic() {
        let t = tensor(vec![vec![3f64.ln(), 0.0]], false).normalize();
        let row = &t.sentences()[0].rows[0];
        assert_abs_diff_eq!(row[0], 0.75f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], 0.25f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn normalize_is_idempotent() {
        let once = tensor(vec![vec![0.3, -1.7]], false).normalize();
        let twice = once.normalize();
        for (a, b) in once.sentences()[0].rows[0]
            .iter()
            .zip(&twice.sentences()[0].rows[0])
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_non_finite_and_bad_width() {
        let v = vocab2();
        assert!(matches!(
            DistributionTensor::new(
                v.clone(),
                vec![SentenceScores::new("d", 0, vec![vec![0.0, f64::NAN]])],
                false
            ),
            Err(DecoderError::NonFinite { .. })
        ));
        assert!(matches!(
            DistributionTensor::new(
                v.clone(),
                vec![SentenceScores::new("d", 0, vec![vec![0.0]])],
                false
            ),
            Err(DecoderError::Shape { .. })
        ));
        assert!(matches!(
            DistributionTensor::new(
                v,
                vec![SentenceScores::new("d", 0, vec![vec![0.0, 0.0]])],
                true
            ),
            Err(DecoderError::NotNormalized { .. })
        ));
    }

    #[test]
    fn ensemble_single_is_identity() {
        let t = tensor(vec![vec![0.2f64.ln(), 0.8f64.ln()]], true);
        let e = ensemble(std::slice::from_ref(&t)).unwrap();
        for (a, b) in e.sentences()[0].rows[0]
            .iter()
            .zip(&t.sentences()[0].rows[0])
        {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn ensemble_averages_probabilities() {
        let a = tensor(vec![vec![0.8f64.ln(), 0.2f64.ln()]], true);
        let b = tensor(vec![vec![0.4f64.ln(), 0.6f64.ln()]], true);
        let e = ensemble(&[a, b]).unwrap();
        let row = &e.sentences()[0].rows[0];
        assert_abs_diff_eq!(row[0].exp(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(row[1].exp(), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn ensemble_normalizes_logit_inputs() {
        let a = tensor(vec![vec![10.0, 10.0]], false);
        let e = ensemble(&[a.clone(), a]).unwrap();
        assert_abs_diff_eq!(e.sentences()[0].rows[0][0].exp(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn ensemble_rejects_mismatch() {
        let a = tensor(vec![vec![0.0, 0.0]], false);
        let b = tensor(vec![vec![0.0, 0.0], vec![0.0, 0.0]], false);
        match ensemble(&[a.clone(), b]) {
            Err(DecoderError::Shape { sentence, .. }) => assert_eq!(sentence, "d#0"),
            other => panic!("unexpected {other:?}"),
        }
        let c = DistributionTensor::new(
            TagVocabulary::from_names(&["O", "POP(1)"]).unwrap(),
            vec![SentenceScores::new("d", 0, vec![vec![0.0, 0.0]])],
            false,
        )
        .unwrap();
        assert_eq!(
            ensemble(&[a, c]),
            Err(DecoderError::VocabularyMismatch { input: 1 })
        );
    }
}
