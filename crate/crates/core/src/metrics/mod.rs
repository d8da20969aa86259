//! Coreference evaluation: mention matching followed by MUC, B-cubed,
//! CEAF-e and their CoNLL average.

mod assignment;
mod cluster;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::corefud::{mention_head, Document, Mention, Sentence};
use crate::exec::{self, Execution};

pub use assignment::max_weight_assignment;
pub use cluster::{
    b_cubed, b_cubed_counts, ceaf_e, ceaf_e_counts, ceaf_e_similarity, muc, muc_counts,
    same_clustering, Clusters, MetricCounts, Prf,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("document `{0}` is missing from the prediction")]
    MissingPrediction(String),
    #[error("predicted document `{0}` has no gold counterpart")]
    UnexpectedPrediction(String),
    #[error("document `{0}` appears more than once")]
    DuplicateDocument(String),
    #[error("document `{doc_id}`: predicted mention {mention} lies outside the gold text")]
    OutOfRange { doc_id: String, mention: String },
    #[error("unknown matching mode `{0}`")]
    UnknownMode(String),
}

/// Criterion a predicted mention must satisfy to match a gold one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    /// Same head token.
    Head,
    /// Predicted span lies inside the gold span and contains the gold head.
    Partial,
    /// Identical span.
    Exact,
}

impl fmt::Display for Matching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Matching::Head => "head",
            Matching::Partial => "partial",
            Matching::Exact => "exact",
        })
    }
}

impl FromStr for Matching {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head" => Ok(Matching::Head),
            "partial" => Ok(Matching::Partial),
            "exact" => Ok(Matching::Exact),
            _ => Err(MetricsError::UnknownMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MatchMode {
    pub matching: Matching,
    pub include_singletons: bool,
}

impl MatchMode {
    pub fn new(matching: Matching, include_singletons: bool) -> Self {
        MatchMode {
            matching,
            include_singletons,
        }
    }

    /// Head, partial and exact matching without singletons, then head
    /// matching with singletons.
    pub fn standard() -> [MatchMode; 4] {
        [
            MatchMode::new(Matching::Head, false),
            MatchMode::new(Matching::Partial, false),
            MatchMode::new(Matching::Exact, false),
            MatchMode::new(Matching::Head, true),
        ]
    }

    pub fn label(&self) -> String {
        if self.include_singletons {
            format!("{}+singletons", self.matching)
        } else {
            self.matching.to_string()
        }
    }
}

impl Default for MatchMode {
    fn default() -> Self {
        MatchMode::new(Matching::Head, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub mode: MatchMode,
    pub muc: Prf,
    pub b_cubed: Prf,
    pub ceaf_e: Prf,
    pub conll: f64,
}

/// Summed counts for one document (or a whole corpus).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DocumentCounts {
    pub muc: MetricCounts,
    pub b_cubed: MetricCounts,
    pub ceaf_e: MetricCounts,
    /// Whether the key and response clusterings coincided in every document.
    pub identical: bool,
}

impl DocumentCounts {
    fn combine(self, o: DocumentCounts) -> DocumentCounts {
        DocumentCounts {
            muc: self.muc + o.muc,
            b_cubed: self.b_cubed + o.b_cubed,
            ceaf_e: self.ceaf_e + o.ceaf_e,
            identical: self.identical && o.identical,
        }
    }

    pub fn report(&self, mode: MatchMode) -> ScoreReport {
        let muc = self.muc.finish(self.identical);
        let b_cubed = self.b_cubed.finish(self.identical);
        let ceaf_e = self.ceaf_e.finish(self.identical);
        ScoreReport {
            mode,
            muc,
            b_cubed,
            ceaf_e,
            conll: (muc.f1 + b_cubed.f1 + ceaf_e.f1) / 3.0,
        }
    }
}

fn satisfies(
    matching: Matching,
    pred: &Mention,
    pred_head: usize,
    gold: &Mention,
    gold_head: usize,
) -> bool {
    if pred.sentence != gold.sentence {
        return false;
    }
    match matching {
        Matching::Exact => pred.start == gold.start && pred.end == gold.end,
        Matching::Head => pred_head == gold_head,
        Matching::Partial => {
            gold.start <= pred.start
                && pred.end <= gold.end
                && pred.start <= gold_head
                && gold_head <= pred.end
        }
    }
}

/// One-to-one matching of predicted to gold mentions. Returns, for every
/// predicted mention, the index of its gold partner.
///
/// Predicted mentions are visited in document order. Identical spans are
/// paired first; the remaining predicted mentions then take the shortest (then
/// earliest) unmatched gold mention satisfying the criterion. Mentions must
/// refer to existing tokens of `sentences`.
pub fn match_mentions(
    gold: &[Mention],
    pred: &[Mention],
    matching: Matching,
    sentences: &[Sentence],
) -> Vec<Option<usize>> {
    let head = |m: &Mention| mention_head(m, &sentences[m.sentence].tokens);
    let gold_heads: Vec<usize> = gold.iter().map(head).collect();
    let pred_heads: Vec<usize> = pred.iter().map(head).collect();

    let mut gold_order: Vec<usize> = (0..gold.len()).collect();
    gold_order.sort_by_key(|&g| (gold[g].position(), g));
    let mut pred_order: Vec<usize> = (0..pred.len()).collect();
    pred_order.sort_by_key(|&p| (pred[p].position(), p));

    let mut taken = vec![false; gold.len()];
    let mut result = vec![None; pred.len()];

    let mut by_span: HashMap<(usize, usize, usize), Vec<usize>> = HashMap::new();
    for &g in gold_order.iter().rev() {
        by_span.entry(gold[g].position()).or_default().push(g);
    }
    for &p in &pred_order {
        if let Some(g) = by_span.get_mut(&pred[p].position()).and_then(Vec::pop) {
            taken[g] = true;
            result[p] = Some(g);
        }
    }
    if matching == Matching::Exact {
        return result;
    }

    let mut by_sentence: HashMap<usize, Vec<usize>> = HashMap::new();
    for &g in &gold_order {
        by_sentence.entry(gold[g].sentence).or_default().push(g);
    }
    for &p in &pred_order {
        if result[p].is_some() {
            continue;
        }
        let candidates = by_sentence
            .get(&pred[p].sentence)
            .map_or(&[][..], Vec::as_slice);
        let best = candidates
            .iter()
            .copied()
            .filter(|&g| {
                !taken[g] && satisfies(matching, &pred[p], pred_heads[p], &gold[g], gold_heads[g])
            })
            .min_by_key(|&g| (gold[g].len(), gold[g].position(), g));
        if let Some(g) = best {
            taken[g] = true;
            result[p] = Some(g);
        }
    }
    result
}

fn flatten(doc: &Document) -> (Vec<Mention>, Vec<usize>) {
    let mut mentions = Vec::new();
    let mut entity_of = Vec::new();
    for (e, entity) in doc.entities.iter().enumerate() {
        for m in &entity.mentions {
            mentions.push(m.clone());
            entity_of.push(e);
        }
    }
    (mentions, entity_of)
}

fn check_range(
    doc_id: &str,
    mentions: &[Mention],
    sentences: &[Sentence],
) -> Result<(), MetricsError> {
    for m in mentions {
        let ok = sentences
            .get(m.sentence)
            .is_some_and(|s| m.start <= m.end && m.end < s.len());
        if !ok {
            return Err(MetricsError::OutOfRange {
                doc_id: doc_id.to_string(),
                mention: m.to_string(),
            });
        }
    }
    Ok(())
}

fn warn_duplicates(doc_id: &str, mentions: &[Mention]) {
    let mut seen = HashSet::new();
    for m in mentions {
        if !seen.insert((m.position(), m.entity.as_str())) {
            log::warn!("document `{doc_id}`: duplicate gold mention {m}, keeping both");
        }
    }
}

/// Matched (predicted, gold) mention pairs of one document.
pub fn matched_pairs(
    gold: &Document,
    pred: &Document,
    matching: Matching,
) -> Result<Vec<(Mention, Mention)>, MetricsError> {
    let (gold_mentions, _) = flatten(gold);
    let (pred_mentions, _) = flatten(pred);
    check_range(&gold.doc_id, &pred_mentions, &gold.sentences)?;
    let mapping = match_mentions(&gold_mentions, &pred_mentions, matching, &gold.sentences);
    let mut pairs: Vec<(Mention, Mention)> = mapping
        .iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| (pred_mentions[p].clone(), gold_mentions[g].clone())))
        .collect();
    pairs.sort();
    Ok(pairs)
}

/// Counts for one gold/predicted document pair. Heads come from the gold
/// document's dependency trees.
pub fn document_counts(
    gold: &Document,
    pred: &Document,
    mode: MatchMode,
) -> Result<DocumentCounts, MetricsError> {
    let (gold_mentions, gold_entity) = flatten(gold);
    let (pred_mentions, pred_entity) = flatten(pred);
    check_range(&gold.doc_id, &pred_mentions, &gold.sentences)?;
    warn_duplicates(&gold.doc_id, &gold_mentions);
    let mapping = match_mentions(
        &gold_mentions,
        &pred_mentions,
        mode.matching,
        &gold.sentences,
    );

    // Gold mention i is key i; unmatched predicted mention j is key n + j.
    let n = gold_mentions.len();
    let mut key: Vec<Vec<usize>> = vec![Vec::new(); gold.entities.len()];
    for (i, &e) in gold_entity.iter().enumerate() {
        key[e].push(i);
    }
    let mut response: Vec<Vec<usize>> = vec![Vec::new(); pred.entities.len()];
    for (j, &e) in pred_entity.iter().enumerate() {
        response[e].push(mapping[j].unwrap_or(n + j));
    }
    let keep = |c: &Vec<usize>| !c.is_empty() && (mode.include_singletons || c.len() > 1);
    key.retain(keep);
    response.retain(keep);

    Ok(DocumentCounts {
        muc: muc_counts(&key, &response),
        b_cubed: b_cubed_counts(&key, &response),
        ceaf_e: ceaf_e_counts(&key, &response),
        identical: same_clustering(&key, &response),
    })
}

fn pair_documents<'a>(
    gold: &'a [Document],
    pred: &'a [Document],
) -> Result<Vec<(&'a Document, &'a Document)>, MetricsError> {
    let mut by_id: HashMap<&str, &Document> = HashMap::new();
    for d in pred {
        if by_id.insert(d.doc_id.as_str(), d).is_some() {
            return Err(MetricsError::DuplicateDocument(d.doc_id.clone()));
        }
    }
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(gold.len());
    for g in gold {
        if !seen.insert(g.doc_id.as_str()) {
            return Err(MetricsError::DuplicateDocument(g.doc_id.clone()));
        }
        let p = by_id
            .get(g.doc_id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(g.doc_id.clone()))?;
        pairs.push((g, *p));
    }
    if let Some(extra) = pred.iter().find(|d| !seen.contains(d.doc_id.as_str())) {
        return Err(MetricsError::UnexpectedPrediction(extra.doc_id.clone()));
    }
    Ok(pairs)
}

/// Micro-averaged counts over a corpus.
pub fn corpus_counts(
    gold: &[Document],
    pred: &[Document],
    mode: MatchMode,
    exec: Execution,
) -> Result<DocumentCounts, MetricsError> {
    let pairs = pair_documents(gold, pred)?;
    let per_doc = exec::try_map(&pairs, exec, |(g, p)| document_counts(g, p, mode))?;
    Ok(per_doc.into_iter().fold(
        DocumentCounts {
            identical: true,
            ..Default::default()
        },
        DocumentCounts::combine,
    ))
}

pub fn score(
    gold: &[Document],
    pred: &[Document],
    mode: MatchMode,
) -> Result<ScoreReport, MetricsError> {
    score_with(gold, pred, mode, Execution::default())
}

pub fn score_with(
    gold: &[Document],
    pred: &[Document],
    mode: MatchMode,
    exec: Execution,
) -> Result<ScoreReport, MetricsError> {
    Ok(corpus_counts(gold, pred, mode, exec)?.report(mode))
}

/// Scores under every standard mode.
pub fn score_all(
    gold: &[Document],
    pred: &[Document],
    exec: Execution,
) -> Result<Vec<ScoreReport>, MetricsError> {
    MatchMode::standard()
        .iter()
        .map(|&m| score_with(gold, pred, m, exec))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corefud::{Entity, Token};

    /// Sentence of `n` tokens with the given 0-based parents.
    fn sentence(parents: &[Option<usize>]) -> Sentence {
        Sentence {
            id: "s".into(),
            text: None,
            comments: Vec::new(),
            tokens: parents
                .iter()
                .enumerate()
                .map(|(i, &p)| Token::new(i + 1, format!("w{i}"), p))
                .collect(),
        }
    }

    type Position = (usize, usize, usize);

    fn doc(id: &str, sentences: Vec<Sentence>, entities: &[(&str, &[Position])]) -> Document {
        let mut d = Document::new(id, "");
        d.sentences = sentences;
        d.entities = entities
            .iter()
            .map(|(e, ms)| Entity {
                id: e.to_string(),
                mentions: ms
                    .iter()
                    .map(|&(s, a, b)| Mention::new(s, a, b, *e))
                    .collect(),
            })
            .collect();
        d
    }

    #[test]
    fn boundary_error_matches_head_and_partial_only() {
        // 1-based span (1,4) with head 3 vs predicted (2,3) whose head is 3.
        let s = sentence(&[Some(2), Some(2), None, Some(2)]);
        let gold = vec![Mention::new(0, 0, 3, "g")];
        let pred = vec![Mention::new(0, 1, 2, "p")];
        let sents = vec![s];
        assert_eq!(
            match_mentions(&gold, &pred, Matching::Head, &sents),
            vec![Some(0)]
        );
        assert_eq!(
            match_mentions(&gold, &pred, Matching::Partial, &sents),
            vec![Some(0)]
        );
        assert_eq!(
            match_mentions(&gold, &pred, Matching::Exact, &sents),
            vec![None]
        );
    }

    #[test]
    fn exact_span_wins_over_earlier_candidate() {
        // Both gold mentions share head 2; the predicted span equals the second.
        let s = sentence(&[Some(2), Some(2), None, Some(2)]);
        let gold = vec![Mention::new(0, 0, 3, "a"), Mention::new(0, 2, 2, "b")];
        let pred = vec![Mention::new(0, 1, 2, "x"), Mention::new(0, 2, 2, "y")];
        let m = match_mentions(&gold, &pred, Matching::Head, &[s]);
        assert_eq!(m, vec![Some(0), Some(1)]);
    }

    #[test]
    fn shortest_then_earliest() {
        let s = sentence(&[Some(1), None, Some(1), Some(1)]);
        let gold = vec![
            Mention::new(0, 0, 3, "a"),
            Mention::new(0, 0, 2, "b"),
            Mention::new(0, 1, 3, "c"),
        ];
        let pred = vec![Mention::new(0, 1, 1, "x")];
        let m = match_mentions(&gold, &pred, Matching::Head, &[s]);
        assert_eq!(m, vec![Some(1)]);
    }

    #[test]
    fn identical_documents_score_one() {
        let s = sentence(&[None, Some(0), Some(0), None, Some(3)]);
        let g = doc(
            "d",
            vec![s],
            &[("e1", &[(0, 0, 1), (0, 3, 4)]), ("e2", &[(0, 2, 2)])],
        );
        for mode in MatchMode::standard() {
            let r = score(std::slice::from_ref(&g), std::slice::from_ref(&g), mode).unwrap();
            assert_eq!(r.conll, 1.0, "{}", mode.label());
        }
    }

    #[test]
    fn only_singletons_without_singletons_scores_one() {
        let s = sentence(&[None, Some(0)]);
        let g = doc("d", vec![s], &[("e1", &[(0, 0, 1)])]);
        let r = score(
            std::slice::from_ref(&g),
            std::slice::from_ref(&g),
            MatchMode::default(),
        )
        .unwrap();
        assert_eq!(r.conll, 1.0);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let s = sentence(&[None, Some(0), Some(0)]);
        let g = doc("d", vec![s.clone()], &[("e1", &[(0, 0, 0), (0, 2, 2)])]);
        let p = doc("d", vec![s], &[]);
        let r = score(&[g], &[p], MatchMode::default()).unwrap();
        assert_eq!(r.conll, 0.0);
    }

    #[test]
    fn doc_mismatch() {
        let g = doc("a", vec![sentence(&[None])], &[]);
        let p = doc("b", vec![sentence(&[None])], &[]);
        assert_eq!(
            score(std::slice::from_ref(&g), &[p], MatchMode::default()),
            Err(MetricsError::MissingPrediction("a".into()))
        );
        let extra = doc("c", vec![], &[]);
        assert_eq!(
            score(
                std::slice::from_ref(&g),
                &[g.clone(), extra],
                MatchMode::default()
            ),
            Err(MetricsError::UnexpectedPrediction("c".into()))
        );
    }

    #[test]
    fn duplicating_documents_keeps_scores() {
        let s = sentence(&[None, Some(0), Some(0), None, Some(3)]);
        let g = doc(
            "d",
            vec![s.clone()],
            &[("e1", &[(0, 0, 1), (0, 3, 4), (0, 2, 2)])],
        );
        let p = doc(
            "d",
            vec![s],
            &[
                ("x", &[(0, 0, 1), (0, 3, 4)]),
                ("y", &[(0, 2, 2), (0, 3, 3)]),
            ],
        );
        let one = score(
            std::slice::from_ref(&g),
            std::slice::from_ref(&p),
            MatchMode::default(),
        )
        .unwrap();
        let mut g2 = g.clone();
        g2.doc_id = "d2".into();
        let mut p2 = p.clone();
        p2.doc_id = "d2".into();
        let two = score(&[g, g2], &[p, p2], MatchMode::default()).unwrap();
        assert!((one.conll - two.conll).abs() < 1e-12);
        assert!(one.conll > 0.0 && one.conll < 1.0);
    }
}
