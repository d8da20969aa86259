//! Synthetic corpora and noisy-oracle tag scores, so that decoding, linking
//! and scoring can be exercised end to end without a trained model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corefud::{Document, Entity, Mention, Sentence, Token};
use crate::decoder::{DecoderError, DistributionTensor, SentenceScores};
use crate::linker::{AntecedentScores, MentionRef};
use crate::tags::{encode_mentions, nesting_depth, Span, TagError, TagVocabulary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid noise parameters: {0}")]
    Noise(String),
    #[error("invalid generator parameters: {0}")]
    Generator(String),
    #[error("document `{doc_id}` sentence {sentence}: {source}")]
    Encode {
        doc_id: String,
        sentence: usize,
        source: TagError,
    },
    #[error("gold tag {tag} is outside the vocabulary of {size} tags")]
    TagIndex { tag: usize, size: usize },
    #[error(transparent)]
    Decoder(#[from] DecoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub seed: u64,
    /// Chance that a token's argmax is moved to a uniformly chosen wrong tag.
    pub flip_probability: f64,
    /// Softens the one-hot logits; larger means flatter distributions.
    pub temperature: f64,
}

impl NoiseSpec {
    pub fn new(seed: u64, flip_probability: f64, temperature: f64) -> Result<Self, HarnessError> {
        let spec = NoiseSpec {
            seed,
            flip_probability,
            temperature,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(HarnessError::Noise(format!(
                "flip probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(HarnessError::Noise(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorConfig {
    pub documents: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Cap on the number of multi-token mentions open between two tokens.
    pub max_depth: usize,
    /// Chance of keeping a candidate mention that crosses an existing one.
    pub crossing_probability: f64,
    /// Chance that a new mention joins an earlier entity.
    pub link_probability: f64,
    pub corpus_id: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            documents: 10,
            min_sentences: 2,
            max_sentences: 6,
            min_tokens: 3,
            max_tokens: 16,
            max_depth: 3,
            crossing_probability: 0.1,
            link_probability: 0.5,
            corpus_id: "synth".to_string(),
        }
    }
}

impl GeneratorConfig {
    pub fn new(documents: usize, max_depth: usize, crossing_probability: f64) -> Self {
        GeneratorConfig {
            documents,
            max_depth,
            crossing_probability,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Generator(m.to_string()));
        if self.max_depth == 0 {
            return bad("max depth must be at least 1");
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return bad("sentence range must be non-empty and start at 1 or more");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("token range must be non-empty and start at 1 or more");
        }
        if !(0.0..=1.0).contains(&self.crossing_probability)
            || !(0.0..=1.0).contains(&self.link_probability)
        {
            return bad("probabilities must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Random tree: tokens attach, in random order, to a token already in the
/// tree; the first one is the root.
fn random_tree(rng: &mut ChaCha8Rng, len: usize) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut parents = vec![None; len];
    for k in 1..len {
        parents[order[k]] = Some(order[rng.random_range(0..k)]);
    }
    parents
}

fn random_spans(rng: &mut ChaCha8Rng, len: usize, cfg: &GeneratorConfig) -> Vec<Span> {
    let target = rng.random_range(0..=len.div_ceil(2) + 1);
    let mut spans: Vec<Span> = Vec::new();
    for _ in 0..target * 4 {
        if spans.len() >= target {
            break;
        }
        let width = if rng.random_bool(0.35) {
            1
        } else {
            rng.random_range(2..=len.clamp(2, 6))
        };
        if width > len {
            continue;
        }
        let start = rng.random_range(0..=len - width);
        let span = Span::new(start, start + width - 1);
        if spans.contains(&span) {
            continue;
        }
        if spans.iter().any(|s| s.crosses(&span)) && !rng.random_bool(cfg.crossing_probability) {
            continue;
        }
        spans.push(span);
        if nesting_depth(&spans) > cfg.max_depth {
            spans.pop();
        }
    }
    spans
}

fn overlaps(a: &Mention, b: &Mention) -> bool {
    a.sentence == b.sentence && a.start <= b.end && b.start <= a.end
}

fn generate_document(rng: &mut ChaCha8Rng, index: usize, cfg: &GeneratorConfig) -> Document {
    let doc_id = format!("doc{index:04}");
    let mut doc = Document::new(&doc_id, &cfg.corpus_id);
    let n_sentences = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
    let mut entities: Vec<Entity> = Vec::new();
    for s in 0..n_sentences {
        let len = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
        let tokens: Vec<Token> = random_tree(rng, len)
            .into_iter()
            .enumerate()
            .map(|(i, p)| Token::new(i + 1, format!("w{}", rng.random_range(0..50)), p))
            .collect();
        let text = tokens
            .iter()
            .map(|t| t.form.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        doc.sentences.push(Sentence {
            id: format!("{doc_id}-s{}", s + 1),
            text: Some(text),
            comments: Vec::new(),
            tokens,
        });
        for span in random_spans(rng, len, cfg) {
            let probe = Mention::new(s, span.start, span.end, "");
            // An entity may not hold two overlapping mentions: the bracket
            // notation could not tell them apart.
            let open: Vec<usize> = entities
                .iter()
                .enumerate()
                .filter(|(_, e)| !e.mentions.iter().any(|m| overlaps(m, &probe)))
                .map(|(i, _)| i)
                .collect();
            let target = if !open.is_empty() && rng.random_bool(cfg.link_probability) {
                open[rng.random_range(0..open.len())]
            } else {
                entities.push(Entity {
                    id: format!("e{}", entities.len() + 1),
                    mentions: Vec::new(),
                });
                entities.len() - 1
            };
            let id = entities[target].id.clone();
            entities[target]
                .mentions
                .push(Mention::new(s, span.start, span.end, id));
        }
    }
    doc.entities = entities;
    doc.normalize();
    doc
}

/// Deterministic synthetic corpus.
pub fn generate_corpus(seed: u64, cfg: &GeneratorConfig) -> Result<Vec<Document>, HarnessError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..cfg.documents)
        .map(|i| generate_document(&mut rng, i, cfg))
        .collect())
}

/// Gold tag indices of one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EncodedSentence {
    pub doc_id: String,
    pub sentence_index: usize,
    pub tags: Vec<usize>,
}

/// Encodes every sentence and builds the vocabulary of tags that occur.
pub fn encode_corpus(
    docs: &[Document],
    depth_dependent: bool,
    max_depth: Option<usize>,
) -> Result<(TagVocabulary, Vec<EncodedSentence>), HarnessError> {
    let mut encoded = Vec::new();
    for doc in docs {
        for (s, sentence) in doc.sentences.iter().enumerate() {
            let tags = encode_mentions(
                &doc.sentence_spans(s),
                sentence.len(),
                depth_dependent,
                max_depth,
            )
            .map_err(|source| HarnessError::Encode {
                doc_id: doc.doc_id.clone(),
                sentence: s,
                source,
            })?;
            encoded.push((doc.doc_id.clone(), s, tags));
        }
    }
    let vocab = TagVocabulary::build(
        encoded.iter().map(|(_, _, t)| t.as_slice()),
        depth_dependent,
    );
    let sentences = encoded
        .into_iter()
        .map(|(doc_id, sentence_index, tags)| EncodedSentence {
            doc_id,
            sentence_index,
            tags: tags
                .iter()
                .map(|t| vocab.index_of(t).expect("vocabulary built from these tags"))
                .collect(),
        })
        .collect();
    Ok((vocab, sentences))
}

/// One-hot scores on the gold tags, corrupted by `spec`: each token's argmax
/// moves to a random other tag with the flip probability, then the logits
/// `onehot / temperature` are log-softmax normalized.
pub fn synthesize_logits(
    vocabulary: &TagVocabulary,
    gold: &[EncodedSentence],
    spec: &NoiseSpec,
) -> Result<DistributionTensor, HarnessError> {
    spec.validate()?;
    let size = vocabulary.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let peak = 1.0 / spec.temperature;
    // log-softmax of a row with one entry `peak` and the rest 0.
    let lse = (peak.exp() + (size as f64 - 1.0)).ln();
    let mut sentences = Vec::with_capacity(gold.len());
    for g in gold {
        let mut rows = Vec::with_capacity(g.tags.len());
        for &tag in &g.tags {
            if tag >= size {
                return Err(HarnessError::TagIndex { tag, size });
            }
            let mut top = tag;
            if size > 1 && rng.random_bool(spec.flip_probability) {
                top = rng.random_range(0..size - 1);
                if top >= tag {
                    top += 1;
                }
            }
            let mut row = vec![-lse; size];
            row[top] = peak - lse;
            rows.push(row);
        }
        sentences.push(SentenceScores::new(&g.doc_id, g.sentence_index, rows));
    }
    Ok(DistributionTensor::new(
        vocabulary.clone(),
        sentences,
        true,
    )?)
}

/// Antecedent scores that make the linker reproduce the gold entities: each
/// mention points at the previous mention of its entity, or at itself.
pub fn gold_antecedent_scores(doc: &Document) -> AntecedentScores {
    let mentions = doc.mentions();
    let refs: Vec<MentionRef> = mentions.iter().map(|m| MentionRef::from(*m)).collect();
    let rows = mentions
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut row = vec![0.0; i + 1];
            let target = (0..i)
                .rev()
                .find(|&j| mentions[j].entity == m.entity)
                .unwrap_or(i);
            row[target] = 1.0;
            row
        })
        .collect();
    AntecedentScores::new(refs, rows).expect("mentions are in document order")
}
