//! Multilingual training-data plumbing: corpus mix ratios, seeded batch
//! sampling, corpus-id labels, context packing and checkpoint selection.

mod checkpoints;
mod context;
mod mix;

use thiserror::Error;

pub use checkpoints::{parse_grid_tsv, select_checkpoints, CheckpointChoice, ScoreGrid, Selection};
pub use context::{attach_corpus_id, corpus_label, pack_context, strip_corpus_id, ContextWindow};
pub use mix::{
    mix_ratio, sample_batches, CorpusSampler, CorpusSize, CorpusStats, MixRatio, MixStrategy,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("no corpora given")]
    NoCorpora,
    #[error("corpus `{id}` has non-positive size {size}")]
    NonPositiveSize { id: String, size: f64 },
    #[error("duplicate corpus id `{0}`")]
    DuplicateCorpus(String),
    #[error("unknown mixing strategy `{0}`")]
    UnknownStrategy(String),
    #[error("unknown corpus id `{0}`")]
    UnknownCorpus(String),
    #[error("sentence {index} has {count} subwords, more than the budget of {budget}")]
    Oversize {
        index: usize,
        count: usize,
        budget: usize,
    },
    #[error("sentence index {index} out of range for {len} sentences")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("line {line}: {reason}")]
    Grid { line: usize, reason: String },
    #[error("score grid is empty")]
    EmptyGrid,
    #[error("score grid is not rectangular: {0}")]
    NotRectangular(String),
    #[error("cannot keep {keep} of {runs} runs")]
    KeepTooMany { keep: usize, runs: usize },
}
