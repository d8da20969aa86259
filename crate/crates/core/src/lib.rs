//! Non-neural machinery for multilingual coreference resolution: the
//! stack-instruction mention tag codec, constrained, greedy and CRF decoding
//! with ensembling, antecedent linking, CorefUD reading and writing,
//! shared-task metrics, and corpus sampling utilities.

pub mod corefud;
pub mod decoder;
pub mod exec;
pub mod formats;
pub mod harness;
pub mod linker;
pub mod metrics;
pub mod sampling;
pub mod tags;

pub use corefud::{parse_corefud, write_corefud, Document, Entity, Mention, Sentence, Token};
pub use decoder::{DecodeMode, DecoderConfig, DistributionTensor};
pub use exec::Execution;
pub use metrics::{score, MatchMode, Matching, ScoreReport};
pub use tags::{Span, Tag, TagVocabulary};
