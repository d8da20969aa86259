use serde::Serialize;

use super::SamplingError;

/// Reserved token carrying the dataset label.
pub fn corpus_label(id: &str) -> String {
    format!("<cid:{id}>")
}

/// Prepends the corpus label when `enabled`. `id` must be one of `known`.
pub fn attach_corpus_id<S: AsRef<str>>(
    tokens: &[String],
    id: &str,
    known: &[S],
    enabled: bool,
) -> Result<Vec<String>, SamplingError> {
    if !known.iter().any(|k| k.as_ref() == id) {
        return Err(SamplingError::UnknownCorpus(id.to_string()));
    }
    if !enabled {
        return Ok(tokens.to_vec());
    }
    let mut out = Vec::with_capacity(tokens.len() + 1);
    out.push(corpus_label(id));
    out.extend_from_slice(tokens);
    Ok(out)
}

/// Removes a leading corpus label, returning its id.
pub fn strip_corpus_id(tokens: &[String]) -> (Option<String>, Vec<String>) {
    if let Some(first) = tokens.first() {
        if let Some(id) = first
            .strip_prefix("<cid:")
            .and_then(|r| r.strip_suffix('>'))
        {
            return (Some(id.to_string()), tokens[1..].to_vec());
        }
    }
    (None, tokens.to_vec())
}

/// Subword window around a target sentence. Offsets count subwords from the
/// start of the document; ends are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ContextWindow {
    pub start: usize,
    pub end: usize,
    pub target_start: usize,
    pub target_end: usize,
}

impl ContextWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn left(&self) -> usize {
        self.target_start - self.start
    }

    pub fn right(&self) -> usize {
        self.end - self.target_end
    }
}

/// Packs sentence `target` with as much context as fits in `budget`
/// subwords: first up to `right_limit` following subwords (unlimited when
/// `None`), then the nearest preceding subwords.
pub fn pack_context(
    counts: &[usize],
    target: usize,
    budget: usize,
    right_limit: Option<usize>,
) -> Result<ContextWindow, SamplingError> {
    if target >= counts.len() {
        return Err(SamplingError::IndexOutOfRange {
            index: target,
            len: counts.len(),
        });
    }
    let count = counts[target];
    if count > budget {
        return Err(SamplingError::Oversize {
            index: target,
            count,
            budget,
        });
    }
    let target_start: usize = counts[..target].iter().sum();
    let target_end = target_start + count;
    let available_right: usize = counts[target + 1..].iter().sum();
    let slack = budget - count;
    let right = slack
        .min(right_limit.unwrap_or(usize::MAX))
        .min(available_right);
    let left = (slack - right).min(target_start);
    Ok(ContextWindow {
        start: target_start - left,
        end: target_end + right,
        target_start,
        target_end,
    })
}
