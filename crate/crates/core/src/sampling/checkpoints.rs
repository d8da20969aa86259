use std::collections::HashMap;

use serde::Serialize;

use super::SamplingError;

/// Evaluation scores indexed by `[run][epoch][corpus]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreGrid {
    runs: Vec<String>,
    epochs: Vec<String>,
    corpora: Vec<String>,
    scores: Vec<Vec<Vec<f64>>>,
}

impl ScoreGrid {
    /// Grid with labels `0..` for runs and epochs.
    pub fn new(corpora: Vec<String>, scores: Vec<Vec<Vec<f64>>>) -> Result<Self, SamplingError> {
        let runs = (0..scores.len()).map(|i| i.to_string()).collect();
        let epochs = (0..scores.first().map_or(0, Vec::len))
            .map(|i| i.to_string())
            .collect();
        Self::with_labels(runs, epochs, corpora, scores)
    }

    pub fn with_labels(
        runs: Vec<String>,
        epochs: Vec<String>,
        corpora: Vec<String>,
        scores: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, SamplingError> {
        if runs.is_empty() || epochs.is_empty() || corpora.is_empty() {
            return Err(SamplingError::EmptyGrid);
        }
        if scores.len() != runs.len() {
            return Err(SamplingError::NotRectangular(format!(
                "{} runs labelled, {} given",
                runs.len(),
                scores.len()
            )));
        }
        for (r, run) in scores.iter().enumerate() {
            if run.len() != epochs.len() {
                return Err(SamplingError::NotRectangular(format!(
                    "run {} has {} epochs, expected {}",
                    runs[r],
                    run.len(),
                    epochs.len()
                )));
            }
            for (e, epoch) in run.iter().enumerate() {
                if epoch.len() != corpora.len() {
                    return Err(SamplingError::NotRectangular(format!(
                        "run {} epoch {} has {} corpora, expected {}",
                        runs[r],
                        epochs[e],
                        epoch.len(),
                        corpora.len()
                    )));
                }
                if epoch.iter().any(|s| !s.is_finite()) {
                    return Err(SamplingError::NotRectangular(format!(
                        "run {} epoch {} has a non-finite score",
                        runs[r], epochs[e]
                    )));
                }
            }
        }
        Ok(ScoreGrid {
            runs,
            epochs,
            corpora,
            scores,
        })
    }

    pub fn runs(&self) -> &[String] {
        &self.runs
    }

    pub fn epochs(&self) -> &[String] {
        &self.epochs
    }

    pub fn corpora(&self) -> &[String] {
        &self.corpora
    }

    pub fn score(&self, run: usize, epoch: usize, corpus: usize) -> f64 {
        self.scores[run][epoch][corpus]
    }
}

/// Reads `run<TAB>epoch<TAB>corpus<TAB>score` lines. A first line whose score
/// column is not a number is taken as a header. Labels keep their order of
/// first appearance.
pub fn parse_grid_tsv(text: &str) -> Result<ScoreGrid, SamplingError> {
    fn intern(labels: &mut Vec<String>, index: &mut HashMap<String, usize>, s: &str) -> usize {
        *index.entry(s.to_string()).or_insert_with(|| {
            labels.push(s.to_string());
            labels.len() - 1
        })
    }
    let (mut runs, mut epochs, mut corpora) = (Vec::new(), Vec::new(), Vec::new());
    let (mut run_ix, mut epoch_ix, mut corpus_ix) =
        (HashMap::new(), HashMap::new(), HashMap::new());
    let mut cells: HashMap<(usize, usize, usize), f64> = HashMap::new();
    let mut seen_line = false;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let header_allowed = !seen_line;
        seen_line = true;
        if fields.len() != 4 {
            return Err(SamplingError::Grid {
                line: line_no,
                reason: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let score: f64 = match fields[3].parse() {
            Ok(v) => v,
            Err(_) if header_allowed => continue,
            Err(_) => {
                return Err(SamplingError::Grid {
                    line: line_no,
                    reason: format!("invalid score `{}`", fields[3]),
                })
            }
        };
        if !score.is_finite() {
            return Err(SamplingError::Grid {
                line: line_no,
                reason: "non-finite score".into(),
            });
        }
        let key = (
            intern(&mut runs, &mut run_ix, fields[0]),
            intern(&mut epochs, &mut epoch_ix, fields[1]),
            intern(&mut corpora, &mut corpus_ix, fields[2]),
        );
        if cells.insert(key, score).is_some() {
            return Err(SamplingError::Grid {
                line: line_no,
                reason: format!("duplicate cell {}/{}/{}", fields[0], fields[1], fields[2]),
            });
        }
    }
    if cells.is_empty() {
        return Err(SamplingError::EmptyGrid);
    }
    let mut scores = vec![vec![vec![0.0; corpora.len()]; epochs.len()]; runs.len()];
    for (r, run) in scores.iter_mut().enumerate() {
        for (e, epoch) in run.iter_mut().enumerate() {
            for (c, cell) in epoch.iter_mut().enumerate() {
                *cell = *cells.get(&(r, e, c)).ok_or_else(|| {
                    SamplingError::NotRectangular(format!(
                        "missing run {} epoch {} corpus {}",
                        runs[r], epochs[e], corpora[c]
                    ))
                })?;
            }
        }
    }
    ScoreGrid::with_labels(runs, epochs, corpora, scores)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointChoice {
    pub corpus: String,
    /// Chosen epoch index for each kept run, in the order of
    /// [`Selection::runs`].
    pub epochs: Vec<usize>,
    /// Mean score of the chosen checkpoints on this corpus.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    /// Kept run indices, best first.
    pub runs: Vec<usize>,
    pub choices: Vec<CheckpointChoice>,
}

fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Keeps the `keep` runs with the highest mean score over all epochs and
/// corpora (ties to the lower run index). With `per_corpus`, each corpus then
/// gets the single epoch maximizing its average over the kept runs; without
/// it, each kept run uses the epoch maximizing its all-corpora average.
/// Epoch ties go to the earlier epoch.
pub fn select_checkpoints(
    grid: &ScoreGrid,
    keep: usize,
    per_corpus: bool,
) -> Result<Selection, SamplingError> {
    let n_runs = grid.runs.len();
    let n_epochs = grid.epochs.len();
    let n_corpora = grid.corpora.len();
    if keep > n_runs {
        return Err(SamplingError::KeepTooMany { keep, runs: n_runs });
    }
    let run_mean = |r: usize| {
        let total: f64 = grid.scores[r].iter().flatten().sum();
        total / (n_epochs * n_corpora) as f64
    };
    let means: Vec<f64> = (0..n_runs).map(run_mean).collect();
    let mut order: Vec<usize> = (0..n_runs).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    order.truncate(keep);
    let runs = order;

    let mean_over_runs = |c: usize, epochs: &[usize]| {
        if runs.is_empty() {
            return 0.0;
        }
        let total: f64 = runs
            .iter()
            .zip(epochs)
            .map(|(&r, &e)| grid.scores[r][e][c])
            .sum();
        total / runs.len() as f64
    };

    let choices = if per_corpus {
        (0..n_corpora)
            .map(|c| {
                let best =
                    argmax_first((0..n_epochs).map(|e| mean_over_runs(c, &vec![e; runs.len()])));
                let epochs = vec![best; runs.len()];
                CheckpointChoice {
                    corpus: grid.corpora[c].clone(),
                    score: mean_over_runs(c, &epochs),
                    epochs,
                }
            })
            .collect()
    } else {
        let epochs: Vec<usize> = runs
            .iter()
            .map(|&r| {
                argmax_first(
                    grid.scores[r]
                        .iter()
                        .map(|row| row.iter().sum::<f64>() / n_corpora as f64),
                )
            })
            .collect();
        (0..n_corpora)
            .map(|c| CheckpointChoice {
                corpus: grid.corpora[c].clone(),
                score: mean_over_runs(c, &epochs),
                epochs: epochs.clone(),
            })
            .collect()
    };
    Ok(Selection { runs, choices })
}
