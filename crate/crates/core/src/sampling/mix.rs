use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::SamplingError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSize {
    pub id: String,
    /// Number of training sentences.
    pub size: f64,
}

/// Validated list of corpora with positive sizes and unique ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    corpora: Vec<CorpusSize>,
}

impl CorpusStats {
    pub fn new<S: Into<String>>(
        sizes: impl IntoIterator<Item = (S, f64)>,
    ) -> Result<Self, SamplingError> {
        let corpora: Vec<CorpusSize> = sizes
            .into_iter()
            .map(|(id, size)| CorpusSize {
                id: id.into(),
                size,
            })
            .collect();
        if corpora.is_empty() {
            return Err(SamplingError::NoCorpora);
        }
        let mut seen = HashSet::new();
        for c in &corpora {
            if !(c.size > 0.0 && c.size.is_finite()) {
                return Err(SamplingError::NonPositiveSize {
                    id: c.id.clone(),
                    size: c.size,
                });
            }
            if !seen.insert(c.id.as_str()) {
                return Err(SamplingError::DuplicateCorpus(c.id.clone()));
            }
        }
        Ok(CorpusStats { corpora })
    }

    pub fn corpora(&self) -> &[CorpusSize] {
        &self.corpora
    }

    pub fn len(&self) -> usize {
        self.corpora.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpora.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MixStrategy {
    Uniform,
    Linear,
    Sqrt,
    /// Log sizes rescaled so the largest corpus is ten times as likely as
    /// the smallest.
    Logarithmic,
}

impl MixStrategy {
    pub const ALL: [MixStrategy; 4] = [
        MixStrategy::Uniform,
        MixStrategy::Linear,
        MixStrategy::Sqrt,
        MixStrategy::Logarithmic,
    ];
}

impl fmt::Display for MixStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixStrategy::Uniform => "uniform",
            MixStrategy::Linear => "linear",
            MixStrategy::Sqrt => "sqrt",
            MixStrategy::Logarithmic => "logarithmic",
        })
    }
}

impl FromStr for MixStrategy {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(MixStrategy::Uniform),
            "linear" => Ok(MixStrategy::Linear),
            "sqrt" => Ok(MixStrategy::Sqrt),
            "logarithmic" | "log" => Ok(MixStrategy::Logarithmic),
            _ => Err(SamplingError::UnknownStrategy(s.to_string())),
        }
    }
}

/// Sampling weight of every corpus; weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixRatio {
    pub strategy: MixStrategy,
    pub ids: Vec<String>,
    pub weights: Vec<f64>,
}

impl MixRatio {
    pub fn weight(&self, id: &str) -> Option<f64> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|i| self.weights[i])
    }

    /// One `id<TAB>percent` line per corpus, percent with one decimal.
    pub fn render(&self) -> String {
        self.ids
            .iter()
            .zip(&self.weights)
            .map(|(id, w)| format!("{id}\t{:.1}\n", 100.0 * w))
            .collect()
    }
}

pub fn mix_ratio(stats: &CorpusStats, strategy: MixStrategy) -> MixRatio {
    let sizes: Vec<f64> = stats.corpora.iter().map(|c| c.size).collect();
    let raw: Vec<f64> = match strategy {
        MixStrategy::Uniform => vec![1.0; sizes.len()],
        MixStrategy::Linear => sizes.clone(),
        MixStrategy::Sqrt => sizes.iter().map(|s| s.sqrt()).collect(),
        MixStrategy::Logarithmic => {
            let logs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
            let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                logs.iter()
                    .map(|l| 1.0 + 9.0 * (l - lo) / (hi - lo))
                    .collect()
            } else {
                vec![1.0; sizes.len()]
            }
        }
    };
    let total: f64 = raw.iter().sum();
    MixRatio {
        strategy,
        ids: stats.corpora.iter().map(|c| c.id.clone()).collect(),
        weights: raw.iter().map(|w| w / total).collect(),
    }
}

/// Deterministic weighted draw of corpus indices.
#[derive(Debug, Clone)]
pub struct CorpusSampler {
    rng: ChaCha8Rng,
    index: WeightedIndex<f64>,
}

impl CorpusSampler {
    pub fn new(ratio: &MixRatio, seed: u64) -> Self {
        CorpusSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            index: WeightedIndex::new(&ratio.weights).expect("mix weights are positive"),
        }
    }

    pub fn next_index(&mut self) -> usize {
        self.index.sample(&mut self.rng)
    }
}

/// Corpus ids of `count` consecutive batch examples.
pub fn sample_batches(ratio: &MixRatio, seed: u64, count: usize) -> Vec<String> {
    let mut sampler = CorpusSampler::new(ratio, seed);
    (0..count)
        .map(|_| ratio.ids[sampler.next_index()].clone())
        .collect()
}
