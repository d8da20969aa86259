//! MUC, B-cubed and entity-based CEAF over clusterings of mention keys.
//!
//! Each metric produces [`MetricCounts`], raw numerators and denominators, so
//! that documents can be micro-averaged by summing counts before dividing.

use std::collections::HashMap;

use serde::Serialize;

use super::assignment::max_weight_assignment;

/// A clustering: each inner vector lists the mention keys of one entity.
pub type Clusters = [Vec<usize>];

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricCounts {
    pub recall_num: f64,
    pub recall_den: f64,
    pub precision_num: f64,
    pub precision_den: f64,
}

impl std::ops::Add for MetricCounts {
    type Output = MetricCounts;

    fn add(self, o: MetricCounts) -> MetricCounts {
        MetricCounts {
            recall_num: self.recall_num + o.recall_num,
            recall_den: self.recall_den + o.recall_den,
            precision_num: self.precision_num + o.precision_num,
            precision_den: self.precision_den + o.precision_den,
        }
    }
}

impl MetricCounts {
    /// Divides out the counts. A zero denominator yields 1 when the two
    /// clusterings were identical and 0 otherwise.
    pub fn finish(&self, identical: bool) -> Prf {
        let ratio = |num: f64, den: f64| {
            if den > 0.0 {
                num / den
            } else if identical {
                1.0
            } else {
                0.0
            }
        };
        Prf::new(
            ratio(self.precision_num, self.precision_den),
            ratio(self.recall_num, self.recall_den),
        )
    }
}

fn membership(clusters: &Clusters) -> HashMap<usize, usize> {
    clusters
        .iter()
        .enumerate()
        .flat_map(|(c, ms)| ms.iter().map(move |&m| (m, c)))
        .collect()
}

/// Sorted-set equality of two clusterings.
pub fn same_clustering(a: &Clusters, b: &Clusters) -> bool {
    let canon = |c: &Clusters| {
        let mut v: Vec<Vec<usize>> = c
            .iter()
            .map(|x| {
                let mut x = x.clone();
                x.sort_unstable();
                x
            })
            .collect();
        v.sort();
        v
    };
    canon(a) == canon(b)
}

/// Sum over `key` clusters of `|K| - p(K)` and `|K| - 1`, where `p(K)` is the
/// number of parts `K` is split into by `response` (mentions missing from the
/// response are parts of their own).
fn muc_side(key: &Clusters, response: &Clusters) -> (f64, f64) {
    let of = membership(response);
    let mut num = 0.0;
    let mut den = 0.0;
    for k in key.iter().filter(|k| !k.is_empty()) {
        let mut parts: Vec<usize> = Vec::new();
        let mut missing = 0usize;
        for m in k {
            match of.get(m) {
                Some(&c) => parts.push(c),
                None => missing += 1,
            }
        }
        parts.sort_unstable();
        parts.dedup();
        let p = parts.len() + missing;
        num += (k.len() - p) as f64;
        den += (k.len() - 1) as f64;
    }
    (num, den)
}

pub fn muc_counts(key: &Clusters, response: &Clusters) -> MetricCounts {
    let (recall_num, recall_den) = muc_side(key, response);
    let (precision_num, precision_den) = muc_side(response, key);
    MetricCounts {
        recall_num,
        recall_den,
        precision_num,
        precision_den,
    }
}

fn overlaps(a: &Clusters, b: &Clusters) -> Vec<HashMap<usize, usize>> {
    let of = membership(b);
    a.iter()
        .map(|k| {
            let mut counts = HashMap::new();
            for m in k {
                if let Some(&c) = of.get(m) {
                    *counts.entry(c).or_insert(0) += 1;
                }
            }
            counts
        })
        .collect()
}

fn b_cubed_side(key: &Clusters, response: &Clusters) -> (f64, f64) {
    let inter = overlaps(key, response);
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, counts) in key.iter().zip(&inter) {
        if k.is_empty() {
            continue;
        }
        let sq: usize = counts.values().map(|&c| c * c).sum();
        num += sq as f64 / k.len() as f64;
        den += k.len() as f64;
    }
    (num, den)
}

pub fn b_cubed_counts(key: &Clusters, response: &Clusters) -> MetricCounts {
    let (recall_num, recall_den) = b_cubed_side(key, response);
    let (precision_num, precision_den) = b_cubed_side(response, key);
    MetricCounts {
        recall_num,
        recall_den,
        precision_num,
        precision_den,
    }
}

/// Optimal total φ4 similarity between key and response entities.
pub fn ceaf_e_similarity(key: &Clusters, response: &Clusters) -> f64 {
    let inter = overlaps(key, response);
    let weights: Vec<Vec<f64>> = key
        .iter()
        .zip(&inter)
        .map(|(k, counts)| {
            response
                .iter()
                .enumerate()
                .map(|(r, rs)| {
                    let common = counts.get(&r).copied().unwrap_or(0);
                    2.0 * common as f64 / (k.len() + rs.len()) as f64
                })
                .collect()
        })
        .collect();
    max_weight_assignment(&weights).1
}

pub fn ceaf_e_counts(key: &Clusters, response: &Clusters) -> MetricCounts {
    let key: Vec<Vec<usize>> = key.iter().filter(|k| !k.is_empty()).cloned().collect();
    let response: Vec<Vec<usize>> = response.iter().filter(|r| !r.is_empty()).cloned().collect();
    let sim = ceaf_e_similarity(&key, &response);
    MetricCounts {
        recall_num: sim,
        recall_den: key.len() as f64,
        precision_num: sim,
        precision_den: response.len() as f64,
    }
}

pub fn muc(key: &Clusters, response: &Clusters) -> Prf {
    muc_counts(key, response).finish(same_clustering(key, response))
}

pub fn b_cubed(key: &Clusters, response: &Clusters) -> Prf {
    b_cubed_counts(key, response).finish(same_clustering(key, response))
}

pub fn ceaf_e(key: &Clusters, response: &Clusters) -> Prf {
    ceaf_e_counts(key, response).finish(same_clustering(key, response))
}
