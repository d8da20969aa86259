//! Antecedent-argmax clustering of mentions into entities.
//!
//! Every mention picks its best-scoring antecedent among itself and the
//! mentions before it; picking itself means "no antecedent". The transitive
//! closure of these links gives the entities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corefud::{Entity, Mention};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("mention {index} is out of document order")]
    Unsorted { index: usize },
    #[error("row {index}: expected {expected} scores, found {found}")]
    RowShape {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {column}: non-finite score")]
    NonFinite { row: usize, column: usize },
}

/// Position of a mention within its document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MentionRef {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
}

impl MentionRef {
    pub fn new(sentence: usize, start: usize, end: usize) -> Self {
        MentionRef {
            sentence,
            start,
            end,
        }
    }
}

impl From<&Mention> for MentionRef {
    fn from(m: &Mention) -> Self {
        MentionRef::new(m.sentence, m.start, m.end)
    }
}

/// Lower-triangular antecedent scores: `rows[i][j]` for `j < i` scores mention
/// `j` as the antecedent of mention `i`, and `rows[i][i]` scores "no
/// antecedent".
#[derive(Debug, Clone, PartialEq)]
pub struct AntecedentScores {
    mentions: Vec<MentionRef>,
    rows: Vec<Vec<f64>>,
}

impl AntecedentScores {
    pub fn new(mentions: Vec<MentionRef>, rows: Vec<Vec<f64>>) -> Result<Self, LinkError> {
        if let Some(i) = mentions.windows(2).position(|w| w[0] > w[1]) {
            return Err(LinkError::Unsorted { index: i + 1 });
        }
        if rows.len() != mentions.len() {
            return Err(LinkError::RowShape {
                index: rows.len().min(mentions.len()),
                expected: mentions.len(),
                found: rows.len(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(LinkError::RowShape {
                    index: i,
                    expected: i + 1,
                    found: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(LinkError::NonFinite { row: i, column: j });
            }
        }
        Ok(AntecedentScores { mentions, rows })
    }

    pub fn mentions(&self) -> &[MentionRef] {
        &self.mentions
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// The chosen antecedent of every mention (itself when it starts a new
    /// entity). Ties go to the earliest candidate.
    pub fn antecedents(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(0, |best, (j, &v)| if v > row[best] { j } else { best })
            })
            .collect()
    }
}

/// Minimal union-find with path halving; the smaller root wins a union so
/// every set is represented by its earliest member.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
    }
}

/// Cluster index (in order of first mention) for every mention.
pub fn cluster_assignment(scores: &AntecedentScores) -> Vec<usize> {
    let n = scores.mentions.len();
    let mut sets = DisjointSets::new(n);
    for (i, a) in scores.antecedents().into_iter().enumerate() {
        if a != i {
            sets.union(i, a);
        }
    }
    let mut cluster_of_root = vec![usize::MAX; n];
    let mut next = 0;
    (0..n)
        .map(|i| {
            let r = sets.find(i);
            if cluster_of_root[r] == usize::MAX {
                cluster_of_root[r] = next;
                next += 1;
            }
            cluster_of_root[r]
        })
        .collect()
}

/// Links mentions into entities named `e1`, `e2`, ... in order of first
/// mention.
pub fn link(scores: &AntecedentScores) -> Vec<Entity> {
    let assignment = cluster_assignment(scores);
    let count = assignment.iter().max().map_or(0, |m| m + 1);
    let mut entities: Vec<Entity> = (1..=count)
        .map(|i| Entity {
            id: format!("e{i}"),
            mentions: Vec::new(),
        })
        .collect();
    for (m, &c) in scores.mentions.iter().zip(&assignment) {
        let id = entities[c].id.clone();
        entities[c]
            .mentions
            .push(Mention::new(m.sentence, m.start, m.end, id));
    }
    entities
}
