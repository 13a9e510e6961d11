//! In-context example selection: nearest-k, diverse greedy MMR, and random.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::index::{EmbeddingVector, ExampleIndex};
use super::RetrievalError;
use crate::corpus::TrainingPool;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
    /// Weight on the summed similarity to already-selected examples.
    pub alpha: f64,
    /// Size of the nearest-neighbour window MMR chooses from.
    pub window: usize,
}

impl SelectionConfig {
    pub fn new(k: usize, alpha: f64, window: usize) -> Result<Self, RetrievalError> {
        let cfg = Self { k, alpha, window };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 || self.window < self.k || self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(RetrievalError::BadConfig(format!(
                "need k >= 1, window >= k, alpha >= 0 (k={}, window={}, alpha={})",
                self.k, self.window, self.alpha
            )));
        }
        Ok(())
    }

    /// Defaults by training-set fraction: alpha 0.2 up to 5%, 0.3 at 10%,
    /// 0.5 beyond; window 100, or 200 for the full set.
    pub fn for_fraction(fraction: f64) -> Self {
        let (alpha, window) = if fraction <= 0.05 {
            (0.2, 100)
        } else if fraction <= 0.10 {
            (0.3, 100)
        } else {
            (0.5, 200)
        };
        Self {
            k: 10,
            alpha,
            window,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedExample {
    pub id: String,
    /// Cosine to the query; zero for random selection.
    pub relevance: f64,
    /// Objective value at the step it was chosen.
    pub marginal: f64,
}

/// Selected examples in selection order (first = chosen first).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub members: Vec<SelectedExample>,
}

impl ExampleSet {
    pub fn ids(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn select_topk(index: &ExampleIndex, query: &EmbeddingVector, k: usize) -> ExampleSet {
    ExampleSet {
        members: index
            .nearest(query, k)
            .into_iter()
            .map(|n| SelectedExample {
                id: n.id,
                relevance: n.score,
                marginal: n.score,
            })
            .collect(),
    }
}

/// Greedy MMR over the nearest `cfg.window` examples: each step adds the
/// candidate maximizing `cos(x, e) - alpha * sum(cos(e, s) for s selected)`,
/// ties to the smaller id.
pub fn select_diverse_mmr(
    index: &ExampleIndex,
    query: &EmbeddingVector,
    cfg: &SelectionConfig,
) -> ExampleSet {
    let window = index.nearest(query, cfg.window);
    let target = cfg.k.min(window.len());
    // redundancy[i] = sum of cos(window[i], s) over selected s
    let mut redundancy = vec![0.0; window.len()];
    let mut taken = vec![false; window.len()];
    let mut members = Vec::with_capacity(target);

    for _ in 0..target {
        let mut best: Option<(usize, f64)> = None;
        for (i, cand) in window.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let marginal = cand.score - cfg.alpha * redundancy[i];
            let better = match best {
                None => true,
                Some((j, m)) => match marginal.total_cmp(&m) {
                    Ordering::Greater => true,
                    Ordering::Equal => cand.id < window[j].id,
                    Ordering::Less => false,
                },
            };
            if better {
                best = Some((i, marginal));
            }
        }
        let Some((chosen, marginal)) = best else {
            break;
        };
        taken[chosen] = true;
        let chosen_vec = index.vector(window[chosen].position);
        for (i, cand) in window.iter().enumerate() {
            if !taken[i] {
                redundancy[i] += index.vector(cand.position).cosine(chosen_vec);
            }
        }
        members.push(SelectedExample {
            id: window[chosen].id.clone(),
            relevance: window[chosen].score,
            marginal,
        });
    }
    ExampleSet { members }
}

/// `k` pool examples drawn uniformly without replacement.
pub fn select_random(pool: &TrainingPool, k: usize, seed: u64) -> ExampleSet {
    let k = k.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ExampleSet {
        members: rand::seq::index::sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| SelectedExample {
                id: pool.examples()[i].id.clone(),
                relevance: 0.0,
                marginal: 0.0,
            })
            .collect(),
    }
}
