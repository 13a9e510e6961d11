use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::corpus::TrainingPool;
use crate::state::TurnContext;

/// Unit-length embedding; cosine similarity is the dot product.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 norm. Fails on zero or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self, RetrievalError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(RetrievalError::DegenerateVector);
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// `{id, vector}` line of an embeddings file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>, RetrievalError> {
    let text = fs::read_to_string(path)
        .map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| RetrievalError::Format(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<(), RetrievalError> {
    let mut f = fs::File::create(path)
        .map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| RetrievalError::Format(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| RetrievalError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Canonical text for a turn context: state entries sorted by slot name,
/// then the system and user utterances.
pub fn encode_context_text(x: &TurnContext) -> String {
    let entries: Vec<String> = x
        .prev_state
        .iter()
        .map(|(slot, value)| format!("{slot}={value}"))
        .collect();
    let mut out = String::from("[state] ");
    if !entries.is_empty() {
        out.push_str(&entries.join("; "));
        out.push(' ');
    }
    out.push_str("[system] ");
    out.push_str(&x.agent_utt);
    out.push_str(" [user] ");
    out.push_str(&x.user_utt);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub id: String,
    /// Position in the index.
    pub position: usize,
    pub score: f64,
}

/// Exact-scan cosine index over pool examples. Immutable once built.
#[derive(Clone, Debug)]
pub struct ExampleIndex {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    positions: HashMap<String, usize>,
    dim: usize,
}

impl ExampleIndex {
    pub fn build(records: Vec<EmbeddingRecord>) -> Result<Self, RetrievalError> {
        let mut ids = Vec::with_capacity(records.len());
        let mut vectors = Vec::with_capacity(records.len());
        let mut positions = HashMap::with_capacity(records.len());
        let mut dim = None;
        for r in records {
            let d = *dim.get_or_insert(r.vector.len());
            if r.vector.len() != d {
                return Err(RetrievalError::DimensionMismatch {
                    expected: d,
                    found: r.vector.len(),
                });
            }
            if positions.insert(r.id.clone(), ids.len()).is_some() {
                return Err(RetrievalError::DuplicateId(r.id));
            }
            vectors.push(
                EmbeddingVector::new(r.vector)
                    .map_err(|_| RetrievalError::Format(format!("zero vector for {}", r.id)))?,
            );
            ids.push(r.id);
        }
        Ok(Self {
            ids,
            vectors,
            positions,
            dim: dim.unwrap_or(0),
        })
    }

    /// Index over exactly the pool's examples, in pool order. Extra records
    /// in `records` are ignored; a pool example without one is an error.
    pub fn for_pool(
        pool: &TrainingPool,
        records: &[EmbeddingRecord],
    ) -> Result<Self, RetrievalError> {
        let wanted: HashSet<&str> = pool.examples().iter().map(|e| e.id.as_str()).collect();
        let mut by_id: HashMap<&str, &EmbeddingRecord> = HashMap::new();
        for r in records.iter().filter(|r| wanted.contains(r.id.as_str())) {
            by_id.insert(r.id.as_str(), r);
        }
        let ordered = pool
            .examples()
            .iter()
            .map(|e| {
                by_id
                    .get(e.id.as_str())
                    .map(|r| (*r).clone())
                    .ok_or_else(|| RetrievalError::MissingEmbedding(e.id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::build(ordered)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, position: usize) -> &str {
        &self.ids[position]
    }

    pub fn vector(&self, position: usize) -> &EmbeddingVector {
        &self.vectors[position]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    /// The `n` most similar examples: descending cosine, ties by ascending id.
    pub fn nearest(&self, query: &EmbeddingVector, n: usize) -> Vec<Neighbor> {
        let mut scored: Vec<Neighbor> = self
            .vectors
            .iter()
            .enumerate()
            .map(|(i, v)| Neighbor {
                id: self.ids[i].clone(),
                position: i,
                score: query.cosine(v),
            })
            .collect();
        scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        scored.truncate(n);
        scored
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::DialogueState;

    fn rec(id: &str, v: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            vector: v.to_vec(),
        }
    }

    #[test]
    fn vectors_are_unit_norm() {
        let v = EmbeddingVector::new(vec![3.0, 4.0]).unwrap();
        assert!((v.cosine(&v) - 1.0).abs() < 1e-12);
        assert!(EmbeddingVector::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn self_match_comes_first() {
        let idx = ExampleIndex::build(vec![
            rec("a", &[1.0, 0.2, 0.0]),
            rec("b", &[0.0, 1.0, 0.3]),
            rec("c", &[0.5, 0.5, 0.5]),
        ])
        .unwrap();
        let q = idx.vector(1).clone();
        let hits = idx.nearest(&q, 3);
        assert_eq!(hits[0].id, "b");
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn window_clamps_to_pool() {
        let idx = ExampleIndex::build(vec![rec("a", &[1.0, 0.0]), rec("b", &[0.0, 1.0])]).unwrap();
        let q = EmbeddingVector::new(vec![1.0, 1.0]).unwrap();
        let hits = idx.nearest(&q, 50);
        assert_eq!(hits.len(), 2);
        // equal scores: ascending id
        assert_eq!(hits[0].id, "a");
    }

    #[test]
    fn orthogonal_fixture() {
        let idx = ExampleIndex::build(vec![
            rec("x", &[1.0, 0.0, 0.0]),
            rec("y", &[0.0, 1.0, 0.0]),
            rec("z", &[0.0, 0.0, 1.0]),
        ])
        .unwrap();
        let hits = idx.nearest(idx.vector(0), 3);
        let scores: Vec<f64> = hits.iter().map(|h| h.score).collect();
        assert_eq!(scores, vec![1.0, 0.0, 0.0]);
        assert_eq!(hits[1].id, "y");
    }

    #[test]
    fn build_rejects_mismatched_dims() {
        let err = ExampleIndex::build(vec![rec("a", &[1.0, 0.0]), rec("b", &[1.0])]).unwrap_err();
        assert!(matches!(err, RetrievalError::DimensionMismatch { .. }));
    }

    #[test]
    fn context_text_is_sorted_and_stable() {
        let a: DialogueState = [
            ("hotel-stars".parse().unwrap(), "4".to_string()),
            ("hotel-area".parse().unwrap(), "east".to_string()),
        ]
        .into_iter()
        .collect();
        let x = TurnContext {
            prev_state: a,
            agent_utt: "how many stars?".into(),
            user_utt: "four".into(),
        };
        let text = encode_context_text(&x);
        assert_eq!(
            text,
            "[state] hotel-area=east; hotel-stars=4 [system] how many stars? [user] four"
        );
        assert_eq!(text, encode_context_text(&x.clone()));
        let first = TurnContext {
            prev_state: DialogueState::new(),
            agent_utt: String::new(),
            user_utt: "hi".into(),
        };
        assert_eq!(encode_context_text(&first), "[state] [system]  [user] hi");
    }
}
