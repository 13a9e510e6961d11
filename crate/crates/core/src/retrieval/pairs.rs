//! Contrastive training-pair mining for the retriever trainer.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::index::{encode_context_text, ExampleIndex};
use super::RetrievalError;
use crate::corpus::TrainingPool;
use crate::state::sim_f1;

/// Neighbours considered per anchor.
pub const PAIR_WINDOW: usize = 200;
/// Share of the window labelled positive (top) and negative (bottom).
pub const PAIR_SHARE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Pos,
    Neg,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub anchor_id: String,
    pub other_id: String,
    pub label: PairLabel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

/// For every anchor, ranks its nearest [`PAIR_WINDOW`] neighbours (fewer
/// when the pool is small) by `sim_f1` against the anchor's delta and labels
/// the top and bottom [`PAIR_SHARE`] (at least one each) as positives and
/// negatives. Ties rank by ascending id.
pub fn export_contrastive_pairs(
    pool: &TrainingPool,
    index: &ExampleIndex,
) -> Result<Vec<PairRecord>, RetrievalError> {
    let mut out = Vec::new();
    for pos in 0..index.len() {
        let anchor_id = index.id(pos);
        let anchor = pool
            .get(anchor_id)
            .ok_or_else(|| RetrievalError::MissingEmbedding(anchor_id.to_string()))?;
        let mut window: Vec<(f64, &str)> = index
            .nearest(index.vector(pos), PAIR_WINDOW + 1)
            .into_iter()
            .filter(|n| n.position != pos)
            .take(PAIR_WINDOW)
            .map(|n| {
                let other = pool
                    .get(&n.id)
                    .ok_or_else(|| RetrievalError::MissingEmbedding(n.id.clone()))?;
                Ok((sim_f1(&anchor.delta, &other.delta), index.id(n.position)))
            })
            .collect::<Result<_, RetrievalError>>()?;
        if window.is_empty() {
            continue;
        }
        window.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        let share = ((window.len() as f64 * PAIR_SHARE).floor() as usize).max(1);
        let n_pos = share.min(window.len());
        let n_neg = share.min(window.len() - n_pos);
        for (_, id) in &window[..n_pos] {
            out.push(PairRecord {
                anchor_id: anchor_id.to_string(),
                other_id: id.to_string(),
                label: PairLabel::Pos,
            });
        }
        for (_, id) in &window[window.len() - n_neg..] {
            out.push(PairRecord {
                anchor_id: anchor_id.to_string(),
                other_id: id.to_string(),
                label: PairLabel::Neg,
            });
        }
    }
    Ok(out)
}

/// `{id, text}` records the trainer embeds.
pub fn context_texts(pool: &TrainingPool) -> Vec<TextRecord> {
    pool.examples()
        .iter()
        .map(|e| TextRecord {
            id: e.id.clone(),
            text: encode_context_text(&e.context),
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), RetrievalError> {
    let mut f = fs::File::create(path)
        .map_err(|e| RetrievalError::Io(format!("{}: {e}", path.display())))?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| RetrievalError::Format(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| RetrievalError::Io(e.to_string()))?;
    }
    Ok(())
}
