use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::TurnPrediction;
use crate::state::{Dialogue, DialogueState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignmentError {
    #[error("no gold turn for prediction {0}#{1}")]
    UnexpectedPrediction(String, usize),
    #[error("no prediction for gold turn {0}#{1}")]
    MissingPrediction(String, usize),
    #[error("duplicate prediction for {0}#{1}")]
    DuplicatePrediction(String, usize),
    #[error("nothing to score")]
    Empty,
}

struct GoldTurn<'a> {
    state: &'a DialogueState,
    domains: &'a BTreeSet<String>,
}

fn align<'p, 'g>(
    preds: &'p [TurnPrediction],
    golds: &'g [Dialogue],
) -> Result<Vec<(&'p TurnPrediction, GoldTurn<'g>)>, AlignmentError> {
    let mut gold: BTreeMap<(&str, usize), GoldTurn<'g>> = BTreeMap::new();
    for d in golds {
        for (t, turn) in d.turns.iter().enumerate() {
            gold.insert(
                (d.id.as_str(), t),
                GoldTurn {
                    state: &turn.gold_state,
                    domains: &d.domains,
                },
            );
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(preds.len());
    for p in preds {
        let key = (p.dialogue_id.as_str(), p.turn_index);
        if !seen.insert(key) {
            return Err(AlignmentError::DuplicatePrediction(p.dialogue_id.clone(), p.turn_index));
        }
        let g = gold
            .remove(&key)
            .ok_or_else(|| AlignmentError::UnexpectedPrediction(p.dialogue_id.clone(), p.turn_index))?;
        out.push((p, g));
    }
    if let Some(((id, t), _)) = gold.into_iter().next() {
        return Err(AlignmentError::MissingPrediction(id.to_string(), t));
    }
    Ok(out)
}

/// Fraction of turns whose full predicted state equals the gold state,
/// compared case-insensitively.
pub fn jga(preds: &[TurnPrediction], golds: &[Dialogue]) -> Result<f64, AlignmentError> {
    let pairs = align(preds, golds)?;
    if pairs.is_empty() {
        return Err(AlignmentError::Empty);
    }
    let hits = pairs
        .iter()
        .filter(|(p, g)| p.predicted_state.matches_casefold(g.state))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// JGA restricted to `domain`'s slots on dialogues that contain `domain`;
/// `None` when no dialogue does.
pub fn leave_one_out_jga(
    preds: &[TurnPrediction],
    golds: &[Dialogue],
    domain: &str,
) -> Result<Option<f64>, AlignmentError> {
    let pairs = align(preds, golds)?;
    let relevant: Vec<_> = pairs
        .iter()
        .filter(|(_, g)| g.domains.contains(domain))
        .collect();
    if relevant.is_empty() {
        return Ok(None);
    }
    let hits = relevant
        .iter()
        .filter(|(p, g)| {
            p.predicted_state
                .filter_domain(domain)
                .matches_casefold(&g.state.filter_domain(domain))
        })
        .count();
    Ok(Some(hits as f64 / relevant.len() as f64))
}
