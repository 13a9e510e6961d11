//! Dialogue loading, per-turn example derivation and few-shot sampling.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::CanonicalSchema;
use crate::state::{
    apply_state_change, diff_states, Dialogue, DialogueState, SlotName, SlotValue, StateChange,
    TurnContext, DONTCARE,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dialogue {0} has no turns")]
    EmptyDialogue(String),
    #[error("duplicate dialogue id {0}")]
    DuplicateId(String),
    #[error("sample fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
}

/// A retrievable `(context, delta)` pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub context: TurnContext,
    pub delta: StateChange,
}

impl Example {
    /// The state this example's turn ends in.
    pub fn resulting_state(&self) -> Option<DialogueState> {
        apply_state_change(&self.context.prev_state, &self.delta).ok()
    }
}

/// Selection pool of examples, unique ids, in dialogue order.
#[derive(Clone, Debug, Default)]
pub struct TrainingPool {
    examples: Vec<Example>,
    by_id: HashMap<String, usize>,
}

impl TrainingPool {
    pub fn new(examples: Vec<Example>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(examples.len());
        for (i, e) in examples.iter().enumerate() {
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { examples, by_id })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.by_id.get(id).map(|&i| &self.examples[i])
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Counts of each literal surface form written by a gold turn update,
    /// references resolved.
    pub fn gold_value_counts(&self) -> BTreeMap<SlotName, BTreeMap<String, u64>> {
        let mut counts: BTreeMap<SlotName, BTreeMap<String, u64>> = BTreeMap::new();
        for e in &self.examples {
            for (slot, value) in e.delta.updates() {
                let text = match value {
                    SlotValue::Literal(t) => t.clone(),
                    SlotValue::DontCare => continue,
                    SlotValue::Reference(target) => match e.context.prev_state.get(target) {
                        Some(v) => v.to_string(),
                        None => continue,
                    },
                };
                *counts
                    .entry(slot.clone())
                    .or_default()
                    .entry(text)
                    .or_default() += 1;
            }
        }
        counts
    }
}

/// Reads dialogues from JSONL, one dialogue object per line.
pub fn load_dialogues(path: &Path) -> Result<Vec<Dialogue>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dialogues(&text)
}

pub fn parse_dialogues(text: &str) -> Result<Vec<Dialogue>, CorpusError> {
    let mut out: Vec<Dialogue> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if d.turns.is_empty() {
            return Err(CorpusError::EmptyDialogue(d.id));
        }
        if !seen.insert(d.id.clone()) {
            return Err(CorpusError::DuplicateId(d.id));
        }
        out.push(d);
    }
    Ok(out)
}

/// One example per turn: the previous gold state plus this turn's
/// utterances, and the gold delta. Coreferent updates become references,
/// taken from the turn's coreference annotation when the dialogue carries
/// any, otherwise from value equality with a different slot already set.
pub fn derive_turn_examples(d: &Dialogue, schema: &CanonicalSchema) -> Vec<Example> {
    let annotated = d.turns.iter().any(|t| !t.coref.is_empty());
    let mut prev = DialogueState::new();
    let mut out = Vec::with_capacity(d.turns.len());
    for (t, turn) in d.turns.iter().enumerate() {
        let gold = diff_states(&prev, &turn.gold_state);
        let mut delta = gold.clone();
        for (slot, value) in gold.updates() {
            let SlotValue::Literal(text) = value else {
                continue;
            };
            let target = if annotated {
                turn.coref
                    .get(slot)
                    .filter(|target| prev.get(target) == Some(text.as_str()))
                    .cloned()
            } else if schema.contains(slot) && !schema.is_categorical(slot) && text != DONTCARE {
                prev.iter()
                    .find(|(other, v)| *other != slot && *v == text)
                    .map(|(other, _)| other.clone())
            } else {
                None
            };
            if let Some(target) = target {
                delta.set(slot.clone(), SlotValue::Reference(target));
            }
        }
        out.push(Example {
            id: format!("{}#{}", d.id, t),
            context: TurnContext {
                prev_state: prev.clone(),
                agent_utt: turn.agent.clone(),
                user_utt: turn.user.clone(),
            },
            delta,
        });
        prev = turn.gold_state.clone();
    }
    out
}

/// Draws `ceil(fraction * |dialogues|)` whole dialogues uniformly without
/// replacement and pools all their turns. The draw depends only on `seed`;
/// chosen dialogues are ordered by id.
pub fn sample_few_shot(
    dialogues: &[Dialogue],
    fraction: f64,
    seed: u64,
    schema: &CanonicalSchema,
) -> Result<TrainingPool, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::BadFraction(fraction));
    }
    let n = dialogues.len();
    let count = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let count = count.min(n);
    let mut chosen: Vec<&Dialogue> = if count == n {
        dialogues.iter().collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, n, count)
            .into_iter()
            .map(|i| &dialogues[i])
            .collect()
    };
    chosen.sort_by(|a, b| a.id.cmp(&b.id));
    let examples = chosen
        .into_iter()
        .flat_map(|d| derive_turn_examples(d, schema))
        .collect();
    TrainingPool::new(examples)
}
