//! Mock language models that answer evaluation turns from gold labels.
//!
//! Rules are keyed by the query's print line plus the newline that ends the
//! main prompt, so utterances must be unique across the evaluated dialogues.

use crate::corpus::derive_turn_examples;
use crate::lm::mock::SampleRule;
use crate::lm::{MockBackend, MockCompletion};
use crate::normalize::canonical_time;
use crate::prompt::{canonicalize_completion, render_print_line};
use crate::schema::CanonicalSchema;
use crate::state::{Dialogue, SlotName, SlotValue, StateChange};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleVariant {
    Gold,
    /// Gold deltas with values perturbed in ways the normalizer undoes.
    Misspelled,
}

/// Prompt suffix identifying a turn.
pub fn turn_key(agent: &str, user: &str) -> String {
    format!("{}\n", render_print_line(agent, user))
}

/// A recoverable corruption of `value`: unpadded times, number words, or
/// one character dropped from long strings.
pub fn misspell(value: &str) -> String {
    if let Some(t) = canonical_time(value) {
        if t == value && value.starts_with('0') {
            return value[1..].to_string();
        }
    }
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    if let Ok(n) = value.parse::<usize>() {
        if n <= 10 && value == n.to_string() {
            return WORDS[n].to_string();
        }
    }
    let chars: Vec<char> = value.chars().collect();
    if chars.len() >= 10 {
        let mid = (chars.len() / 2..chars.len())
            .find(|&i| chars[i].is_alphanumeric())
            .unwrap_or(chars.len() / 2);
        return chars
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != mid)
            .map(|(_, c)| c)
            .collect();
    }
    value.to_string()
}

fn perturb(delta: &StateChange) -> StateChange {
    delta.map_literals(|_, v| misspell(v))
}

/// The gold delta of every turn, references included, in dialogue order.
pub fn gold_deltas(d: &Dialogue, schema: &CanonicalSchema) -> Vec<StateChange> {
    derive_turn_examples(d, schema)
        .into_iter()
        .map(|e| e.delta)
        .collect()
}

pub fn oracle_rules(
    dialogues: &[Dialogue],
    schema: &CanonicalSchema,
    variant: OracleVariant,
) -> Vec<SampleRule> {
    let mut rules = Vec::new();
    for d in dialogues {
        for (turn, delta) in d.turns.iter().zip(gold_deltas(d, schema)) {
            let delta = match variant {
                OracleVariant::Gold => delta,
                OracleVariant::Misspelled => perturb(&delta),
            };
            rules.push(SampleRule {
                prompt_suffix: turn_key(&turn.agent, &turn.user),
                completions: vec![MockCompletion::new(canonicalize_completion(&delta))],
            });
        }
    }
    rules
}

pub fn oracle_mock(
    dialogues: &[Dialogue],
    schema: &CanonicalSchema,
    variant: OracleVariant,
    seed: u64,
) -> MockBackend {
    MockBackend {
        seed,
        samples: oracle_rules(dialogues, schema, variant),
        scores: Vec::new(),
    }
}

/// Replaces the completion for the turn with the given utterances by its
/// gold delta plus one extra slot assignment. Returns false when no rule
/// matches.
pub fn inject_error(
    mock: &mut MockBackend,
    agent: &str,
    user: &str,
    gold: &StateChange,
    slot: SlotName,
    value: &str,
) -> bool {
    let key = turn_key(agent, user);
    let Some(rule) = mock.samples.iter_mut().find(|r| r.prompt_suffix == key) else {
        return false;
    };
    let wrong = gold
        .clone()
        .with(slot, SlotValue::literal(value).expect("non-empty value"));
    rule.completions = vec![MockCompletion::new(canonicalize_completion(&wrong))];
    true
}
