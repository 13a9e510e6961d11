//! Dialogue-state data model and the delta algebra.
//!
//! A [`DialogueState`] is a flat mapping from `domain-slot` names to literal
//! values. A [`StateChange`] is the per-turn difference: slot updates plus
//! slot removals. Updates may carry a [`SlotValue::Reference`] to another
//! slot, which resolves against the state the change is applied to.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Literal written for [`SlotValue::DontCare`].
pub const DONTCARE: &str = "dontcare";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("invalid slot name {0:?}: expected lowercase `domain-slot`")]
    InvalidSlotName(String),
    #[error("reference target {0} has no value in the current state")]
    UnresolvableReference(SlotName),
    #[error("slot {0} is both updated and removed")]
    OverlappingChange(SlotName),
    #[error("literal slot values must be non-empty")]
    EmptyLiteral,
}

/// A schema slot, e.g. `hotel-area`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SlotName {
    domain: String,
    slot: String,
}

fn valid_domain(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

fn valid_slot(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl SlotName {
    pub fn new(domain: &str, slot: &str) -> Result<Self, StateError> {
        if valid_domain(domain) && valid_slot(slot) {
            Ok(Self {
                domain: domain.to_string(),
                slot: slot.to_string(),
            })
        } else {
            Err(StateError::InvalidSlotName(format!("{domain}-{slot}")))
        }
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn slot(&self) -> &str {
        &self.slot
    }
}

impl fmt::Display for SlotName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.domain, self.slot)
    }
}

impl FromStr for SlotName {
    type Err = StateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('-') {
            Some((domain, slot)) => {
                SlotName::new(domain, slot).map_err(|_| StateError::InvalidSlotName(s.to_string()))
            }
            None => Err(StateError::InvalidSlotName(s.to_string())),
        }
    }
}

impl Serialize for SlotName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SlotName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The value assigned by an update.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotValue {
    Literal(String),
    /// Coreference: take whatever value the named slot currently holds.
    Reference(SlotName),
    DontCare,
}

impl SlotValue {
    /// Builds a literal value. The text `dontcare` maps to [`SlotValue::DontCare`].
    pub fn literal(text: impl Into<String>) -> Result<Self, StateError> {
        let text = text.into();
        if text.is_empty() {
            Err(StateError::EmptyLiteral)
        } else if text == DONTCARE {
            Ok(SlotValue::DontCare)
        } else {
            Ok(SlotValue::Literal(text))
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireValue {
    Text(String),
    Ref {
        #[serde(rename = "ref")]
        target: SlotName,
    },
}

impl Serialize for SlotValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            SlotValue::Literal(t) => serializer.serialize_str(t),
            SlotValue::DontCare => serializer.serialize_str(DONTCARE),
            SlotValue::Reference(target) => WireValue::Ref {
                target: target.clone(),
            }
            .serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for SlotValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match WireValue::deserialize(deserializer)? {
            WireValue::Text(t) => SlotValue::literal(t).map_err(serde::de::Error::custom),
            WireValue::Ref { target } => Ok(SlotValue::Reference(target)),
        }
    }
}

/// Resolved dialogue state: every entry is a literal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueState {
    entries: BTreeMap<SlotName, String>,
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, slot: &SlotName) -> Option<&str> {
        self.entries.get(slot).map(String::as_str)
    }

    pub fn insert(&mut self, slot: SlotName, value: impl Into<String>) {
        self.entries.insert(slot, value.into());
    }

    pub fn remove(&mut self, slot: &SlotName) -> Option<String> {
        self.entries.remove(slot)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in slot-name order.
    pub fn iter(&self) -> impl Iterator<Item = (&SlotName, &str)> {
        self.entries.iter().map(|(k, v)| (k, v.as_str()))
    }

    /// Restricts the state to one domain's slots.
    pub fn filter_domain(&self, domain: &str) -> DialogueState {
        DialogueState {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.domain() == domain)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Case-folded comparison over the complete slot-value set.
    pub fn matches_casefold(&self, other: &DialogueState) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, va), (kb, vb))| ka == kb && va.to_lowercase() == vb.to_lowercase())
    }
}

impl FromIterator<(SlotName, String)> for DialogueState {
    fn from_iter<I: IntoIterator<Item = (SlotName, String)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Per-turn state delta: updates and removals, always disjoint.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawStateChange")]
pub struct StateChange {
    updates: BTreeMap<SlotName, SlotValue>,
    removals: BTreeSet<SlotName>,
}

#[derive(Deserialize)]
struct RawStateChange {
    #[serde(default)]
    updates: BTreeMap<SlotName, SlotValue>,
    #[serde(default)]
    removals: BTreeSet<SlotName>,
}

impl TryFrom<RawStateChange> for StateChange {
    type Error = StateError;

    fn try_from(raw: RawStateChange) -> Result<Self, Self::Error> {
        if let Some(s) = raw.removals.iter().find(|s| raw.updates.contains_key(s)) {
            return Err(StateError::OverlappingChange(s.clone()));
        }
        Ok(StateChange {
            updates: raw.updates,
            removals: raw.removals,
        })
    }
}

impl StateChange {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records an update, replacing any earlier update or removal of `slot`.
    pub fn set(&mut self, slot: SlotName, value: SlotValue) {
        self.removals.remove(&slot);
        self.updates.insert(slot, value);
    }

    /// Records a removal, replacing any earlier update of `slot`.
    pub fn remove(&mut self, slot: SlotName) {
        self.updates.remove(&slot);
        self.removals.insert(slot);
    }

    pub fn with(mut self, slot: SlotName, value: SlotValue) -> Self {
        self.set(slot, value);
        self
    }

    pub fn without(mut self, slot: SlotName) -> Self {
        self.remove(slot);
        self
    }

    pub fn updates(&self) -> &BTreeMap<SlotName, SlotValue> {
        &self.updates
    }

    pub fn removals(&self) -> &BTreeSet<SlotName> {
        &self.removals
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty() && self.removals.is_empty()
    }

    /// Every slot the change touches, in name order.
    pub fn touched(&self) -> BTreeSet<&SlotName> {
        self.updates.keys().chain(self.removals.iter()).collect()
    }

    /// Replaces literal values in place; references and removals are left alone.
    pub fn map_literals(&self, mut f: impl FnMut(&SlotName, &str) -> String) -> StateChange {
        let updates = self
            .updates
            .iter()
            .map(|(slot, value)| {
                let value = match value {
                    SlotValue::Literal(text) => {
                        SlotValue::literal(f(slot, text)).unwrap_or_else(|_| value.clone())
                    }
                    other => other.clone(),
                };
                (slot.clone(), value)
            })
            .collect();
        StateChange {
            updates,
            removals: self.removals.clone(),
        }
    }
}

/// The inference input for one turn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnContext {
    pub prev_state: DialogueState,
    /// Empty for user-initiated first turns.
    pub agent_utt: String,
    pub user_utt: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub agent: String,
    pub user: String,
    pub gold_state: DialogueState,
    /// Optional coreference annotation: slot → slot whose value it refers to.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub coref: BTreeMap<SlotName, SlotName>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    #[serde(default)]
    pub domains: BTreeSet<String>,
    pub turns: Vec<Turn>,
}

/// Applies `delta` to `state`. References resolve against `state` as it was
/// before the delta, never against other updates in the same delta.
pub fn apply_state_change(
    state: &DialogueState,
    delta: &StateChange,
) -> Result<DialogueState, StateError> {
    let mut next = state.clone();
    for slot in &delta.removals {
        next.remove(slot);
    }
    for (slot, value) in &delta.updates {
        let text = match value {
            SlotValue::Literal(t) => t.clone(),
            SlotValue::DontCare => DONTCARE.to_string(),
            SlotValue::Reference(target) => state
                .get(target)
                .ok_or_else(|| StateError::UnresolvableReference(target.clone()))?
                .to_string(),
        };
        next.insert(slot.clone(), text);
    }
    Ok(next)
}

/// Minimal delta turning `prev` into `next`.
pub fn diff_states(prev: &DialogueState, next: &DialogueState) -> StateChange {
    let mut delta = StateChange::new();
    for (slot, value) in next.iter() {
        if prev.get(slot) != Some(value) {
            let v = if value == DONTCARE {
                SlotValue::DontCare
            } else {
                SlotValue::Literal(value.to_string())
            };
            delta.set(slot.clone(), v);
        }
    }
    for (slot, _) in prev.iter() {
        if next.get(slot).is_none() {
            delta.remove(slot.clone());
        }
    }
    delta
}

/// Value of a delta entry after coreference substitution.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AbstractValue {
    Text(String),
    Slot(SlotName),
    Delete,
}

/// Replaces every referenced value with the name of the slot it refers to, so
/// two deltas that refer to the same slot compare equal whatever its literal.
/// Removals appear as [`AbstractValue::Delete`].
pub fn substitute_coreferents(delta: &StateChange) -> BTreeMap<SlotName, AbstractValue> {
    let mut out: BTreeMap<SlotName, AbstractValue> = delta
        .updates
        .iter()
        .map(|(slot, value)| {
            let v = match value {
                SlotValue::Literal(t) => AbstractValue::Text(t.clone()),
                SlotValue::DontCare => AbstractValue::Text(DONTCARE.to_string()),
                SlotValue::Reference(target) => AbstractValue::Slot(target.clone()),
            };
            (slot.clone(), v)
        })
        .collect();
    for slot in &delta.removals {
        out.insert(slot.clone(), AbstractValue::Delete);
    }
    out
}

/// Set F1: `2|a∩b| / (|a|+|b|)`, 1 when both are empty.
pub fn f1<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let common = a.intersection(b).count();
    2.0 * common as f64 / (a.len() + b.len()) as f64
}

/// Mean of slot-set F1 and slot-value-pair F1 over coreference-substituted deltas.
pub fn sim_f1(a: &StateChange, b: &StateChange) -> f64 {
    let sa = substitute_coreferents(a);
    let sb = substitute_coreferents(b);
    let slots_a: BTreeSet<&SlotName> = sa.keys().collect();
    let slots_b: BTreeSet<&SlotName> = sb.keys().collect();
    let pairs_a: BTreeSet<(&SlotName, &AbstractValue)> = sa.iter().collect();
    let pairs_b: BTreeSet<(&SlotName, &AbstractValue)> = sb.iter().collect();
    0.5 * f1(&slots_a, &slots_b) + 0.5 * f1(&pairs_a, &pairs_b)
}
