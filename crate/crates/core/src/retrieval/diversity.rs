//! Label-diversity diagnostics over a selected example set.
//!
//! The "label" of an example is the set of slot names its delta touches,
//! values ignored.

use std::collections::{BTreeMap, BTreeSet};

use crate::state::{SlotName, StateChange};

pub fn slot_combination(delta: &StateChange) -> BTreeSet<SlotName> {
    delta.touched().into_iter().cloned().collect()
}

fn combination_counts<'a>(
    deltas: impl IntoIterator<Item = &'a StateChange>,
) -> BTreeMap<BTreeSet<SlotName>, usize> {
    let mut counts = BTreeMap::new();
    for d in deltas {
        *counts.entry(slot_combination(d)).or_insert(0) += 1;
    }
    counts
}

/// Number of distinct slot combinations.
pub fn diversity_distinct_slots<'a>(deltas: impl IntoIterator<Item = &'a StateChange>) -> usize {
    combination_counts(deltas).len()
}

/// Entropy in bits of the slot-combination frequencies.
pub fn diversity_entropy<'a>(deltas: impl IntoIterator<Item = &'a StateChange>) -> f64 {
    let counts = combination_counts(deltas);
    let total: usize = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    // -0.0 for a single combination
    h.max(0.0)
}
