#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use icl_dst::schema::{load_schema, CanonicalSchema, ValueKind};
use icl_dst::state::{DialogueState, SlotName, SlotValue, StateChange};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

pub fn schema() -> CanonicalSchema {
    load_schema(&fixture("schema.json")).expect("fixture schema loads")
}

pub fn sn(s: &str) -> SlotName {
    s.parse().expect("slot name")
}

pub fn lit(s: &str) -> SlotValue {
    SlotValue::literal(s).expect("literal")
}

const WORDS: [&str; 12] = [
    "east", "the gardenia", "kings's lodge", "a \"quoted\" name", "back\\slash", "17",
    "cambridge", "none", "None", "true", "x", "  padded  ",
];

const SMALL_VALUES: [&str; 5] = ["east", "west", "4", "dontcare", "cheap"];

/// Random state over the first `universe` slots of the schema.
pub fn random_state(rng: &mut ChaCha8Rng, slots: &[SlotName], universe: usize) -> DialogueState {
    let mut s = DialogueState::new();
    for slot in slots.iter().take(universe) {
        if rng.gen_bool(0.5) {
            s.insert(slot.clone(), *SMALL_VALUES.choose(rng).unwrap());
        }
    }
    s
}

fn random_literal(rng: &mut ChaCha8Rng, schema: &CanonicalSchema, slot: &SlotName) -> String {
    let def = schema.slot(slot).expect("slot in schema");
    if let (true, Some(values)) = (def.categorical, def.allowed_values.as_ref()) {
        return values.choose(rng).unwrap().clone();
    }
    if def.value_kind == ValueKind::Time {
        return format!("{:02}:{:02}", rng.gen_range(0..24), rng.gen_range(0..60));
    }
    WORDS.choose(rng).unwrap().to_string()
}

/// Random schema-valid delta with literals, dontcare, references and removals.
pub fn random_delta(rng: &mut ChaCha8Rng, schema: &CanonicalSchema) -> StateChange {
    let slots = schema.slot_names();
    let mut d = StateChange::new();
    for _ in 0..rng.gen_range(0..6) {
        let slot = slots.choose(rng).unwrap().clone();
        match rng.gen_range(0..10) {
            0 => d.remove(slot),
            1 => d.set(slot, SlotValue::DontCare),
            2 | 3 => {
                let target = slots.choose(rng).unwrap().clone();
                d.set(slot, SlotValue::Reference(target));
            }
            _ => {
                let v = random_literal(rng, schema, &slot);
                d.set(slot, SlotValue::literal(v).unwrap());
            }
        }
    }
    d
}
