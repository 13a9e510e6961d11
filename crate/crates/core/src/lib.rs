//! In-context dialogue state tracking.
//!
//! Turns are encoded as Python-like programs: a schema header, retrieved
//! demonstrations, and the current state and utterances. A language model
//! completes the update line, completions are reranked with PMI^beta,
//! parsed into state changes, normalized and applied.

pub mod corpus;
pub mod eval;
pub mod lm;
pub mod normalize;
pub mod parser;
pub mod pmi;
pub mod prompt;
pub mod retrieval;
pub mod schema;
pub mod state;

pub use state::{
    apply_state_change, diff_states, sim_f1, Dialogue, DialogueState, SlotName, SlotValue,
    StateChange, StateError, Turn, TurnContext,
};
