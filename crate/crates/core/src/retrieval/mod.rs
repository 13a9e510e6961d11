//! Example embeddings, nearest-neighbour search, example selection and
//! diversity diagnostics.

use thiserror::Error;

pub mod diversity;
pub mod embed;
pub mod index;
pub mod pairs;
pub mod select;

pub use diversity::{diversity_distinct_slots, diversity_entropy, slot_combination};
pub use embed::{Embedder, HashingEmbedder, ServiceEmbedder};
pub use index::{
    encode_context_text, load_embeddings, write_embeddings, EmbeddingRecord, EmbeddingVector,
    ExampleIndex, Neighbor,
};
pub use pairs::{context_texts, export_contrastive_pairs, PairLabel, PairRecord, TextRecord};
pub use select::{
    select_diverse_mmr, select_random, select_topk, ExampleSet, SelectedExample, SelectionConfig,
};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("io: {0}")]
    Io(String),
    #[error("bad embeddings file: {0}")]
    Format(String),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("duplicate embedding id {0}")]
    DuplicateId(String),
    #[error("no embedding for example {0}")]
    MissingEmbedding(String),
    #[error("zero or non-finite vector")]
    DegenerateVector,
    #[error("invalid selection config: {0}")]
    BadConfig(String),
    #[error("embedding service: {0}")]
    Service(String),
}
