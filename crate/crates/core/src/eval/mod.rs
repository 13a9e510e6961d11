//! Experiment orchestration: the per-turn inference loop, scoring and reports.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{DialogueState, StateChange};

pub mod config;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod runner;

pub use config::{ExperimentConfig, LmKind, Mode, RetrievalKind};
pub use metrics::{jga, leave_one_out_jga, AlignmentError};
pub use pipeline::{run_dialogue, resume_dialogue, CheckpointStore, DialogueOutput, PipelineError, RunSettings, Services};
pub use report::{compute_metrics, write_report, Metrics};
pub use runner::{run_experiment, run_with_resources, Resources, RunResult};

/// One processed turn. `predicted_state` is the previous turn's predicted
/// state with `predicted_delta` applied.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnPrediction {
    pub dialogue_id: String,
    pub turn_index: usize,
    #[serde(default)]
    pub seed: u64,
    pub predicted_delta: StateChange,
    pub predicted_state: DialogueState,
    pub gold_state: DialogueState,
    /// Ids of the in-context examples, in selection order.
    #[serde(default)]
    pub selected: Vec<String>,
}

impl TurnPrediction {
    /// Key into the score dump.
    pub fn turn_id(&self) -> String {
        format!("{}#{}", self.dialogue_id, self.turn_index)
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("bad file: {0}")]
    Format(String),
    #[error(transparent)]
    Schema(#[from] crate::schema::SchemaError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error(transparent)]
    Gateway(#[from] crate::lm::GatewayError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
}

impl EvalError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
