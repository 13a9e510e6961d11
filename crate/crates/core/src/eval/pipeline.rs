use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Mode, RetrievalKind};
use super::{EvalError, TurnPrediction};
use crate::corpus::{Example, TrainingPool};
use crate::lm::{GatewayError, LanguageModel, SampleParams};
use crate::normalize::{normalize_prediction, CanonicalMap};
use crate::pmi::{build_candidates, rank, score_candidates, ClipConfig, TurnScoreDump};
use crate::prompt::{build_prompt_bundle, canonicalize_completion};
use crate::retrieval::{
    encode_context_text, select_diverse_mmr, select_random, select_topk, Embedder, EmbeddingVector,
    ExampleIndex, ExampleSet, RetrievalError, SelectionConfig,
};
use crate::schema::CanonicalSchema;
use crate::state::{apply_state_change, Dialogue, DialogueState, SlotValue, StateChange, TurnContext};

/// Everything a dialogue run reads; shared across worker threads.
#[derive(Clone)]
pub struct Services {
    pub schema: Arc<CanonicalSchema>,
    pub pool: Arc<TrainingPool>,
    /// Required for top-k and diverse retrieval.
    pub index: Option<Arc<ExampleIndex>>,
    pub embedder: Arc<dyn Embedder>,
    pub lm: Arc<dyn LanguageModel>,
    pub normalizer: Arc<CanonicalMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub mode: Mode,
    pub retrieval: RetrievalKind,
    pub selection: SelectionConfig,
    pub clip: ClipConfig,
    pub sample: SampleParams,
    pub seed: u64,
}

impl RunSettings {
    pub fn from_config(cfg: &ExperimentConfig, seed: u64) -> Self {
        Self {
            mode: cfg.mode,
            retrieval: cfg.retrieval,
            selection: cfg.selection(),
            clip: cfg.clip(),
            sample: cfg.sample_params(),
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogueOutput {
    pub predictions: Vec<TurnPrediction>,
    pub scores: Vec<TurnScoreDump>,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// The turns before `turn_index` completed and are kept in `partial`.
    #[error("dialogue {dialogue_id} turn {turn_index}: {source}")]
    Gateway {
        dialogue_id: String,
        turn_index: usize,
        partial: DialogueOutput,
        #[source]
        source: GatewayError,
    },
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
}

fn turn_seed(seed: u64, turn_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(turn_id.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub(crate) fn select_examples(
    ctx: &TurnContext,
    turn_id: &str,
    settings: &RunSettings,
    services: &Services,
) -> Result<ExampleSet, RetrievalError> {
    let k = settings.selection.k;
    if settings.mode == Mode::Zero || k == 0 || services.pool.is_empty() {
        return Ok(ExampleSet::default());
    }
    if settings.retrieval == RetrievalKind::Random {
        return Ok(select_random(&services.pool, k, turn_seed(settings.seed, turn_id)));
    }
    let index = services
        .index
        .as_ref()
        .ok_or_else(|| RetrievalError::BadConfig("retrieval needs an example index".into()))?;
    let text = encode_context_text(ctx);
    let vector = services
        .embedder
        .embed(std::slice::from_ref(&text))?
        .pop()
        .ok_or(RetrievalError::DegenerateVector)?;
    let query = EmbeddingVector::new(vector)?;
    Ok(match settings.retrieval {
        RetrievalKind::Topk => select_topk(index, &query, k),
        _ => select_diverse_mmr(index, &query, &settings.selection),
    })
}

/// Drops updates whose reference target is absent from `state`.
fn drop_unresolvable(delta: &StateChange, state: &DialogueState) -> StateChange {
    let mut out = StateChange::new();
    for (slot, value) in delta.updates() {
        match value {
            SlotValue::Reference(target) if state.get(target).is_none() => {
                log::debug!("dropping unresolvable reference {slot} -> {target}");
            }
            _ => out.set(slot.clone(), value.clone()),
        }
    }
    for slot in delta.removals() {
        out.remove(slot.clone());
    }
    out
}

/// Runs every turn of `d` in order, feeding each turn the state predicted
/// for the previous one.
pub fn run_dialogue(
    d: &Dialogue,
    settings: &RunSettings,
    services: &Services,
) -> Result<DialogueOutput, PipelineError> {
    resume_dialogue(d, settings, services, DialogueOutput::default())
}

/// Continues a dialogue from the turns already in `done`.
pub fn resume_dialogue(
    d: &Dialogue,
    settings: &RunSettings,
    services: &Services,
    done: DialogueOutput,
) -> Result<DialogueOutput, PipelineError> {
    let mut out = done;
    let mut state = out
        .predictions
        .last()
        .map(|p| p.predicted_state.clone())
        .unwrap_or_default();

    for (t, turn) in d.turns.iter().enumerate().skip(out.predictions.len()) {
        let turn_id = format!("{}#{t}", d.id);
        let ctx = TurnContext {
            prev_state: state.clone(),
            agent_utt: turn.agent.clone(),
            user_utt: turn.user.clone(),
        };
        let selected = select_examples(&ctx, &turn_id, settings, services)?;
        let examples: Vec<&Example> = selected
            .ids()
            .into_iter()
            .filter_map(|id| services.pool.get(id))
            .collect();
        let bundle = build_prompt_bundle(&services.schema, &examples, &ctx);

        let gateway_err = |source| PipelineError::Gateway {
            dialogue_id: d.id.clone(),
            turn_index: t,
            partial: out.clone(),
            source,
        };
        let samples = match services.lm.sample(&bundle.main_prompt, &settings.sample) {
            Ok(s) => s,
            Err(e) => return Err(gateway_err(e)),
        };
        let candidates = build_candidates(&samples, &services.schema);
        let mut scored = match score_candidates(
            candidates,
            &bundle.inverted_prefix,
            &settings.clip,
            services.lm.as_ref(),
        ) {
            Ok(s) => s,
            Err(e) => return Err(gateway_err(e)),
        };
        rank(&mut scored, settings.clip.beta);

        let raw = scored
            .first()
            .map(|s| s.candidate.delta())
            .unwrap_or_default();
        let delta = drop_unresolvable(&normalize_prediction(&raw, &services.normalizer), &state);
        let next = apply_state_change(&state, &delta).expect("references checked above");

        let chosen = scored
            .first()
            .map(|s| s.candidate.canonical_text.clone())
            .unwrap_or_else(|| canonicalize_completion(&StateChange::new()));
        out.scores.push(TurnScoreDump::new(turn_id, &scored, &chosen));
        out.predictions.push(TurnPrediction {
            dialogue_id: d.id.clone(),
            turn_index: t,
            seed: settings.seed,
            predicted_delta: delta,
            predicted_state: next.clone(),
            gold_state: turn.gold_state.clone(),
            selected: selected.ids().into_iter().map(str::to_string).collect(),
        });
        state = next;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dialogue_id: String,
    pub seed: u64,
    pub complete: bool,
    pub output: DialogueOutput,
}

/// One JSON file per (seed, dialogue) under a directory.
#[derive(Clone, Debug)]
pub struct CheckpointStore {
    dir: PathBuf,
}

impl CheckpointStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| EvalError::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn path(&self, seed: u64, dialogue_id: &str) -> PathBuf {
        let safe: String = dialogue_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
            .collect();
        self.dir.join(format!("seed{seed}-{safe}.json"))
    }

    pub fn load(&self, seed: u64, dialogue_id: &str) -> Result<Option<Checkpoint>, EvalError> {
        let path = self.path(seed, dialogue_id);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| EvalError::io(&path, e))?;
        let cp: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| EvalError::Format(format!("{}: {e}", path.display())))?;
        Ok((cp.dialogue_id == dialogue_id && cp.seed == seed).then_some(cp))
    }

    pub fn save(&self, cp: &Checkpoint) -> Result<(), EvalError> {
        let path = self.path(cp.seed, &cp.dialogue_id);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(cp).map_err(|e| EvalError::Format(e.to_string()))?;
        fs::write(&tmp, text).map_err(|e| EvalError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| EvalError::io(&path, e))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Runs a dialogue, resuming from and updating its checkpoint when a store is given.
pub fn run_dialogue_checkpointed(
    d: &Dialogue,
    settings: &RunSettings,
    services: &Services,
    store: Option<&CheckpointStore>,
) -> Result<DialogueOutput, EvalError> {
    let Some(store) = store else {
        return run_dialogue(d, settings, services).map_err(EvalError::from);
    };
    let done = match store.load(settings.seed, &d.id)? {
        Some(cp) if cp.complete => return Ok(cp.output),
        Some(cp) => {
            log::info!("resuming {} at turn {}", d.id, cp.output.predictions.len());
            cp.output
        }
        None => DialogueOutput::default(),
    };
    match resume_dialogue(d, settings, services, done) {
        Ok(output) => {
            store.save(&Checkpoint {
                dialogue_id: d.id.clone(),
                seed: settings.seed,
                complete: true,
                output: output.clone(),
            })?;
            Ok(output)
        }
        Err(PipelineError::Gateway {
            dialogue_id,
            turn_index,
            partial,
            source,
        }) => {
            store.save(&Checkpoint {
                dialogue_id: dialogue_id.clone(),
                seed: settings.seed,
                complete: false,
                output: partial.clone(),
            })?;
            Err(EvalError::Pipeline(PipelineError::Gateway {
                dialogue_id,
                turn_index,
                partial,
                source,
            }))
        }
        Err(e) => Err(e.into()),
    }
}
