use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;

use super::config::{EmbedderKind, ExperimentConfig, LmKind, Mode, RetrievalKind};
use super::oracle::{oracle_mock, OracleVariant};
use super::pipeline::{run_dialogue_checkpointed, CheckpointStore, DialogueOutput, RunSettings, Services};
use super::EvalError;
use crate::corpus::{load_dialogues, sample_few_shot, TrainingPool};
use crate::lm::{CompletionBackend, Gateway, HttpBackend, MockBackend, ReplayCache};
use crate::normalize::{CanonicalMap, NormalizerConfig};
use crate::prompt::build_prompt_bundle;
use crate::retrieval::{
    encode_context_text, load_embeddings, Embedder, EmbeddingRecord, ExampleIndex, HashingEmbedder,
    ServiceEmbedder,
};
use crate::schema::{load_database, load_ontology, load_schema, CanonicalSchema, EntityDatabase, Ontology};
use crate::state::{Dialogue, TurnContext};

/// Inputs loaded once per experiment.
pub struct Resources {
    pub schema: Arc<CanonicalSchema>,
    pub ontology: Ontology,
    pub database: EntityDatabase,
    pub train: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    pub embeddings: Option<Vec<EmbeddingRecord>>,
    pub cache: Option<Arc<ReplayCache>>,
}

impl Resources {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, EvalError> {
        let p = &cfg.paths;
        Ok(Self {
            schema: Arc::new(load_schema(&p.schema)?),
            ontology: p.ontology.as_deref().map(load_ontology).transpose()?.unwrap_or_default(),
            database: p.database.as_deref().map(load_database).transpose()?.unwrap_or_default(),
            train: load_dialogues(&p.train)?,
            test: load_dialogues(&p.test)?,
            embeddings: p.embeddings.as_deref().map(load_embeddings).transpose()?,
            cache: p
                .cache
                .as_deref()
                .map(|c| ReplayCache::open(c).map(Arc::new))
                .transpose()?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub pool: Arc<TrainingPool>,
    pub output: DialogueOutput,
}

pub struct RunResult {
    pub config: ExperimentConfig,
    pub test: Vec<Dialogue>,
    pub seeds: Vec<SeedRun>,
}

pub fn build_embedder(cfg: &ExperimentConfig) -> Result<Arc<dyn Embedder>, EvalError> {
    Ok(match cfg.embedder.kind {
        EmbedderKind::Hashing => Arc::new(HashingEmbedder::new(cfg.embedder.dim, cfg.embedder.seed)),
        EmbedderKind::Service => {
            let url = cfg.embedder.url.clone().unwrap_or_default();
            Arc::new(ServiceEmbedder::new(url)?)
        }
    })
}

pub fn build_backend(
    cfg: &ExperimentConfig,
    res: &Resources,
) -> Result<Arc<dyn CompletionBackend>, EvalError> {
    let lm = &cfg.lm;
    Ok(match lm.kind {
        LmKind::Openai => Arc::new(HttpBackend::from_env(
            lm.endpoint.clone().unwrap_or_default(),
            &lm.api_key_env,
            lm.retry.clone(),
            Duration::from_secs(lm.timeout_secs),
        )?),
        LmKind::Mock => {
            let table = lm.table.as_deref().ok_or_else(|| EvalError::Config("lm.table missing".into()))?;
            Arc::new(MockBackend::load(table)?)
        }
        LmKind::MockGold => Arc::new(oracle_mock(&res.test, &res.schema, OracleVariant::Gold, lm.mock_seed)),
        LmKind::MockMisspelled => Arc::new(oracle_mock(
            &res.test,
            &res.schema,
            OracleVariant::Misspelled,
            lm.mock_seed,
        )),
    })
}

pub fn training_pool(cfg: &ExperimentConfig, res: &Resources, seed: u64) -> Result<TrainingPool, EvalError> {
    Ok(match cfg.mode {
        Mode::Zero => TrainingPool::new(Vec::new())?,
        _ => sample_few_shot(&res.train, cfg.effective_fraction(), seed, &res.schema)?,
    })
}

/// Index over the pool, from the embeddings file when one was given and
/// from `embedder` otherwise.
pub fn build_index(
    res: &Resources,
    pool: &TrainingPool,
    embedder: &dyn Embedder,
) -> Result<ExampleIndex, EvalError> {
    let records = match &res.embeddings {
        Some(r) => r.clone(),
        None => {
            let texts: Vec<String> = pool
                .examples()
                .iter()
                .map(|e| encode_context_text(&e.context))
                .collect();
            let vectors = embedder.embed(&texts)?;
            pool.examples()
                .iter()
                .zip(vectors)
                .map(|(e, vector)| EmbeddingRecord { id: e.id.clone(), vector })
                .collect()
        }
    };
    Ok(ExampleIndex::for_pool(pool, &records)?)
}

/// Builds every shared service for one seed.
pub fn build_services(
    cfg: &ExperimentConfig,
    res: &Resources,
    backend: Arc<dyn CompletionBackend>,
    seed: u64,
) -> Result<Services, EvalError> {
    let pool = Arc::new(training_pool(cfg, res, seed)?);
    let embedder = build_embedder(cfg)?;
    let needs_index =
        cfg.mode != Mode::Zero && cfg.retrieval != RetrievalKind::Random && !pool.is_empty();
    let index = if needs_index {
        Some(Arc::new(build_index(res, &pool, embedder.as_ref())?))
    } else {
        None
    };
    let gold_counts = (cfg.mode != Mode::Zero).then(|| pool.gold_value_counts());
    let normalizer = CanonicalMap::build(
        &res.schema,
        &res.database,
        &res.ontology,
        gold_counts.as_ref(),
        NormalizerConfig::default(),
    );
    for a in &normalizer.audit().ambiguities {
        log::warn!("ambiguous surface {:?} for {}: {:?}", a.surface, a.slot, a.candidates);
    }
    let mut gateway = Gateway::new(backend, cfg.lm.model.clone())
        .with_concurrency(cfg.lm.concurrency)
        .with_seed(seed);
    if let Some(cache) = &res.cache {
        gateway = gateway.with_cache(cache.clone());
    }
    Ok(Services {
        schema: res.schema.clone(),
        pool,
        index,
        embedder,
        lm: Arc::new(gateway),
        normalizer: Arc::new(normalizer),
    })
}

/// Runs `dialogues` in parallel and concatenates outputs in input order.
pub fn run_dialogues(
    dialogues: &[Dialogue],
    settings: &RunSettings,
    services: &Services,
    store: Option<&CheckpointStore>,
    parallelism: usize,
) -> Result<DialogueOutput, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let results: Vec<Result<DialogueOutput, EvalError>> = pool.install(|| {
        dialogues
            .par_iter()
            .map(|d| run_dialogue_checkpointed(d, settings, services, store))
            .collect()
    });
    let mut out = DialogueOutput::default();
    for r in results {
        let r = r?;
        out.predictions.extend(r.predictions);
        out.scores.extend(r.scores);
    }
    Ok(out)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult, EvalError> {
    cfg.validate()?;
    let res = Resources::load(cfg)?;
    run_with_resources(cfg, &res, None)
}

/// Runs every seed. `backend` overrides the one named by the config.
pub fn run_with_resources(
    cfg: &ExperimentConfig,
    res: &Resources,
    backend: Option<Arc<dyn CompletionBackend>>,
) -> Result<RunResult, EvalError> {
    let backend = match backend {
        Some(b) => b,
        None => build_backend(cfg, res)?,
    };
    let store = cfg
        .paths
        .checkpoints
        .as_deref()
        .map(CheckpointStore::new)
        .transpose()?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let services = build_services(cfg, res, backend.clone(), seed)?;
        let settings = RunSettings::from_config(cfg, seed);
        log::info!(
            "seed {seed}: {} pool examples, {} dialogues",
            services.pool.len(),
            res.test.len()
        );
        let output = run_dialogues(&res.test, &settings, &services, store.as_ref(), cfg.parallelism)?;
        seeds.push(SeedRun {
            seed,
            pool: services.pool.clone(),
            output,
        });
    }
    Ok(RunResult {
        config: cfg.clone(),
        test: res.test.clone(),
        seeds,
    })
}

pub struct DryRunSummary {
    pub pool_size: usize,
    pub test_dialogues: usize,
    pub test_turns: usize,
    pub first_prompt: Option<String>,
}

/// Loads everything and renders the first prompt without calling the model.
pub fn dry_run(cfg: &ExperimentConfig) -> Result<DryRunSummary, EvalError> {
    cfg.validate()?;
    let res = Resources::load(cfg)?;
    let seed = cfg.seeds[0];
    let services = build_services(cfg, &res, Arc::new(MockBackend::new(0)), seed)?;
    let settings = RunSettings::from_config(cfg, seed);
    let first_prompt = match res.test.first().and_then(|d| d.turns.first()) {
        Some(turn) => {
            let ctx = TurnContext {
                prev_state: Default::default(),
                agent_utt: turn.agent.clone(),
                user_utt: turn.user.clone(),
            };
            let turn_id = format!("{}#0", res.test[0].id);
            let selected = super::pipeline::select_examples(&ctx, &turn_id, &settings, &services)?;
            let examples: Vec<_> = selected
                .ids()
                .into_iter()
                .filter_map(|id| services.pool.get(id))
                .collect();
            Some(build_prompt_bundle(&res.schema, &examples, &ctx).main_prompt)
        }
        None => None,
    };
    Ok(DryRunSummary {
        pool_size: services.pool.len(),
        test_dialogues: res.test.len(),
        test_turns: res.test.iter().map(|d| d.turns.len()).sum(),
        first_prompt,
    })
}

/// Loads the resources named by a config file without running anything.
pub fn load_resources(path: &Path) -> Result<(ExperimentConfig, Resources), EvalError> {
    let cfg = ExperimentConfig::load(path)?;
    let res = Resources::load(&cfg)?;
    Ok((cfg, res))
}
