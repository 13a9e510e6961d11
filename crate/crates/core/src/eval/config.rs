use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::lm::{RetryPolicy, SampleParams};
use crate::pmi::ClipConfig;
use crate::retrieval::SelectionConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Zero,
    Few,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalKind {
    Topk,
    Diverse,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LmKind {
    Openai,
    /// Table-driven mock loaded from `lm.table`.
    Mock,
    /// Mock that answers every evaluation turn with its gold update line.
    MockGold,
    /// Like `mock-gold` but with misspelled values.
    MockMisspelled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub kind: LmKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key_env: String,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub table: Option<PathBuf>,
    /// Hash-model seed for the mock scorer.
    pub mock_seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            kind: LmKind::MockGold,
            endpoint: None,
            model: "code-davinci-002".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            concurrency: 8,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
            table: None,
            mock_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hashing,
    Service,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub seed: u64,
    pub url: Option<String>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hashing,
            dim: 64,
            seed: 7,
            url: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub schema: PathBuf,
    pub ontology: Option<PathBuf>,
    pub database: Option<PathBuf>,
    /// Training dialogues (the retrieval pool).
    pub train: PathBuf,
    /// Evaluation dialogues.
    pub test: PathBuf,
    /// Pool embeddings; computed with the query embedder when absent.
    pub embeddings: Option<PathBuf>,
    /// Replay cache JSONL.
    pub cache: Option<PathBuf>,
    pub output: PathBuf,
    pub checkpoints: Option<PathBuf>,
}

impl Paths {
    /// Resolves relative paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.schema);
        fix(&mut self.train);
        fix(&mut self.test);
        fix(&mut self.output);
        for p in [
            &mut self.ontology,
            &mut self.database,
            &mut self.embeddings,
            &mut self.cache,
            &mut self.checkpoints,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub fraction: f64,
    pub seeds: Vec<u64>,
    pub k: usize,
    pub alpha: Option<f64>,
    /// Candidate window for diverse selection.
    pub window: Option<usize>,
    pub beta: f64,
    pub top_p: Option<f64>,
    pub best_of: Option<u32>,
    pub n: Option<u32>,
    pub max_tokens: u32,
    pub token_floor: Option<f64>,
    pub sequence_floor: Option<f64>,
    pub retrieval: RetrievalKind,
    /// Zero-shot: score only this domain's slots on dialogues containing it.
    pub holdout_domain: Option<String>,
    /// Dialogues evaluated concurrently.
    pub parallelism: usize,
    pub embedder: EmbedderConfig,
    pub lm: LmConfig,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Few,
            fraction: 0.05,
            seeds: vec![0],
            k: 10,
            alpha: None,
            window: None,
            beta: 0.4,
            top_p: None,
            best_of: None,
            n: None,
            max_tokens: 120,
            token_floor: None,
            sequence_floor: None,
            retrieval: RetrievalKind::Diverse,
            holdout_domain: None,
            parallelism: 4,
            embedder: EmbedderConfig::default(),
            lm: LmConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| EvalError::Config(e.to_string()))?;
        if let Some(dir) = path.parent() {
            cfg.paths.rebase(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn effective_fraction(&self) -> f64 {
        match self.mode {
            Mode::Full => 1.0,
            _ => self.fraction,
        }
    }

    pub fn selection(&self) -> SelectionConfig {
        let defaults = SelectionConfig::for_fraction(self.effective_fraction());
        SelectionConfig {
            k: if self.mode == Mode::Zero { 0 } else { self.k },
            alpha: match self.retrieval {
                RetrievalKind::Topk => 0.0,
                _ => self.alpha.unwrap_or(defaults.alpha),
            },
            window: self.window.unwrap_or(defaults.window),
        }
    }

    pub fn clip(&self) -> ClipConfig {
        let base = match self.mode {
            Mode::Zero => ClipConfig::zero_shot(),
            _ => ClipConfig::few_shot(),
        };
        ClipConfig {
            token_floor: self.token_floor.unwrap_or(base.token_floor),
            sequence_floor: self.sequence_floor.unwrap_or(base.sequence_floor),
            beta: self.beta,
        }
    }

    pub fn sample_params(&self) -> SampleParams {
        let base = match self.mode {
            Mode::Zero => SampleParams::zero_shot(),
            _ => SampleParams::few_shot(),
        };
        SampleParams {
            top_p: self.top_p.unwrap_or(base.top_p),
            best_of: self.best_of.unwrap_or(base.best_of),
            n: self.n.unwrap_or(base.n),
            max_tokens: self.max_tokens,
            stop: base.stop,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction {} not in (0, 1]", self.fraction));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.parallelism == 0 {
            return bad("parallelism must be positive".into());
        }
        if self.mode != Mode::Zero {
            self.selection()
                .validate()
                .map_err(|e| EvalError::Config(e.to_string()))?;
        }
        self.clip().validate().map_err(EvalError::Config)?;
        self.sample_params()
            .validate()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        match self.lm.kind {
            LmKind::Openai if self.lm.endpoint.is_none() => bad("lm.endpoint is required for openai".into()),
            LmKind::Mock if self.lm.table.is_none() => bad("lm.table is required for mock".into()),
            _ => Ok(()),
        }?;
        if self.embedder.kind == EmbedderKind::Service && self.embedder.url.is_none() {
            return bad("embedder.url is required for the service embedder".into());
        }
        Ok(())
    }
}
