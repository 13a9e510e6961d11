//! Language-model access: completion sampling and continuation scoring.
//!
//! [`Gateway`] speaks the OpenAI-compatible completions protocol to any
//! [`CompletionBackend`] (HTTP or the in-process mock), caches responses for
//! replay, and bounds the number of requests in flight.

use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod cache;
pub mod http;
pub mod mock;
pub mod wire;

pub use cache::ReplayCache;
pub use http::{HttpBackend, RetryPolicy};
pub use mock::{MockBackend, MockCompletion, MockToken};
pub use wire::{CompletionRequest, CompletionResponse};

use crate::parser::{strip_at_stops, STOP_SEQUENCES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("gateway unavailable: {0}")]
    GatewayUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("continuation to score is empty")]
    EmptyContinuation,
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("invalid gateway configuration: {0}")]
    InvalidConfig(String),
    #[error("replay cache: {0}")]
    Cache(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleParams {
    pub top_p: f64,
    pub best_of: u32,
    pub n: u32,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl SampleParams {
    pub fn few_shot() -> Self {
        Self {
            top_p: 0.9,
            best_of: 10,
            n: 5,
            max_tokens: 120,
            stop: STOP_SEQUENCES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn zero_shot() -> Self {
        Self {
            top_p: 0.7,
            best_of: 32,
            ..Self::few_shot()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidParams(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if self.n == 0 || self.n > self.best_of {
            return Err(GatewayError::InvalidParams(format!(
                "need 1 <= n <= best_of (n={}, best_of={})",
                self.n, self.best_of
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledCompletion {
    pub text: String,
    pub token_logprobs: Vec<f64>,
    pub total_logprob: f64,
}

impl SampledCompletion {
    pub fn new(text: impl Into<String>, token_logprobs: Vec<f64>) -> Self {
        let total_logprob = token_logprobs.iter().sum();
        Self {
            text: text.into(),
            token_logprobs,
            total_logprob,
        }
    }
}

/// Raw request/response transport.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError>;
}

/// What the pipeline needs from a language model.
pub trait LanguageModel: Send + Sync {
    /// Up to `params.n` completions of `prompt`, cut at the stop sequences.
    fn sample(&self, prompt: &str, params: &SampleParams)
        -> Result<Vec<SampledCompletion>, GatewayError>;

    /// Log-probabilities of the tokens of `continuation` following `prefix`.
    fn score_continuation(&self, prefix: &str, continuation: &str)
        -> Result<Vec<f64>, GatewayError>;
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("limiter lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("limiter lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    model: String,
    cache: Option<Arc<ReplayCache>>,
    limiter: Limiter,
    seed: Option<u64>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn CompletionBackend>, model: impl Into<String>) -> Self {
        Self {
            backend,
            model: model.into(),
            cache: None,
            limiter: Limiter::new(4),
            seed: None,
        }
    }

    pub fn with_cache(mut self, cache: Arc<ReplayCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.limiter = Limiter::new(limit);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn cache(&self) -> Option<&ReplayCache> {
        self.cache.as_deref()
    }

    /// Sends a request, serving it from the replay cache when possible.
    pub fn request(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(request)) {
            return Ok(hit);
        }
        let response = {
            let _permit = self.limiter.acquire();
            self.backend.complete(request)?
        };
        if let Some(cache) = &self.cache {
            cache.put(request, &response)?;
        }
        Ok(response)
    }
}

fn logprobs_of(choice: &wire::Choice) -> Result<&wire::LogProbs, GatewayError> {
    let lp = choice
        .logprobs
        .as_ref()
        .ok_or_else(|| GatewayError::MalformedResponse("choice without logprobs".into()))?;
    if lp.tokens.len() != lp.token_logprobs.len() {
        return Err(GatewayError::MalformedResponse(
            "tokens and token_logprobs differ in length".into(),
        ));
    }
    Ok(lp)
}

impl LanguageModel for Gateway {
    fn sample(
        &self,
        prompt: &str,
        params: &SampleParams,
    ) -> Result<Vec<SampledCompletion>, GatewayError> {
        params.validate()?;
        let request = CompletionRequest {
            model: self.model.clone(),
            prompt: prompt.to_string(),
            max_tokens: params.max_tokens,
            stop: params.stop.clone(),
            top_p: Some(params.top_p),
            best_of: Some(params.best_of),
            n: Some(params.n),
            logprobs: Some(0),
            echo: false,
            seed: self.seed,
        };
        let response = self.request(&request)?;
        let stops: Vec<&str> = params.stop.iter().map(String::as_str).collect();
        let mut out = Vec::with_capacity(response.choices.len());
        for choice in response.choices.iter().take(params.n as usize) {
            let lp = logprobs_of(choice)?;
            let kept = strip_at_stops(&choice.text, &stops);
            let cut = kept.len();
            let mut start = 0;
            let mut token_logprobs = Vec::new();
            for (tok, logprob) in lp.tokens.iter().zip(&lp.token_logprobs) {
                if start >= cut {
                    break;
                }
                let logprob = logprob.ok_or_else(|| {
                    GatewayError::MalformedResponse("missing logprob for sampled token".into())
                })?;
                token_logprobs.push(logprob);
                start += tok.len();
            }
            out.push(SampledCompletion::new(kept, token_logprobs));
        }
        Ok(out)
    }

    fn score_continuation(
        &self,
        prefix: &str,
        continuation: &str,
    ) -> Result<Vec<f64>, GatewayError> {
        if continuation.is_empty() {
            return Err(GatewayError::EmptyContinuation);
        }
        let request = CompletionRequest {
            model: self.model.clone(),
            prompt: format!("{prefix}{continuation}"),
            max_tokens: 0,
            stop: Vec::new(),
            top_p: None,
            best_of: None,
            n: Some(1),
            logprobs: Some(0),
            echo: true,
            seed: self.seed,
        };
        let response = self.request(&request)?;
        let choice = response
            .choices
            .first()
            .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
        let lp = logprobs_of(choice)?;
        if lp.text_offset.len() != lp.tokens.len() {
            return Err(GatewayError::MalformedResponse("text_offset missing".into()));
        }
        // A token belongs to the continuation when it ends past the prefix.
        let prefix_chars = prefix.chars().count();
        let mut out = Vec::new();
        for ((tok, logprob), &offset) in lp.tokens.iter().zip(&lp.token_logprobs).zip(&lp.text_offset) {
            if offset + tok.chars().count() > prefix_chars {
                out.push(logprob.ok_or_else(|| {
                    GatewayError::MalformedResponse("missing logprob inside continuation".into())
                })?);
            }
        }
        if out.is_empty() {
            return Err(GatewayError::MalformedResponse("no continuation tokens".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let few = SampleParams::few_shot();
        assert_eq!((few.best_of, few.n, few.max_tokens), (10, 5, 120));
        assert_eq!(few.top_p, 0.9);
        let zero = SampleParams::zero_shot();
        assert_eq!((zero.best_of, zero.top_p), (32, 0.7));
        assert_eq!(zero.stop, vec!["\n\n", "#", "print("]);
        let bad = SampleParams { n: 11, ..few };
        assert!(bad.validate().is_err());
    }
}
