//! Deterministic in-process completions backend.
//!
//! Sampling is table driven: the rule whose `prompt_suffix` is the longest
//! suffix of the prompt supplies the completions, otherwise the backend
//! answers `pass`. Scoring (echo requests) tokenizes per character; each
//! character's log-probability is a hash of the seed, the preceding
//! characters and the character itself, so scores obey the chain rule.
//! A score rule whose continuation ends the prompt overrides the tail with
//! configured tokens.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::wire::{Choice, CompletionRequest, CompletionResponse, LogProbs};
use super::{CompletionBackend, GatewayError};

/// Context characters the per-character model looks back over.
const CONTEXT_CHARS: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockToken {
    pub text: String,
    pub logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockCompletion {
    pub text: String,
    /// Explicit tokens, concatenating to `text`; hash-model characters otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<MockToken>>,
}

impl MockCompletion {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            tokens: None,
        }
    }

    /// A completion returned as a single token with the given log-probability.
    pub fn with_logprob(text: impl Into<String>, logprob: f64) -> Self {
        let text = text.into();
        Self {
            tokens: Some(vec![MockToken {
                text: text.clone(),
                logprob,
            }]),
            text,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRule {
    pub prompt_suffix: String,
    pub completions: Vec<MockCompletion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRule {
    pub continuation: String,
    pub tokens: Vec<MockToken>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MockBackend {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub samples: Vec<SampleRule>,
    #[serde(default)]
    pub scores: Vec<ScoreRule>,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidConfig(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn with_sample(mut self, prompt_suffix: impl Into<String>, completions: Vec<MockCompletion>) -> Self {
        self.samples.push(SampleRule {
            prompt_suffix: prompt_suffix.into(),
            completions,
        });
        self
    }

    pub fn with_score(mut self, continuation: impl Into<String>, tokens: Vec<MockToken>) -> Self {
        self.scores.push(ScoreRule {
            continuation: continuation.into(),
            tokens,
        });
        self
    }

    /// Log-probability of `ch` following `context` under the hash model.
    pub fn char_logprob(&self, context: &str, ch: char) -> f64 {
        let tail: String = {
            let chars: Vec<char> = context.chars().collect();
            chars[chars.len().saturating_sub(CONTEXT_CHARS)..].iter().collect()
        };
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(tail.as_bytes());
        h.update([0xff]);
        let mut buf = [0u8; 4];
        h.update(ch.encode_utf8(&mut buf).as_bytes());
        let d = h.finalize();
        let u = u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) as f64 / u64::MAX as f64;
        (0.05 + 0.9 * u).ln()
    }

    fn char_tokens(&self, context: &str, text: &str) -> Vec<MockToken> {
        let mut ctx = context.to_string();
        text.chars()
            .map(|c| {
                let lp = self.char_logprob(&ctx, c);
                ctx.push(c);
                MockToken {
                    text: c.to_string(),
                    logprob: lp,
                }
            })
            .collect()
    }

    fn completion_tokens(&self, prompt: &str, c: &MockCompletion) -> Vec<MockToken> {
        match &c.tokens {
            Some(t) => t.clone(),
            None => self.char_tokens(prompt, &c.text),
        }
    }

    fn sample_response(&self, req: &CompletionRequest) -> CompletionResponse {
        let rule = self
            .samples
            .iter()
            .filter(|r| req.prompt.ends_with(&r.prompt_suffix))
            .max_by_key(|r| r.prompt_suffix.len());
        let fallback = [MockCompletion::new("pass")];
        let completions: &[MockCompletion] = match rule {
            Some(r) if !r.completions.is_empty() => &r.completions,
            _ => &fallback,
        };
        let n = req.n.unwrap_or(1).max(1) as usize;
        let base = req.prompt.chars().count();
        let choices = completions
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, c)| {
                let tokens = self.completion_tokens(&req.prompt, c);
                let mut offset = base;
                let mut text_offset = Vec::with_capacity(tokens.len());
                for t in &tokens {
                    text_offset.push(offset);
                    offset += t.text.chars().count();
                }
                Choice {
                    text: c.text.clone(),
                    index: i as u32,
                    logprobs: Some(LogProbs {
                        token_logprobs: tokens.iter().map(|t| Some(t.logprob)).collect(),
                        tokens: tokens.into_iter().map(|t| t.text).collect(),
                        text_offset,
                    }),
                    finish_reason: Some("stop".into()),
                }
            })
            .collect();
        CompletionResponse { choices }
    }

    fn echo_response(&self, req: &CompletionRequest) -> CompletionResponse {
        let rule = self
            .scores
            .iter()
            .filter(|r| !r.continuation.is_empty() && req.prompt.ends_with(&r.continuation))
            .max_by_key(|r| r.continuation.len());
        let (head, tail_tokens) = match rule {
            Some(r) => {
                let head = &req.prompt[..req.prompt.len() - r.continuation.len()];
                (head, r.tokens.clone())
            }
            None => (req.prompt.as_str(), Vec::new()),
        };
        let mut tokens = self.char_tokens("", head);
        tokens.extend(tail_tokens);
        let mut text_offset = Vec::with_capacity(tokens.len());
        let mut offset = 0;
        for t in &tokens {
            text_offset.push(offset);
            offset += t.text.chars().count();
        }
        let token_logprobs = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| if i == 0 { None } else { Some(t.logprob) })
            .collect();
        CompletionResponse {
            choices: vec![Choice {
                text: req.prompt.clone(),
                index: 0,
                logprobs: Some(LogProbs {
                    tokens: tokens.into_iter().map(|t| t.text).collect(),
                    token_logprobs,
                    text_offset,
                }),
                finish_reason: Some("length".into()),
            }],
        }
    }
}

impl CompletionBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        if request.echo {
            Ok(self.echo_response(request))
        } else {
            Ok(self.sample_response(request))
        }
    }
}
