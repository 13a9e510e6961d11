//! Candidate construction and PMI^beta rescoring.
//!
//! A candidate's score is `cond_logprob - beta * prior_logprob`, where the
//! prior is the likelihood of its canonical update line after the inverted
//! prompt, floored per token and per sequence.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::lm::{GatewayError, LanguageModel, SampledCompletion};
use crate::parser::{parse_completion, ParseOutcome};
use crate::prompt::canonicalize_completion;
use crate::schema::CanonicalSchema;
use crate::state::StateChange;

/// Candidates kept per turn.
pub const MAX_CANDIDATES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    /// Per-token probability floor.
    pub token_floor: f64,
    /// Whole-sequence probability floor.
    pub sequence_floor: f64,
    pub beta: f64,
}

impl ClipConfig {
    pub fn few_shot() -> Self {
        Self {
            token_floor: 5e-7,
            sequence_floor: 1e-7,
            beta: 0.4,
        }
    }

    pub fn zero_shot() -> Self {
        Self {
            token_floor: 5e-4,
            sequence_floor: 1e-5,
            beta: 0.4,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let in_unit = |p: f64| p > 0.0 && p < 1.0;
        if !in_unit(self.token_floor) || !in_unit(self.sequence_floor) {
            return Err("floors must lie in (0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(format!("beta {} not in [0, 1]", self.beta));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub raw_text: String,
    pub parsed: ParseOutcome,
    pub canonical_text: String,
    /// Best total log-probability among the samples sharing this canonical form.
    pub cond_logprob: f64,
    /// Set when every sample behind this candidate failed to parse.
    pub demerit: bool,
}

impl Candidate {
    /// The delta this candidate stands for; rejected completions mean no change.
    pub fn delta(&self) -> StateChange {
        self.parsed.delta().cloned().unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCompletion {
    pub candidate: Candidate,
    pub prior_logprob: f64,
    pub pmi_score: f64,
}

/// Deduplicates samples by canonical update line and keeps the
/// [`MAX_CANDIDATES`] best by conditional log-probability (ties by
/// ascending canonical text). Unparseable samples count as `pass`.
pub fn build_candidates(samples: &[SampledCompletion], schema: &CanonicalSchema) -> Vec<Candidate> {
    let mut groups: BTreeMap<String, Candidate> = BTreeMap::new();
    for s in samples {
        let parsed = parse_completion(&s.text, schema);
        let (canonical, rejected) = match &parsed {
            ParseOutcome::Parsed(d) => (canonicalize_completion(d), false),
            ParseOutcome::Rejected { .. } => ("pass".to_string(), true),
        };
        let fresh = Candidate {
            raw_text: s.text.clone(),
            parsed,
            canonical_text: canonical.clone(),
            cond_logprob: s.total_logprob,
            demerit: rejected,
        };
        match groups.get_mut(&canonical) {
            None => {
                groups.insert(canonical, fresh);
            }
            Some(c) => {
                // a parsed representative beats a rejected one
                let replace = (c.demerit && !rejected)
                    || (c.demerit == rejected && fresh.cond_logprob > c.cond_logprob);
                let best = c.cond_logprob.max(fresh.cond_logprob);
                let demerit = c.demerit && rejected;
                if replace {
                    *c = fresh;
                }
                c.cond_logprob = best;
                c.demerit = demerit;
            }
        }
    }
    let mut out: Vec<Candidate> = groups.into_values().collect();
    out.sort_by(|a, b| {
        b.cond_logprob
            .total_cmp(&a.cond_logprob)
            .then_with(|| a.canonical_text.cmp(&b.canonical_text))
    });
    out.truncate(MAX_CANDIDATES);
    out
}

/// Sum of per-token log-probabilities with each token floored at
/// `token_floor`, then the total floored at `sequence_floor`.
pub fn floored_sequence_logprob(token_logprobs: &[f64], clip: &ClipConfig) -> f64 {
    let token_min = clip.token_floor.ln();
    let total: f64 = token_logprobs.iter().map(|lp| lp.max(token_min)).sum();
    total.max(clip.sequence_floor.ln())
}

/// Prior log-probability of the candidate's canonical text after the inverted prompt.
pub fn prior_logprob(
    candidate: &Candidate,
    inverted_prefix: &str,
    clip: &ClipConfig,
    lm: &dyn LanguageModel,
) -> Result<f64, GatewayError> {
    let tokens = lm.score_continuation(inverted_prefix, &candidate.canonical_text)?;
    Ok(floored_sequence_logprob(&tokens, clip))
}

pub fn pmi_score(cond_logprob: f64, prior_logprob: f64, beta: f64) -> f64 {
    cond_logprob - beta * prior_logprob
}

/// Scores every candidate's prior, one concurrent request per candidate.
pub fn score_candidates(
    candidates: Vec<Candidate>,
    inverted_prefix: &str,
    clip: &ClipConfig,
    lm: &dyn LanguageModel,
) -> Result<Vec<ScoredCompletion>, GatewayError> {
    let priors: Vec<Result<f64, GatewayError>> = thread::scope(|scope| {
        let handles: Vec<_> = candidates
            .iter()
            .map(|c| scope.spawn(move || prior_logprob(c, inverted_prefix, clip, lm)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prior scoring thread panicked"))
            .collect()
    });
    candidates
        .into_iter()
        .zip(priors)
        .map(|(candidate, prior)| {
            let prior = prior?;
            Ok(ScoredCompletion {
                pmi_score: pmi_score(candidate.cond_logprob, prior, clip.beta),
                prior_logprob: prior,
                candidate,
            })
        })
        .collect()
}

/// Recomputes scores with `beta` and orders best first: higher score, then
/// non-demerited, then higher conditional log-probability, then ascending
/// canonical text.
pub fn rank(scored: &mut [ScoredCompletion], beta: f64) {
    for s in scored.iter_mut() {
        s.pmi_score = pmi_score(s.candidate.cond_logprob, s.prior_logprob, beta);
    }
    scored.sort_by(compare);
}

fn compare(a: &ScoredCompletion, b: &ScoredCompletion) -> Ordering {
    b.pmi_score
        .total_cmp(&a.pmi_score)
        .then_with(|| a.candidate.demerit.cmp(&b.candidate.demerit))
        .then_with(|| b.candidate.cond_logprob.total_cmp(&a.candidate.cond_logprob))
        .then_with(|| a.candidate.canonical_text.cmp(&b.candidate.canonical_text))
}

/// The argmax candidate under PMI^beta, or `None` for an empty slice.
pub fn pmi_beta_rank(scored: &[ScoredCompletion], beta: f64) -> Option<&ScoredCompletion> {
    let rescored: Vec<(usize, ScoredCompletion)> = scored
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.pmi_score = pmi_score(s.candidate.cond_logprob, s.prior_logprob, beta);
            s
        })
        .enumerate()
        .collect();
    rescored
        .iter()
        .min_by(|a, b| compare(&a.1, &b.1))
        .map(|(i, _)| &scored[*i])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateDump {
    pub canonical: String,
    pub cond_logprob: f64,
    pub prior_logprob: f64,
    pub score: f64,
}

/// One line of the per-turn score dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnScoreDump {
    pub turn_id: String,
    pub candidates: Vec<CandidateDump>,
    pub chosen: String,
}

impl TurnScoreDump {
    pub fn new(turn_id: impl Into<String>, scored: &[ScoredCompletion], chosen: &str) -> Self {
        Self {
            turn_id: turn_id.into(),
            candidates: scored
                .iter()
                .map(|s| CandidateDump {
                    canonical: s.candidate.canonical_text.clone(),
                    cond_logprob: s.candidate.cond_logprob,
                    prior_logprob: s.prior_logprob,
                    score: s.pmi_score,
                })
                .collect(),
            chosen: chosen.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CanonicalSchema {
        CanonicalSchema::from_json(
            r#"{"domains":[{"name":"hotel","slots":[{"name":"area","kind":"text"},{"name":"stars","kind":"text"}]}]}"#,
        )
        .unwrap()
    }

    fn sample(text: &str, lp: f64) -> SampledCompletion {
        SampledCompletion::new(text, vec![lp])
    }

    fn scored(canonical: &str, cond: f64, prior: f64) -> ScoredCompletion {
        ScoredCompletion {
            candidate: Candidate {
                raw_text: canonical.into(),
                parsed: ParseOutcome::Parsed(StateChange::new()),
                canonical_text: canonical.into(),
                cond_logprob: cond,
                demerit: false,
            },
            prior_logprob: prior,
            pmi_score: 0.0,
        }
    }

    #[test]
    fn dedup_by_canonical_form() {
        let samples = vec![
            sample("state.hotel = update_hotel(area='east')", -1.0),
            sample("state.hotel=update_hotel( area = \"east\" )", -0.5),
            sample("pass", -2.0),
            sample("state.hotel = update_hotel(stars='4')", -3.0),
            sample("pass", -2.5),
            sample("state.hotel = update_hotel(area='east')", -1.2),
            sample("pass", -2.1),
            sample("pass", -2.2),
            sample("state.hotel = update_hotel(stars='4')", -3.5),
            sample("pass", -2.3),
        ];
        let c = build_candidates(&samples, &schema());
        assert_eq!(c.len(), 3);
        assert_eq!(c[0].canonical_text, r#"state.hotel = update_hotel(area="east")"#);
        assert_eq!(c[0].cond_logprob, -0.5);
        assert_eq!(c[1].canonical_text, "pass");
    }

    #[test]
    fn identical_samples_collapse() {
        let samples = vec![sample("pass", -1.0); 5];
        assert_eq!(build_candidates(&samples, &schema()).len(), 1);
    }

    #[test]
    fn top_five_of_seven_with_tie_break() {
        let texts = ["a", "b", "c", "d", "e", "f", "g"];
        let lps = [-1.0, -3.0, -2.0, -2.0, -5.0, -0.5, -4.0];
        let samples: Vec<_> = texts
            .iter()
            .zip(lps)
            .map(|(t, lp)| sample(&format!("state.hotel = update_hotel(area='{t}')"), lp))
            .collect();
        let c = build_candidates(&samples, &schema());
        let kept: Vec<f64> = c.iter().map(|c| c.cond_logprob).collect();
        assert_eq!(kept, vec![-0.5, -1.0, -2.0, -2.0, -3.0]);
        assert!(c[2].canonical_text.contains("\"c\""));
        assert!(c[3].canonical_text.contains("\"d\""));
    }

    #[test]
    fn rejected_samples_become_demerited_pass() {
        let c = build_candidates(&[sample("state.spa = nope(", -0.1)], &schema());
        assert_eq!(c[0].canonical_text, "pass");
        assert!(c[0].demerit);
        assert!(c[0].delta().is_empty());
        let c = build_candidates(&[sample("state.spa = nope(", -0.1), sample("pass", -3.0)], &schema());
        assert!(!c[0].demerit);
        assert_eq!(c[0].cond_logprob, -0.1);
    }

    #[test]
    fn floors() {
        let clip = ClipConfig::few_shot();
        let plain = [0.5f64.ln(), 0.25f64.ln()];
        assert!((floored_sequence_logprob(&plain, &clip) - 0.125f64.ln()).abs() < 1e-12);
        let tiny = [1e-12f64.ln()];
        let c = ClipConfig { sequence_floor: 1e-9, ..clip };
        assert!((floored_sequence_logprob(&tiny, &c) - 5e-7f64.ln()).abs() < 1e-12);
        let seq = [1e-3f64.ln(), 1e-3f64.ln(), 1e-3f64.ln()];
        assert!((floored_sequence_logprob(&seq, &clip) - 1e-7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beta_one_arithmetic() {
        let s = pmi_score(0.1f64.ln(), 0.01f64.ln(), 1.0);
        assert!((s - 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn prior_can_overturn_likelihood() {
        let a = scored("a", 0.1f64.ln(), 0.01f64.ln());
        let b = scored("b", 0.12f64.ln(), 0.5f64.ln());
        let both = [a, b];
        assert_eq!(pmi_beta_rank(&both, 0.4).unwrap().candidate.canonical_text, "a");
        assert_eq!(pmi_beta_rank(&both, 0.0).unwrap().candidate.canonical_text, "b");
    }

    #[test]
    fn demerit_loses_ties() {
        let mut a = scored("a", -1.0, -1.0);
        a.candidate.demerit = true;
        let b = scored("b", -1.0, -1.0);
        assert_eq!(pmi_beta_rank(&[a, b], 0.4).unwrap().candidate.canonical_text, "b");
    }

    #[test]
    fn clip_validation() {
        assert!(ClipConfig::few_shot().validate().is_ok());
        assert!(ClipConfig { beta: 1.5, ..ClipConfig::few_shot() }.validate().is_err());
        assert!(ClipConfig { token_floor: 0.0, ..ClipConfig::few_shot() }.validate().is_err());
    }
}
