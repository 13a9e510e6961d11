use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Mode, RetrievalKind};
use super::metrics::{jga, leave_one_out_jga};
use super::runner::{RunResult, SeedRun};
use super::EvalError;
use crate::corpus::TrainingPool;
use crate::pmi::TurnScoreDump;
use crate::retrieval::{diversity_distinct_slots, diversity_entropy};
use crate::state::Dialogue;

use super::TurnPrediction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversitySummary {
    /// Mean number of distinct slot combinations among selected examples.
    pub mean_distinct_slots: f64,
    /// Mean entropy (bits) of the slot-combination distribution.
    pub mean_entropy_bits: f64,
    pub turns: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub jga: f64,
    pub per_domain_jga: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_jga: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversitySummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: Mode,
    pub retrieval: RetrievalKind,
    pub turns: usize,
    /// Mean over seeds.
    pub jga: f64,
    pub per_domain_jga: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_domain: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_jga: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversitySummary>,
    pub seeds: Vec<SeedMetrics>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean diversity of the example sets chosen across all turns.
pub fn diversity_summary(preds: &[TurnPrediction], pool: &TrainingPool) -> Option<DiversitySummary> {
    let sets: Vec<Vec<_>> = preds
        .iter()
        .filter(|p| !p.selected.is_empty())
        .map(|p| {
            p.selected
                .iter()
                .filter_map(|id| pool.get(id).map(|e| &e.delta))
                .collect()
        })
        .collect();
    Some(DiversitySummary {
        mean_distinct_slots: mean(sets.iter().map(|s| diversity_distinct_slots(s.iter().copied()) as f64))?,
        mean_entropy_bits: mean(sets.iter().map(|s| diversity_entropy(s.iter().copied())))?,
        turns: sets.len(),
    })
}

fn domains_of(test: &[Dialogue]) -> BTreeSet<String> {
    test.iter().flat_map(|d| d.domains.iter().cloned()).collect()
}

fn seed_metrics(
    run: &SeedRun,
    test: &[Dialogue],
    holdout: Option<&str>,
    with_diversity: bool,
) -> Result<SeedMetrics, EvalError> {
    let preds = &run.output.predictions;
    let mut per_domain = BTreeMap::new();
    for domain in domains_of(test) {
        if let Some(v) = leave_one_out_jga(preds, test, &domain)? {
            per_domain.insert(domain, v);
        }
    }
    Ok(SeedMetrics {
        seed: run.seed,
        jga: jga(preds, test)?,
        per_domain_jga: per_domain,
        holdout_jga: match holdout {
            Some(d) => leave_one_out_jga(preds, test, d)?,
            None => None,
        },
        diversity: if with_diversity {
            diversity_summary(preds, &run.pool)
        } else {
            None
        },
    })
}

pub fn compute_metrics(run: &RunResult) -> Result<Metrics, EvalError> {
    let cfg = &run.config;
    let holdout = cfg.holdout_domain.as_deref();
    let with_diversity = cfg.retrieval != RetrievalKind::Random && cfg.mode != Mode::Zero;
    let seeds = run
        .seeds
        .iter()
        .map(|s| seed_metrics(s, &run.test, holdout, with_diversity))
        .collect::<Result<Vec<_>, _>>()?;

    let mut per_domain: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in &seeds {
        for (d, v) in &s.per_domain_jga {
            per_domain.entry(d.clone()).or_default().push(*v);
        }
    }
    let diversity = if with_diversity {
        let parts: Vec<&DiversitySummary> = seeds.iter().filter_map(|s| s.diversity.as_ref()).collect();
        mean(parts.iter().map(|d| d.mean_distinct_slots)).map(|distinct| DiversitySummary {
            mean_distinct_slots: distinct,
            mean_entropy_bits: mean(parts.iter().map(|d| d.mean_entropy_bits)).unwrap_or(0.0),
            turns: parts.iter().map(|d| d.turns).sum(),
        })
    } else {
        None
    };
    Ok(Metrics {
        mode: cfg.mode,
        retrieval: cfg.retrieval,
        turns: run.test.iter().map(|d| d.turns.len()).sum(),
        jga: mean(seeds.iter().map(|s| s.jga)).unwrap_or(0.0),
        per_domain_jga: per_domain
            .into_iter()
            .map(|(d, v)| (d, mean(v).unwrap_or(0.0)))
            .collect(),
        holdout_domain: cfg.holdout_domain.clone(),
        holdout_jga: mean(seeds.iter().filter_map(|s| s.holdout_jga)),
        diversity,
        seeds,
    })
}

#[derive(Serialize)]
struct SeededDump<'a> {
    seed: u64,
    #[serde(flatten)]
    dump: &'a TurnScoreDump,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), EvalError> {
    let f = File::create(path).map_err(|e| EvalError::io(path, e))?;
    let mut w = BufWriter::new(f);
    for row in rows {
        let line = serde_json::to_string(&row).map_err(|e| EvalError::Format(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| EvalError::io(path, e))?;
    }
    w.flush().map_err(|e| EvalError::io(path, e))
}

pub fn write_metrics(path: &Path, metrics: &Metrics) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(metrics).map_err(|e| EvalError::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| EvalError::io(path, e))
}

/// Writes `metrics.json`, `predictions.jsonl` and `scores.jsonl` into `dir`.
pub fn write_report(dir: &Path, run: &RunResult) -> Result<Metrics, EvalError> {
    fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let metrics = compute_metrics(run)?;
    write_metrics(&dir.join("metrics.json"), &metrics)?;
    write_jsonl(
        &dir.join("predictions.jsonl"),
        run.seeds.iter().flat_map(|s| s.output.predictions.iter()),
    )?;
    write_jsonl(
        &dir.join("scores.jsonl"),
        run.seeds.iter().flat_map(|s| {
            s.output
                .scores
                .iter()
                .map(move |dump| SeededDump { seed: s.seed, dump })
        }),
    )?;
    Ok(metrics)
}

pub fn load_predictions(path: &Path) -> Result<Vec<TurnPrediction>, EvalError> {
    let text = fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
