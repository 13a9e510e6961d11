mod common;

use std::fs;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{fixture, schema};
use icl_dst::corpus::{derive_turn_examples, load_dialogues};
use icl_dst::eval::config::{ExperimentConfig, LmKind, Mode, RetrievalKind};
use icl_dst::eval::oracle::{oracle_mock, OracleVariant};
use icl_dst::eval::pipeline::CheckpointStore;
use icl_dst::eval::report::compute_metrics;
use icl_dst::eval::runner::{run_with_resources, Resources};
use icl_dst::eval::EvalError;
use icl_dst::lm::{CompletionBackend, CompletionRequest, CompletionResponse, GatewayError};
use icl_dst::prompt::build_prompt_bundle;
use icl_dst::state::TurnContext;

fn config(out: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(&fixture("experiment.json")).unwrap();
    cfg.paths.output = out.to_path_buf();
    cfg
}

/// Delegates to an inner backend until its budget of calls runs out.
struct Budgeted<B> {
    inner: B,
    left: AtomicUsize,
}

impl<B: CompletionBackend> CompletionBackend for Budgeted<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, GatewayError> {
        let ok = self
            .left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if ok {
            self.inner.complete(request)
        } else {
            Err(GatewayError::GatewayUnavailable("budget exhausted".into()))
        }
    }
}

#[test]
fn interrupted_run_resumes_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.seeds = vec![0];
    cfg.parallelism = 1;
    let res = Resources::load(&cfg).unwrap();
    let clean = compute_metrics(&run_with_resources(&cfg, &res, None).unwrap()).unwrap();

    cfg.paths.checkpoints = Some(dir.path().join("ckpt"));
    let mock = oracle_mock(&res.test, &res.schema, OracleVariant::Gold, cfg.lm.mock_seed);
    // a sample plus at most a few prior requests per turn; fail part-way through
    let flaky = Arc::new(Budgeted { inner: mock, left: AtomicUsize::new(9) });
    let err = run_with_resources(&cfg, &res, Some(flaky)).err().expect("budget should run out");
    assert!(matches!(err, EvalError::Pipeline(_)), "{err}");

    let store = CheckpointStore::new(dir.path().join("ckpt")).unwrap();
    let saved: Vec<_> = res
        .test
        .iter()
        .filter_map(|d| store.load(0, &d.id).unwrap())
        .collect();
    assert!(!saved.is_empty());
    assert!(saved.iter().any(|c| !c.complete), "the failing dialogue keeps a partial checkpoint");

    let resumed = compute_metrics(&run_with_resources(&cfg, &res, None).unwrap()).unwrap();
    assert_eq!(resumed, clean);
    assert!(res.test.iter().all(|d| store.load(0, &d.id).unwrap().unwrap().complete));
}

#[test]
fn zero_shot_and_random_modes_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.seeds = vec![0];
    cfg.mode = Mode::Zero;
    let res = Resources::load(&cfg).unwrap();
    let run = run_with_resources(&cfg, &res, None).unwrap();
    assert!(run.seeds[0].output.predictions.iter().all(|p| p.selected.is_empty()));
    let m = compute_metrics(&run).unwrap();
    assert_eq!(m.jga, 1.0);
    assert!(m.diversity.is_none());

    cfg.mode = Mode::Few;
    cfg.retrieval = RetrievalKind::Random;
    cfg.holdout_domain = Some("taxi".into());
    let m = compute_metrics(&run_with_resources(&cfg, &res, None).unwrap()).unwrap();
    assert!(m.diversity.is_none());
    assert_eq!(m.holdout_jga, Some(1.0));
    assert!(m.per_domain_jga.contains_key("hotel"));
}

#[test]
fn gold_run_selects_k_examples_with_diversity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let res = Resources::load(&cfg).unwrap();
    let run = run_with_resources(&cfg, &res, None).unwrap();
    for s in &run.seeds {
        assert!(s.output.predictions.iter().all(|p| p.selected.len() == cfg.k.min(s.pool.len())));
        assert_eq!(s.output.scores.len(), s.output.predictions.len());
    }
    let m = compute_metrics(&run).unwrap();
    let div = m.diversity.expect("diverse retrieval reports diversity");
    assert!(div.mean_distinct_slots >= 1.0 && div.mean_distinct_slots <= cfg.k as f64);
    assert_eq!(m.turns, 17);
}

#[test]
fn golden_prompt() {
    let schema = schema();
    let train = load_dialogues(&fixture("train.jsonl")).unwrap();
    let test = load_dialogues(&fixture("test.jsonl")).unwrap();
    let pool: Vec<_> = train.iter().take(2).flat_map(|d| derive_turn_examples(d, &schema)).collect();
    let examples: Vec<_> = pool.iter().take(3).collect();
    let d = &test[0];
    let ctx = TurnContext {
        prev_state: d.turns[0].gold_state.clone(),
        agent_utt: d.turns[1].agent.clone(),
        user_utt: d.turns[1].user.clone(),
    };
    let bundle = build_prompt_bundle(&schema, &examples, &ctx);
    for (name, text) in [
        ("golden_prompt.txt", &bundle.main_prompt),
        ("golden_inverted.txt", &bundle.inverted_prefix),
    ] {
        let path = fixture(name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            fs::write(&path, text).unwrap();
        }
        let want = fs::read_to_string(&path).unwrap();
        assert_eq!(text, &want, "{name} drifted; rerun with UPDATE_GOLDEN=1 if intended");
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_icl-dst")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "icl-dst {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn cli_verbs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("experiment.json");
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    cli(&["run", "--config", cfg, "--seed", "0", "--output", out_s]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["jga"], 1.0);
    assert!(fs::read_to_string(out.join("scores.jsonl")).unwrap().lines().count() == 17);

    let preds = out.join("predictions.jsonl");
    let test = fixture("test.jsonl");
    let eval = cli(&[
        "eval", "--predictions", preds.to_str().unwrap(), "--data", test.to_str().unwrap(), "--domain", "hotel",
    ]);
    let rows: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(rows[0]["jga"], 1.0);
    assert_eq!(rows[0]["domain_jga"], 1.0);

    let dry = cli(&["run", "--config", cfg, "--dry-run", "--output", out_s]);
    assert!(String::from_utf8_lossy(&dry.stdout).contains("test turns: 17"));

    let audit = dir.path().join("audit.json");
    cli(&["audit-normalizer", "--config", cfg, "--out", audit.to_str().unwrap()]);
    assert!(audit.exists());

    let pairs = dir.path().join("pairs");
    cli(&["export-pairs", "--config", cfg, "--out-dir", pairs.to_str().unwrap()]);
    let first: serde_json::Value = serde_json::from_str(
        fs::read_to_string(pairs.join("pairs.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert!(first["label"] == "pos" || first["label"] == "neg");
    assert!(fs::read_to_string(pairs.join("texts.jsonl")).unwrap().lines().count() > 0);

    let report = cli(&["diversity-report", "--config", cfg]);
    let rows: serde_json::Value = serde_json::from_slice(&report.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
}

#[test]
fn misspelled_mock_needs_the_normalizer() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.seeds = vec![0];
    cfg.lm.kind = LmKind::MockMisspelled;
    let res = Resources::load(&cfg).unwrap();
    let run = run_with_resources(&cfg, &res, None).unwrap();
    // raw chosen completions contain typos that never reach the predicted state
    let typo = run.seeds[0].output.scores.iter().any(|s| s.chosen.contains("gust house"));
    assert!(typo, "misspelled mock should emit at least one typo");
    assert_eq!(compute_metrics(&run).unwrap().jga, 1.0);
}
