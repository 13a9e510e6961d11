use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use icl_dst::corpus::sample_few_shot;
use icl_dst::eval::config::{ExperimentConfig, Mode, RetrievalKind};
use icl_dst::eval::report::{load_predictions, write_report};
use icl_dst::eval::runner::{build_embedder, build_index, dry_run, run_experiment, Resources};
use icl_dst::eval::{jga, leave_one_out_jga};
use icl_dst::normalize::{CanonicalMap, NormalizerConfig};
use icl_dst::retrieval::{
    context_texts, diversity_distinct_slots, diversity_entropy, encode_context_text,
    export_contrastive_pairs, pairs::write_jsonl, select_diverse_mmr, EmbeddingVector, SelectionConfig,
};
use icl_dst::corpus::load_dialogues;
use icl_dst::state::TurnContext;

#[derive(Parser)]
#[command(name = "icl-dst", version, about = "In-context dialogue state tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, predictions and score dumps.
    Run(RunArgs),
    /// Score an existing predictions file against gold dialogues.
    Eval(EvalArgs),
    /// Write the normalizer's link and ambiguity report.
    AuditNormalizer(ConfigArgs),
    /// Export contrastive training pairs and context texts for the retriever trainer.
    ExportPairs(ExportArgs),
    /// Report mean example-set diversity for several alpha values.
    DiversityReport(DiversityArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output file or directory; defaults under the config's output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    fraction: Option<f64>,
    /// Repeat for several runs.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long, value_enum)]
    retrieval: Option<RetrievalKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    /// Load inputs and print the first prompt without querying the model.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Gold dialogues (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Also report JGA restricted to this domain.
    #[arg(long)]
    domain: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DiversityArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "alpha", default_values_t = vec![0.0, 0.2, 0.3, 0.5])]
    alphas: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &RunArgs) {
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(f) = a.fraction {
        cfg.fraction = f;
    }
    if !a.seeds.is_empty() {
        cfg.seeds = a.seeds.clone();
    }
    if let Some(r) = a.retrieval {
        cfg.retrieval = r;
    }
    if a.alpha.is_some() {
        cfg.alpha = a.alpha;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(b) = a.beta {
        cfg.beta = b;
    }
    if let Some(o) = &a.output {
        cfg.paths.output = o.clone();
    }
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    apply_overrides(&mut cfg, &a);
    cfg.validate()?;
    if a.dry_run {
        let s = dry_run(&cfg)?;
        println!(
            "pool examples: {}\ntest dialogues: {}\ntest turns: {}",
            s.pool_size, s.test_dialogues, s.test_turns
        );
        if let Some(p) = s.first_prompt {
            println!("--- first prompt ---\n{p}");
        }
        return Ok(());
    }
    let result = run_experiment(&cfg)?;
    let metrics = write_report(&cfg.paths.output, &result)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let preds = load_predictions(&a.predictions)?;
    let gold = load_dialogues(&a.data)?;
    let mut seeds: Vec<u64> = preds.iter().map(|p| p.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut rows = Vec::new();
    for seed in seeds {
        let subset: Vec<_> = preds.iter().filter(|p| p.seed == seed).cloned().collect();
        let mut row = json!({ "seed": seed, "jga": jga(&subset, &gold)? });
        if let Some(d) = &a.domain {
            row["domain_jga"] = json!(leave_one_out_jga(&subset, &gold, d)?);
        }
        rows.push(row);
    }
    println!("{}", serde_json::to_string_pretty(&rows)?);
    Ok(())
}

fn audit(a: ConfigArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let res = Resources::load(&cfg)?;
    let counts = if cfg.mode == Mode::Zero {
        None
    } else {
        let pool = sample_few_shot(&res.train, cfg.effective_fraction(), cfg.seeds[0], &res.schema)?;
        Some(pool.gold_value_counts())
    };
    let map = CanonicalMap::build(
        &res.schema,
        &res.database,
        &res.ontology,
        counts.as_ref(),
        NormalizerConfig::default(),
    );
    let out = a.out.unwrap_or_else(|| cfg.paths.output.join("normalizer_audit.json"));
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, serde_json::to_string_pretty(map.audit())? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    println!(
        "{} links, {} ambiguities -> {}",
        map.audit().links.len(),
        map.audit().ambiguities.len(),
        out.display()
    );
    if !map.audit().passed() {
        bail!("uniqueness audit failed");
    }
    Ok(())
}

fn export_pairs(a: ExportArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let res = Resources::load(&cfg)?;
    let seed = a.seed.unwrap_or(cfg.seeds[0]);
    let pool = sample_few_shot(&res.train, cfg.effective_fraction(), seed, &res.schema)?;
    let embedder = build_embedder(&cfg)?;
    let index = build_index(&res, &pool, embedder.as_ref())?;
    let pairs = export_contrastive_pairs(&pool, &index)?;
    fs::create_dir_all(&a.out_dir)?;
    write_jsonl(&a.out_dir.join("pairs.jsonl"), &pairs)?;
    write_jsonl(&a.out_dir.join("texts.jsonl"), &context_texts(&pool))?;
    println!("{} pairs over {} examples -> {}", pairs.len(), pool.len(), a.out_dir.display());
    Ok(())
}

fn diversity_report(a: DiversityArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let res = Resources::load(&cfg)?;
    let pool = sample_few_shot(&res.train, cfg.effective_fraction(), cfg.seeds[0], &res.schema)?;
    let embedder = build_embedder(&cfg)?;
    let index = build_index(&res, &pool, embedder.as_ref())?;
    let base = cfg.selection();

    // queries use gold previous states so every alpha sees identical inputs
    let mut queries = Vec::new();
    for d in &res.test {
        let mut prev = Default::default();
        for t in &d.turns {
            let ctx = TurnContext {
                prev_state: prev,
                agent_utt: t.agent.clone(),
                user_utt: t.user.clone(),
            };
            queries.push(encode_context_text(&ctx));
            prev = t.gold_state.clone();
        }
    }
    let vectors = embedder.embed(&queries)?;

    let mut rows = Vec::new();
    for &alpha in &a.alphas {
        let sel = SelectionConfig::new(base.k.min(pool.len()).max(1), alpha, base.window.max(base.k))?;
        let (mut distinct, mut entropy) = (0.0, 0.0);
        for v in &vectors {
            let set = select_diverse_mmr(&index, &EmbeddingVector::new(v.clone())?, &sel);
            let deltas: Vec<_> = set.ids().iter().filter_map(|id| pool.get(id)).map(|e| &e.delta).collect();
            distinct += diversity_distinct_slots(deltas.iter().copied()) as f64;
            entropy += diversity_entropy(deltas.iter().copied());
        }
        let n = vectors.len().max(1) as f64;
        rows.push(json!({
            "alpha": alpha,
            "mean_distinct_slots": distinct / n,
            "mean_entropy_bits": entropy / n,
        }));
    }
    let text = serde_json::to_string_pretty(&rows)? + "\n";
    match a.out {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::AuditNormalizer(a) => audit(a),
        Command::ExportPairs(a) => export_pairs(a),
        Command::DiversityReport(a) => diversity_report(a),
    }
}
