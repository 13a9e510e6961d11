//! Writes pool embeddings for a dialogue file with the hashing embedder.
//!
//! Usage: freeze_embeddings <schema.json> <train.jsonl> <out.jsonl> [dim] [seed]

use std::path::PathBuf;

use icl_dst::corpus::{load_dialogues, sample_few_shot};
use icl_dst::retrieval::{encode_context_text, write_embeddings, EmbeddingRecord, HashingEmbedder};
use icl_dst::schema::load_schema;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 3 {
        anyhow::bail!("usage: freeze_embeddings <schema.json> <train.jsonl> <out.jsonl> [dim] [seed]");
    }
    let schema = load_schema(&PathBuf::from(&args[0]))?;
    let dialogues = load_dialogues(&PathBuf::from(&args[1]))?;
    let dim = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(64);
    let seed = args.get(4).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let pool = sample_few_shot(&dialogues, 1.0, 0, &schema)?;
    let embedder = HashingEmbedder::new(dim, seed);
    let records: Vec<EmbeddingRecord> = pool
        .examples()
        .iter()
        .map(|e| EmbeddingRecord {
            id: e.id.clone(),
            vector: embedder.embed_one(&encode_context_text(&e.context)),
        })
        .collect();
    write_embeddings(&PathBuf::from(&args[2]), &records)?;
    println!("{} vectors of dimension {dim}", records.len());
    Ok(())
}
