//! Writes a small self-contained dataset plus a ready-to-run config file.
//!
//! Usage: cargo run --example make_demo_data [DIR]

use std::path::PathBuf;

use sqlnet::eval::reshuffle_split;
use sqlnet::ingest::corpus_vocabulary;
use sqlnet::synth::{
    roster_example, roster_table, synth_corpus, write_examples, write_random_embeddings,
    write_tables, SynthOptions,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "demo-data".to_string()),
    );
    std::fs::create_dir_all(&dir)?;

    let opts = SynthOptions {
        tables: 10,
        examples: 160,
        seed: 7,
        ..SynthOptions::default()
    };
    let (mut examples, mut tables) = synth_corpus(&opts);
    tables.insert("roster".to_string(), roster_table());
    examples.push(roster_example());

    // anchored split keeps every dev table represented in train
    let (train, dev, _) = reshuffle_split(&examples, [0.8, 0.2, 0.0], opts.seed)?;

    write_examples(&dir.join("train.jsonl"), &train)?;
    write_examples(&dir.join("dev.jsonl"), &dev)?;
    write_tables(&dir.join("tables.jsonl"), &tables)?;

    let vocab = corpus_vocabulary(examples.iter(), tables.values().map(|t| &t.schema));
    write_random_embeddings(&dir.join("embeddings.txt"), &vocab, 24, opts.seed)?;

    let config = format!(
        "train_examples={d}/train.jsonl\n\
         dev_examples={d}/dev.jsonl\n\
         tables={d}/tables.jsonl\n\
         embeddings={d}/embeddings.txt\n\
         out={d}/runs\n\
         d=32\n\
         d_emb=24\n\
         epochs=40\n\
         batch=16\n\
         unfreeze_epoch=20\n\
         lr=0.005\n\
         seed=7\n\
         variant=seq2set+CA+WE\n",
        d = dir.display()
    );
    std::fs::write(dir.join("demo.cfg"), config)?;

    println!(
        "wrote {} train / {} dev examples over {} tables to {}",
        train.len(),
        dev.len(),
        tables.len(),
        dir.display()
    );
    println!("try: cargo run --release -- --config {}/demo.cfg train", dir.display());
    Ok(())
}
