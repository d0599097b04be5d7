//! Command line entry points: ingest, train, eval, predict, gradcheck, and
//! reshuffle. Every run resolves its config from defaults, an optional
//! key=value file, and --set overrides, then echoes it beside its artifacts.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ckpt::{self, Checkpoint};
use crate::config::RunConfig;
use crate::eval::{evaluate_split, MetricsReport};
use crate::exec::Table;
use crate::ingest::{corpus_vocabulary, load_embeddings, load_examples, load_tables, Example};
use crate::model::{train, SqlNetModel, TrainError};
use crate::nn::{argmax, grad_check, ParamStore};
use crate::sketch::{CondOp, Condition};
use crate::synth;

#[derive(Parser, Debug)]
#[command(name = "sqlnet", version, about = "Sketch-based natural language to SQL synthesizer")]
pub struct Cli {
    /// key=value config file; flags override it, the environment is ignored
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// override one config entry, e.g. --set seed=7 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// exact artifact directory; defaults to <out>/<timestamp>-seed<seed>
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate datasets and write normalized copies
    Ingest,
    /// Train a model, writing checkpoints and a loss log
    Train,
    /// Score a checkpoint on one split
    Eval {
        #[arg(long, value_enum, default_value_t = SplitName::Dev)]
        split: SplitName,
    },
    /// Write line-delimited predictions for one split
    Predict {
        #[arg(long, value_enum, default_value_t = SplitName::Dev)]
        split: SplitName,
    },
    /// Check reverse-mode gradients against finite differences
    Gradcheck,
    /// Re-partition examples so every dev/test table also occurs in train
    Reshuffle,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }

    fn path(self, config: &RunConfig) -> anyhow::Result<&Path> {
        let opt = match self {
            SplitName::Train => &config.train_examples,
            SplitName::Dev => &config.dev_examples,
            SplitName::Test => &config.test_examples,
        };
        require(opt, match self {
            SplitName::Train => "train_examples",
            SplitName::Dev => "dev_examples",
            SplitName::Test => "test_examples",
        })
    }
}

fn parse_overrides(raw: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))
        })
        .collect()
}

fn require<'a>(opt: &'a Option<PathBuf>, field: &str) -> anyhow::Result<&'a Path> {
    opt.as_deref()
        .with_context(|| format!("config field {field} is required for this command"))
}

fn create_run_dir(config: &RunConfig, explicit: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    if let Some(dir) = explicit {
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create run dir {}", dir.display()))?;
        return Ok(dir);
    }
    std::fs::create_dir_all(&config.out)
        .with_context(|| format!("cannot create output root {}", config.out.display()))?;
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .context("system clock before epoch")?
        .as_secs();
    for attempt in 0u32.. {
        let name = if attempt == 0 {
            format!("{secs}-seed{}", config.seed)
        } else {
            format!("{secs}-seed{}-{attempt}", config.seed)
        };
        let dir = config.out.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => {
                return Err(e).with_context(|| format!("cannot create run dir {}", dir.display()))
            }
        }
    }
    unreachable!("run dir attempts exhausted")
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn fresh_model(
    config: &RunConfig,
    examples: &[Example],
    tables: &BTreeMap<String, Table>,
) -> anyhow::Result<SqlNetModel> {
    let vocab = corpus_vocabulary(examples.iter(), tables.values().map(|t| &t.schema));
    let embeddings = match &config.embeddings {
        Some(path) => load_embeddings(path, &vocab, config.d_emb)?,
        None => synth::random_embeddings(&vocab, config.d_emb, config.seed),
    };
    Ok(SqlNetModel::new(config.model_config(), vocab, embeddings, config.seed)?)
}

fn load_model(config: &RunConfig) -> anyhow::Result<SqlNetModel> {
    let path = require(&config.checkpoint, "checkpoint")?;
    Ok(ckpt::load(path)?.into_model()?)
}

fn write_metrics(run_dir: &Path, name: &str, report: &MetricsReport) -> anyhow::Result<()> {
    write_text(&run_dir.join(format!("{name}.txt")), &report.text())?;
    let json = serde_json::to_string_pretty(report).context("serialize metrics")?;
    write_text(&run_dir.join(format!("{name}.json")), &(json + "\n"))
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let overrides = parse_overrides(&cli.set)?;
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let run_dir = create_run_dir(&config, cli.run_dir)?;
    write_text(&run_dir.join("config.txt"), &config.text())?;

    match cli.command {
        Command::Ingest => cmd_ingest(&config, &run_dir),
        Command::Train => cmd_train(&config, &run_dir),
        Command::Eval { split } => cmd_eval(&config, &run_dir, split),
        Command::Predict { split } => cmd_predict(&config, &run_dir, split),
        Command::Gradcheck => cmd_gradcheck(&config, &run_dir),
        Command::Reshuffle => cmd_reshuffle(&config, &run_dir),
    }
}

fn cmd_ingest(config: &RunConfig, run_dir: &Path) -> anyhow::Result<ExitCode> {
    let tables = load_tables(require(&config.tables, "tables")?)?;
    synth::write_tables(&run_dir.join("tables.cached.jsonl"), &tables)
        .context("cache tables")?;

    let mut report = String::new();
    report.push_str(&format!("tables={}\n", tables.len()));

    let splits = [
        ("train", &config.train_examples),
        ("dev", &config.dev_examples),
        ("test", &config.test_examples),
    ];
    let mut all_examples: Vec<Example> = Vec::new();
    for (name, path) in splits {
        let Some(path) = path else { continue };
        let examples = load_examples(path)?;
        let missing = examples
            .iter()
            .filter(|e| !tables.contains_key(&e.table_id))
            .count();
        let unresolved: usize = examples
            .iter()
            .map(|e| e.value_spans.iter().filter(|s| s.is_none()).count())
            .sum();
        synth::write_examples(&run_dir.join(format!("{name}.cached.jsonl")), &examples)
            .with_context(|| format!("cache {name} examples"))?;
        report.push_str(&format!("{name}_examples={}\n", examples.len()));
        report.push_str(&format!("{name}_missing_tables={missing}\n"));
        report.push_str(&format!("{name}_unresolved_values={unresolved}\n"));
        all_examples.extend(examples);
    }
    let vocab = corpus_vocabulary(all_examples.iter(), tables.values().map(|t| &t.schema));
    report.push_str(&format!("vocab_tokens={}\n", vocab.len()));

    write_text(&run_dir.join("ingest.txt"), &report)?;
    print!("{report}");
    println!("artifacts: {}", run_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(config: &RunConfig, run_dir: &Path) -> anyhow::Result<ExitCode> {
    let examples = load_examples(require(&config.train_examples, "train_examples")?)?;
    let tables = load_tables(require(&config.tables, "tables")?)?;
    let mut model = match &config.checkpoint {
        Some(path) => ckpt::load(path)?.into_model()?,
        None => fresh_model(config, &examples, &tables)?,
    };

    let ckpt_dir = config
        .checkpoint_dir
        .clone()
        .unwrap_or_else(|| run_dir.to_path_buf());
    std::fs::create_dir_all(&ckpt_dir)
        .with_context(|| format!("cannot create checkpoint dir {}", ckpt_dir.display()))?;
    let entries = config.checkpoint_entries();

    let mut loss_log = String::new();
    let mut save_err: Option<ckpt::CkptError> = None;
    let result = train(
        &mut model,
        &examples,
        &tables,
        &config.train_options(),
        |stats, m| {
            let line = format!("epoch={} mean_loss={}", stats.epoch, stats.mean_loss);
            println!("{line}");
            loss_log.push_str(&line);
            loss_log.push('\n');
            let rolling = Checkpoint::from_model(m, &entries);
            match ckpt::save(&ckpt_dir.join("latest.ckpt"), &rolling) {
                Ok(()) => ControlFlow::Continue(()),
                Err(e) => {
                    save_err = Some(e);
                    ControlFlow::Break(())
                }
            }
        },
    );
    write_text(&run_dir.join("loss.log"), &loss_log)?;
    if let Some(e) = save_err {
        return Err(e.into());
    }
    match result {
        Ok(_) => {}
        Err(TrainError::NoExamples) => anyhow::bail!("training set is empty"),
        Err(e) => return Err(e.into()),
    }

    let final_path = ckpt_dir.join("final.ckpt");
    ckpt::save(&final_path, &Checkpoint::from_model(&model, &entries))?;
    println!("checkpoint: {}", final_path.display());

    if let Some(dev_path) = &config.dev_examples {
        let dev = load_examples(dev_path)?;
        let report = evaluate_split(&model, &dev, &tables)?;
        write_metrics(run_dir, "dev-metrics", &report)?;
        print!("{}", report.text());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(config: &RunConfig, run_dir: &Path, split: SplitName) -> anyhow::Result<ExitCode> {
    let examples = load_examples(split.path(config)?)?;
    let tables = load_tables(require(&config.tables, "tables")?)?;
    let model = load_model(config)?;
    let report = evaluate_split(&model, &examples, &tables)?;
    write_metrics(run_dir, &format!("metrics-{}", split.as_str()), &report)?;
    print!("{}", report.text());
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict(config: &RunConfig, run_dir: &Path, split: SplitName) -> anyhow::Result<ExitCode> {
    let examples = load_examples(split.path(config)?)?;
    let tables = load_tables(require(&config.tables, "tables")?)?;
    let model = load_model(config)?;

    let mut out = String::new();
    for (idx, example) in examples.iter().enumerate() {
        let table = tables.get(&example.table_id).with_context(|| {
            format!("example {idx} references unknown table {:?}", example.table_id)
        })?;
        let record = predict_record(&model, idx, example, table)?;
        out.push_str(&record.to_string());
        out.push('\n');
    }
    let path = run_dir.join(format!("predictions-{}.jsonl", split.as_str()));
    write_text(&path, &out)?;
    println!("{} predictions: {}", examples.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

/// One prediction-dump line: the inferred sketch in the dataset's sql shape
/// plus the probability each head assigned to its argmax choice.
fn predict_record(
    model: &SqlNetModel,
    idx: usize,
    example: &Example,
    table: &Table,
) -> anyhow::Result<serde_json::Value> {
    let schema = &table.schema;
    let question = &example.question;

    let sel_dist = model.predict_select_column(question, schema)?;
    let sel = argmax(&sel_dist);
    let agg_dist = model.predict_aggregator(question, &schema.columns[sel])?;
    let agg = argmax(&agg_dist);
    let numcol_dist = model.predict_num_columns(question)?;
    let where_pred = model.predict_where(question, schema)?;

    let mut conds: Vec<Condition> = Vec::new();
    let mut op_probs: Vec<f64> = Vec::new();
    let mut value_probs: Vec<f64> = Vec::new();
    let mut col_probs: Vec<f64> = Vec::new();
    for cond in &where_pred.conds {
        let op = CondOp::from_index(cond.op).context("op index out of range")?;
        let value = crate::model::join_positions(question, &cond.value_positions);
        let op_dist = model.predict_op(question, &schema.columns[cond.column])?;
        let (_, value_prob) =
            model.decode_value_scored(question, &schema.columns[cond.column], model.config.max_value_len)?;
        op_probs.push(op_dist[cond.op]);
        value_probs.push(value_prob);
        col_probs.push(where_pred.column_probs[cond.column]);
        conds.push(Condition::new(cond.column, op, value));
    }

    let cond_json: Vec<serde_json::Value> = conds
        .iter()
        .map(|c| serde_json::json!([c.column, c.op.index(), c.value]))
        .collect();
    Ok(serde_json::json!({
        "example_id": idx,
        "sql": {"sel": sel, "agg": agg, "conds": cond_json},
        "probs": {
            "agg": agg_dist[agg],
            "sel": sel_dist[sel],
            "numcol": numcol_dist[argmax(&numcol_dist)],
            "wherecol": col_probs,
            "op": op_probs,
            "value": value_probs,
        },
    }))
}

/// Random network touching every tape operator family, checked against
/// central finite differences.
fn operator_suite_max_err(config: &RunConfig) -> anyhow::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let w1 = store.register_uniform("w1", 4, 3, 3, &mut rng);
    let b1 = store.register_uniform("b1", 4, 1, 4, &mut rng);
    let w2 = store.register_uniform("w2", 3, 4, 4, &mut rng);
    let x = store.register_uniform("x", 3, 1, 3, &mut rng);

    let report = grad_check(
        &mut store,
        |store| {
            let mut tape = crate::nn::Tape::new();
            let w1 = tape.leaf(store, w1);
            let b1 = tape.leaf(store, b1);
            let w2 = tape.leaf(store, w2);
            let x = tape.leaf(store, x);
            let xw = tape.matmul(w1, x)?;
            let pre = tape.add(xw, b1)?;
            let z = tape.tanh(pre);
            let logits = tape.matmul(w2, z)?;
            let ce = tape.cross_entropy(logits, 1)?;
            let zsum = tape.sum(z);
            let gate = tape.sigmoid(zsum);
            let lsum = tape.sum(logits);
            let sp = tape.softplus(lsum);
            let extra = tape.mul(gate, sp)?;
            let loss = tape.add(ce, extra)?;
            Ok((tape, loss))
        },
        config.gc_samples.max(4),
        config.gc_step,
        &mut rng,
    )?;
    Ok(report.max_rel_err)
}

fn cmd_gradcheck(config: &RunConfig, run_dir: &Path) -> anyhow::Result<ExitCode> {
    let op_err = operator_suite_max_err(config)?;

    // fresh random model over a small synthetic fixture, all heads at once
    let opts = synth::SynthOptions {
        tables: 2,
        examples: 8,
        seed: config.seed,
        ..synth::SynthOptions::default()
    };
    let (examples, tables) = synth::synth_corpus(&opts);
    let mut model = fresh_model(config, &examples, &tables)?;
    let example = examples
        .iter()
        .find(|e| !e.truth.conds.is_empty())
        .unwrap_or(&examples[0]);
    let schema = &tables[&example.table_id].schema;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e3779b9);
    let report = model.grad_check_heads(
        example,
        schema,
        config.gc_samples,
        config.gc_step,
        &mut rng,
    )?;

    let max_err = op_err.max(report.max_rel_err);
    let mut text = String::new();
    text.push_str(&format!("operator_max_rel_err={op_err}\n"));
    text.push_str(&format!("model_max_rel_err={}\n", report.max_rel_err));
    text.push_str(&format!("max_rel_err={max_err}\n"));
    text.push_str(&format!("tolerance={}\n", config.gc_tolerance));
    if let Some(worst) = report.worst() {
        text.push_str(&format!(
            "worst_entry={} [{},{}] analytic={} numeric={}\n",
            worst.param, worst.row, worst.col, worst.analytic, worst.numeric
        ));
    }
    write_text(&run_dir.join("gradcheck.txt"), &text)?;
    print!("{text}");

    if max_err.is_finite() && max_err < config.gc_tolerance {
        println!("gradcheck passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck FAILED");
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_reshuffle(config: &RunConfig, run_dir: &Path) -> anyhow::Result<ExitCode> {
    let mut all: Vec<Example> = Vec::new();
    for path in [
        &config.train_examples,
        &config.dev_examples,
        &config.test_examples,
    ]
    .into_iter()
    .flatten()
    {
        all.extend(load_examples(path)?);
    }
    anyhow::ensure!(
        !all.is_empty(),
        "reshuffle needs at least one of train_examples/dev_examples/test_examples"
    );

    let ratios = [config.train_ratio, config.dev_ratio, config.test_ratio];
    let (train, dev, test) = crate::eval::reshuffle_split(&all, ratios, config.seed)?;
    synth::write_examples(&run_dir.join("train.jsonl"), &train).context("write train split")?;
    synth::write_examples(&run_dir.join("dev.jsonl"), &dev).context("write dev split")?;
    synth::write_examples(&run_dir.join("test.jsonl"), &test).context("write test split")?;
    println!("train={} dev={} test={}", train.len(), dev.len(), test.len());
    println!("artifacts: {}", run_dir.display());
    Ok(ExitCode::SUCCESS)
}
