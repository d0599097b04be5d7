//! Deterministic synthetic corpora for fixtures and desk-scale experiments.
//!
//! Questions are rendered from fixed templates whose glue words never collide
//! with column names or condition values, so every condition value resolves
//! to a token span and the mapping from wording to sketch is learnable.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec::Table;
use crate::ingest::{locate_value_span, ColType, Example, Question, TableSchema, Vocabulary};
use crate::nn::Tensor;
use crate::sketch::{Agg, CondOp, Condition, QuerySketch};

const REAL_COLS: &[&str] = &[
    "year", "score", "rank", "price", "speed", "weight", "age", "laps",
];
const TEXT_COLS: &[&str] = &[
    "player", "team", "city", "color", "size", "venue", "coach", "nation",
];
const TEXT_VALUES: &[&str] = &[
    "red", "blue", "green", "amber", "violet", "gray", "crimson", "teal",
    "falcons", "tigers", "suns", "wolves", "ravens", "bisons", "omaha",
    "dover", "salem", "boise", "fargo", "tulsa", "reno", "waco",
];

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub tables: usize,
    pub examples: usize,
    pub min_rows: usize,
    pub max_rows: usize,
    /// Upper bound on conditions per example, capped by the column count.
    pub max_conds: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            tables: 20,
            examples: 200,
            min_rows: 4,
            max_rows: 10,
            max_conds: 2,
            seed: 7,
        }
    }
}

fn agg_word(agg: Agg) -> &'static str {
    match agg {
        Agg::None => "show",
        Agg::Max => "largest",
        Agg::Min => "smallest",
        Agg::Count => "count",
        Agg::Sum => "total",
        Agg::Avg => "average",
    }
}

fn op_word(op: CondOp) -> &'static str {
    match op {
        CondOp::Eq => "is",
        CondOp::Gt => "above",
        CondOp::Lt => "below",
    }
}

fn random_table(id: &str, opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Table {
    let n_cols = rng.gen_range(3..=5usize);
    // every table carries both column kinds so all ops and aggregators occur
    let n_real = rng.gen_range(1..n_cols);
    let mut names: Vec<(&str, ColType)> = REAL_COLS
        .choose_multiple(rng, n_real)
        .map(|n| (*n, ColType::Real))
        .collect();
    names.extend(
        TEXT_COLS
            .choose_multiple(rng, n_cols - n_real)
            .map(|n| (*n, ColType::Text)),
    );
    names.shuffle(rng);

    let header: Vec<String> = names.iter().map(|(n, _)| n.to_string()).collect();
    let types: Vec<ColType> = names.iter().map(|(_, t)| *t).collect();
    let schema = TableSchema::from_header(id, &header, &types)
        .expect("generated header is well formed");

    let n_rows = rng.gen_range(opts.min_rows..=opts.max_rows);
    let rows = (0..n_rows)
        .map(|_| {
            types
                .iter()
                .map(|t| match t {
                    ColType::Real => rng.gen_range(1..100u32).to_string(),
                    ColType::Text => (*TEXT_VALUES.choose(rng).unwrap()).to_string(),
                })
                .collect()
        })
        .collect();
    Table { schema, rows }
}

fn random_example(table: &Table, opts: &SynthOptions, rng: &mut ChaCha8Rng) -> Example {
    let schema = &table.schema;
    let n_cols = schema.num_columns();
    let sel = rng.gen_range(0..n_cols);
    let agg = if schema.columns[sel].col_type == ColType::Real {
        *[Agg::None, Agg::Max, Agg::Min, Agg::Count, Agg::Sum, Agg::Avg]
            .choose(rng)
            .unwrap()
    } else if rng.gen_bool(0.3) {
        Agg::Count
    } else {
        Agg::None
    };

    let k_cap = opts.max_conds.min(n_cols);
    let k = match rng.gen_range(0..10u8) {
        0..=1 => 0,
        2..=7 => 1,
        _ => 2,
    }
    .min(k_cap);

    let mut conds: Vec<Condition> = Vec::with_capacity(k);
    let mut used_values: BTreeSet<String> = BTreeSet::new();
    for col in rand::seq::index::sample(rng, n_cols, k) {
        // distinct value strings keep token spans unambiguous
        for _attempt in 0..100 {
            let (op, value) = if schema.columns[col].col_type == ColType::Real {
                let op = *[CondOp::Eq, CondOp::Gt, CondOp::Lt].choose(rng).unwrap();
                let value = if rng.gen_bool(0.7) {
                    table.rows.choose(rng).unwrap()[col].clone()
                } else {
                    rng.gen_range(1..100u32).to_string()
                };
                (op, value)
            } else {
                let value = if rng.gen_bool(0.8) {
                    table.rows.choose(rng).unwrap()[col].clone()
                } else {
                    (*TEXT_VALUES.choose(rng).unwrap()).to_string()
                };
                (CondOp::Eq, value)
            };
            if used_values.insert(value.clone()) {
                conds.push(Condition::new(col, op, value));
                break;
            }
        }
    }

    let mut text = format!("{} {}", agg_word(agg), schema.columns[sel].raw_name);
    for (i, cond) in conds.iter().enumerate() {
        text.push_str(if i == 0 { " where " } else { " and " });
        text.push_str(&format!(
            "{} {} {}",
            schema.columns[cond.column].raw_name,
            op_word(cond.op),
            cond.value
        ));
    }

    let question = Question::new(&text);
    let value_spans: Vec<Option<(usize, usize)>> = conds
        .iter()
        .map(|c| locate_value_span(&question, &c.value))
        .collect();
    debug_assert!(value_spans.iter().all(Option::is_some), "template left an unresolvable value in {text:?}");
    Example {
        question,
        table_id: schema.table_id.clone(),
        truth: QuerySketch { agg, sel, conds },
        value_spans,
    }
}

/// Generates a corpus of tables and examples, fully determined by the
/// options. Examples reference tables uniformly at random.
pub fn synth_corpus(opts: &SynthOptions) -> (Vec<Example>, BTreeMap<String, Table>) {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut tables = BTreeMap::new();
    let mut ids = Vec::with_capacity(opts.tables);
    for t in 0..opts.tables {
        let id = format!("synth{t}");
        tables.insert(id.clone(), random_table(&id, opts, &mut rng));
        ids.push(id);
    }
    let examples = (0..opts.examples)
        .map(|_| {
            let id = ids.choose(&mut rng).unwrap();
            random_example(&tables[id], opts, &mut rng)
        })
        .collect();
    (examples, tables)
}

/// Five-row basketball roster used by the demo and the round-trip tests.
pub fn roster_table() -> Table {
    let header: Vec<String> = [
        "Player",
        "No.",
        "Nationality",
        "Position",
        "Years in Toronto",
        "School/Club Team",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let types = [ColType::Text; 6];
    let schema = TableSchema::from_header("roster", &header, &types).unwrap();
    let rows = [
        ["Antonio Lang", "21", "United States", "Guard-Forward", "1999-2000", "Duke"],
        ["Voshon Lenard", "2", "United States", "Guard", "2002-03", "Minnesota"],
        ["Martin Lewis", "32, 44", "United States", "Guard-Forward", "1996-97", "Butler CC (KS)"],
        ["Brad Lohaus", "33", "United States", "Forward-Center", "1996", "Iowa"],
        ["Art Long", "42", "United States", "Forward-Center", "2002-03", "Cincinnati"],
    ]
    .iter()
    .map(|r| r.iter().map(|c| c.to_string()).collect())
    .collect();
    Table { schema, rows }
}

/// The single lookup question used for the overfit round trip.
pub fn roster_example() -> Example {
    let question = Question::new("who is the player that wears number 42");
    let truth = QuerySketch {
        agg: Agg::None,
        sel: 0,
        conds: vec![Condition::new(1, CondOp::Eq, "42")],
    };
    let value_spans = truth
        .conds
        .iter()
        .map(|c| locate_value_span(&question, &c.value))
        .collect();
    Example {
        question,
        table_id: "roster".to_string(),
        truth,
        value_spans,
    }
}

/// Uniform random embedding matrix over the vocabulary with a zero row for
/// the unknown token.
pub fn random_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::zeros(vocab.len(), dim);
    for r in 1..vocab.len() {
        for c in 0..dim {
            t.set(r, c, rng.gen_range(-0.5..0.5));
        }
    }
    t
}

/// Line-delimited JSON rendering of examples in the loader's input format.
pub fn examples_jsonl(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        let conds: Vec<serde_json::Value> = ex
            .truth
            .conds
            .iter()
            .map(|c| serde_json::json!([c.column, c.op.index(), c.value]))
            .collect();
        let line = serde_json::json!({
            "question": ex.question.raw,
            "table_id": ex.table_id,
            "sql": {
                "sel": ex.truth.sel,
                "agg": ex.truth.agg.index(),
                "conds": conds,
            },
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

/// Line-delimited JSON rendering of tables in the loader's input format.
pub fn tables_jsonl(tables: &BTreeMap<String, Table>) -> String {
    let mut out = String::new();
    for table in tables.values() {
        let header: Vec<&str> = table
            .schema
            .columns
            .iter()
            .map(|c| c.raw_name.as_str())
            .collect();
        let types: Vec<&str> = table
            .schema
            .columns
            .iter()
            .map(|c| c.col_type.as_str())
            .collect();
        let line = serde_json::json!({
            "id": table.schema.table_id,
            "header": header,
            "types": types,
            "rows": table.rows,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

pub fn write_examples(path: &Path, examples: &[Example]) -> io::Result<()> {
    std::fs::write(path, examples_jsonl(examples))
}

pub fn write_tables(path: &Path, tables: &BTreeMap<String, Table>) -> io::Result<()> {
    std::fs::write(path, tables_jsonl(tables))
}

/// Writes a plain-text embedding file (token then `dim` values per line)
/// with deterministic uniform entries.
pub fn write_random_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> io::Result<()> {
    let emb = random_embeddings(vocab, dim, seed);
    let mut out = Vec::new();
    for (r, token) in vocab.tokens().iter().enumerate() {
        if r == 0 {
            continue;
        }
        write!(out, "{token}")?;
        for c in 0..dim {
            write!(out, " {}", emb.get(r, c))?;
        }
        writeln!(out)?;
    }
    std::fs::write(path, out)
}
