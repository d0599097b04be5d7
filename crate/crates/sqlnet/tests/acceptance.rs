//! End-to-end acceptance suite. Each test prints one `criterion NN PASS`
//! line with the measured quantities; a failed assertion names the
//! criterion and the value that missed.

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sqlnet::eval::{evaluate_split, reshuffle_split, ConstantBaseline, MetricsReport};
use sqlnet::exec::{execute, ResVal, ResultSet, Table};
use sqlnet::ingest::{
    corpus_vocabulary, locate_value_span, ColType, Example, Question, TableSchema,
};
use sqlnet::model::{
    train, ModelConfig, SqlNetModel, TrainOptions, WhereColFormula,
};
use sqlnet::nn::GradCheckReport;
use sqlnet::sketch::{canonicalize, query_match, Agg, CondOp, Condition, QuerySketch};
use sqlnet::synth::{roster_example, roster_table, synth_corpus, SynthOptions};

fn pass(n: usize, detail: &str) {
    println!("criterion {n:02} PASS: {detail}");
}

fn toy_config(d: usize, d_emb: usize, formula: WhereColFormula) -> ModelConfig {
    ModelConfig {
        d,
        d_emb,
        n_cond: 4,
        alpha: 3.0,
        max_value_len: 10,
        formula,
    }
}

fn build_model(
    config: ModelConfig,
    examples: &[Example],
    schemas: &[&TableSchema],
    seed: u64,
) -> SqlNetModel {
    let vocab = corpus_vocabulary(examples.iter(), schemas.iter().copied());
    let emb = sqlnet::synth::random_embeddings(&vocab, config.d_emb, seed);
    SqlNetModel::new(config, vocab, emb, seed).expect("valid test config")
}

fn schemas_of(tables: &BTreeMap<String, Table>) -> Vec<&TableSchema> {
    tables.values().map(|t| &t.schema).collect()
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let header: Vec<String> = ["team", "score", "player name"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let types = vec![ColType::Text, ColType::Real, ColType::Text];
    let schema = TableSchema::from_header("toy", &header, &types).unwrap();
    let question = Question::new("team with score above 42");
    assert_eq!(
        question.len(),
        6,
        "fixture question must be 6 positions long including the end marker"
    );
    let truth = QuerySketch::new(
        Agg::Count,
        0,
        vec![Condition::new(1, CondOp::Gt, "above 42")],
    );
    let value_spans = vec![locate_value_span(&question, "above 42")];
    assert!(value_spans[0].is_some(), "value span must resolve");
    let example = Example {
        question,
        table_id: "toy".to_string(),
        truth,
        value_spans,
    };

    // every scoring formula gets its own finite-difference pass so all
    // parameterized paths are exercised
    let mut reports = Vec::new();
    for formula in [
        WhereColFormula::SummaryLinear,
        WhereColFormula::AttentionLinear,
        WhereColFormula::AttentionMlp,
    ] {
        let config = toy_config(8, 6, formula);
        let mut model = build_model(config, std::slice::from_ref(&example), &[&schema], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let report = model
            .grad_check_heads(&example, &schema, 3, 1e-5, &mut rng)
            .unwrap();
        reports.push(report);
    }
    let merged = GradCheckReport::merge(reports);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        merged.passes(1e-4),
        "criterion 1 failed: max relative error {} (worst entry {:?})",
        merged.max_rel_err,
        merged.worst()
    );
    assert!(
        elapsed < 60.0,
        "criterion 1 failed: gradient check took {elapsed:.1}s"
    );
    pass(
        1,
        &format!(
            "max relative error {:.3e} over {} probes in {elapsed:.2}s",
            merged.max_rel_err,
            merged.entries.len()
        ),
    );
}

#[test]
fn criterion_02_memorizes_training_fixture() {
    let start = Instant::now();
    let opts = SynthOptions {
        tables: 15,
        examples: 200,
        seed: 11,
        ..SynthOptions::default()
    };
    let (examples, tables) = synth_corpus(&opts);
    let config = toy_config(32, 24, WhereColFormula::AttentionMlp);
    let mut model = build_model(config, &examples, &schemas_of(&tables), 11);
    let train_opts = TrainOptions {
        epochs: 300,
        batch_size: 16,
        lr: 0.005,
        seed: 11,
        unfreeze_epoch: 0,
        train_embeddings: true,
    };

    let mut best = 0.0f64;
    let mut stop_epoch = train_opts.epochs;
    let log = train(&mut model, &examples, &tables, &train_opts, |stats, m| {
        // query-match over the training fixture itself every few epochs
        if (stats.epoch + 1) % 5 != 0 {
            return ControlFlow::Continue(());
        }
        let report = evaluate_split(m, &examples, &tables).unwrap();
        best = best.max(report.acc_qm);
        if report.acc_qm >= 0.95 {
            stop_epoch = stats.epoch;
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    if best < 0.95 {
        let report = evaluate_split(&model, &examples, &tables).unwrap();
        best = best.max(report.acc_qm);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        best >= 0.95,
        "criterion 2 failed: query-match {best} after {} epochs",
        log.len()
    );
    assert!(
        elapsed < 1200.0,
        "criterion 2 failed: training took {elapsed:.0}s"
    );
    pass(
        2,
        &format!("query-match {best:.3} at epoch {stop_epoch} in {elapsed:.1}s"),
    );
}

#[test]
fn criterion_03_roster_round_trip() {
    let table = roster_table();
    let example = roster_example();
    let mut tables = BTreeMap::new();
    tables.insert(table.schema.table_id.clone(), table.clone());
    let examples = vec![example.clone()];

    let config = toy_config(16, 12, WhereColFormula::AttentionMlp);
    let mut model = build_model(config, &examples, &[&table.schema], 1);
    // single-example batch-1 training pins the value pointer at a tie
    // between the value token and the end marker at small learning rates;
    // 0.05 breaks the tie within a few dozen epochs
    let train_opts = TrainOptions {
        epochs: 1500,
        batch_size: 1,
        lr: 0.05,
        seed: 1,
        unfreeze_epoch: 0,
        train_embeddings: true,
    };
    let log = train(&mut model, &examples, &tables, &train_opts, |stats, _| {
        if stats.mean_loss < 0.01 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    let last = log.last().unwrap();
    assert!(
        last.mean_loss < 0.01,
        "criterion 3 failed: loss stuck at {} after {} epochs",
        last.mean_loss,
        log.len()
    );

    let pred = model.infer_query(&example.question, &table.schema).unwrap();
    assert!(
        query_match(&pred, &example.truth),
        "criterion 3 failed: predicted {pred:?}, wanted {:?}",
        example.truth
    );
    let result = execute(&pred, &table).unwrap();
    let want = ResultSet::of_texts(["Art Long".to_string()]);
    assert!(
        sqlnet::exec::compare_results(&result, &want),
        "criterion 3 failed: executed to {result:?}"
    );
    pass(3, "overfit sketch matches and executes to {\"art long\"}");
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            rec(k + 1, items, out);
            items.swap(k, i);
        }
    }
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    rec(0, &mut items, &mut out);
    out
}

#[test]
fn criterion_04_loss_order_invariance() {
    const COL_POOL: &[&str] = &[
        "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC4);

    // fixtures first so one vocabulary covers them all
    let mut fixtures: Vec<(Example, TableSchema)> = Vec::new();
    for trial in 0..50usize {
        let n_cols = rng.gen_range(4..=7usize);
        let mut names: Vec<&str> = COL_POOL.to_vec();
        names.shuffle(&mut rng);
        let header: Vec<String> = names[..n_cols].iter().map(|s| s.to_string()).collect();
        let types = vec![ColType::Real; n_cols];
        let schema = TableSchema::from_header(&format!("fx{trial}"), &header, &types).unwrap();

        let k = trial % 5;
        let cond_cols = rand::seq::index::sample(&mut rng, n_cols, k);
        let sel = rng.gen_range(0..n_cols);
        let agg = Agg::from_index(rng.gen_range(0..6)).unwrap();
        let conds: Vec<Condition> = cond_cols
            .iter()
            .enumerate()
            .map(|(i, col)| {
                let op = CondOp::from_index(rng.gen_range(0..3)).unwrap();
                Condition::new(col, op, (100 + 10 * trial + i).to_string())
            })
            .collect();

        let mut text = format!("list {}", schema.columns[sel].raw_name);
        for (i, cond) in conds.iter().enumerate() {
            text.push_str(if i == 0 { " where " } else { " and " });
            text.push_str(&format!(
                "{} is {}",
                schema.columns[cond.column].raw_name, cond.value
            ));
        }
        let question = Question::new(&text);
        let value_spans: Vec<Option<(usize, usize)>> = conds
            .iter()
            .map(|c| locate_value_span(&question, &c.value))
            .collect();
        assert!(value_spans.iter().all(Option::is_some));
        fixtures.push((
            Example {
                question,
                table_id: schema.table_id.clone(),
                truth: QuerySketch { agg, sel, conds },
                value_spans,
            },
            schema,
        ));
    }

    let examples: Vec<Example> = fixtures.iter().map(|(e, _)| e.clone()).collect();
    let schemas: Vec<&TableSchema> = fixtures.iter().map(|(_, s)| s).collect();
    let config = toy_config(16, 8, WhereColFormula::AttentionMlp);
    let model = build_model(config, &examples, &schemas, 0xC4);

    let mut checked = 0usize;
    for (example, schema) in &fixtures {
        let (tape, loss, _) = model.training_loss(example, schema).unwrap();
        let base_bits = tape.value(loss).item().to_bits();
        for perm in permutations(example.truth.conds.len()) {
            let permuted = Example {
                question: example.question.clone(),
                table_id: example.table_id.clone(),
                truth: QuerySketch {
                    agg: example.truth.agg,
                    sel: example.truth.sel,
                    conds: perm.iter().map(|&i| example.truth.conds[i].clone()).collect(),
                },
                value_spans: perm.iter().map(|&i| example.value_spans[i]).collect(),
            };
            let (tape, loss, _) = model.training_loss(&permuted, schema).unwrap();
            let bits = tape.value(loss).item().to_bits();
            assert_eq!(
                bits, base_bits,
                "criterion 4 failed: loss changed under cond permutation {perm:?} on {:?}",
                example.question.raw
            );
            checked += 1;
        }
    }

    // WHERE score='1-0' AND goal=16 versus the flipped, unquoted ordering
    let a = QuerySketch::new(
        Agg::None,
        0,
        vec![
            Condition::new(1, CondOp::Eq, "'1-0'"),
            Condition::new(2, CondOp::Eq, "16"),
        ],
    );
    let b = QuerySketch::new(
        Agg::None,
        0,
        vec![
            Condition::new(2, CondOp::Eq, "16"),
            Condition::new(1, CondOp::Eq, "1-0"),
        ],
    );
    assert_eq!(
        canonicalize(&a),
        canonicalize(&b),
        "criterion 4 failed: canonical forms differ"
    );
    assert!(query_match(&a, &b), "criterion 4 failed: query_match");
    pass(
        4,
        &format!("{checked} permutation losses bit-identical across 50 fixtures; quote pair canonical"),
    );
}

#[test]
fn criterion_05_permutation_equivariance() {
    const NAME_POOL: &[&str] = &[
        "team name", "score", "home runs", "player", "city", "year",
        "total points", "rank", "league", "coach name",
    ];
    const WORD_POOL: &[&str] = &[
        "which", "team", "won", "the", "most", "games", "in", "season", "show", "players",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);

    let mut trials: Vec<(Question, TableSchema, Vec<usize>)> = Vec::new();
    for trial in 0..100usize {
        let n = rng.gen_range(2..=6usize);
        let mut names: Vec<&str> = NAME_POOL.to_vec();
        names.shuffle(&mut rng);
        let header: Vec<String> = names[..n].iter().map(|s| s.to_string()).collect();
        let types = vec![ColType::Text; n];
        let schema = TableSchema::from_header(&format!("pe{trial}"), &header, &types).unwrap();
        let len = rng.gen_range(5..=9usize);
        let words: Vec<&str> = (0..len).map(|_| *WORD_POOL.choose(&mut rng).unwrap()).collect();
        let question = Question::new(words.join(" "));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        trials.push((question, schema, perm));
    }

    let examples: Vec<Example> = trials
        .iter()
        .map(|(q, s, _)| Example {
            question: q.clone(),
            table_id: s.table_id.clone(),
            truth: QuerySketch::new(Agg::None, 0, Vec::new()),
            value_spans: Vec::new(),
        })
        .collect();
    let schemas: Vec<&TableSchema> = trials.iter().map(|(_, s, _)| s).collect();
    let config = toy_config(16, 8, WhereColFormula::AttentionMlp);
    let model = build_model(config, &examples, &schemas, 0xC5);

    for (question, schema, perm) in &trials {
        let shuffled = TableSchema {
            table_id: schema.table_id.clone(),
            columns: perm.iter().map(|&i| schema.columns[i].clone()).collect(),
        };
        let base_where = model.predict_where_columns(question, schema).unwrap();
        let perm_where = model.predict_where_columns(question, &shuffled).unwrap();
        let base_sel = model.predict_select_column(question, schema).unwrap();
        let perm_sel = model.predict_select_column(question, &shuffled).unwrap();
        for (pos, &orig) in perm.iter().enumerate() {
            assert_eq!(
                perm_where[pos].to_bits(),
                base_where[orig].to_bits(),
                "criterion 5 failed: wherecol prob moved under permutation {perm:?}"
            );
            assert_eq!(
                perm_sel[pos].to_bits(),
                base_sel[orig].to_bits(),
                "criterion 5 failed: select prob moved under permutation {perm:?}"
            );
        }
    }
    pass(5, "100 random schema permutations leave both heads bit-identical");
}

struct Ablation {
    plain: MetricsReport,
    ca: MetricsReport,
    baseline: MetricsReport,
}

static ABLATION: OnceLock<Ablation> = OnceLock::new();

fn ablation() -> &'static Ablation {
    ABLATION.get_or_init(|| {
        let opts = SynthOptions {
            tables: 40,
            examples: 2500,
            seed: 13,
            ..SynthOptions::default()
        };
        let (all, tables) = synth_corpus(&opts);
        let train_set = &all[..2000];
        let dev_set = &all[2000..];

        let run = |formula: WhereColFormula| {
            let config = toy_config(32, 24, formula);
            let mut model = build_model(config, train_set, &schemas_of(&tables), 13);
            let train_opts = TrainOptions {
                epochs: 12,
                batch_size: 32,
                lr: 0.005,
                seed: 13,
                unfreeze_epoch: 0,
                train_embeddings: false,
            };
            train(&mut model, train_set, &tables, &train_opts, |_, _| {
                ControlFlow::Continue(())
            })
            .unwrap();
            evaluate_split(&model, dev_set, &tables).unwrap()
        };

        Ablation {
            plain: run(WhereColFormula::SummaryLinear),
            ca: run(WhereColFormula::AttentionMlp),
            baseline: evaluate_split(&ConstantBaseline, dev_set, &tables).unwrap(),
        }
    })
}

#[test]
fn criterion_06_column_attention_helps_where() {
    let ab = ablation();
    assert!(
        ab.ca.acc_where >= ab.plain.acc_where,
        "criterion 6 failed: dev acc_where {} with column attention vs {} without",
        ab.ca.acc_where,
        ab.plain.acc_where
    );
    pass(
        6,
        &format!(
            "dev acc_where {:.3} with column attention >= {:.3} without",
            ab.ca.acc_where, ab.plain.acc_where
        ),
    );
}

#[test]
fn criterion_07_beats_constant_baseline() {
    let ab = ablation();
    assert!(
        ab.ca.acc_qm > ab.baseline.acc_qm,
        "criterion 7 failed: dev acc_qm {} vs baseline {}",
        ab.ca.acc_qm,
        ab.baseline.acc_qm
    );
    assert!(
        ab.ca.acc_ex > ab.baseline.acc_ex,
        "criterion 7 failed: dev acc_ex {} vs baseline {}",
        ab.ca.acc_ex,
        ab.baseline.acc_ex
    );
    pass(
        7,
        &format!(
            "dev acc_qm {:.3} > baseline {:.3}; dev acc_ex {:.3} > baseline {:.3}",
            ab.ca.acc_qm, ab.baseline.acc_qm, ab.ca.acc_ex, ab.baseline.acc_ex
        ),
    );
}

/// Number grammar reimplemented as a byte scanner: optional sign, digits
/// with well-formed thousands commas, optional nonempty fraction.
fn oracle_num(s: &str) -> Option<f64> {
    let b = s.trim().as_bytes();
    if b.is_empty() {
        return None;
    }
    let mut i = 0;
    let mut sign = 1.0;
    if b[0] == b'-' {
        sign = -1.0;
        i = 1;
    } else if b[0] == b'+' {
        i = 1;
    }
    let mut int_digits = String::new();
    let mut group = 0usize;
    let mut commas = false;
    while i < b.len() && (b[i].is_ascii_digit() || b[i] == b',') {
        if b[i] == b',' {
            if group == 0 || group > 3 || (commas && group != 3) {
                return None;
            }
            commas = true;
            group = 0;
        } else {
            int_digits.push(b[i] as char);
            group += 1;
        }
        i += 1;
    }
    if commas && group != 3 {
        return None;
    }
    let mut frac_digits = String::new();
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            frac_digits.push(b[i] as char);
            i += 1;
        }
        if frac_digits.is_empty() {
            return None;
        }
    }
    if i != b.len() || (int_digits.is_empty() && frac_digits.is_empty()) {
        return None;
    }
    let text = format!(
        "{}.{}",
        if int_digits.is_empty() { "0" } else { &int_digits },
        if frac_digits.is_empty() { "0" } else { &frac_digits }
    );
    text.parse::<f64>().ok().map(|v| sign * v)
}

fn oracle_norm(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    loop {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() >= 2 {
            let (first, last) = (chars[0], chars[chars.len() - 1]);
            if first == last && (first == '\'' || first == '"') {
                s = chars[1..chars.len() - 1]
                    .iter()
                    .collect::<String>()
                    .trim()
                    .to_string();
                continue;
            }
        }
        break;
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn oracle_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Brute-force evaluator: scan rows, test every condition, then aggregate
/// with plain loops. Returns None where execute returns any error.
fn oracle_execute(sketch: &QuerySketch, table: &Table) -> Option<Vec<ResVal>> {
    let width = table.schema.num_columns();
    if sketch.sel >= width {
        return None;
    }
    for cond in &sketch.conds {
        if cond.column >= width {
            return None;
        }
    }
    let mut prepared: Vec<(usize, CondOp, String, Option<f64>)> = Vec::new();
    for cond in &sketch.conds {
        let norm = oracle_norm(&cond.value);
        let num = oracle_num(&norm);
        if cond.op != CondOp::Eq && num.is_none() {
            return None;
        }
        prepared.push((cond.column, cond.op, norm, num));
    }

    let mut kept: Vec<&Vec<String>> = Vec::new();
    'rows: for row in &table.rows {
        for (col, op, norm, num) in &prepared {
            let cell = &row[*col];
            let holds = match op {
                CondOp::Eq => match (oracle_num(cell), *num) {
                    (Some(c), Some(v)) => oracle_close(c, v),
                    _ => oracle_norm(cell) == *norm,
                },
                CondOp::Gt => matches!(oracle_num(cell), Some(c) if c > num.unwrap()),
                CondOp::Lt => matches!(oracle_num(cell), Some(c) if c < num.unwrap()),
            };
            if !holds {
                continue 'rows;
            }
        }
        kept.push(row);
    }

    let cells: Vec<&String> = kept.iter().map(|row| &row[sketch.sel]).collect();
    let mut nums: Vec<f64> = Vec::new();
    for cell in &cells {
        if let Some(n) = oracle_num(cell) {
            nums.push(n);
        }
    }
    let single = |n: f64| vec![ResVal::Num(n)];
    Some(match sketch.agg {
        Agg::None => cells.iter().map(|c| ResVal::Text((*c).clone())).collect(),
        Agg::Count => single(kept.len() as f64),
        Agg::Max | Agg::Min | Agg::Sum | Agg::Avg if nums.is_empty() => Vec::new(),
        Agg::Max => {
            let mut m = f64::NEG_INFINITY;
            for n in &nums {
                if *n > m {
                    m = *n;
                }
            }
            single(m)
        }
        Agg::Min => {
            let mut m = f64::INFINITY;
            for n in &nums {
                if *n < m {
                    m = *n;
                }
            }
            single(m)
        }
        Agg::Sum => {
            let mut total = 0.0;
            for n in &nums {
                total += *n;
            }
            single(total)
        }
        Agg::Avg => {
            let mut total = 0.0;
            for n in &nums {
                total += *n;
            }
            single(total / nums.len() as f64)
        }
    })
}

fn canon_items(items: &[ResVal]) -> (Vec<u64>, Vec<String>) {
    let mut nums = Vec::new();
    let mut texts = Vec::new();
    for item in items {
        match item {
            ResVal::Num(n) => nums.push(n.to_bits()),
            ResVal::Text(s) => texts.push(s.clone()),
        }
    }
    nums.sort_unstable();
    texts.sort();
    (nums, texts)
}

#[test]
fn criterion_08_executor_matches_brute_force() {
    const CELL_POOL: &[&str] = &[
        "42", "3.14", "1,234", "12,345,678.9", "+5", "-0.5", " 8 ", "", "abc",
        "Art Long", "32, 44", "n/a", "'7'", "1.", "2-3", "0", "100", "007",
        ".5", "1,23", "  spaced  out  ", "UPPER Case", "42.0", "-42",
    ];
    const VALUE_POOL: &[&str] = &[
        "42", "'42'", "\" 1,234 \"", "3.14", "+5", "-0.5", "8", "abc",
        "art long", "above", "1.", "", "  42  ", "0", "12,345,678.9",
        "32, 44", "1,23", "100", "007", ".5", "'7'", "n/a", "42.0", "upper case",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xC8);

    let mut errors = 0usize;
    for case in 0..200usize {
        let n_cols = rng.gen_range(1..=6usize);
        let header: Vec<String> = (0..n_cols).map(|c| format!("col{c}")).collect();
        let types: Vec<ColType> = (0..n_cols)
            .map(|c| if c % 2 == 0 { ColType::Text } else { ColType::Real })
            .collect();
        let schema = TableSchema::from_header(&format!("t{case}"), &header, &types).unwrap();
        let n_rows = rng.gen_range(0..=20usize);
        let rows: Vec<Vec<String>> = (0..n_rows)
            .map(|_| {
                (0..n_cols)
                    .map(|_| (*CELL_POOL.choose(&mut rng).unwrap()).to_string())
                    .collect()
            })
            .collect();
        let table = Table { schema, rows };

        let agg = Agg::from_index(rng.gen_range(0..6)).unwrap();
        let mut sel = rng.gen_range(0..n_cols);
        let k = rng.gen_range(0..=3usize);
        let mut conds: Vec<Condition> = (0..k)
            .map(|_| {
                Condition::new(
                    rng.gen_range(0..n_cols),
                    CondOp::from_index(rng.gen_range(0..3)).unwrap(),
                    *VALUE_POOL.choose(&mut rng).unwrap(),
                )
            })
            .collect();
        // a slice of cases aims past the schema so error paths agree too
        if rng.gen_bool(0.05) {
            sel = n_cols + rng.gen_range(0..3);
        }
        if k > 0 && rng.gen_bool(0.05) {
            conds[0].column = n_cols + 1;
        }
        let sketch = QuerySketch { agg, sel, conds };

        let got = execute(&sketch, &table);
        let want = oracle_execute(&sketch, &table);
        match (&got, &want) {
            (Err(_), None) => errors += 1,
            (Ok(rs), Some(items)) => {
                assert_eq!(
                    canon_items(&rs.items),
                    canon_items(items),
                    "criterion 8 failed on case {case}: {sketch:?} over {table:?}"
                );
            }
            _ => panic!(
                "criterion 8 failed on case {case}: execute gave {got:?}, oracle gave {want:?}"
            ),
        }
    }
    pass(
        8,
        &format!("200 random cases agree with brute force ({errors} matched error cases)"),
    );
}

#[test]
fn criterion_09_training_and_eval_are_deterministic() {
    let opts = SynthOptions {
        tables: 5,
        examples: 50,
        seed: 21,
        ..SynthOptions::default()
    };
    let (examples, tables) = synth_corpus(&opts);
    let train_opts = TrainOptions {
        epochs: 5,
        batch_size: 8,
        lr: 0.005,
        seed: 21,
        unfreeze_epoch: 0,
        train_embeddings: false,
    };
    let run = || {
        let config = toy_config(16, 12, WhereColFormula::AttentionMlp);
        let mut model = build_model(config, &examples, &schemas_of(&tables), 21);
        let stats = train(&mut model, &examples, &tables, &train_opts, |_, _| {
            ControlFlow::Continue(())
        })
        .unwrap();
        (stats, model)
    };
    let (stats_a, model_a) = run();
    let (stats_b, model_b) = run();

    let log_lines = |stats: &[sqlnet::model::EpochStats]| -> Vec<String> {
        stats
            .iter()
            .map(|s| format!("epoch={} mean_loss={}", s.epoch, s.mean_loss))
            .collect()
    };
    assert_eq!(
        log_lines(&stats_a),
        log_lines(&stats_b),
        "criterion 9 failed: loss logs differ between identical runs"
    );
    for (a, b) in stats_a.iter().zip(&stats_b) {
        assert_eq!(a.mean_loss.to_bits(), b.mean_loss.to_bits());
    }

    let report_a1 = evaluate_split(&model_a, &examples, &tables).unwrap();
    let report_a2 = evaluate_split(&model_a, &examples, &tables).unwrap();
    let report_b = evaluate_split(&model_b, &examples, &tables).unwrap();
    assert_eq!(report_a1, report_a2, "criterion 9 failed: repeated eval differs");
    assert_eq!(report_a1, report_b, "criterion 9 failed: eval differs across runs");
    assert_eq!(report_a1.text(), report_b.text());
    pass(
        9,
        &format!(
            "identical loss logs over {} epochs and identical metric reports",
            stats_a.len()
        ),
    );
}

#[test]
fn criterion_10_resplit_keeps_tables_in_train() {
    let opts = SynthOptions {
        tables: 40,
        examples: 2500,
        seed: 13,
        ..SynthOptions::default()
    };
    let (mut all, _tables) = synth_corpus(&opts);
    // a few singleton tables so the pin-to-train rule is visible
    for i in 0..3usize {
        let question = Question::new(format!("show alpha where bravo is {}", 900 + i));
        let value = (900 + i).to_string();
        let span = locate_value_span(&question, &value);
        all.push(Example {
            question,
            table_id: format!("solo{i}"),
            truth: QuerySketch::new(Agg::None, 0, vec![Condition::new(1, CondOp::Eq, value)]),
            value_spans: vec![span],
        });
    }

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for ex in &all {
        *counts.entry(ex.table_id.as_str()).or_default() += 1;
    }
    let key = |ex: &Example| (ex.question.raw.clone(), ex.table_id.clone());

    let mut combos = 0usize;
    for ratios in [[0.7, 0.2, 0.1], [0.8, 0.1, 0.1]] {
        for seed in [1u64, 7, 42, 1337] {
            let (train_s, dev_s, test_s) = reshuffle_split(&all, ratios, seed).unwrap();
            let (train_r, dev_r, test_r) = reshuffle_split(&all, ratios, seed).unwrap();
            let flat = |s: &[Example]| s.iter().map(&key).collect::<Vec<_>>();
            assert_eq!(flat(&train_s), flat(&train_r), "criterion 10 failed: not deterministic");
            assert_eq!(flat(&dev_s), flat(&dev_r));
            assert_eq!(flat(&test_s), flat(&test_r));

            let mut merged: Vec<_> = flat(&train_s);
            merged.extend(flat(&dev_s));
            merged.extend(flat(&test_s));
            merged.sort();
            let mut want: Vec<_> = all.iter().map(&key).collect();
            want.sort();
            assert_eq!(merged, want, "criterion 10 failed: splits do not partition input");

            let train_tables: std::collections::BTreeSet<&str> =
                train_s.iter().map(|e| e.table_id.as_str()).collect();
            for ex in dev_s.iter().chain(&test_s) {
                assert!(
                    train_tables.contains(ex.table_id.as_str()),
                    "criterion 10 failed: table {} in dev/test but not train",
                    ex.table_id
                );
            }
            for ex in dev_s.iter().chain(&test_s) {
                assert!(
                    counts[ex.table_id.as_str()] > 1,
                    "criterion 10 failed: singleton table {} escaped train",
                    ex.table_id
                );
            }

            let n = all.len() as f64;
            assert!(
                (dev_s.len() as f64 - ratios[1] * n).abs() <= 0.01 * n,
                "criterion 10 failed: dev size {} for ratio {}",
                dev_s.len(),
                ratios[1]
            );
            assert!(
                (test_s.len() as f64 - ratios[2] * n).abs() <= 0.01 * n,
                "criterion 10 failed: test size {} for ratio {}",
                test_s.len(),
                ratios[2]
            );
            combos += 1;
        }
    }
    pass(
        10,
        &format!("{combos} ratio/seed combinations: partition, anchoring, singleton pinning hold"),
    );
}
