//! Split-level accuracy metrics and the table-anchored dataset reshuffle.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Table};
use crate::ingest::{Example, Question, TableSchema};
use crate::model::{ModelError, SqlNetModel};
use crate::sketch::{query_match, where_match, Agg, QuerySketch};

/// Anything that can turn a question plus a schema into a sketch. Lets the
/// harness score trained models and trivial baselines the same way.
pub trait QueryPredictor {
    fn predict(
        &self,
        question: &Question,
        schema: &TableSchema,
    ) -> Result<QuerySketch, ModelError>;
}

impl QueryPredictor for SqlNetModel {
    fn predict(
        &self,
        question: &Question,
        schema: &TableSchema,
    ) -> Result<QuerySketch, ModelError> {
        self.infer_query(question, schema)
    }
}

/// Predicts `SELECT col0` with no aggregator and no conditions regardless of
/// input. Any model worth training should beat it.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantBaseline;

impl QueryPredictor for ConstantBaseline {
    fn predict(
        &self,
        _question: &Question,
        _schema: &TableSchema,
    ) -> Result<QuerySketch, ModelError> {
        Ok(QuerySketch {
            agg: Agg::None,
            sel: 0,
            conds: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: usize,
    /// Examples whose table id was absent; they score as misses everywhere.
    pub missing_tables: usize,
    pub acc_qm: f64,
    pub acc_ex: f64,
    pub acc_agg: f64,
    pub acc_sel: f64,
    pub acc_where: f64,
    pub qm_matched: usize,
    pub ex_matched: usize,
    pub agg_matched: usize,
    pub sel_matched: usize,
    pub where_matched: usize,
}

impl MetricsReport {
    /// Line-delimited key=value rendering, one field per line.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("total", self.total.to_string());
        push("missing_tables", self.missing_tables.to_string());
        push("acc_qm", self.acc_qm.to_string());
        push("qm_matched", self.qm_matched.to_string());
        push("acc_ex", self.acc_ex.to_string());
        push("ex_matched", self.ex_matched.to_string());
        push("acc_agg", self.acc_agg.to_string());
        push("agg_matched", self.agg_matched.to_string());
        push("acc_sel", self.acc_sel.to_string());
        push("sel_matched", self.sel_matched.to_string());
        push("acc_where", self.acc_where.to_string());
        push("where_matched", self.where_matched.to_string());
        out
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("split ratios must be nonnegative and sum to 1, got {train}+{dev}+{test}")]
    BadRatios { train: f64, dev: f64, test: f64 },
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Scores a predictor over a split. Examples run sequentially in input order
/// so repeated evaluations produce identical reports.
pub fn evaluate_split<P: QueryPredictor + ?Sized>(
    predictor: &P,
    examples: &[Example],
    tables: &BTreeMap<String, Table>,
) -> Result<MetricsReport, EvalError> {
    let mut missing_tables = 0usize;
    let mut qm = 0usize;
    let mut ex_ok = 0usize;
    let mut agg = 0usize;
    let mut sel = 0usize;
    let mut wh = 0usize;

    for example in examples {
        let Some(table) = tables.get(&example.table_id) else {
            missing_tables += 1;
            continue;
        };
        let pred = predictor.predict(&example.question, &table.schema)?;
        let truth = &example.truth;

        if query_match(&pred, truth) {
            qm += 1;
        }
        if pred.agg == truth.agg {
            agg += 1;
        }
        if pred.sel == truth.sel {
            sel += 1;
        }
        if where_match(&pred, truth) {
            wh += 1;
        }
        let pred_out = exec::execute(&pred, table);
        let truth_out = exec::execute(truth, table);
        if exec::compare_outcomes(&pred_out, &truth_out) {
            ex_ok += 1;
        }
    }

    let total = examples.len();
    let frac = |matched: usize| {
        if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        }
    };
    Ok(MetricsReport {
        total,
        missing_tables,
        acc_qm: frac(qm),
        acc_ex: frac(ex_ok),
        acc_agg: frac(agg),
        acc_sel: frac(sel),
        acc_where: frac(wh),
        qm_matched: qm,
        ex_matched: ex_ok,
        agg_matched: agg,
        sel_matched: sel,
        where_matched: wh,
    })
}

/// Re-partitions a dataset so every table that appears in dev or test also
/// appears in train. One example per table is pinned to train first; the
/// rest are dealt out at the requested proportions. Tables with a single
/// example therefore land entirely in train.
pub fn reshuffle_split(
    all_examples: &[Example],
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>), EvalError> {
    let [r_train, r_dev, r_test] = ratios;
    let sum = r_train + r_dev + r_test;
    if ratios.iter().any(|r| *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(EvalError::BadRatios {
            train: r_train,
            dev: r_dev,
            test: r_test,
        });
    }
    if all_examples.is_empty() {
        return Err(EvalError::EmptyDataset);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_table: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in all_examples.iter().enumerate() {
        by_table.entry(ex.table_id.as_str()).or_default().push(i);
    }

    let mut train_idx: Vec<usize> = Vec::new();
    let mut pool: Vec<usize> = Vec::new();
    for group in by_table.values_mut() {
        group.shuffle(&mut rng);
        train_idx.push(group[0]);
        pool.extend_from_slice(&group[1..]);
    }
    pool.sort_unstable();
    pool.shuffle(&mut rng);

    let n = all_examples.len();
    let want_dev = ((n as f64) * r_dev).round() as usize;
    let want_test = ((n as f64) * r_test).round() as usize;
    let dev_take = want_dev.min(pool.len());
    let test_take = want_test.min(pool.len() - dev_take);

    let mut dev_idx: Vec<usize> = pool[..dev_take].to_vec();
    let mut test_idx: Vec<usize> = pool[dev_take..dev_take + test_take].to_vec();
    train_idx.extend_from_slice(&pool[dev_take + test_take..]);

    train_idx.sort_unstable();
    dev_idx.sort_unstable();
    test_idx.sort_unstable();
    let collect = |idx: Vec<usize>| -> Vec<Example> {
        idx.into_iter().map(|i| all_examples[i].clone()).collect()
    };
    Ok((collect(train_idx), collect(dev_idx), collect(test_idx)))
}
