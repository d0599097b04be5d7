//! In-memory execution of query sketches and result-set comparison.

use thiserror::Error;

use crate::ingest::TableSchema;
use crate::sketch::{normalize_value, Agg, CondOp, QuerySketch};

/// Cells are kept as the strings stored in the tables file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub schema: TableSchema,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResVal {
    Num(f64),
    Text(String),
}

/// Multiset of result values; ordering carries no meaning.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultSet {
    pub items: Vec<ResVal>,
}

impl ResultSet {
    pub fn empty() -> ResultSet {
        ResultSet::default()
    }

    pub fn single_num(n: f64) -> ResultSet {
        ResultSet {
            items: vec![ResVal::Num(n)],
        }
    }

    pub fn of_texts(cells: impl IntoIterator<Item = String>) -> ResultSet {
        ResultSet {
            items: cells.into_iter().map(ResVal::Text).collect(),
        }
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("column {index} out of range for table {table} with {columns} columns")]
    ColumnOutOfRange {
        table: String,
        index: usize,
        columns: usize,
    },
    #[error("comparison {op} needs a numeric value, got {value:?}")]
    NonNumericComparison { op: &'static str, value: String },
}

/// Strict decimal parser for cell text: optional sign, optional well-formed
/// thousands commas in the integer part, optional fractional part. No
/// exponents, no other characters.
pub fn parse_number(s: &str) -> Option<f64> {
    let t = s.trim();
    let (sign, rest) = match t.strip_prefix('-') {
        Some(r) => (-1.0, r),
        None => (1.0, t.strip_prefix('+').unwrap_or(t)),
    };
    if rest.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match rest.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (rest, None),
    };
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    let digits: String = if int_part.contains(',') {
        let groups: Vec<&str> = int_part.split(',').collect();
        let first = groups[0];
        if first.is_empty() || first.len() > 3 || !first.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        for g in &groups[1..] {
            if g.len() != 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
        }
        groups.concat()
    } else {
        if !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        int_part.to_string()
    };
    if digits.is_empty() && frac_part.is_none() {
        return None;
    }
    let text = format!(
        "{}.{}",
        if digits.is_empty() { "0" } else { &digits },
        frac_part.unwrap_or("0")
    );
    text.parse::<f64>().ok().map(|v| sign * v)
}

fn nums_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Runs the sketch: keep rows satisfying every condition, project the
/// select column, apply the aggregator.
pub fn execute(sketch: &QuerySketch, table: &Table) -> Result<ResultSet, ExecError> {
    let columns = table.schema.num_columns();
    let out_of_range = |index: usize| ExecError::ColumnOutOfRange {
        table: table.schema.table_id.clone(),
        index,
        columns,
    };
    if sketch.sel >= columns {
        return Err(out_of_range(sketch.sel));
    }

    // (column, op, normalized value, numeric value) with GT/LT validated
    let mut conds = Vec::with_capacity(sketch.conds.len());
    for cond in &sketch.conds {
        if cond.column >= columns {
            return Err(out_of_range(cond.column));
        }
        let norm = normalize_value(&cond.value);
        let num = parse_number(&norm);
        if cond.op != CondOp::Eq && num.is_none() {
            return Err(ExecError::NonNumericComparison {
                op: cond.op.symbol(),
                value: cond.value.clone(),
            });
        }
        conds.push((cond.column, cond.op, norm, num));
    }

    let matching: Vec<&Vec<String>> = table
        .rows
        .iter()
        .filter(|row| {
            conds.iter().all(|(col, op, norm, num)| {
                let cell = &row[*col];
                match op {
                    CondOp::Eq => match (parse_number(cell), num) {
                        (Some(c), Some(v)) => nums_close(c, *v),
                        _ => normalize_value(cell) == *norm,
                    },
                    CondOp::Gt => parse_number(cell)
                        .is_some_and(|c| c > num.expect("validated above")),
                    CondOp::Lt => parse_number(cell)
                        .is_some_and(|c| c < num.expect("validated above")),
                }
            })
        })
        .collect();

    let projected = || matching.iter().map(|row| row[sketch.sel].clone());
    let numeric: Vec<f64> = matching
        .iter()
        .filter_map(|row| parse_number(&row[sketch.sel]))
        .collect();
    let over_numeric = |f: fn(&[f64]) -> f64| {
        if numeric.is_empty() {
            ResultSet::empty()
        } else {
            ResultSet::single_num(f(&numeric))
        }
    };

    Ok(match sketch.agg {
        Agg::None => ResultSet::of_texts(projected()),
        Agg::Count => ResultSet::single_num(matching.len() as f64),
        Agg::Max => over_numeric(|xs| xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
        Agg::Min => over_numeric(|xs| xs.iter().cloned().fold(f64::INFINITY, f64::min)),
        Agg::Sum => over_numeric(|xs| xs.iter().sum()),
        Agg::Avg => over_numeric(|xs| xs.iter().sum::<f64>() / xs.len() as f64),
    })
}

/// Multiset equality. Values that parse as numbers (including numeric text)
/// compare with relative tolerance 1e-9; everything else compares as a
/// lowercased, trimmed string.
pub fn compare_results(a: &ResultSet, b: &ResultSet) -> bool {
    fn split(rs: &ResultSet) -> (Vec<f64>, Vec<String>) {
        let mut nums = Vec::new();
        let mut texts = Vec::new();
        for item in &rs.items {
            match item {
                ResVal::Num(n) => nums.push(*n),
                ResVal::Text(s) => match parse_number(s) {
                    Some(n) => nums.push(n),
                    None => texts.push(s.trim().to_lowercase()),
                },
            }
        }
        nums.sort_by(f64::total_cmp);
        texts.sort();
        (nums, texts)
    }
    let (an, at) = split(a);
    let (bn, bt) = split(b);
    an.len() == bn.len()
        && at == bt
        && an.iter().zip(&bn).all(|(x, y)| nums_close(*x, *y))
}

/// Equality over full execution outcomes: an error only matches another
/// error. Accuracy scoring treats a predicted-side error as incorrect
/// whenever the truth side succeeded.
pub fn compare_outcomes(
    a: &Result<ResultSet, ExecError>,
    b: &Result<ResultSet, ExecError>,
) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => compare_results(x, y),
        (Err(_), Err(_)) => true,
        _ => false,
    }
}
