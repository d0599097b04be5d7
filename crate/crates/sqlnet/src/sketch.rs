//! Structured query sketches: `SELECT $AGG $COLUMN WHERE ($COLUMN $OP $VALUE)*`,
//! canonicalization for order-insensitive comparison, and SQL text rendering.

use crate::exec::parse_number;
use crate::ingest::TableSchema;
use thiserror::Error;

/// Canonicalization rule set version, echoed into resolved run configs so
/// that reports produced under different normalization rules are never
/// compared silently.
pub const CANON_VERSION: u32 = 1;

/// Aggregator applied to the selected column. Index mapping follows the
/// dataset convention: 0 NONE, 1 MAX, 2 MIN, 3 COUNT, 4 SUM, 5 AVG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Agg {
    None,
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

pub const AGG_COUNT: usize = 6;

impl Agg {
    pub fn from_index(i: usize) -> Option<Agg> {
        match i {
            0 => Some(Agg::None),
            1 => Some(Agg::Max),
            2 => Some(Agg::Min),
            3 => Some(Agg::Count),
            4 => Some(Agg::Sum),
            5 => Some(Agg::Avg),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Agg::None => 0,
            Agg::Max => 1,
            Agg::Min => 2,
            Agg::Count => 3,
            Agg::Sum => 4,
            Agg::Avg => 5,
        }
    }

    /// Keyword used in SQL text, `None` for the empty aggregator.
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            Agg::None => None,
            Agg::Max => Some("MAX"),
            Agg::Min => Some("MIN"),
            Agg::Count => Some("COUNT"),
            Agg::Sum => Some("SUM"),
            Agg::Avg => Some("AVG"),
        }
    }
}

/// Condition operator. The task permits {<, =, >, >=, <=} in principle but the
/// model head is a 3-way classifier, so >= and <= are unsupported throughout.
/// Index mapping follows the dataset convention: 0 '=', 1 '>', 2 '<'.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CondOp {
    Eq,
    Gt,
    Lt,
}

pub const OP_COUNT: usize = 3;

impl CondOp {
    pub fn from_index(i: usize) -> Option<CondOp> {
        match i {
            0 => Some(CondOp::Eq),
            1 => Some(CondOp::Gt),
            2 => Some(CondOp::Lt),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            CondOp::Eq => 0,
            CondOp::Gt => 1,
            CondOp::Lt => 2,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CondOp::Eq => "=",
            CondOp::Gt => ">",
            CondOp::Lt => "<",
        }
    }
}

/// One `COLUMN OP VALUE` constraint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Condition {
    pub column: usize,
    pub op: CondOp,
    pub value: String,
}

impl Condition {
    pub fn new(column: usize, op: CondOp, value: impl Into<String>) -> Condition {
        Condition {
            column,
            op,
            value: value.into(),
        }
    }
}

/// A structured SQL query over one table: aggregator, selected column, and a
/// set of conjunctive conditions. `conds` is stored as a list but carries set
/// semantics; use [`canonicalize`] / [`query_match`] for comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuerySketch {
    pub agg: Agg,
    pub sel: usize,
    pub conds: Vec<Condition>,
}

impl QuerySketch {
    pub fn new(agg: Agg, sel: usize, conds: Vec<Condition>) -> QuerySketch {
        QuerySketch { agg, sel, conds }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SketchError {
    #[error("column index {index} out of range for schema with {columns} columns")]
    ColumnOutOfRange { index: usize, columns: usize },
}

/// Normalizes a condition value: trim, strip matching quote layers, collapse
/// internal whitespace, lowercase. Stripping repeats until no matching quote
/// pair remains so that normalization is idempotent.
pub fn normalize_value(raw: &str) -> String {
    let mut s = raw.trim();
    loop {
        let bytes = s.as_bytes();
        if bytes.len() >= 2 {
            let (first, last) = (bytes[0], bytes[bytes.len() - 1]);
            if first == last && (first == b'\'' || first == b'"') {
                s = s[1..s.len() - 1].trim();
                continue;
            }
        }
        break;
    }
    let collapsed: Vec<&str> = s.split_whitespace().collect();
    collapsed.join(" ").to_lowercase()
}

fn cond_key(c: &Condition) -> (usize, usize, String) {
    (c.column, c.op.index(), normalize_value(&c.value))
}

/// Canonical form: values normalized, conditions sorted by
/// (column, op, normalized value), duplicates merged. Idempotent.
pub fn canonicalize(sketch: &QuerySketch) -> QuerySketch {
    let mut conds: Vec<Condition> = sketch
        .conds
        .iter()
        .map(|c| Condition::new(c.column, c.op, normalize_value(&c.value)))
        .collect();
    conds.sort_by(|a, b| cond_key(a).cmp(&cond_key(b)));
    conds.dedup();
    QuerySketch {
        agg: sketch.agg,
        sel: sketch.sel,
        conds,
    }
}

/// Order-insensitive equality: componentwise equality of canonical forms.
pub fn query_match(a: &QuerySketch, b: &QuerySketch) -> bool {
    canonicalize(a) == canonicalize(b)
}

/// Equality restricted to the condition sets, used for the WHERE-clause
/// breakdown metric.
pub fn where_match(a: &QuerySketch, b: &QuerySketch) -> bool {
    canonicalize(a).conds == canonicalize(b).conds
}

/// Renders a sketch as SQL text for inspection and golden tests. Conditions
/// are emitted in canonical order with their stored values; string values are
/// single-quoted with quote doubling, values in numeric-typed columns are
/// left unquoted when they parse as numbers.
pub fn to_sql_text(sketch: &QuerySketch, schema: &TableSchema) -> Result<String, SketchError> {
    let columns = schema.columns.len();
    let col_name = |index: usize| -> Result<&str, SketchError> {
        schema
            .columns
            .get(index)
            .map(|c| c.raw_name.as_str())
            .ok_or(SketchError::ColumnOutOfRange { index, columns })
    };

    let sel_name = col_name(sketch.sel)?;
    let mut out = match sketch.agg.keyword() {
        Some(kw) => format!("SELECT {kw}({sel_name}) FROM t"),
        None => format!("SELECT {sel_name} FROM t"),
    };

    let mut order: Vec<usize> = (0..sketch.conds.len()).collect();
    order.sort_by(|&a, &b| cond_key(&sketch.conds[a]).cmp(&cond_key(&sketch.conds[b])));

    for (i, &ci) in order.iter().enumerate() {
        let cond = &sketch.conds[ci];
        let name = col_name(cond.column)?;
        let numeric_col = schema.columns[cond.column].col_type == crate::ingest::ColType::Real;
        let rendered = if numeric_col && parse_number(&cond.value).is_some() {
            cond.value.clone()
        } else {
            format!("'{}'", cond.value.replace('\'', "''"))
        };
        let kw = if i == 0 { "WHERE" } else { "AND" };
        out.push_str(&format!(" {kw} {name} {} {rendered}", cond.op.symbol()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ColType, TableSchema};
    use proptest::prelude::*;

    fn score_goal_schema() -> TableSchema {
        TableSchema::from_header(
            "t0",
            &["result".into(), "score".into(), "goal".into()],
            &[ColType::Text, ColType::Text, ColType::Real],
        )
        .unwrap()
    }

    fn pair_a() -> QuerySketch {
        QuerySketch::new(
            Agg::None,
            0,
            vec![
                Condition::new(1, CondOp::Eq, "'1-0'"),
                Condition::new(2, CondOp::Eq, "16"),
            ],
        )
    }

    fn pair_b() -> QuerySketch {
        QuerySketch::new(
            Agg::None,
            0,
            vec![
                Condition::new(2, CondOp::Eq, "16"),
                Condition::new(1, CondOp::Eq, "'1-0'"),
            ],
        )
    }

    #[test]
    fn canonicalize_equates_reordered_condition_pair() {
        assert_eq!(canonicalize(&pair_a()), canonicalize(&pair_b()));
        assert_eq!(canonicalize(&pair_a()).conds[0].value, "1-0");
    }

    #[test]
    fn canonicalize_keeps_empty_conds() {
        let s = QuerySketch::new(Agg::Count, 1, vec![]);
        assert_eq!(canonicalize(&s), s);
    }

    #[test]
    fn canonicalize_merges_duplicates() {
        let s = QuerySketch::new(
            Agg::None,
            0,
            vec![
                Condition::new(1, CondOp::Eq, "A"),
                Condition::new(1, CondOp::Eq, "a"),
            ],
        );
        assert_eq!(canonicalize(&s).conds.len(), 1);
    }

    #[test]
    fn normalize_strips_nested_quotes() {
        assert_eq!(normalize_value("''x''"), "x");
        assert_eq!(normalize_value(" 'Art  Long' "), "art long");
        assert_eq!(normalize_value("\"42\""), "42");
        // Unmatched quotes stay.
        assert_eq!(normalize_value("'abc"), "'abc");
    }

    #[test]
    fn query_match_basics() {
        let a = pair_a();
        assert!(query_match(&a, &a));
        assert!(query_match(&pair_a(), &pair_b()));
        let mut c = pair_a();
        c.agg = Agg::Count;
        assert!(!query_match(&pair_a(), &c));
    }

    #[test]
    fn sql_text_renders_roster_lookup() {
        let schema = TableSchema::from_header(
            "t",
            &["Player".into(), "No.".into()],
            &[ColType::Text, ColType::Real],
        )
        .unwrap();
        let s = QuerySketch::new(Agg::None, 0, vec![Condition::new(1, CondOp::Eq, "42")]);
        assert_eq!(
            to_sql_text(&s, &schema).unwrap(),
            "SELECT Player FROM t WHERE No. = 42"
        );
    }

    #[test]
    fn sql_text_aggregator_and_quoting() {
        let schema = score_goal_schema();
        let s = QuerySketch::new(Agg::Count, 0, vec![Condition::new(1, CondOp::Eq, "o'neil")]);
        assert_eq!(
            to_sql_text(&s, &schema).unwrap(),
            "SELECT COUNT(result) FROM t WHERE score = 'o''neil'"
        );
    }

    #[test]
    fn sql_text_text_typed_number_stays_quoted() {
        let schema = score_goal_schema();
        let s = QuerySketch::new(Agg::None, 0, vec![Condition::new(1, CondOp::Eq, "42")]);
        assert_eq!(
            to_sql_text(&s, &schema).unwrap(),
            "SELECT result FROM t WHERE score = '42'"
        );
    }

    #[test]
    fn sql_text_rejects_bad_column() {
        let schema = score_goal_schema();
        let s = QuerySketch::new(Agg::None, 7, vec![]);
        assert_eq!(
            to_sql_text(&s, &schema),
            Err(SketchError::ColumnOutOfRange {
                index: 7,
                columns: 3
            })
        );
    }

    fn arb_cond() -> impl Strategy<Value = Condition> {
        (
            0usize..3,
            0usize..3,
            prop_oneof![
                "[a-z]{1,8}",
                "'[a-z ]{0,6}'",
                "[0-9]{1,4}",
                "\" ?[a-z]{1,4} ?\""
            ],
        )
            .prop_map(|(c, o, v)| Condition::new(c, CondOp::from_index(o).unwrap(), v))
    }

    fn arb_sketch() -> impl Strategy<Value = QuerySketch> {
        (0usize..6, 0usize..3, prop::collection::vec(arb_cond(), 0..4))
            .prop_map(|(a, s, conds)| QuerySketch::new(Agg::from_index(a).unwrap(), s, conds))
    }

    proptest! {
        #[test]
        fn canonicalize_idempotent(s in arb_sketch()) {
            let once = canonicalize(&s);
            prop_assert_eq!(canonicalize(&once), once);
        }

        #[test]
        fn query_match_equivalence(a in arb_sketch(), b in arb_sketch(), c in arb_sketch()) {
            prop_assert!(query_match(&a, &a));
            prop_assert_eq!(query_match(&a, &b), query_match(&b, &a));
            if query_match(&a, &b) && query_match(&b, &c) {
                prop_assert!(query_match(&a, &c));
            }
        }

        #[test]
        fn equal_canonical_sketches_serialize_equally(s in arb_sketch(), shuffle_seed in 0u64..32) {
            let schema = score_goal_schema();
            let canon = canonicalize(&s);
            // Any reordering of the raw conds serializes to the same string
            // after canonicalization.
            let mut reordered = s.clone();
            let shift = (shuffle_seed as usize) % reordered.conds.len().max(1);
            reordered.conds.rotate_left(shift);
            let canon2 = canonicalize(&reordered);
            prop_assert_eq!(
                to_sql_text(&canon, &schema).unwrap(),
                to_sql_text(&canon2, &schema).unwrap()
            );
        }
    }
}
