//! Loading of examples, tables, and pretrained word vectors, plus the
//! tokenizer and ground-truth value span resolution.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::exec::Table;
use crate::nn::Tensor;
use crate::sketch::{normalize_value, Agg, CondOp, Condition, QuerySketch};

pub const UNK_TOKEN: &str = "<unk>";
pub const END_TOKEN: &str = "<end>";
pub const UNK_INDEX: usize = 0;

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("table {0}: {1}")]
    BadTable(String, String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary: {0}")]
    BadVocabulary(String),
}

fn malformed(path: &Path, line: usize, msg: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Lowercases, splits on whitespace, and splits the punctuation characters
/// `.,?!;:'"()=` into single-character tokens. A period flanked by digits is
/// kept inside the token so decimal numbers survive.
pub fn tokenize(raw: &str) -> Vec<String> {
    let lower = raw.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            continue;
        }
        let decimal_point = c == '.'
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && i + 1 < chars.len()
            && chars[i + 1].is_ascii_digit();
        let split = matches!(c, ',' | '?' | '!' | ';' | ':' | '\'' | '"' | '(' | ')' | '=')
            || (c == '.' && !decimal_point);
        if split {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// A question with its tokenization. The token list always ends with exactly
/// one END marker, so its length L is at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Question {
    pub fn new(raw: impl Into<String>) -> Question {
        let raw = raw.into();
        let mut tokens = tokenize(&raw);
        tokens.push(END_TOKEN.to_string());
        Question { raw, tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColType {
    Real,
    Text,
}

impl ColType {
    pub fn parse(s: &str) -> Option<ColType> {
        match s {
            "real" => Some(ColType::Real),
            "text" => Some(ColType::Text),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ColType::Real => "real",
            ColType::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnDef {
    pub raw_name: String,
    pub name_tokens: Vec<String>,
    pub col_type: ColType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSchema {
    pub table_id: String,
    pub columns: Vec<ColumnDef>,
}

impl TableSchema {
    pub fn from_header(
        table_id: impl Into<String>,
        header: &[String],
        types: &[ColType],
    ) -> Result<TableSchema, IngestError> {
        let table_id = table_id.into();
        if header.is_empty() {
            return Err(IngestError::BadTable(table_id, "no columns".into()));
        }
        if header.len() != types.len() {
            return Err(IngestError::BadTable(
                table_id,
                format!("{} columns but {} types", header.len(), types.len()),
            ));
        }
        let mut columns = Vec::with_capacity(header.len());
        for (i, name) in header.iter().enumerate() {
            let name_tokens = tokenize(name);
            if name_tokens.is_empty() {
                return Err(IngestError::BadTable(
                    table_id,
                    format!("column {i} has an empty name"),
                ));
            }
            columns.push(ColumnDef {
                raw_name: name.clone(),
                name_tokens,
                col_type: types[i],
            });
        }
        Ok(TableSchema { table_id, columns })
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }
}

/// One supervised example. `value_spans` is aligned with `truth.conds`; an
/// entry is the first (start, end) token span of the question whose text
/// matches that condition's value, if any exists.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub question: Question,
    pub table_id: String,
    pub truth: QuerySketch,
    pub value_spans: Vec<Option<(usize, usize)>>,
}

/// Finds the first token span (start ascending, then end ascending) of
/// non-END tokens which, joined with single spaces or with nothing, equals
/// the normalized value.
pub fn locate_value_span(question: &Question, value: &str) -> Option<(usize, usize)> {
    let target = normalize_value(value);
    if target.is_empty() {
        return None;
    }
    let body = &question.tokens[..question.tokens.len() - 1];
    for start in 0..body.len() {
        let mut spaced = String::new();
        let mut fused = String::new();
        for end in start..body.len() {
            if end > start {
                spaced.push(' ');
            }
            spaced.push_str(&body[end]);
            fused.push_str(&body[end]);
            if spaced == target || fused == target {
                return Some((start, end));
            }
            if spaced.len() > target.len() && fused.len() > target.len() {
                break;
            }
        }
    }
    None
}

#[derive(Deserialize)]
struct RawExample {
    question: String,
    table_id: String,
    sql: RawSql,
}

#[derive(Deserialize)]
struct RawSql {
    sel: usize,
    agg: usize,
    conds: Vec<(usize, usize, serde_json::Value)>,
}

fn json_scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses the line-delimited examples format. Table ids are not resolved
/// here; a missing table only matters at evaluation time.
pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<Example>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample = serde_json::from_str(&line)
            .map_err(|e| malformed(path, lineno, e.to_string()))?;
        let agg = Agg::from_index(raw.sql.agg)
            .ok_or_else(|| malformed(path, lineno, format!("aggregator index {} out of range", raw.sql.agg)))?;
        let mut conds = Vec::with_capacity(raw.sql.conds.len());
        for (col, op_idx, value) in &raw.sql.conds {
            let op = CondOp::from_index(*op_idx)
                .ok_or_else(|| malformed(path, lineno, format!("op index {op_idx} out of range")))?;
            let value = json_scalar_to_string(value)
                .ok_or_else(|| malformed(path, lineno, "condition value must be a string or number"))?;
            conds.push(Condition {
                column: *col,
                op,
                value,
            });
        }
        let question = Question::new(raw.question);
        let value_spans = conds
            .iter()
            .map(|c| locate_value_span(&question, &c.value))
            .collect();
        out.push(Example {
            question,
            table_id: raw.table_id,
            truth: QuerySketch {
                agg,
                sel: raw.sql.sel,
                conds,
            },
            value_spans,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RawTable {
    id: String,
    header: Vec<String>,
    types: Vec<String>,
    rows: Vec<Vec<serde_json::Value>>,
}

/// Parses the line-delimited tables format into executable tables keyed by
/// id.
pub fn load_tables(path: impl AsRef<Path>) -> Result<BTreeMap<String, Table>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTable = serde_json::from_str(&line)
            .map_err(|e| malformed(path, lineno, e.to_string()))?;
        let mut types = Vec::with_capacity(raw.types.len());
        for t in &raw.types {
            types.push(ColType::parse(t).ok_or_else(|| {
                malformed(path, lineno, format!("unknown column type {t:?}"))
            })?);
        }
        let schema = TableSchema::from_header(raw.id.clone(), &raw.header, &types)
            .map_err(|e| malformed(path, lineno, e.to_string()))?;
        let mut rows = Vec::with_capacity(raw.rows.len());
        for (r, row) in raw.rows.iter().enumerate() {
            if row.len() != schema.num_columns() {
                return Err(malformed(
                    path,
                    lineno,
                    format!(
                        "row {r} has {} cells, schema has {} columns",
                        row.len(),
                        schema.num_columns()
                    ),
                ));
            }
            let mut cells = Vec::with_capacity(row.len());
            for cell in row {
                cells.push(json_scalar_to_string(cell).ok_or_else(|| {
                    malformed(path, lineno, format!("row {r} has a non-scalar cell"))
                })?);
            }
            rows.push(cells);
        }
        if out.contains_key(&raw.id) {
            return Err(malformed(path, lineno, format!("duplicate table id {:?}", raw.id)));
        }
        out.insert(raw.id, Table { schema, rows });
    }
    Ok(out)
}

/// Token-to-index map. Index 0 is the shared unknown-token row; lookups of
/// absent tokens land there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Collects the distinct tokens of a corpus. The result is independent
    /// of iteration order: entries after the unknown token are sorted.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Vocabulary {
        let mut set: std::collections::BTreeSet<&str> = corpus.into_iter().collect();
        set.insert(END_TOKEN);
        set.remove(UNK_TOKEN);
        let mut tokens = vec![UNK_TOKEN.to_string()];
        tokens.extend(set.into_iter().map(str::to_string));
        Vocabulary::from_tokens(tokens).expect("construction is duplicate-free")
    }

    /// Rebuilds a vocabulary from an explicit token list, e.g. a checkpoint.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary, IngestError> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(IngestError::BadVocabulary(format!(
                "token 0 must be {UNK_TOKEN}"
            )));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(IngestError::BadVocabulary(format!("duplicate token {t:?}")));
            }
        }
        if !index.contains_key(END_TOKEN) {
            return Err(IngestError::BadVocabulary(format!("missing {END_TOKEN}")));
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn end_index(&self) -> usize {
        self.index[END_TOKEN]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Vocabulary over every question token and column-name token in a corpus.
pub fn corpus_vocabulary<'a>(
    examples: impl IntoIterator<Item = &'a Example>,
    schemas: impl IntoIterator<Item = &'a TableSchema>,
) -> Vocabulary {
    let mut tokens: Vec<&str> = Vec::new();
    for ex in examples {
        tokens.extend(ex.question.tokens.iter().map(String::as_str));
    }
    for schema in schemas {
        for col in &schema.columns {
            tokens.extend(col.name_tokens.iter().map(String::as_str));
        }
    }
    Vocabulary::build(tokens)
}

/// Reads a word-vector file into a |V| x d matrix aligned with `vocab`.
/// Tokens absent from the file keep zero rows; the unknown-token row is
/// forced to zero. When the file has no data lines the width falls back to
/// `fallback_dim`.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    fallback_dim: usize,
) -> Result<Tensor, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut dim: Option<usize> = None;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-blank line has a first field");
        let mut values = Vec::new();
        for p in parts {
            values.push(p.parse::<f64>().map_err(|_| {
                malformed(path, lineno, format!("bad number {p:?}"))
            })?);
        }
        match dim {
            None => {
                if values.is_empty() {
                    return Err(malformed(path, lineno, "vector has no components"));
                }
                dim = Some(values.len());
            }
            Some(d) if d != values.len() => {
                return Err(malformed(
                    path,
                    lineno,
                    format!("vector length {} differs from {d}", values.len()),
                ));
            }
            Some(_) => {}
        }
        let token = token.to_lowercase();
        if vocab.contains(&token) {
            rows.push((vocab.index_of(&token), values));
        }
    }
    let dim = dim.unwrap_or(fallback_dim);
    let mut table = Tensor::zeros(vocab.len(), dim);
    for (row, values) in rows {
        for (c, v) in values.into_iter().enumerate() {
            table.set(row, c, v);
        }
    }
    for c in 0..dim {
        table.set(UNK_INDEX, c, 0.0);
    }
    Ok(table)
}
