//! The synthesizer model: per-head bidirectional LSTM encoders over the
//! question and over column names, column attention, a sequence-to-set
//! WHERE-column scorer, condition-count / operator heads, a pointer decoder
//! for values, SELECT-column and aggregator heads, and greedy inference
//! assembling a query sketch.

mod gradcheck;
mod loss;
mod train;

pub use loss::LossBreakdown;
pub use train::{train, EpochStats, TrainError, TrainOptions};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ingest::{ColumnDef, Question, TableSchema, Vocabulary};
use crate::nn::{argmax, top_k, BiLstm, LstmCell, NnError, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::sketch::{Agg, CondOp, Condition, QuerySketch, AGG_COUNT, OP_COUNT};

/// WHERE-column scoring functions, in increasing order of capacity. All
/// three are always parameterized; the switch selects which one runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhereColFormula {
    /// sigma(u_c^T E_col + u_q^T E_Q): no attention, whole-question summary.
    SummaryLinear,
    /// sigma(u_c^T E_col + u_q^T E_attn): linear on the attended question.
    AttentionLinear,
    /// sigma(u_a^T tanh(W_col E_col + W_q E_attn)): one hidden layer on the
    /// attended question.
    AttentionMlp,
}

impl WhereColFormula {
    pub fn parse(s: &str) -> Option<WhereColFormula> {
        match s {
            "summary_linear" => Some(WhereColFormula::SummaryLinear),
            "attention_linear" => Some(WhereColFormula::AttentionLinear),
            "attention_mlp" => Some(WhereColFormula::AttentionMlp),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            WhereColFormula::SummaryLinear => "summary_linear",
            WhereColFormula::AttentionLinear => "attention_linear",
            WhereColFormula::AttentionMlp => "attention_mlp",
        }
    }
}

/// Ablation rows exposed by the config: the base sequence-to-set scorer,
/// plus column attention, plus trainable word embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    Seq2Set,
    Seq2SetCa,
    Seq2SetCaWe,
}

impl ModelVariant {
    pub fn parse(s: &str) -> Option<ModelVariant> {
        match s.to_lowercase().as_str() {
            "seq2set" => Some(ModelVariant::Seq2Set),
            "seq2set+ca" => Some(ModelVariant::Seq2SetCa),
            "seq2set+ca+we" => Some(ModelVariant::Seq2SetCaWe),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelVariant::Seq2Set => "seq2set",
            ModelVariant::Seq2SetCa => "seq2set+CA",
            ModelVariant::Seq2SetCaWe => "seq2set+CA+WE",
        }
    }

    pub fn formula(&self) -> WhereColFormula {
        match self {
            ModelVariant::Seq2Set => WhereColFormula::SummaryLinear,
            _ => WhereColFormula::AttentionMlp,
        }
    }

    pub fn train_embeddings(&self) -> bool {
        matches!(self, ModelVariant::Seq2SetCaWe)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Hidden size of every head; must be even (split across directions).
    pub d: usize,
    /// Width of the shared word-embedding table.
    pub d_emb: usize,
    /// Cap on predicted WHERE conditions.
    pub n_cond: usize,
    /// Weight on positive labels in the WHERE-column set loss.
    pub alpha: f64,
    /// Cap on decoded value length, in question tokens.
    pub max_value_len: usize,
    pub formula: WhereColFormula,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            d: 100,
            d_emb: 50,
            n_cond: 4,
            alpha: 3.0,
            max_value_len: 10,
            formula: WhereColFormula::AttentionMlp,
        }
    }
}

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("column {index} out of range: table {table} has {columns} columns")]
    ColumnOutOfRange {
        table: String,
        index: usize,
        columns: usize,
    },
    #[error("model requires an even hidden size, got {0}")]
    OddHiddenSize(usize),
    #[error("embedding table is {rows}x{cols}, expected {expect_rows}x{expect_cols}")]
    EmbeddingShape {
        rows: usize,
        cols: usize,
        expect_rows: usize,
        expect_cols: usize,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Names the six predictor heads. Every head owns its question encoder and
/// column encoder; only the word-embedding table is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    WhereCol,
    NumCol,
    Op,
    Value,
    Sel,
    Agg,
}

#[derive(Debug, Clone)]
struct Encoders {
    q: BiLstm,
    col: BiLstm,
}

impl Encoders {
    fn register(store: &mut ParamStore, name: &str, d_emb: usize, d: usize, rng: &mut ChaCha8Rng) -> Encoders {
        Encoders {
            q: BiLstm::register(store, &format!("{name}.q"), d_emb, d / 2, rng),
            col: BiLstm::register(store, &format!("{name}.col"), d_emb, d / 2, rng),
        }
    }
}

#[derive(Debug, Clone)]
struct WhereColHead {
    enc: Encoders,
    attn_w: ParamId,
    lin_u_col: ParamId,
    lin_u_q: ParamId,
    mlp_w_col: ParamId,
    mlp_w_q: ParamId,
    mlp_u: ParamId,
}

#[derive(Debug, Clone)]
struct NumColHead {
    enc: Encoders,
    attn_w: ParamId,
    out_w1: ParamId,
    out_w2: ParamId,
}

#[derive(Debug, Clone)]
struct OpHead {
    enc: Encoders,
    attn_w: ParamId,
    mlp_w_col: ParamId,
    mlp_w_q: ParamId,
    out: ParamId,
}

#[derive(Debug, Clone)]
struct ValueHead {
    enc: Encoders,
    dec: LstmCell,
    start: ParamId,
    attn_u: ParamId,
    attn_w_h: ParamId,
    attn_w_col: ParamId,
    attn_w_s: ParamId,
}

#[derive(Debug, Clone)]
struct SelHead {
    enc: Encoders,
    attn_w: ParamId,
    mlp_w_col: ParamId,
    mlp_w_q: ParamId,
    mlp_u: ParamId,
}

#[derive(Debug, Clone)]
struct AggHead {
    enc: Encoders,
    attn_w: ParamId,
    mlp_w: ParamId,
    out: ParamId,
}

pub struct SqlNetModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub(crate) embedding: ParamId,
    wherecol: WhereColHead,
    numcol: NumColHead,
    op: OpHead,
    value: ValueHead,
    sel: SelHead,
    agg: AggHead,
}

/// Question encoding on a tape: per-position hidden columns, the stacked
/// matrix, and the summary vector.
pub(crate) struct QuestionNodes {
    pub columns: Vec<NodeId>,
    pub states: NodeId,
    pub summary: NodeId,
}

impl SqlNetModel {
    /// Builds a freshly initialized model. `embeddings` must be aligned with
    /// `vocab` rows and `config.d_emb` wide; it starts out frozen.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        embeddings: Tensor,
        seed: u64,
    ) -> Result<SqlNetModel, ModelError> {
        if config.d % 2 != 0 || config.d == 0 {
            return Err(ModelError::OddHiddenSize(config.d));
        }
        if embeddings.shape() != (vocab.len(), config.d_emb) {
            let (rows, cols) = embeddings.shape();
            return Err(ModelError::EmbeddingShape {
                rows,
                cols,
                expect_rows: vocab.len(),
                expect_cols: config.d_emb,
            });
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = store.register("embedding", embeddings);
        store.set_trainable(embedding, false);

        let d = config.d;
        let de = config.d_emb;
        let mat = |store: &mut ParamStore, name: &str, rows: usize, rng: &mut ChaCha8Rng| {
            store.register_uniform(name, rows, d, d, rng)
        };
        let vec_d = |store: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| {
            store.register_uniform(name, d, 1, d, rng)
        };

        let wherecol = {
            let enc = Encoders::register(&mut store, "wherecol", de, d, &mut rng);
            WhereColHead {
                enc,
                attn_w: mat(&mut store, "wherecol.attn.w", d, &mut rng),
                lin_u_col: vec_d(&mut store, "wherecol.lin.u_col", &mut rng),
                lin_u_q: vec_d(&mut store, "wherecol.lin.u_q", &mut rng),
                mlp_w_col: mat(&mut store, "wherecol.mlp.w_col", d, &mut rng),
                mlp_w_q: mat(&mut store, "wherecol.mlp.w_q", d, &mut rng),
                mlp_u: vec_d(&mut store, "wherecol.mlp.u", &mut rng),
            }
        };
        let numcol = {
            let enc = Encoders::register(&mut store, "numcol", de, d, &mut rng);
            NumColHead {
                enc,
                attn_w: mat(&mut store, "numcol.attn.w", d, &mut rng),
                out_w1: mat(&mut store, "numcol.out.w1", config.n_cond + 1, &mut rng),
                out_w2: mat(&mut store, "numcol.out.w2", d, &mut rng),
            }
        };
        let op = {
            let enc = Encoders::register(&mut store, "op", de, d, &mut rng);
            OpHead {
                enc,
                attn_w: mat(&mut store, "op.attn.w", d, &mut rng),
                mlp_w_col: mat(&mut store, "op.mlp.w_col", d, &mut rng),
                mlp_w_q: mat(&mut store, "op.mlp.w_q", d, &mut rng),
                out: mat(&mut store, "op.out", OP_COUNT, &mut rng),
            }
        };
        let value = {
            let enc = Encoders::register(&mut store, "value", de, d, &mut rng);
            ValueHead {
                enc,
                dec: LstmCell::register(&mut store, "value.dec", d, d, &mut rng),
                start: vec_d(&mut store, "value.start", &mut rng),
                attn_u: vec_d(&mut store, "value.attn.u", &mut rng),
                attn_w_h: mat(&mut store, "value.attn.w_h", d, &mut rng),
                attn_w_col: mat(&mut store, "value.attn.w_col", d, &mut rng),
                attn_w_s: mat(&mut store, "value.attn.w_s", d, &mut rng),
            }
        };
        let sel = {
            let enc = Encoders::register(&mut store, "sel", de, d, &mut rng);
            SelHead {
                enc,
                attn_w: mat(&mut store, "sel.attn.w", d, &mut rng),
                mlp_w_col: mat(&mut store, "sel.mlp.w_col", d, &mut rng),
                mlp_w_q: mat(&mut store, "sel.mlp.w_q", d, &mut rng),
                mlp_u: vec_d(&mut store, "sel.mlp.u", &mut rng),
            }
        };
        let agg = {
            let enc = Encoders::register(&mut store, "agg", de, d, &mut rng);
            AggHead {
                enc,
                attn_w: mat(&mut store, "agg.attn.w", d, &mut rng),
                mlp_w: mat(&mut store, "agg.mlp.w", d, &mut rng),
                out: mat(&mut store, "agg.out", AGG_COUNT, &mut rng),
            }
        };

        Ok(SqlNetModel {
            config,
            vocab,
            store,
            embedding,
            wherecol,
            numcol,
            op,
            value,
            sel,
            agg,
        })
    }

    fn encoders(&self, head: Head) -> &Encoders {
        match head {
            Head::WhereCol => &self.wherecol.enc,
            Head::NumCol => &self.numcol.enc,
            Head::Op => &self.op.enc,
            Head::Value => &self.value.enc,
            Head::Sel => &self.sel.enc,
            Head::Agg => &self.agg.enc,
        }
    }

    fn embed_tokens(&self, tape: &mut Tape, tokens: &[String]) -> Vec<NodeId> {
        tokens
            .iter()
            .map(|t| tape.embed_row(&self.store, self.embedding, self.vocab.index_of(t)))
            .collect()
    }

    pub(crate) fn question_nodes(
        &self,
        tape: &mut Tape,
        head: Head,
        question: &Question,
    ) -> Result<QuestionNodes, NnError> {
        let xs = self.embed_tokens(tape, &question.tokens);
        let enc = &self.encoders(head).q;
        let out = enc.encode(tape, &self.store, &xs)?;
        Ok(QuestionNodes {
            columns: out.columns,
            states: out.states,
            summary: out.summary,
        })
    }

    pub(crate) fn column_nodes(
        &self,
        tape: &mut Tape,
        head: Head,
        column: &ColumnDef,
    ) -> Result<NodeId, NnError> {
        let xs = self.embed_tokens(tape, &column.name_tokens);
        let enc = &self.encoders(head).col;
        Ok(enc.encode(tape, &self.store, &xs)?.summary)
    }

    /// Attention over question positions conditioned on a vector: weights
    /// softmax over cond^T W H_i, output H * weights. Returns (pooled,
    /// weights).
    pub(crate) fn attention_nodes(
        &self,
        tape: &mut Tape,
        w: ParamId,
        cond: NodeId,
        states: NodeId,
    ) -> Result<(NodeId, NodeId), NnError> {
        let w = tape.leaf(&self.store, w);
        let ct = tape.transpose(cond);
        let cw = tape.matmul(ct, w)?;
        let scores_row = tape.matmul(cw, states)?;
        let scores = tape.transpose(scores_row);
        let weights = tape.softmax(scores)?;
        let pooled = tape.matmul(states, weights)?;
        Ok((pooled, weights))
    }

    /// Per-column WHERE logit for the configured formula.
    pub(crate) fn wherecol_logit(
        &self,
        tape: &mut Tape,
        q: &QuestionNodes,
        e_col: NodeId,
    ) -> Result<NodeId, NnError> {
        let h = &self.wherecol;
        match self.config.formula {
            WhereColFormula::SummaryLinear => {
                let uc = tape.leaf(&self.store, h.lin_u_col);
                let uq = tape.leaf(&self.store, h.lin_u_q);
                let a = tape.dot(uc, e_col)?;
                let b = tape.dot(uq, q.summary)?;
                tape.add(a, b)
            }
            WhereColFormula::AttentionLinear => {
                let (attended, _) = self.attention_nodes(tape, h.attn_w, e_col, q.states)?;
                let uc = tape.leaf(&self.store, h.lin_u_col);
                let uq = tape.leaf(&self.store, h.lin_u_q);
                let a = tape.dot(uc, e_col)?;
                let b = tape.dot(uq, attended)?;
                tape.add(a, b)
            }
            WhereColFormula::AttentionMlp => {
                let (attended, _) = self.attention_nodes(tape, h.attn_w, e_col, q.states)?;
                let wc = tape.leaf(&self.store, h.mlp_w_col);
                let wq = tape.leaf(&self.store, h.mlp_w_q);
                let a = tape.matmul(wc, e_col)?;
                let b = tape.matmul(wq, attended)?;
                let s = tape.add(a, b)?;
                let t = tape.tanh(s);
                let u = tape.leaf(&self.store, h.mlp_u);
                tape.dot(u, t)
            }
        }
    }

    /// Condition-count logits (n_cond + 1 classes) from self-conditioned
    /// attention pooling of the question.
    pub(crate) fn numcol_logits(
        &self,
        tape: &mut Tape,
        q: &QuestionNodes,
    ) -> Result<NodeId, NnError> {
        let h = &self.numcol;
        let (pooled, _) = self.attention_nodes(tape, h.attn_w, q.summary, q.states)?;
        let w2 = tape.leaf(&self.store, h.out_w2);
        let z = tape.matmul(w2, pooled)?;
        let t = tape.tanh(z);
        let w1 = tape.leaf(&self.store, h.out_w1);
        tape.matmul(w1, t)
    }

    /// Operator logits (3 classes) for one column.
    pub(crate) fn op_logits(
        &self,
        tape: &mut Tape,
        q: &QuestionNodes,
        e_col: NodeId,
    ) -> Result<NodeId, NnError> {
        let h = &self.op;
        let (attended, _) = self.attention_nodes(tape, h.attn_w, e_col, q.states)?;
        let wc = tape.leaf(&self.store, h.mlp_w_col);
        let wq = tape.leaf(&self.store, h.mlp_w_q);
        let a = tape.matmul(wc, e_col)?;
        let b = tape.matmul(wq, attended)?;
        let s = tape.add(a, b)?;
        let t = tape.tanh(s);
        let out = tape.leaf(&self.store, h.out);
        tape.matmul(out, t)
    }

    /// Pointer scores over question positions for one decoder state.
    pub(crate) fn value_scores(
        &self,
        tape: &mut Tape,
        q: &QuestionNodes,
        e_col: NodeId,
        state: NodeId,
    ) -> Result<NodeId, NnError> {
        let h = &self.value;
        let wh = tape.leaf(&self.store, h.attn_w_h);
        let wc = tape.leaf(&self.store, h.attn_w_col);
        let ws = tape.leaf(&self.store, h.attn_w_s);
        let hq = tape.matmul(wh, q.states)?;
        let col_part = tape.matmul(wc, e_col)?;
        let state_part = tape.matmul(ws, state)?;
        let fixed = tape.add(col_part, state_part)?;
        let pre = tape.add_col_broadcast(hq, fixed)?;
        let t = tape.tanh(pre);
        let u = tape.leaf(&self.store, h.attn_u);
        let ut = tape.transpose(u);
        let row = tape.matmul(ut, t)?;
        Ok(tape.transpose(row))
    }

    /// SELECT-column logits over all schema columns.
    pub(crate) fn sel_logits(
        &self,
        tape: &mut Tape,
        q: &QuestionNodes,
        e_cols: &[NodeId],
    ) -> Result<NodeId, NnError> {
        let h = &self.sel;
        let mut scores = Vec::with_capacity(e_cols.len());
        for &e_col in e_cols {
            let (attended, _) = self.attention_nodes(tape, h.attn_w, e_col, q.states)?;
            let wc = tape.leaf(&self.store, h.mlp_w_col);
            let wq = tape.leaf(&self.store, h.mlp_w_q);
            let a = tape.matmul(wc, e_col)?;
            let b = tape.matmul(wq, attended)?;
            let s = tape.add(a, b)?;
            let t = tape.tanh(s);
            let u = tape.leaf(&self.store, h.mlp_u);
            scores.push(tape.dot(u, t)?);
        }
        stack_scalars(tape, &scores)
    }

    /// Aggregator logits (6 classes) conditioned on a select column.
    pub(crate) fn agg_logits(
        &self,
        tape: &mut Tape,
        q: &QuestionNodes,
        e_col: NodeId,
    ) -> Result<NodeId, NnError> {
        let h = &self.agg;
        let (attended, _) = self.attention_nodes(tape, h.attn_w, e_col, q.states)?;
        let w = tape.leaf(&self.store, h.mlp_w);
        let z = tape.matmul(w, attended)?;
        let t = tape.tanh(z);
        let out = tape.leaf(&self.store, h.out);
        tape.matmul(out, t)
    }

    fn check_schema(&self, schema: &TableSchema) -> Result<(), ModelError> {
        assert!(
            schema.num_columns() >= 1,
            "schema invariant: at least one column"
        );
        Ok(())
    }

    fn check_column(&self, schema: &TableSchema, index: usize) -> Result<(), ModelError> {
        if index >= schema.num_columns() {
            return Err(ModelError::ColumnOutOfRange {
                table: schema.table_id.clone(),
                index,
                columns: schema.num_columns(),
            });
        }
        Ok(())
    }

    /// Per-position hidden states and summary from a head's question
    /// encoder, as plain tensors.
    pub fn encode_question(&self, head: Head, question: &Question) -> (Tensor, Tensor) {
        let mut tape = Tape::new();
        let q = self
            .question_nodes(&mut tape, head, question)
            .expect("question encoding has consistent shapes");
        (tape.value(q.states).clone(), tape.value(q.summary).clone())
    }

    /// Summary vector of a head's column encoder over the column name.
    pub fn encode_column(&self, head: Head, column: &ColumnDef) -> Tensor {
        let mut tape = Tape::new();
        let mut node = || -> Result<NodeId, NnError> { self.column_nodes(&mut tape, head, column) };
        let e = node().expect("column encoding has consistent shapes");
        tape.value(e).clone()
    }

    /// Probability that each column appears in the WHERE clause. Every entry
    /// is clamped to the open interval (0, 1).
    pub fn predict_where_columns(
        &self,
        question: &Question,
        schema: &TableSchema,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_schema(schema)?;
        let mut tape = Tape::new();
        let q = self.question_nodes(&mut tape, Head::WhereCol, question)?;
        let mut probs = Vec::with_capacity(schema.num_columns());
        for col in &schema.columns {
            let e_col = self.column_nodes(&mut tape, Head::WhereCol, col)?;
            let z = self.wherecol_logit(&mut tape, &q, e_col)?;
            let p = tape.sigmoid(z);
            probs.push(clamp_open_unit(tape.value(p).item()));
        }
        Ok(probs)
    }

    /// Distribution over the number of conditions, classes 0..=n_cond.
    pub fn predict_num_columns(&self, question: &Question) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let q = self.question_nodes(&mut tape, Head::NumCol, question)?;
        let logits = self.numcol_logits(&mut tape, &q)?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Distribution over the three comparison operators for one column.
    pub fn predict_op(
        &self,
        question: &Question,
        column: &ColumnDef,
    ) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let q = self.question_nodes(&mut tape, Head::Op, question)?;
        let e_col = self.column_nodes(&mut tape, Head::Op, column)?;
        let logits = self.op_logits(&mut tape, &q, e_col)?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Greedy pointer decode of a condition value for one column: question
    /// token positions, excluding the terminating END position.
    pub fn decode_value(
        &self,
        question: &Question,
        column: &ColumnDef,
        max_len: usize,
    ) -> Result<Vec<usize>, ModelError> {
        Ok(self.decode_value_scored(question, column, max_len)?.0)
    }

    /// Greedy decode that also reports the product of the chosen step
    /// probabilities, END step included.
    pub fn decode_value_scored(
        &self,
        question: &Question,
        column: &ColumnDef,
        max_len: usize,
    ) -> Result<(Vec<usize>, f64), ModelError> {
        let mut tape = Tape::new();
        let q = self.question_nodes(&mut tape, Head::Value, question)?;
        let e_col = self.column_nodes(&mut tape, Head::Value, column)?;
        let end_pos = question.tokens.len() - 1;

        let mut h = q.summary;
        let mut c = tape.constant(Tensor::zeros(self.config.d, 1));
        let mut input = tape.leaf(&self.store, self.value.start);
        let mut out = Vec::new();
        let mut prob = 1.0;
        for _ in 0..max_len.max(1) {
            let (nh, nc) = self.value.dec.step(&mut tape, &self.store, input, h, c)?;
            h = nh;
            c = nc;
            let scores = self.value_scores(&mut tape, &q, e_col, h)?;
            let dist = tape.softmax(scores)?;
            let probs = tape.value(dist).data();
            let pos = argmax(probs);
            prob *= probs[pos];
            if pos == end_pos {
                break;
            }
            out.push(pos);
            input = q.columns[pos];
        }
        Ok((out, prob))
    }

    /// Distribution over schema columns for the SELECT slot.
    pub fn predict_select_column(
        &self,
        question: &Question,
        schema: &TableSchema,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_schema(schema)?;
        let mut tape = Tape::new();
        let q = self.question_nodes(&mut tape, Head::Sel, question)?;
        let mut e_cols = Vec::with_capacity(schema.num_columns());
        for col in &schema.columns {
            e_cols.push(self.column_nodes(&mut tape, Head::Sel, col)?);
        }
        let logits = self.sel_logits(&mut tape, &q, &e_cols)?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Distribution over the six aggregators, conditioned on a column.
    pub fn predict_aggregator(
        &self,
        question: &Question,
        sel_column: &ColumnDef,
    ) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let q = self.question_nodes(&mut tape, Head::Agg, question)?;
        let e_col = self.column_nodes(&mut tape, Head::Agg, sel_column)?;
        let logits = self.agg_logits(&mut tape, &q, e_col)?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Full WHERE-clause prediction: per-column probabilities, the chosen
    /// count K, and K (column, op, value positions) triples.
    pub fn predict_where(
        &self,
        question: &Question,
        schema: &TableSchema,
    ) -> Result<WherePrediction, ModelError> {
        let column_probs = self.predict_where_columns(question, schema)?;
        let count_dist = self.predict_num_columns(question)?;
        let k = argmax(&count_dist).min(schema.num_columns());
        let chosen = top_k(&column_probs, k);
        let mut conds = Vec::with_capacity(chosen.len());
        for col in chosen {
            let ops = self.predict_op(question, &schema.columns[col])?;
            let positions =
                self.decode_value(question, &schema.columns[col], self.config.max_value_len)?;
            conds.push(PredictedCond {
                column: col,
                op: argmax(&ops),
                value_positions: positions,
            });
        }
        Ok(WherePrediction {
            column_probs,
            k,
            conds,
        })
    }

    /// Greedy inference of a complete sketch.
    pub fn infer_query(
        &self,
        question: &Question,
        schema: &TableSchema,
    ) -> Result<QuerySketch, ModelError> {
        self.check_schema(schema)?;
        let sel_dist = self.predict_select_column(question, schema)?;
        let sel = argmax(&sel_dist);
        let agg_dist = self.predict_aggregator(question, &schema.columns[sel])?;
        let agg = Agg::from_index(argmax(&agg_dist)).expect("distribution has 6 entries");
        let where_pred = self.predict_where(question, schema)?;
        let conds = where_pred
            .conds
            .iter()
            .map(|c| Condition {
                column: c.column,
                op: CondOp::from_index(c.op).expect("distribution has 3 entries"),
                value: join_positions(question, &c.value_positions),
            })
            .collect();
        Ok(QuerySketch { agg, sel, conds })
    }
}

/// One predicted condition, with the value still as question positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictedCond {
    pub column: usize,
    pub op: usize,
    pub value_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WherePrediction {
    pub column_probs: Vec<f64>,
    pub k: usize,
    pub conds: Vec<PredictedCond>,
}

/// Renders pointer positions back into question text.
pub fn join_positions(question: &Question, positions: &[usize]) -> String {
    positions
        .iter()
        .map(|&p| question.tokens[p].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

fn clamp_open_unit(p: f64) -> f64 {
    p.max(f64::MIN_POSITIVE).min(1.0 - f64::EPSILON / 2.0)
}

/// Stacks 1x1 nodes into an n x 1 vector node.
pub(crate) fn stack_scalars(tape: &mut Tape, scalars: &[NodeId]) -> Result<NodeId, NnError> {
    assert!(!scalars.is_empty(), "stack of no scalars");
    let mut acc = scalars[0];
    for &s in &scalars[1..] {
        acc = tape.concat(acc, s)?;
    }
    Ok(acc)
}

/// Attention pooling over plain tensors, for inspection and property tests:
/// weights = softmax over cond^T W H per position, pooled = H * weights.
pub fn column_attention(e_col: &Tensor, h_q: &Tensor, w: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let mut store = ParamStore::new();
    let wid = store.register("w", w.clone());
    let cond = tape.constant(e_col.clone());
    let states = tape.constant(h_q.clone());
    let wl = tape.leaf(&store, wid);
    let ct = tape.transpose(cond);
    let cw = tape.matmul(ct, wl).expect("shape d x d");
    let row = tape.matmul(cw, states).expect("shape d x L");
    let scores = tape.transpose(row);
    let weights = tape.softmax(scores).expect("non-empty scores");
    let pooled = tape.matmul(states, weights).expect("shape agrees");
    (tape.value(pooled).clone(), tape.value(weights).clone())
}
