//! Training loss for one example: weighted set loss over WHERE columns plus
//! cross-entropy for the count, operator, value-pointer, select, and
//! aggregator heads.

use std::collections::BTreeSet;

use super::{ModelError, SqlNetModel};
use crate::ingest::{Example, TableSchema};
use crate::nn::{NnError, NodeId, Tape, Tensor};

/// Per-head loss values read back from the tape; `total` is their sum and
/// is the value of the returned loss node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub wherecol: f64,
    pub numcol: f64,
    pub op: f64,
    pub value: f64,
    pub sel: f64,
    pub agg: f64,
    pub total: f64,
}

fn add_opt(tape: &mut Tape, acc: Option<NodeId>, term: NodeId) -> Result<Option<NodeId>, NnError> {
    Ok(Some(match acc {
        Some(a) => tape.add(a, term)?,
        None => term,
    }))
}

impl SqlNetModel {
    /// Builds the full loss graph for one example. Conditions are visited in
    /// a canonical order, so the result is bit-identical under permutations
    /// of the ground-truth condition list. Conditions whose value span is
    /// unresolved contribute no value-decoder term.
    pub fn training_loss(
        &self,
        example: &Example,
        schema: &TableSchema,
    ) -> Result<(Tape, NodeId, LossBreakdown), ModelError> {
        self.check_column(schema, example.truth.sel)?;
        for cond in &example.truth.conds {
            self.check_column(schema, cond.column)?;
        }

        let conds = &example.truth.conds;
        let mut order: Vec<usize> = (0..conds.len()).collect();
        order.sort_by(|&a, &b| {
            let ka = (conds[a].column, conds[a].op.index(), conds[a].value.as_str());
            let kb = (conds[b].column, conds[b].op.index(), conds[b].value.as_str());
            ka.cmp(&kb)
        });

        let mut tape = Tape::new();
        let question = &example.question;

        // WHERE-column set loss, weighted alpha on positive labels
        let wherecol_node = {
            let q = self.question_nodes(&mut tape, super::Head::WhereCol, question)?;
            let positives: BTreeSet<usize> = conds.iter().map(|c| c.column).collect();
            let mut acc = None;
            for (i, col) in schema.columns.iter().enumerate() {
                let e_col = self.column_nodes(&mut tape, super::Head::WhereCol, col)?;
                let z = self.wherecol_logit(&mut tape, &q, e_col)?;
                let term = if positives.contains(&i) {
                    // -alpha log sigmoid(z) = alpha softplus(-z)
                    let neg = tape.scale(z, -1.0);
                    let sp = tape.softplus(neg);
                    tape.scale(sp, self.config.alpha)
                } else {
                    // -log (1 - sigmoid(z)) = softplus(z)
                    tape.softplus(z)
                };
                acc = add_opt(&mut tape, acc, term)?;
            }
            acc.expect("at least one column")
        };

        // condition-count cross-entropy, target clamped to n_cond
        let numcol_node = {
            let q = self.question_nodes(&mut tape, super::Head::NumCol, question)?;
            let logits = self.numcol_logits(&mut tape, &q)?;
            let target = conds.len().min(self.config.n_cond);
            tape.cross_entropy(logits, target)?
        };

        // operator cross-entropy per condition
        let op_node = {
            if order.is_empty() {
                tape.constant(Tensor::scalar(0.0))
            } else {
                let q = self.question_nodes(&mut tape, super::Head::Op, question)?;
                let mut acc = None;
                for &idx in &order {
                    let cond = &conds[idx];
                    let e_col =
                        self.column_nodes(&mut tape, super::Head::Op, &schema.columns[cond.column])?;
                    let logits = self.op_logits(&mut tape, &q, e_col)?;
                    let ce = tape.cross_entropy(logits, cond.op.index())?;
                    acc = add_opt(&mut tape, acc, ce)?;
                }
                acc.expect("non-empty order")
            }
        };

        // teacher-forced pointer decoding toward span tokens then END
        let value_node = {
            let spanned: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&idx| example.value_spans.get(idx).copied().flatten().is_some())
                .collect();
            if spanned.is_empty() {
                tape.constant(Tensor::scalar(0.0))
            } else {
                let q = self.question_nodes(&mut tape, super::Head::Value, question)?;
                let end_pos = question.tokens.len() - 1;
                let zero_state = tape.constant(Tensor::zeros(self.config.d, 1));
                let mut acc = None;
                for idx in spanned {
                    let cond = &conds[idx];
                    let (start, end) = example.value_spans[idx].expect("filtered to resolved");
                    let e_col = self.column_nodes(
                        &mut tape,
                        super::Head::Value,
                        &schema.columns[cond.column],
                    )?;
                    let mut h = q.summary;
                    let mut c = zero_state;
                    let mut input = tape.leaf(&self.store, self.value.start);
                    for target in (start..=end).chain([end_pos]) {
                        let (nh, nc) = self.value.dec.step(&mut tape, &self.store, input, h, c)?;
                        h = nh;
                        c = nc;
                        let scores = self.value_scores(&mut tape, &q, e_col, h)?;
                        let ce = tape.cross_entropy(scores, target)?;
                        acc = add_opt(&mut tape, acc, ce)?;
                        input = q.columns[target];
                    }
                }
                acc.expect("at least one decoding step")
            }
        };

        // SELECT-column cross-entropy over all schema columns
        let sel_node = {
            let q = self.question_nodes(&mut tape, super::Head::Sel, question)?;
            let mut e_cols = Vec::with_capacity(schema.num_columns());
            for col in &schema.columns {
                e_cols.push(self.column_nodes(&mut tape, super::Head::Sel, col)?);
            }
            let logits = self.sel_logits(&mut tape, &q, &e_cols)?;
            tape.cross_entropy(logits, example.truth.sel)?
        };

        // aggregator cross-entropy, conditioned on the ground-truth column
        let agg_node = {
            let q = self.question_nodes(&mut tape, super::Head::Agg, question)?;
            let e_col =
                self.column_nodes(&mut tape, super::Head::Agg, &schema.columns[example.truth.sel])?;
            let logits = self.agg_logits(&mut tape, &q, e_col)?;
            tape.cross_entropy(logits, example.truth.agg.index())?
        };

        let mut total = tape.add(wherecol_node, numcol_node)?;
        total = tape.add(total, op_node)?;
        total = tape.add(total, value_node)?;
        total = tape.add(total, sel_node)?;
        total = tape.add(total, agg_node)?;

        let breakdown = LossBreakdown {
            wherecol: tape.value(wherecol_node).item(),
            numcol: tape.value(numcol_node).item(),
            op: tape.value(op_node).item(),
            value: tape.value(value_node).item(),
            sel: tape.value(sel_node).item(),
            agg: tape.value(agg_node).item(),
            total: tape.value(total).item(),
        };
        Ok((tape, total, breakdown))
    }
}
