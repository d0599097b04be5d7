//! Single-layer LSTM cell and a bidirectional encoder built on the tape.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::{NnError, Tensor};

/// One direction of an LSTM. The weight matrix maps the concatenated
/// `[input; hidden]` vector to the four gate pre-activations, stacked as
/// rows `[input gate, forget gate, output gate, candidate]`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Registers weights under `<name>.w` / `<name>.b`. The forget-gate bias
    /// rows start at 1.0 so early training does not flush cell state.
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> LstmCell {
        let w = store.register_uniform(&format!("{name}.w"), 4 * hidden, input + hidden, input + hidden, rng);
        let mut bias = Tensor::zeros(4 * hidden, 1);
        for r in hidden..2 * hidden {
            bias.set(r, 0, 1.0);
        }
        let b = store.register(&format!("{name}.b"), bias);
        LstmCell {
            w,
            b,
            input,
            hidden,
        }
    }

    /// One step: consumes `x` (input x 1) and the previous `(h, c)`, returns
    /// the next `(h, c)`.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<(NodeId, NodeId), NnError> {
        let h = self.hidden;
        let w = tape.leaf(store, self.w);
        let b = tape.leaf(store, self.b);
        let z = tape.concat(x, h_prev)?;
        let wz = tape.matmul(w, z)?;
        let pre = tape.add(wz, b)?;
        let i_pre = tape.slice_rows(pre, 0, h)?;
        let f_pre = tape.slice_rows(pre, h, h)?;
        let o_pre = tape.slice_rows(pre, 2 * h, h)?;
        let g_pre = tape.slice_rows(pre, 3 * h, h)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let c_act = tape.tanh(c);
        let h_out = tape.mul(o, c_act)?;
        Ok((h_out, c))
    }
}

/// Forward and backward cells over the same input size. The encoder output
/// concatenates the two directions, so its height is `2 * hidden`.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

/// Encoded sequence: per-position hidden states (individually and side by
/// side) plus a fixed summary vector.
pub struct Encoded {
    /// L nodes of shape (2*hidden) x 1, one per position.
    pub columns: Vec<NodeId>,
    /// (2*hidden) x L matrix of the same states.
    pub states: NodeId,
    /// (2*hidden) x 1 vector: final forward state over final backward state.
    pub summary: NodeId,
}

impl BiLstm {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> BiLstm {
        BiLstm {
            fwd: LstmCell::register(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: LstmCell::register(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    /// Runs both directions over `xs` (each input x 1, length >= 1).
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        xs: &[NodeId],
    ) -> Result<Encoded, NnError> {
        assert!(!xs.is_empty(), "encode needs at least one position");
        let h = self.fwd.hidden;
        let zero = tape.constant(Tensor::zeros(h, 1));

        let mut fwd_states = Vec::with_capacity(xs.len());
        let (mut hs, mut cs) = (zero, zero);
        for &x in xs {
            let (nh, nc) = self.fwd.step(tape, store, x, hs, cs)?;
            fwd_states.push(nh);
            hs = nh;
            cs = nc;
        }

        let mut bwd_states = vec![zero; xs.len()];
        let (mut hs, mut cs) = (zero, zero);
        for (i, &x) in xs.iter().enumerate().rev() {
            let (nh, nc) = self.bwd.step(tape, store, x, hs, cs)?;
            bwd_states[i] = nh;
            hs = nh;
            cs = nc;
        }

        let mut columns = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            columns.push(tape.concat(fwd_states[i], bwd_states[i])?);
        }
        let states = tape.hstack(&columns)?;
        let summary = tape.concat(fwd_states[xs.len() - 1], bwd_states[0])?;
        Ok(Encoded {
            columns,
            states,
            summary,
        })
    }
}
