//! Eager tape of primitive tensor operations with reverse-mode gradient
//! accumulation. Every op appends a node holding its output; backward walks
//! the record once and accumulates into the parameter store.

use super::params::{ParamId, ParamStore};
use super::tensor::{sigmoid, softplus, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Leaf(ParamId),
    /// Row of a parameter matrix, emitted as a column vector.
    EmbedRow(ParamId, usize),
    Matmul,
    Transpose,
    Add,
    /// matrix (m x n) + column vector (m x 1) broadcast over columns.
    AddColBroadcast,
    AddScalar(f64),
    Mul,
    Scale(f64),
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Softplus,
    /// Two column vectors stacked vertically.
    ConcatRows,
    /// Column vectors of equal height side by side.
    Hstack,
    SliceRows {
        start: usize,
        len: usize,
    },
    /// Entry `i` of a column vector, as a scalar.
    Pick(usize),
    /// Sum of all entries, as a scalar.
    Sum,
    /// Stable softmax over a column vector. The denominator is summed in
    /// value-sorted order so the output is exactly invariant under input
    /// permutations.
    Softmax,
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

/// Record of executed primitives for one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn eval(op: &Op, inputs: &[&Tensor]) -> Tensor {
    match op {
        Op::Const | Op::Leaf(_) | Op::EmbedRow(..) => {
            unreachable!("leaf nodes carry their value")
        }
        Op::Matmul => inputs[0].matmul(inputs[1]),
        Op::Transpose => inputs[0].transpose(),
        Op::Add => {
            let mut out = inputs[0].clone();
            out.add_assign(inputs[1]);
            out
        }
        Op::AddColBroadcast => {
            let (m, n) = inputs[0].shape();
            let mut out = inputs[0].clone();
            for r in 0..m {
                let v = inputs[1].get(r, 0);
                for c in 0..n {
                    out.set(r, c, out.get(r, c) + v);
                }
            }
            out
        }
        Op::AddScalar(s) => {
            let mut out = inputs[0].clone();
            out.data_mut().iter_mut().for_each(|x| *x += s);
            out
        }
        Op::Mul => {
            let mut out = inputs[0].clone();
            for (a, b) in out.data_mut().iter_mut().zip(inputs[1].data()) {
                *a *= b;
            }
            out
        }
        Op::Scale(s) => {
            let mut out = inputs[0].clone();
            out.data_mut().iter_mut().for_each(|x| *x *= s);
            out
        }
        Op::Sigmoid => unary(inputs[0], sigmoid),
        Op::Tanh => unary(inputs[0], f64::tanh),
        Op::Exp => unary(inputs[0], f64::exp),
        Op::Log => unary(inputs[0], f64::ln),
        Op::Softplus => unary(inputs[0], softplus),
        Op::ConcatRows => {
            let mut data = inputs[0].data().to_vec();
            data.extend_from_slice(inputs[1].data());
            Tensor::col_vec(data)
        }
        Op::Hstack => {
            let rows = inputs[0].rows();
            let cols = inputs.len();
            let mut out = Tensor::zeros(rows, cols);
            for (c, t) in inputs.iter().enumerate() {
                for r in 0..rows {
                    out.set(r, c, t.get(r, 0));
                }
            }
            out
        }
        Op::SliceRows { start, len } => {
            Tensor::col_vec(inputs[0].data()[*start..start + len].to_vec())
        }
        Op::Pick(i) => Tensor::scalar(inputs[0].data()[*i]),
        Op::Sum => Tensor::scalar(inputs[0].data().iter().sum()),
        Op::Softmax => {
            let x = inputs[0].data();
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
            let mut ordered = exps.clone();
            ordered.sort_by(f64::total_cmp);
            let denom: f64 = ordered.iter().sum();
            Tensor::col_vec(exps.iter().map(|e| e / denom).collect())
        }
    }
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = f(*v));
    out
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        let tensors: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let value = eval(&op, &tensors);
        self.nodes.push(Node { op, inputs, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Const,
            inputs: vec![],
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Leases a parameter onto the tape; backward accumulates into its grad.
    pub fn leaf(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf(id),
            inputs: vec![],
            value: store.value(id).clone(),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Row `row` of a parameter matrix as a column vector, without leasing
    /// the whole matrix.
    pub fn embed_row(&mut self, store: &ParamStore, id: ParamId, row: usize) -> NodeId {
        let table = store.value(id);
        let value = Tensor::col_vec((0..table.cols()).map(|c| table.get(row, c)).collect());
        self.nodes.push(Node {
            op: Op::EmbedRow(id, row),
            inputs: vec![],
            value,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if ac != br {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        Ok(self.push(Op::Matmul, vec![a, b]))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose, vec![a])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if (ar, ac) != (br, bc) {
            return Err(NnError::ShapeMismatch {
                op: "add",
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        Ok(self.push(Op::Add, vec![a, b]))
    }

    /// Broadcast-adds a column vector to every column of a matrix.
    pub fn add_col_broadcast(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, NnError> {
        let (mr, mc) = self.value(m).shape();
        let (vr, vc) = self.value(v).shape();
        if vc != 1 || vr != mr {
            return Err(NnError::ShapeMismatch {
                op: "add_col_broadcast",
                lhs_rows: mr,
                lhs_cols: mc,
                rhs_rows: vr,
                rhs_cols: vc,
            });
        }
        Ok(self.push(Op::AddColBroadcast, vec![m, v]))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::AddScalar(s), vec![a])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (ar, ac) = self.value(a).shape();
        let (br, bc) = self.value(b).shape();
        if (ar, ac) != (br, bc) {
            return Err(NnError::ShapeMismatch {
                op: "mul",
                lhs_rows: ar,
                lhs_cols: ac,
                rhs_rows: br,
                rhs_cols: bc,
            });
        }
        Ok(self.push(Op::Mul, vec![a, b]))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::Scale(s), vec![a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid, vec![a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh, vec![a])
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp, vec![a])
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log, vec![a])
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus, vec![a])
    }

    /// Stacks two column vectors vertically.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        for id in [a, b] {
            let (r, c) = self.value(id).shape();
            if c != 1 {
                return Err(NnError::BadShape {
                    op: "concat",
                    expected: "column vectors",
                    got_rows: r,
                    got_cols: c,
                });
            }
        }
        Ok(self.push(Op::ConcatRows, vec![a, b]))
    }

    /// Places column vectors of equal height side by side.
    pub fn hstack(&mut self, cols: &[NodeId]) -> Result<NodeId, NnError> {
        assert!(!cols.is_empty(), "hstack needs at least one column");
        let rows = self.value(cols[0]).rows();
        for &id in cols {
            let (r, c) = self.value(id).shape();
            if c != 1 || r != rows {
                return Err(NnError::BadShape {
                    op: "hstack",
                    expected: "equal-height column vectors",
                    got_rows: r,
                    got_cols: c,
                });
            }
        }
        Ok(self.push(Op::Hstack, cols.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, NnError> {
        let (r, c) = self.value(a).shape();
        if c != 1 || start + len > r {
            return Err(NnError::BadShape {
                op: "slice_rows",
                expected: "column vector covering the range",
                got_rows: r,
                got_cols: c,
            });
        }
        Ok(self.push(Op::SliceRows { start, len }, vec![a]))
    }

    pub fn pick(&mut self, a: NodeId, i: usize) -> Result<NodeId, NnError> {
        let len = self.value(a).len();
        if i >= len || !self.value(a).is_col_vec() {
            return Err(NnError::IndexOutOfRange {
                op: "pick",
                index: i,
                len,
            });
        }
        Ok(self.push(Op::Pick(i), vec![a]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum, vec![a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, NnError> {
        let (r, c) = self.value(a).shape();
        if c != 1 || r == 0 {
            return Err(NnError::BadShape {
                op: "softmax",
                expected: "non-empty column vector",
                got_rows: r,
                got_cols: c,
            });
        }
        Ok(self.push(Op::Softmax, vec![a]))
    }

    /// `u^T v` as a scalar node.
    pub fn dot(&mut self, u: NodeId, v: NodeId) -> Result<NodeId, NnError> {
        let ut = self.transpose(u);
        self.matmul(ut, v)
    }

    /// Cross-entropy `-log softmax(logits)[target]`, composed from primitives
    /// via max-shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId, NnError> {
        let m = self
            .value(logits)
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let shifted = self.add_scalar(logits, -m);
        let e = self.exp(shifted);
        let total = self.sum(e);
        let log_total = self.log(total);
        let lse = self.add_scalar(log_total, m);
        let target_logit = self.pick(logits, target)?;
        self.sub(lse, target_logit)
    }

    /// Reverse-mode accumulation from a scalar loss node, seeding with
    /// `d loss / d loss = seed`. Gradients land in `store`; parameters not
    /// reachable from `loss` are untouched.
    pub fn backward_scaled(
        &mut self,
        loss: NodeId,
        seed: f64,
        store: &mut ParamStore,
    ) -> Result<(), NnError> {
        if self.backward_done {
            return Err(NnError::BackwardTwice);
        }
        let (r, c) = self.value(loss).shape();
        if (r, c) != (1, 1) {
            return Err(NnError::NonScalarLoss { rows: r, cols: c });
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let add_to = |grads: &mut Vec<Option<Tensor>>, id: NodeId, t: Tensor| {
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Const => {}
                Op::Leaf(pid) => store.grad_mut(*pid).add_assign(&g),
                Op::EmbedRow(pid, row) => {
                    let grad = store.grad_mut(*pid);
                    for c in 0..grad.cols() {
                        grad.set(*row, c, grad.get(*row, c) + g.get(c, 0));
                    }
                }
                Op::Matmul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let bt = self.nodes[b.0].value.transpose();
                    let at = self.nodes[a.0].value.transpose();
                    let da = g.matmul(&bt);
                    let db = at.matmul(&g);
                    add_to(&mut grads, a, da);
                    add_to(&mut grads, b, db);
                }
                Op::Transpose => add_to(&mut grads, node.inputs[0], g.transpose()),
                Op::Add => {
                    add_to(&mut grads, node.inputs[0], g.clone());
                    add_to(&mut grads, node.inputs[1], g);
                }
                Op::AddColBroadcast => {
                    let (m, n) = g.shape();
                    let mut dv = Tensor::zeros(m, 1);
                    for r in 0..m {
                        let mut acc = 0.0;
                        for c in 0..n {
                            acc += g.get(r, c);
                        }
                        dv.set(r, 0, acc);
                    }
                    add_to(&mut grads, node.inputs[0], g);
                    add_to(&mut grads, node.inputs[1], dv);
                }
                Op::AddScalar(_) => add_to(&mut grads, node.inputs[0], g),
                Op::Mul => {
                    let (a, b) = (node.inputs[0], node.inputs[1]);
                    let mut da = g.clone();
                    for (x, y) in da.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
                        *x *= y;
                    }
                    let mut db = g;
                    for (x, y) in db.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                        *x *= y;
                    }
                    add_to(&mut grads, a, da);
                    add_to(&mut grads, b, db);
                }
                Op::Scale(s) => {
                    let mut da = g;
                    da.data_mut().iter_mut().for_each(|x| *x *= s);
                    add_to(&mut grads, node.inputs[0], da);
                }
                Op::Sigmoid => {
                    let mut da = g;
                    for (x, y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        *x *= y * (1.0 - y);
                    }
                    add_to(&mut grads, node.inputs[0], da);
                }
                Op::Tanh => {
                    let mut da = g;
                    for (x, y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        *x *= 1.0 - y * y;
                    }
                    add_to(&mut grads, node.inputs[0], da);
                }
                Op::Exp => {
                    let mut da = g;
                    for (x, y) in da.data_mut().iter_mut().zip(node.value.data()) {
                        *x *= y;
                    }
                    add_to(&mut grads, node.inputs[0], da);
                }
                Op::Log => {
                    let mut da = g;
                    for (x, y) in da
                        .data_mut()
                        .iter_mut()
                        .zip(self.nodes[node.inputs[0].0].value.data())
                    {
                        *x /= y;
                    }
                    add_to(&mut grads, node.inputs[0], da);
                }
                Op::Softplus => {
                    let mut da = g;
                    for (x, y) in da
                        .data_mut()
                        .iter_mut()
                        .zip(self.nodes[node.inputs[0].0].value.data())
                    {
                        *x *= sigmoid(*y);
                    }
                    add_to(&mut grads, node.inputs[0], da);
                }
                Op::ConcatRows => {
                    let top = self.nodes[node.inputs[0].0].value.rows();
                    let da = Tensor::col_vec(g.data()[..top].to_vec());
                    let db = Tensor::col_vec(g.data()[top..].to_vec());
                    add_to(&mut grads, node.inputs[0], da);
                    add_to(&mut grads, node.inputs[1], db);
                }
                Op::Hstack => {
                    let inputs = node.inputs.clone();
                    for (c, id) in inputs.iter().enumerate() {
                        let dcol = Tensor::col_vec((0..g.rows()).map(|r| g.get(r, c)).collect());
                        add_to(&mut grads, *id, dcol);
                    }
                }
                Op::SliceRows { start, len } => {
                    let full = self.nodes[node.inputs[0].0].value.rows();
                    let mut da = Tensor::zeros(full, 1);
                    for k in 0..*len {
                        da.set(start + k, 0, g.get(k, 0));
                    }
                    add_to(&mut grads, node.inputs[0], da);
                }
                Op::Pick(idx) => {
                    let full = self.nodes[node.inputs[0].0].value.rows();
                    let mut da = Tensor::zeros(full, 1);
                    da.set(*idx, 0, g.item());
                    add_to(&mut grads, node.inputs[0], da);
                }
                Op::Sum => {
                    let (r, c) = self.nodes[node.inputs[0].0].value.shape();
                    let mut da = Tensor::zeros(r, c);
                    da.fill(g.item());
                    add_to(&mut grads, node.inputs[0], da);
                }
                Op::Softmax => {
                    let y = &node.value;
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                    let mut da = g;
                    for (x, yv) in da.data_mut().iter_mut().zip(y.data()) {
                        *x = yv * (*x - dot);
                    }
                    add_to(&mut grads, node.inputs[0], da);
                }
            }
        }
        Ok(())
    }

    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore) -> Result<(), NnError> {
        self.backward_scaled(loss, 1.0, store)
    }

    /// Recomputes every recorded op from its stored inputs and checks the
    /// outputs are bit-identical to the recorded values. Leaf nodes are
    /// compared against the store, so this must run before any update.
    pub fn replay_matches(&self, store: &ParamStore) -> bool {
        for node in &self.nodes {
            let recomputed = match &node.op {
                Op::Const => continue,
                Op::Leaf(pid) => store.value(*pid).clone(),
                Op::EmbedRow(pid, row) => {
                    let table = store.value(*pid);
                    Tensor::col_vec((0..table.cols()).map(|c| table.get(*row, c)).collect())
                }
                op => {
                    let inputs: Vec<&Tensor> = node
                        .inputs
                        .iter()
                        .map(|i| &self.nodes[i.0].value)
                        .collect();
                    eval(op, &inputs)
                }
            };
            if recomputed.shape() != node.value.shape() {
                return false;
            }
            let same = recomputed
                .data()
                .iter()
                .zip(node.value.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.register(name, t);
        (store, id)
    }

    #[test]
    fn sigmoid_tanh_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        let t = tape.tanh(x);
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(t).item(), 0.0);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let i = tape.constant(Tensor::identity(3));
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("2x3"), "{msg}");
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let mut tape = Tape::new();
        let zeros = tape.constant(Tensor::col_vec(vec![0.0, 0.0, 0.0]));
        let y = tape.softmax(zeros).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let big = tape.constant(Tensor::col_vec(vec![1000.0, 0.0]));
        let y = tape.softmax(big).unwrap();
        let out = tape.value(y).data();
        assert!(out.iter().all(|v| v.is_finite()));
        assert!(out[0] > 1.0 - 1e-12 && out[1] < 1e-12);
    }

    #[test]
    fn softmax_of_log_counts() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::col_vec(vec![
            1f64.ln(),
            2f64.ln(),
            3f64.ln(),
        ]));
        let y = tape.softmax(x).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((out[1] - 2.0 / 6.0).abs() < 1e-12);
        assert!((out[2] - 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let (mut store, p) = store_with("p", Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let mut tape = Tape::new();
        let leaf = tape.leaf(&store, p);
        let loss = tape.sum(leaf);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(p).data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sigmoid_at_zero() {
        let (mut store, p) = store_with("x", Tensor::scalar(0.0));
        let mut tape = Tape::new();
        let leaf = tape.leaf(&store, p);
        let s = tape.sigmoid(leaf);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(p).item(), 0.25);
    }

    #[test]
    fn backward_twice_errors() {
        let (mut store, p) = store_with("x", Tensor::scalar(1.0));
        let mut tape = Tape::new();
        let leaf = tape.leaf(&store, p);
        let loss = tape.sum(leaf);
        tape.backward(loss, &mut store).unwrap();
        assert!(matches!(
            tape.backward(loss, &mut store),
            Err(NnError::BackwardTwice)
        ));
    }

    #[test]
    fn unreachable_parameter_keeps_zero_grad() {
        let mut store = ParamStore::new();
        let used = store.register("used", Tensor::scalar(2.0));
        let unused = store.register("unused", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let leaf = tape.leaf(&store, used);
        let loss = tape.sum(leaf);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(unused).item(), 0.0);
        assert_eq!(store.grad(used).item(), 1.0);
    }

    #[test]
    fn cross_entropy_matches_hand_value() {
        // logits [ln 1, ln 2, ln 3], target 2 => -ln(3/6)
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::col_vec(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]));
        let ce = tape.cross_entropy(x, 2).unwrap();
        assert!((tape.value(ce).item() - (2f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn replay_reproduces_recorded_values() {
        let mut store = ParamStore::new();
        let p = store.register("w", Tensor::from_vec(2, 2, vec![0.3, -0.7, 1.1, 0.05]));
        let mut tape = Tape::new();
        let leaf = tape.leaf(&store, p);
        let x = tape.constant(Tensor::col_vec(vec![0.5, -0.25]));
        let y = tape.matmul(leaf, x).unwrap();
        let s = tape.tanh(y);
        let sm = tape.softmax(s).unwrap();
        let _loss = tape.sum(sm);
        assert!(tape.replay_matches(&store));
    }
}
