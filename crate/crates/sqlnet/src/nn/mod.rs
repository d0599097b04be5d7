//! Differentiable-computation substrate: dense tensors, an eager op tape
//! with reverse-mode gradients, LSTM layers, Adam, and a finite-difference
//! gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod lstm;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckReport};
pub use lstm::{BiLstm, Encoded, LstmCell};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{NodeId, Tape};
pub use tensor::{sigmoid, softplus, NnError, Tensor};

/// Index of the largest entry; ties resolve to the smallest index.
pub fn argmax(xs: &[f64]) -> usize {
    assert!(!xs.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, v) in xs.iter().enumerate().skip(1) {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// Indices of the `k` largest entries, ordered by value descending with
/// index ascending as the tie-break.
pub fn top_k(xs: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}
