//! Central finite-difference verification of reverse-mode gradients.

use rand::Rng;

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use super::tensor::NnError;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < tolerance
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    fn absorb(&mut self, other: GradCheckReport) {
        self.entries.extend(other.entries);
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
        }
    }

    /// Folds several checks (one per model fragment) into one report.
    pub fn merge(reports: impl IntoIterator<Item = GradCheckReport>) -> GradCheckReport {
        let mut out = GradCheckReport::default();
        for r in reports {
            out.absorb(r);
        }
        out
    }
}

pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    // the denominator floor keeps central-difference rounding noise (machine
    // epsilon times the loss magnitude over the step) from dominating entries
    // whose true gradient is near zero
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of the scalar loss built by `build`
/// against central finite differences, probing up to `samples_per_tensor`
/// random entries of every parameter. `build` must be a pure function of the
/// store contents.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut build: F,
    samples_per_tensor: usize,
    step: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&ParamStore) -> Result<(Tape, NodeId), NnError>,
{
    store.zero_grads();
    let (mut tape, loss) = build(store)?;
    tape.backward(loss, store)?;

    let analytic: Vec<(String, usize, Vec<f64>)> = store
        .iter()
        .map(|(_, p)| (p.name.clone(), p.value.cols(), p.grad.data().to_vec()))
        .collect();

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut report = GradCheckReport::default();
    for (pos, id) in ids.iter().enumerate() {
        let len = store.value(*id).len();
        if len == 0 {
            continue;
        }
        let count = samples_per_tensor.min(len);
        let picked = rand::seq::index::sample(rng, len, count);
        for k in picked.iter() {
            let orig = store.value(*id).data()[k];

            store.value_mut(*id).data_mut()[k] = orig + step;
            let (t_plus, l_plus) = build(store)?;
            let f_plus = t_plus.value(l_plus).item();

            store.value_mut(*id).data_mut()[k] = orig - step;
            let (t_minus, l_minus) = build(store)?;
            let f_minus = t_minus.value(l_minus).item();

            store.value_mut(*id).data_mut()[k] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * step);
            let (name, cols, grads) = &analytic[pos];
            let a = grads[k];
            let rel_err = relative_error(a, numeric);
            if rel_err > report.max_rel_err || report.entries.is_empty() {
                report.max_rel_err = report.max_rel_err.max(rel_err);
            }
            report.entries.push(GradCheckEntry {
                param: name.clone(),
                row: k / cols,
                col: k % cols,
                analytic: a,
                numeric,
                rel_err,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::lstm::BiLstm;
    use crate::nn::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_layer_is_exact_to_fd_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store.register_uniform("w", 3, 4, 4, &mut rng);
        let b = store.register_uniform("b", 3, 1, 4, &mut rng);
        let x = Tensor::col_vec(vec![0.4, -1.2, 0.7, 0.05]);
        let report = grad_check(
            &mut store,
            |store| {
                let mut tape = Tape::new();
                let wl = tape.leaf(store, w);
                let bl = tape.leaf(store, b);
                let xc = tape.constant(x.clone());
                let wx = tape.matmul(wl, xc)?;
                let y = tape.add(wx, bl)?;
                let loss = tape.sum(y);
                Ok((tape, loss))
            },
            16,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "max {}", report.max_rel_err);
    }

    #[test]
    fn softmax_cross_entropy_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let logits = store.register(
            "logits",
            Tensor::col_vec(vec![0.3, -1.1, 2.0, 0.0, -0.4]),
        );
        let report = grad_check(
            &mut store,
            |store| {
                let mut tape = Tape::new();
                let z = tape.leaf(store, logits);
                let loss = tape.cross_entropy(z, 2)?;
                Ok((tape, loss))
            },
            5,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "max {}", report.max_rel_err);
    }

    #[test]
    fn two_layer_network_with_mixed_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut store = ParamStore::new();
        let w1 = store.register_uniform("w1", 6, 4, 4, &mut rng);
        let w2 = store.register_uniform("w2", 1, 6, 6, &mut rng);
        let x = Tensor::col_vec(vec![0.9, -0.3, 0.2, 1.4]);
        let report = grad_check(
            &mut store,
            |store| {
                let mut tape = Tape::new();
                let a = tape.leaf(store, w1);
                let b = tape.leaf(store, w2);
                let xc = tape.constant(x.clone());
                let h = tape.matmul(a, xc)?;
                let h = tape.tanh(h);
                let z = tape.matmul(b, h)?;
                let y = tape.sigmoid(z);
                let sp = tape.softplus(y);
                let loss = tape.sum(sp);
                Ok((tape, loss))
            },
            24,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "max {}", report.max_rel_err);
    }

    #[test]
    fn bidirectional_encoder_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut store = ParamStore::new();
        let enc = BiLstm::register(&mut store, "enc", 3, 2, &mut rng);
        let xs: Vec<Tensor> = (0..4)
            .map(|i| Tensor::col_vec(vec![0.2 * i as f64, -0.5, 0.3 + 0.1 * i as f64]))
            .collect();
        let report = grad_check(
            &mut store,
            |store| {
                let mut tape = Tape::new();
                let inputs: Vec<NodeId> =
                    xs.iter().map(|x| tape.constant(x.clone())).collect();
                let out = enc.encode(&mut tape, store, &inputs)?;
                let a = tape.sum(out.states);
                let b = tape.sum(out.summary);
                let loss = tape.add(a, b)?;
                Ok((tape, loss))
            },
            20,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "max {}", report.max_rel_err);
    }
}
