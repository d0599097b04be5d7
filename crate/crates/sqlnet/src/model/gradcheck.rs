//! Finite-difference check of the full training-loss gradient, covering
//! every head in one graph.

use rand::Rng;

use super::{ModelError, SqlNetModel};
use crate::ingest::{Example, TableSchema};
use crate::nn::gradcheck::{GradCheckEntry, GradCheckReport};

impl SqlNetModel {
    /// Compares reverse-mode gradients of `training_loss` on one example
    /// against central finite differences, probing up to
    /// `samples_per_tensor` random entries of every parameter. The example
    /// should exercise all heads: at least one condition with a resolved
    /// value span.
    pub fn grad_check_heads(
        &mut self,
        example: &Example,
        schema: &TableSchema,
        samples_per_tensor: usize,
        step: f64,
        rng: &mut impl Rng,
    ) -> Result<GradCheckReport, ModelError> {
        self.store.zero_grads();
        let (mut tape, loss, _) = self.training_loss(example, schema)?;
        tape.backward(loss, &mut self.store)?;

        let analytic: Vec<(String, usize, Vec<f64>)> = self
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.cols(), p.grad.data().to_vec()))
            .collect();
        let ids: Vec<_> = self.store.iter().map(|(id, _)| id).collect();

        let mut report = GradCheckReport::default();
        for (pos, id) in ids.iter().enumerate() {
            let len = self.store.value(*id).len();
            if len == 0 {
                continue;
            }
            let picked = rand::seq::index::sample(rng, len, samples_per_tensor.min(len));
            for k in picked.iter() {
                let orig = self.store.value(*id).data()[k];

                self.store.value_mut(*id).data_mut()[k] = orig + step;
                let (t, l, _) = self.training_loss(example, schema)?;
                let f_plus = t.value(l).item();

                self.store.value_mut(*id).data_mut()[k] = orig - step;
                let (t, l, _) = self.training_loss(example, schema)?;
                let f_minus = t.value(l).item();

                self.store.value_mut(*id).data_mut()[k] = orig;

                let numeric = (f_plus - f_minus) / (2.0 * step);
                let (name, cols, grads) = &analytic[pos];
                let a = grads[k];
                let rel_err = crate::nn::gradcheck::relative_error(a, numeric);
                report.max_rel_err = report.max_rel_err.max(rel_err);
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
}
