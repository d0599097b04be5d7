//! Adam with bias correction. One optimizer instance owns first/second
//! moment buffers for every parameter in the store, keyed by position.

use super::params::ParamStore;
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// Moment buffers are allocated for the store as it exists now; register
    /// all parameters before constructing the optimizer.
    pub fn new(lr: f64, store: &ParamStore) -> Adam {
        let m = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients. Non-trainable
    /// parameters are skipped entirely: values and moments stay untouched.
    /// The timestep is global, shared by all parameters.
    pub fn step(&mut self, store: &mut ParamStore) {
        assert_eq!(
            self.m.len(),
            store.len(),
            "optimizer built for a different parameter set"
        );
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, param) in store.iter_mut().enumerate() {
            if !param.trainable {
                continue;
            }
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let grad = param.grad.data();
            let value = param.value.data_mut();
            for k in 0..grad.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                value[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
