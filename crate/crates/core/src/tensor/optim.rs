use std::collections::BTreeMap;

use ndarray::Array2;

use super::{Matrix, ParamStore};

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: BTreeMap<String, (Matrix, Matrix)>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update from the store's gradient buffers, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, value, grad) in store.iter_mut() {
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Array2::zeros(value.dim()), Array2::zeros(value.dim())));
            let mut g = grad.clone();
            if self.weight_decay > 0.0 {
                g.scaled_add(self.weight_decay, value);
            }
            m.zip_mut_with(&g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(&g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            ndarray::Zip::from(value).and(&*m).and(&*v).for_each(|p, &mi, &vi| {
                *p -= self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            });
        }
        store.zero_grad();
    }
}
