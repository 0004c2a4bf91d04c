//! Adam for the supervised objectives.

use crate::error::{Error, Result};
use crate::numeric::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected step on every listed parameter that has a
    /// gradient. Parameters without a gradient are left alone.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, params: &[ParamId]) -> Result<()> {
        for &id in params {
            if let Some(g) = grads.get(id) {
                let p = store.get(id);
                if g.shape() != p.shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("{} {:?}", store.name(id), p.shape()),
                        format!("grad {:?}", g.shape()),
                    ));
                }
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for &id in params {
            let Some(g) = grads.get(id) else { continue };
            if self.moments.len() <= id.0 {
                self.moments.resize(id.0 + 1, None);
            }
            let n = g.len();
            let (m, v) = self.moments[id.0].get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let p = store.get_mut(id).data_mut();
            for k in 0..n {
                let gk = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Adds the gradient of `(weight / 2) * ||p||^2` for every listed parameter
/// that already has a gradient entry.
pub fn add_l2(grads: &mut Gradients, store: &ParamStore, params: &[ParamId], weight: f64) {
    if weight == 0.0 {
        return;
    }
    for &id in params {
        let p = store.get(id);
        if grads.get(id).is_some() {
            let g = grads.entry(id, p.shape());
            for (gk, pk) in g.data_mut().iter_mut().zip(p.data()) {
                *gk += weight * pk;
            }
        }
    }
}
