use crate::graph::Gradients;
use crate::params::{ParamKind, ParamStore};
use crate::tensor::Tensor;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments, one entry per store entry (empty for buffers).
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |kind: ParamKind, t: &Tensor| match kind {
            ParamKind::Trainable => Tensor::zeros(&t.shape),
            ParamKind::Buffer => Tensor::zeros(&[0]),
        };
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: store.entries.iter().map(|e| zeros(e.kind, &e.tensor)).collect(),
            v: store.entries.iter().map(|e| zeros(e.kind, &e.tensor)).collect(),
        }
    }

    /// One update. Parameters without a gradient still see their moments decay.
    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step_size = (self.lr / c1) as f32;
        let c2s = c2.sqrt() as f32;
        let eps = self.eps as f32;
        for id in store.trainable().collect::<Vec<_>>() {
            let g = grads.param(id);
            let (m, v) = (&mut self.m[id].data, &mut self.v[id].data);
            let p = &mut store.get_mut(id).data;
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g.data[i]);
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= step_size * m[i] / (v[i].sqrt() / c2s + eps);
            }
        }
    }
}
