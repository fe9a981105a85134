use crate::numkernel::{Parameters, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adaptive moment estimation with one learning rate per tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    lrs: Vec<f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    /// `lr_of` maps a tensor name to its learning rate.
    pub fn new(params: &impl Parameters, lr_of: impl Fn(&str) -> f64) -> Self {
        let tensors = params.tensors();
        Self {
            lrs: tensors.iter().map(|(n, _)| lr_of(n)).collect(),
            m: tensors.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: tensors.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            t: 0,
        }
    }

    /// One update; `grads` follows the [`Parameters`] order. Tensors with a
    /// zero learning rate are left untouched.
    pub fn step(&mut self, params: &mut impl Parameters, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, ((_, p), g)) in params.tensors_mut().into_iter().zip(grads).enumerate() {
            let lr = self.lrs[i];
            if lr == 0.0 {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &g)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
            }
        }
    }
}
