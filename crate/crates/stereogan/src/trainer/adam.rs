//! Adam, with per-parameter moment buffers aligned to a [`ParamStore`].

use ndarray::ArrayD;

use crate::model::{Grads, ParamStore};

#[derive(Debug, Clone)]
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<ArrayD<f32>> = store.iter().map(|(_, a)| ArrayD::zeros(a.raw_dim())).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let lr = self.lr;
        let eps = self.eps;
        for (((m, v), g), (_, p)) in self
            .m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(grads.iter())
            .zip(store.iter_mut())
        {
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m as f64 / bc1;
                    let vhat = *v as f64 / bc2;
                    *p -= (lr * mhat / (vhat.sqrt() + eps)) as f32;
                });
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub(crate) fn moments(&self) -> (&[ArrayD<f32>], &[ArrayD<f32>]) {
        (&self.m, &self.v)
    }

    pub(crate) fn restore(&mut self, t: u64, m: Vec<ArrayD<f32>>, v: Vec<ArrayD<f32>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction, step 1 moves each parameter by exactly
        // lr * sign(g) (up to eps).
        let mut store: ParamStore<f32> = ParamStore::new();
        store.register("w", ArrayD::zeros(ndarray::IxDyn(&[3])));
        let mut grads = Grads::zeros_like(&store);
        let g = ndarray::arr1(&[0.5f32, -2.0, 0.0]).into_dyn();
        grads.accumulate(crate::model::ParamId(0), &g.view());
        let mut adam = Adam::new(&store, 0.01, 0.5, 0.999);
        adam.step(&mut store, &grads);
        let w = store.get(crate::model::ParamId(0));
        assert!((w[[0]] + 0.01).abs() < 1e-4);
        assert!((w[[1]] - 0.01).abs() < 1e-4);
        assert_eq!(w[[2]], 0.0, "zero gradient leaves the parameter in place");
        assert_eq!(adam.t(), 1);
    }
}
