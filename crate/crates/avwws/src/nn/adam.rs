//! Adam optimizer keyed by parameter visit order.

use ndarray::ArrayD;

use super::{Network, Scalar};

pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the gradients accumulated in the network.
    /// Gradients should already be scaled to the mean over the logical batch.
    pub fn step(&mut self, net: &mut dyn Network<F>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let lr_t = F::from_f64(self.lr * bc2.sqrt() / bc1);
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one_m_b1 = F::one() - b1;
        let one_m_b2 = F::one() - b2;
        let eps = F::from_f64(self.eps * bc2.sqrt());

        let mut idx = 0usize;
        let (m, v) = (&mut self.m, &mut self.v);
        net.visit_params(&mut |_, p| {
            if !p.trainable {
                return;
            }
            if idx == m.len() {
                m.push(ArrayD::zeros(p.value.raw_dim()));
                v.push(ArrayD::zeros(p.value.raw_dim()));
            }
            let mi = &mut m[idx];
            let vi = &mut v[idx];
            assert_eq!(mi.shape(), p.value.shape(), "optimizer state shape drift");
            let ms = mi.as_slice_mut().unwrap();
            let vs = vi.as_slice_mut().unwrap();
            let ps = p.value.as_slice_mut().unwrap();
            let gs = p.grad.as_slice().unwrap();
            for i in 0..ps.len() {
                ms[i] = b1 * ms[i] + one_m_b1 * gs[i];
                vs[i] = b2 * vs[i] + one_m_b2 * gs[i] * gs[i];
                ps[i] = ps[i] - lr_t * ms[i] / (vs[i].sqrt() + eps);
            }
            idx += 1;
        });
    }
}
