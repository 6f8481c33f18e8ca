//! Batch normalization over the channel axis (axis 1) of any (N, C, ...) map.

use ndarray::ArrayD;

use super::{Param, Scalar};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

#[derive(Debug)]
pub struct BatchNorm<F: Scalar> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Param<F>,
    pub running_var: Param<F>,
    channels: usize,
    cache: Option<Cache<F>>,
}

#[derive(Debug)]
struct Cache<F> {
    xhat: ArrayD<F>,
    inv_std: Vec<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new(channels: usize) -> Self {
        let dim = ndarray::IxDyn(&[channels]);
        BatchNorm {
            gamma: Param::new(ArrayD::from_elem(dim.clone(), F::one())),
            beta: Param::new(ArrayD::zeros(dim.clone())),
            running_mean: Param::buffer(ArrayD::zeros(dim.clone())),
            running_var: Param::buffer(ArrayD::from_elem(dim, F::one())),
            channels,
            cache: None,
        }
    }

    /// Iterates channel slices: element (n, c, m) lives at ((n*C)+c)*M + m.
    fn dims(&self, x: &ArrayD<F>) -> (usize, usize) {
        let sh = x.shape();
        assert!(sh.len() >= 2 && sh[1] == self.channels, "batchnorm shape mismatch");
        (sh[0], sh[2..].iter().product::<usize>().max(1))
    }

    pub fn forward(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        let (n, m) = self.dims(x);
        let c = self.channels;
        let xs = x.as_slice().expect("standard layout");
        let mut y = ArrayD::<F>::zeros(x.raw_dim());
        let ys = y.as_slice_mut().unwrap();
        let count = n * m;
        let inv_count = F::from_f64(1.0 / count as f64);
        let eps = F::from_f64(EPS);

        let mut xhat_arr = train.then(|| ArrayD::<F>::zeros(x.raw_dim()));
        let mut xh_slice = xhat_arr.as_mut().map(|a| a.as_slice_mut().unwrap());
        let mut inv_stds = Vec::with_capacity(c);

        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum_acc = [F::zero(); 8];
                let mut sq_acc = [F::zero(); 8];
                for ni in 0..n {
                    let base = (ni * c + ch) * m;
                    let row = &xs[base..base + m];
                    let mut it = row.chunks_exact(8);
                    for ch8 in &mut it {
                        for j in 0..8 {
                            sum_acc[j] = sum_acc[j] + ch8[j];
                            sq_acc[j] = sq_acc[j] + ch8[j] * ch8[j];
                        }
                    }
                    for &v in it.remainder() {
                        sum_acc[0] = sum_acc[0] + v;
                        sq_acc[0] = sq_acc[0] + v * v;
                    }
                }
                let sum = sum_acc.iter().copied().fold(F::zero(), |a, b| a + b);
                let sq = sq_acc.iter().copied().fold(F::zero(), |a, b| a + b);
                let mean = sum * inv_count;
                let var = (sq * inv_count - mean * mean).max(F::zero());
                // update running stats
                let mom = F::from_f64(MOMENTUM);
                let keep = F::one() - mom;
                let rm = &mut self.running_mean.value.as_slice_mut().unwrap()[ch];
                *rm = keep * *rm + mom * mean;
                let rv = &mut self.running_var.value.as_slice_mut().unwrap()[ch];
                *rv = keep * *rv + mom * var;
                (mean, var)
            } else {
                (
                    self.running_mean.value.as_slice().unwrap()[ch],
                    self.running_var.value.as_slice().unwrap()[ch],
                )
            };
            let inv_std = F::one() / (var + eps).sqrt();
            inv_stds.push(inv_std);
            let g = self.gamma.value.as_slice().unwrap()[ch];
            let b = self.beta.value.as_slice().unwrap()[ch];
            for ni in 0..n {
                let base = (ni * c + ch) * m;
                if let Some(xa) = xh_slice.as_deref_mut() {
                    for i in base..base + m {
                        let xh = (xs[i] - mean) * inv_std;
                        xa[i] = xh;
                        ys[i] = g * xh + b;
                    }
                } else {
                    for i in base..base + m {
                        ys[i] = g * (xs[i] - mean) * inv_std + b;
                    }
                }
            }
        }
        drop(xh_slice);
        if train {
            self.cache = Some(Cache {
                xhat: xhat_arr.unwrap(),
                inv_std: inv_stds,
            });
        }
        y
    }

    pub fn backward(&mut self, gy: &ArrayD<F>) -> ArrayD<F> {
        let cache = self.cache.take().expect("batchnorm backward without forward");
        let (n, m) = self.dims(gy);
        let c = self.channels;
        let gys = gy.as_slice().unwrap();
        let xh = cache.xhat.as_slice().unwrap();
        let count = n * m;
        let inv_count = F::from_f64(1.0 / count as f64);
        let mut gx = ArrayD::<F>::zeros(gy.raw_dim());
        let gxs = gx.as_slice_mut().unwrap();
        for ch in 0..c {
            let g = self.gamma.value.as_slice().unwrap()[ch];
            let inv_std = cache.inv_std[ch];
            let mut gy_acc = [F::zero(); 8];
            let mut gyxh_acc = [F::zero(); 8];
            for ni in 0..n {
                let base = (ni * c + ch) * m;
                let g_row = &gys[base..base + m];
                let x_row = &xh[base..base + m];
                let mut gi = g_row.chunks_exact(8);
                let mut xi = x_row.chunks_exact(8);
                for (g8, x8) in (&mut gi).zip(&mut xi) {
                    for j in 0..8 {
                        gy_acc[j] = gy_acc[j] + g8[j];
                        gyxh_acc[j] = gyxh_acc[j] + g8[j] * x8[j];
                    }
                }
                for (&g1, &x1) in gi.remainder().iter().zip(xi.remainder()) {
                    gy_acc[0] = gy_acc[0] + g1;
                    gyxh_acc[0] = gyxh_acc[0] + g1 * x1;
                }
            }
            let sum_gy = gy_acc.iter().copied().fold(F::zero(), |a, b| a + b);
            let sum_gy_xh = gyxh_acc.iter().copied().fold(F::zero(), |a, b| a + b);
            self.gamma.grad.as_slice_mut().unwrap()[ch] =
                self.gamma.grad.as_slice().unwrap()[ch] + sum_gy_xh;
            self.beta.grad.as_slice_mut().unwrap()[ch] =
                self.beta.grad.as_slice().unwrap()[ch] + sum_gy;
            let mean_gy = sum_gy * inv_count;
            let mean_gy_xh = sum_gy_xh * inv_count;
            let scale = g * inv_std;
            for ni in 0..n {
                let base = (ni * c + ch) * m;
                for i in base..base + m {
                    gxs[i] = scale * (gys[i] - mean_gy - xh[i] * mean_gy_xh);
                }
            }
        }
        gx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
        f(&format!("{prefix}.running_mean"), &mut self.running_mean);
        f(&format!("{prefix}.running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::SeedableRng;

    #[test]
    fn normalizes_batch_statistics() {
        let mut bn = BatchNorm::<f64>::new(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = ArrayD::from_shape_simple_fn(IxDyn(&[4, 2, 5]), || {
            3.0 + 2.0 * crate::nn::init::standard_normal(&mut rng)
        });
        let y = bn.forward(&x, true);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..5).map(move |m| (n, m)))
                .map(|(n, m)| y[[n, ch, m]])
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4); // off by eps only
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let x = ArrayD::from_shape_simple_fn(IxDyn(&[3, 2, 4]), || {
            crate::nn::init::standard_normal(&mut rng)
        });
        // loss = sum_i sin(i) * y_i in train mode with fixed gamma/beta
        let weights: Vec<f64> = (0..x.len()).map(|i| (i as f64).sin()).collect();
        let loss = |x: &ArrayD<f64>| -> f64 {
            let mut bn = BatchNorm::<f64>::new(2);
            bn.gamma.value.fill(1.3);
            bn.beta.value.fill(-0.2);
            let y = bn.forward(x, true);
            y.iter().zip(&weights).map(|(v, w)| v * w).sum()
        };
        let mut bn = BatchNorm::<f64>::new(2);
        bn.gamma.value.fill(1.3);
        bn.beta.value.fill(-0.2);
        let y = bn.forward(&x, true);
        let gy = ArrayD::from_shape_vec(y.raw_dim(), weights.clone()).unwrap();
        let gx = bn.backward(&gy);
        crate::nn::gradcheck::check_input_grad(&x, loss, &gx, 1e-5, 1e-5);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm::<f32>::new(1);
        let x = ArrayD::from_shape_vec(IxDyn(&[2, 1, 2]), vec![1.0, 2.0, 3.0, 4.0f32]).unwrap();
        let _ = bn.forward(&x, true);
        let y1 = bn.forward(&x, false);
        let y2 = bn.forward(&x, false);
        assert_eq!(y1, y2);
    }
}
