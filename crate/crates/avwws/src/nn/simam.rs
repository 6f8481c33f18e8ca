//! SimAM: parameter-free attention from a closed-form energy minimum.
//!
//! For a neuron `t` in a channel with M positions, the energy measures how
//! linearly separable `t` is from the other neurons of the same channel. Its
//! minimum has the closed form
//!
//!   e_t* = 4(sigma^2 + lambda) / ((t - mu)^2 + 2 sigma^2 + 2 lambda)
//!
//! and the attention weight is sigmoid(1/e_t*). The layer follows the usual
//! fast implementation: mu and sigma^2 are the shared statistics of all M
//! positions of the channel (including `t`), computed once per channel. The
//! exact per-position minimum, with mu and sigma^2 taken over the M-1 *other*
//! neurons, is available as [`closed_form_min_energy`] and is what the
//! energy-function oracle tests compare against numeric minimization.

use ndarray::ArrayD;

use super::{Param, Scalar};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct SimAm<F: Scalar> {
    pub lambda: f64,
    cache: Option<ArrayD<F>>,
}

impl<F: Scalar> SimAm<F> {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::validation(format!(
                "simam lambda must be positive, got {lambda}"
            )));
        }
        Ok(SimAm {
            lambda,
            cache: None,
        })
    }

    fn channel_dims(x: &ArrayD<F>) -> (usize, usize) {
        let sh = x.shape();
        assert!(sh.len() >= 3, "simam expects (N, C, ...)");
        (sh[0] * sh[1], sh[2..].iter().product())
    }

    /// Applies sigmoid(1/e*) elementwise; output shape equals input shape.
    pub fn forward(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        let (channels, m) = Self::channel_dims(x);
        let xs = x.as_slice().expect("standard layout");
        let mut y = ArrayD::<F>::zeros(x.raw_dim());
        let ys = y.as_slice_mut().unwrap();
        let lambda = F::from_f64(self.lambda);
        let inv_m = F::from_f64(1.0 / m as f64);
        let half = F::from_f64(0.5);
        let quarter = F::from_f64(0.25);
        for ch in 0..channels {
            let base = ch * m;
            let xc = &xs[base..base + m];
            let mut sum = F::zero();
            let mut sq = F::zero();
            for &v in xc {
                sum = sum + v;
                sq = sq + v * v;
            }
            let mu = sum * inv_m;
            let var = (sq * inv_m - mu * mu).max(F::zero());
            let v = var + lambda;
            // u = 1/e* = ((t-mu)^2 + 2 sigma^2 + 2 lambda) / (4 (sigma^2+lambda))
            let inv_4v = quarter / v;
            for i in 0..m {
                let d = xc[i] - mu;
                let u = d * d * inv_4v + half;
                let a = F::one() / (F::one() + (-u).exp());
                ys[base + i] = a * xc[i];
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &ArrayD<F>) -> ArrayD<F> {
        let x = self.cache.take().expect("simam backward without forward");
        let (channels, m) = Self::channel_dims(&x);
        let xs = x.as_slice().unwrap();
        let gys = gy.as_slice().expect("standard layout grad");
        let mut gx = ArrayD::<F>::zeros(x.raw_dim());
        let gxs = gx.as_slice_mut().unwrap();
        let lambda = F::from_f64(self.lambda);
        let inv_m = F::from_f64(1.0 / m as f64);
        let half = F::from_f64(0.5);
        let quarter = F::from_f64(0.25);
        let two = F::from_f64(2.0);
        let mut a_buf = vec![F::zero(); m];
        let mut c_buf = vec![F::zero(); m];
        for ch in 0..channels {
            let base = ch * m;
            let xc = &xs[base..base + m];
            let gc = &gys[base..base + m];
            let mut sum = F::zero();
            let mut sq = F::zero();
            for &v in xc {
                sum = sum + v;
                sq = sq + v * v;
            }
            let mu = sum * inv_m;
            let var = (sq * inv_m - mu * mu).max(F::zero());
            let v = var + lambda;
            let inv_4v = quarter / v;
            // c_t = g_t * x_t * a_t * (1 - a_t); S1 = sum c_t d_t; S2 = sum c_t d_t^2
            let mut s1 = F::zero();
            let mut s2 = F::zero();
            for i in 0..m {
                let d = xc[i] - mu;
                let u = d * d * inv_4v + half;
                let a = F::one() / (F::one() + (-u).exp());
                a_buf[i] = a;
                let c = gc[i] * xc[i] * a * (F::one() - a);
                c_buf[i] = c;
                s1 = s1 + c * d;
                s2 = s2 + c * d * d;
            }
            let inv_2v = half / v;
            let t1 = s1 * inv_2v * inv_m; // S1 / (2 v M)
            let t2 = s2 * inv_2v / v * inv_m; // S2 / (2 v^2 M)
            for i in 0..m {
                let d = xc[i] - mu;
                gxs[base + i] =
                    a_buf[i] * gc[i] + d * c_buf[i] / (two * v) - t1 - d * t2;
            }
        }
        gx
    }

    pub fn visit_params(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Param<F>)) {
        // parameter-free by construction
    }
}

/// Exact minimal energy of the regularized per-neuron objective
///
///   e(w, b) = (1/(M-1)) sum_i (-1 - (w x_i + b))^2 + (1 - (w t + b))^2
///             + lambda w^2
///
/// where `others` are the M-1 neurons excluding `t`. Closed form with
/// mu and sigma^2 over `others`:
///
///   e* = 4 (sigma^2 + lambda) / ((t - mu)^2 + 2 sigma^2 + 2 lambda)
pub fn closed_form_min_energy(t: f64, others: &[f64], lambda: f64) -> f64 {
    assert!(!others.is_empty(), "need at least one other neuron");
    let m1 = others.len() as f64;
    let mu = others.iter().sum::<f64>() / m1;
    let var = others.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / m1;
    4.0 * (var + lambda) / ((t - mu) * (t - mu) + 2.0 * var + 2.0 * lambda)
}

/// The regularized energy itself, for oracle-style direct minimization.
pub fn energy(w: f64, b: f64, t: f64, others: &[f64], lambda: f64) -> f64 {
    let m1 = others.len() as f64;
    let neg: f64 = others
        .iter()
        .map(|&x| {
            let r = -1.0 - (w * x + b);
            r * r
        })
        .sum::<f64>()
        / m1;
    let rp = 1.0 - (w * t + b);
    neg + rp * rp + lambda * w * w
}
