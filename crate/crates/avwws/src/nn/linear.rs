//! Fully connected layer.

use ndarray::{Array1, Array2, ArrayD, Ix2};
use rand_chacha::ChaCha8Rng;

use super::{init, Param, Scalar};

#[derive(Debug)]
pub struct Linear<F: Scalar> {
    pub weight: Param<F>, // (out, in)
    pub bias: Param<F>,   // (out,)
    cache: Option<Array2<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::new(init::he_normal(&[out_dim, in_dim], in_dim, rng)),
            bias: Param::new(ArrayD::zeros(ndarray::IxDyn(&[out_dim]))),
            cache: None,
        }
    }

    /// x: (N, in) -> (N, out)
    pub fn forward(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        let x2 = x
            .view()
            .into_dimensionality::<Ix2>()
            .expect("linear expects 2D input");
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = x2.dot(&w.t());
        y += &b;
        if train {
            self.cache = Some(x2.to_owned());
        }
        y.into_dyn()
    }

    pub fn backward(&mut self, gy: &ArrayD<F>) -> ArrayD<F> {
        let x = self.cache.take().expect("linear backward without forward");
        let gy2 = gy.view().into_dimensionality::<Ix2>().unwrap();
        let w = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let gw = gy2.t().dot(&x);
        let gb: Array1<F> = gy2.sum_axis(ndarray::Axis(0));
        self.weight.grad += &gw.into_dyn();
        self.bias.grad += &gb.into_dyn();
        gy2.dot(&w).into_dyn()
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}
