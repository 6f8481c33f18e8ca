//! Minimal CPU neural-network kernels with hand-written backward passes.
//!
//! Everything is generic over [`Scalar`] so the same code runs in f32 for
//! training and in f64 for finite-difference gradient checks. All tensors are
//! standard-layout `ArrayD`; the batch axis is axis 0 and the channel axis is
//! axis 1.

pub mod adam;
pub mod conv;
pub mod gemm;
pub mod init;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod simam;

use ndarray::ArrayD;

/// Element type for all tensors. `f32` for speed, `f64` for gradient checks.
pub trait Scalar: ndarray::NdFloat + std::iter::Sum {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// A tensor with its gradient accumulator.
///
/// Non-trainable entries (batch-norm running statistics) ride along so that
/// checkpoint save/load and checkpoint averaging cover them, but the optimizer
/// and parameter counting skip them.
#[derive(Debug, Clone)]
pub struct Param<F: Scalar> {
    pub value: ArrayD<F>,
    pub grad: ArrayD<F>,
    pub trainable: bool,
}

impl<F: Scalar> Param<F> {
    pub fn new(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(value: ArrayD<F>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            value,
            grad,
            trainable: false,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Anything that exposes its parameters by hierarchical name, in a stable
/// visit order.
pub trait Network<F: Scalar> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<F>));
}

/// Number of trainable scalars.
pub fn param_count<F: Scalar>(net: &mut dyn Network<F>) -> usize {
    let mut n = 0;
    net.visit_params(&mut |_, p| {
        if p.trainable {
            n += p.value.len();
        }
    });
    n
}

pub fn zero_grads<F: Scalar>(net: &mut dyn Network<F>) {
    net.visit_params(&mut |_, p| p.zero_grad());
}

/// Snapshot of all parameters (including buffers) as named f32 tensors.
pub fn export_params<F: Scalar>(net: &mut dyn Network<F>) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    net.visit_params(&mut |name, p| {
        let data: Vec<f32> = p.value.iter().map(|&v| v.to_f64() as f32).collect();
        out.push((name.to_string(), p.value.shape().to_vec(), data));
    });
    out
}

/// Loads named tensors back into a network. Every parameter must be present
/// with a matching shape, and no extra tensors may remain.
pub fn import_params<F: Scalar>(
    net: &mut dyn Network<F>,
    tensors: &[(String, Vec<usize>, Vec<f32>)],
) -> crate::Result<()> {
    use std::collections::HashMap;
    let map: HashMap<&str, (&Vec<usize>, &Vec<f32>)> = tensors
        .iter()
        .map(|(n, s, d)| (n.as_str(), (s, d)))
        .collect();
    let mut missing = Vec::new();
    let mut seen = 0usize;
    let mut shape_err = None;
    net.visit_params(&mut |name, p| {
        match map.get(name) {
            Some((shape, data)) => {
                seen += 1;
                if p.value.shape() != shape.as_slice() {
                    shape_err = Some(format!(
                        "tensor `{name}`: shape {:?} does not match model shape {:?}",
                        shape,
                        p.value.shape()
                    ));
                    return;
                }
                for (dst, &src) in p.value.iter_mut().zip(data.iter()) {
                    *dst = F::from_f64(src as f64);
                }
            }
            None => missing.push(name.to_string()),
        }
    });
    if let Some(msg) = shape_err {
        return Err(crate::Error::validation(msg));
    }
    if !missing.is_empty() {
        return Err(crate::Error::validation(format!(
            "checkpoint is missing tensors: {missing:?}"
        )));
    }
    if seen != tensors.len() {
        return Err(crate::Error::validation(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            seen
        )));
    }
    Ok(())
}

/// ReLU with cached mask.
#[derive(Debug, Default)]
pub struct Relu<F: Scalar> {
    cache: Option<ArrayD<F>>,
}

impl<F: Scalar> Relu<F> {
    pub fn new() -> Self {
        Relu { cache: None }
    }

    pub fn forward(&mut self, mut x: ArrayD<F>, train: bool) -> ArrayD<F> {
        x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        if train {
            self.cache = Some(x.clone());
        }
        x
    }

    pub fn backward(&mut self, mut gy: ArrayD<F>) -> ArrayD<F> {
        let y = self.cache.take().expect("relu backward without forward");
        ndarray::Zip::from(&mut gy).and(&y).for_each(|g, &v| {
            if v <= F::zero() {
                *g = F::zero();
            }
        });
        gy
    }
}

/// Elementwise logistic sigmoid with cached output.
#[derive(Debug, Default)]
pub struct Sigmoid<F: Scalar> {
    cache: Option<ArrayD<F>>,
}

impl<F: Scalar> Sigmoid<F> {
    pub fn new() -> Self {
        Sigmoid { cache: None }
    }

    pub fn forward(&mut self, mut x: ArrayD<F>, train: bool) -> ArrayD<F> {
        x.mapv_inplace(|v| F::one() / (F::one() + (-v).exp()));
        if train {
            self.cache = Some(x.clone());
        }
        x
    }

    pub fn backward(&mut self, mut gy: ArrayD<F>) -> ArrayD<F> {
        let y = self.cache.take().expect("sigmoid backward without forward");
        ndarray::Zip::from(&mut gy).and(&y).for_each(|g, &v| {
            *g = *g * v * (F::one() - v);
        });
        gy
    }
}

/// Global average pooling over every axis after the channel axis:
/// (N, C, ...) -> (N, C).
#[derive(Debug, Default)]
pub struct GlobalAvgPool {
    in_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { in_shape: None }
    }

    pub fn forward<F: Scalar>(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        let shape = x.shape().to_vec();
        assert!(shape.len() >= 3, "global pool expects (N, C, ...)");
        let (n, c) = (shape[0], shape[1]);
        let m: usize = shape[2..].iter().product();
        let xs = x.as_slice().expect("standard layout");
        let inv = F::from_f64(1.0 / m as f64);
        let mut out = ndarray::Array2::<F>::zeros((n, c));
        for i in 0..n {
            for j in 0..c {
                let base = (i * c + j) * m;
                let sum: F = xs[base..base + m].iter().copied().sum();
                out[[i, j]] = sum * inv;
            }
        }
        if train {
            self.in_shape = Some(shape);
        }
        out.into_dyn()
    }

    pub fn backward<F: Scalar>(&mut self, gy: &ArrayD<F>) -> ArrayD<F> {
        let shape = self.in_shape.take().expect("pool backward without forward");
        let (n, c) = (shape[0], shape[1]);
        let m: usize = shape[2..].iter().product();
        let inv = F::from_f64(1.0 / m as f64);
        let mut gx = ArrayD::<F>::zeros(ndarray::IxDyn(&shape));
        let gxs = gx.as_slice_mut().unwrap();
        for i in 0..n {
            for j in 0..c {
                let g = gy[[i, j]] * inv;
                let base = (i * c + j) * m;
                for v in &mut gxs[base..base + m] {
                    *v = g;
                }
            }
        }
        gx
    }
}
