//! Max pooling with cached argmax indices.

use ndarray::{ArrayD, IxDyn};

use super::Scalar;

#[derive(Debug)]
pub struct MaxPool3d {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    cache: Option<(Vec<usize>, Vec<u32>)>, // input shape, argmax offsets
}

impl MaxPool3d {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Self {
        MaxPool3d {
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_spatial(&self, t: usize, h: usize, w: usize) -> [usize; 3] {
        let o = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p - k) / s + 1;
        [
            o(t, self.kernel[0], self.stride[0], self.pad[0]),
            o(h, self.kernel[1], self.stride[1], self.pad[1]),
            o(w, self.kernel[2], self.stride[2], self.pad[2]),
        ]
    }

    pub fn forward<F: Scalar>(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        let sh = x.shape();
        assert_eq!(sh.len(), 5, "maxpool3d expects a 5D input");
        let (n, c, t_in, h_in, w_in) = (sh[0], sh[1], sh[2], sh[3], sh[4]);
        let [t_out, h_out, w_out] = self.out_spatial(t_in, h_in, w_in);
        let [kt, kh, kw] = self.kernel;
        let [st, shs, sw] = self.stride;
        let [pt, ph, pw] = self.pad;
        let xs = x.as_slice().expect("standard layout");
        let mut y = ArrayD::<F>::zeros(IxDyn(&[n, c, t_out, h_out, w_out]));
        let ys = y.as_slice_mut().unwrap();
        let mut argmax = train.then(|| vec![0u32; n * c * t_out * h_out * w_out]);
        let mut o = 0usize;
        for ni in 0..n {
            for ci in 0..c {
                let ch_base = (ni * c + ci) * t_in * h_in * w_in;
                for to in 0..t_out {
                    let ti0 = (to * st) as isize - pt as isize;
                    for ho in 0..h_out {
                        let hi0 = (ho * shs) as isize - ph as isize;
                        for wo in 0..w_out {
                            let wi0 = (wo * sw) as isize - pw as isize;
                            let mut best = F::neg_infinity();
                            let mut best_off = 0usize;
                            for dt in 0..kt {
                                let ti = ti0 + dt as isize;
                                if ti < 0 || ti >= t_in as isize {
                                    continue;
                                }
                                for dh in 0..kh {
                                    let hi = hi0 + dh as isize;
                                    if hi < 0 || hi >= h_in as isize {
                                        continue;
                                    }
                                    let row =
                                        ch_base + (ti as usize * h_in + hi as usize) * w_in;
                                    for dw in 0..kw {
                                        let wi = wi0 + dw as isize;
                                        if wi < 0 || wi >= w_in as isize {
                                            continue;
                                        }
                                        let off = row + wi as usize;
                                        if xs[off] > best {
                                            best = xs[off];
                                            best_off = off - ch_base;
                                        }
                                    }
                                }
                            }
                            ys[o] = best;
                            if let Some(ref mut am) = argmax {
                                am[o] = best_off as u32;
                            }
                            o += 1;
                        }
                    }
                }
            }
        }
        if train {
            self.cache = Some((sh.to_vec(), argmax.unwrap()));
        }
        y
    }

    pub fn backward<F: Scalar>(&mut self, gy: &ArrayD<F>) -> ArrayD<F> {
        let (in_shape, argmax) = self.cache.take().expect("pool backward without forward");
        let (n, c) = (in_shape[0], in_shape[1]);
        let ch_len: usize = in_shape[2..].iter().product();
        let mut gx = ArrayD::<F>::zeros(IxDyn(&in_shape));
        let gxs = gx.as_slice_mut().unwrap();
        let gys = gy.as_slice().unwrap();
        let per_ch_out = gys.len() / (n * c);
        let mut o = 0usize;
        for nc in 0..n * c {
            let base = nc * ch_len;
            for _ in 0..per_ch_out {
                let off = base + argmax[o] as usize;
                gxs[off] = gxs[off] + gys[o];
                o += 1;
            }
        }
        gx
    }
}

/// 2D max pooling via the 3D kernel with a singleton time axis.
#[derive(Debug)]
pub struct MaxPool2d {
    inner: MaxPool3d,
}

impl MaxPool2d {
    pub fn new(kernel: [usize; 2], stride: [usize; 2], pad: [usize; 2]) -> Self {
        MaxPool2d {
            inner: MaxPool3d::new(
                [1, kernel[0], kernel[1]],
                [1, stride[0], stride[1]],
                [0, pad[0], pad[1]],
            ),
        }
    }

    pub fn forward<F: Scalar>(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        let s = x.shape().to_vec();
        let x5 = x
            .view()
            .into_shape(IxDyn(&[s[0], s[1], 1, s[2], s[3]]))
            .unwrap()
            .to_owned();
        let y = self.inner.forward(&x5, train);
        let ys = y.shape().to_vec();
        y.into_shape(IxDyn(&[ys[0], ys[1], ys[3], ys[4]])).unwrap()
    }

    pub fn backward<F: Scalar>(&mut self, gy: &ArrayD<F>) -> ArrayD<F> {
        let s = gy.shape().to_vec();
        let gy5 = gy
            .view()
            .into_shape(IxDyn(&[s[0], s[1], 1, s[2], s[3]]))
            .unwrap()
            .to_owned();
        let gx = self.inner.backward(&gy5);
        let gs = gx.shape().to_vec();
        gx.into_shape(IxDyn(&[gs[0], gs[1], gs[3], gs[4]])).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_picks_maxima_and_routes_gradient() {
        let x = ArrayD::from_shape_vec(
            IxDyn(&[1, 1, 1, 2, 4]),
            vec![1.0, 5.0, 2.0, 0.0, 3.0, -1.0, 4.0, 2.0f64],
        )
        .unwrap();
        let mut pool = MaxPool3d::new([1, 2, 2], [1, 2, 2], [0, 0, 0]);
        let y = pool.forward(&x, true);
        assert_eq!(y.shape(), &[1, 1, 1, 1, 2]);
        assert_eq!(y.as_slice().unwrap(), &[5.0, 4.0]);
        let gy = ArrayD::from_shape_vec(IxDyn(&[1, 1, 1, 1, 2]), vec![1.0, 2.0]).unwrap();
        let gx = pool.backward(&gy);
        assert_eq!(
            gx.as_slice().unwrap(),
            &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]
        );
    }

    #[test]
    fn padded_region_never_wins() {
        let x = ArrayD::from_elem(IxDyn(&[1, 1, 1, 2, 2]), -3.0f64);
        let mut pool = MaxPool3d::new([1, 3, 3], [1, 2, 2], [0, 1, 1]);
        let y = pool.forward(&x, false);
        assert!(y.iter().all(|&v| v == -3.0));
    }
}
