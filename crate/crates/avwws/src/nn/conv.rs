//! 3D (and, as a thin wrapper, 2D) convolution via chunked im2col + GEMM.
//!
//! Convolutions carry no bias (a batch norm always follows). Weights are
//! stored as (c_out, c_in, kt, kh, kw); the GEMM sees them as
//! (c_out, c_in*kt*kh*kw).

use ndarray::{Array2, ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;

use super::{init, Param, Scalar};

/// Upper bound on the im2col scratch buffer, in elements.
const MAX_COLS_ELEMS: usize = 6 * 1024 * 1024;

#[derive(Debug)]
pub struct Conv3d<F: Scalar> {
    pub weight: Param<F>,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    cache: Option<ArrayD<F>>,
}

impl<F: Scalar> Conv3d<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        pad: [usize; 3],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let k = kernel[0] * kernel[1] * kernel[2];
        let weight = init::he_normal(&[c_out, c_in, kernel[0], kernel[1], kernel[2]], c_in * k, rng);
        Conv3d {
            weight: Param::new(weight),
            c_in,
            c_out,
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

    fn k_cols(&self) -> usize {
        self.c_in * self.kernel[0] * self.kernel[1] * self.kernel[2]
    }

    fn chunk_len(&self, h_out: usize, w_out: usize, t_out: usize) -> usize {
        let per_t = self.k_cols() * h_out * w_out;
        (MAX_COLS_ELEMS / per_t.max(1)).clamp(1, t_out.max(1))
    }

    /// The `wo` range for which `wo*sw + off` lands inside `[0, w_in)`.
    fn valid_wo(off: isize, sw: usize, w_in: usize, w_out: usize) -> (usize, usize) {
        let sw = sw as isize;
        let lo = if off >= 0 { 0 } else { (-off + sw - 1) / sw };
        let hi = (w_in as isize - off + sw - 1) / sw;
        let lo = lo.clamp(0, w_out as isize) as usize;
        let hi = hi.clamp(lo as isize, w_out as isize) as usize;
        (lo, hi)
    }

    /// Fills `cols` ((K, rows) row-major, rows = chunk*h_out*w_out) from
    /// input sample `xs` (c_in, t, h, w slice) for output times
    /// `t0..t0+chunk`. Each kernel tap owns one contiguous `cols` row, so the
    /// inner copy runs over whole output lines.
    #[allow(clippy::too_many_arguments)]
    fn im2col(
        &self,
        xs: &[F],
        dims: [usize; 3],
        t0: usize,
        chunk: usize,
        h_out: usize,
        w_out: usize,
        cols: &mut [F],
    ) {
        let [t_in, h_in, w_in] = dims;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.pad;
        let rows = chunk * h_out * w_out;
        let mut c = 0usize;
        for ci in 0..self.c_in {
            let ch_base = ci * t_in * h_in * w_in;
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let col_row = &mut cols[c * rows..(c + 1) * rows];
                        let w_off = dw as isize - pw as isize;
                        let (wo_lo, wo_hi) = Self::valid_wo(w_off, sw, w_in, w_out);
                        for to in t0..t0 + chunk {
                            let ti = (to * st + dt) as isize - pt as isize;
                            let tbase = (to - t0) * h_out * w_out;
                            if ti < 0 || ti >= t_in as isize {
                                col_row[tbase..tbase + h_out * w_out].fill(F::zero());
                                continue;
                            }
                            let t_off = ch_base + ti as usize * h_in * w_in;
                            for ho in 0..h_out {
                                let hi = (ho * sh + dh) as isize - ph as isize;
                                let seg = &mut col_row[tbase + ho * w_out..tbase + (ho + 1) * w_out];
                                if hi < 0 || hi >= h_in as isize {
                                    seg.fill(F::zero());
                                    continue;
                                }
                                let line = &xs[t_off + hi as usize * w_in..t_off + (hi as usize + 1) * w_in];
                                seg[..wo_lo].fill(F::zero());
                                seg[wo_hi..].fill(F::zero());
                                if sw == 1 {
                                    let src0 = (wo_lo as isize + w_off) as usize;
                                    seg[wo_lo..wo_hi]
                                        .copy_from_slice(&line[src0..src0 + (wo_hi - wo_lo)]);
                                } else {
                                    for wo in wo_lo..wo_hi {
                                        seg[wo] = line[((wo * sw) as isize + w_off) as usize];
                                    }
                                }
                            }
                        }
                        c += 1;
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` gradients ((K, rows) layout) back into the input
    /// gradient sample, line by line.
    #[allow(clippy::too_many_arguments)]
    fn col2im(
        &self,
        gxs: &mut [F],
        dims: [usize; 3],
        t0: usize,
        chunk: usize,
        h_out: usize,
        w_out: usize,
        cols: &[F],
    ) {
        let [t_in, h_in, w_in] = dims;
        let [kt, kh, kw] = self.kernel;
        let [st, sh, sw] = self.stride;
        let [pt, ph, pw] = self.pad;
        let rows = chunk * h_out * w_out;
        let mut c = 0usize;
        for ci in 0..self.c_in {
            let ch_base = ci * t_in * h_in * w_in;
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let col_row = &cols[c * rows..(c + 1) * rows];
                        let w_off = dw as isize - pw as isize;
                        let (wo_lo, wo_hi) = Self::valid_wo(w_off, sw, w_in, w_out);
                        for to in t0..t0 + chunk {
                            let ti = (to * st + dt) as isize - pt as isize;
                            if ti < 0 || ti >= t_in as isize {
                                continue;
                            }
                            let tbase = (to - t0) * h_out * w_out;
                            let t_off = ch_base + ti as usize * h_in * w_in;
                            for ho in 0..h_out {
                                let hi = (ho * sh + dh) as isize - ph as isize;
                                if hi < 0 || hi >= h_in as isize {
                                    continue;
                                }
                                let seg = &col_row[tbase + ho * w_out..tbase + (ho + 1) * w_out];
                                let line = &mut gxs
                                    [t_off + hi as usize * w_in..t_off + (hi as usize + 1) * w_in];
                                if sw == 1 {
                                    let dst0 = (wo_lo as isize + w_off) as usize;
                                    for (d, s) in line[dst0..dst0 + (wo_hi - wo_lo)]
                                        .iter_mut()
                                        .zip(&seg[wo_lo..wo_hi])
                                    {
                                        *d = *d + *s;
                                    }
                                } else {
                                    for wo in wo_lo..wo_hi {
                                        let wi = ((wo * sw) as isize + w_off) as usize;
                                        line[wi] = line[wi] + seg[wo];
                                    }
                                }
                            }
                        }
                        c += 1;
                    }
                }
            }
        }
    }

    /// x: (N, c_in, T, H, W) -> (N, c_out, T', H', W')
    pub fn forward(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        let sh = x.shape();
        assert_eq!(sh.len(), 5, "conv3d expects a 5D input");
        assert_eq!(sh[1], self.c_in, "conv3d channel mismatch");
        let (n, t_in, h_in, w_in) = (sh[0], sh[2], sh[3], sh[4]);
        let [t_out, h_out, w_out] = self.out_spatial(t_in, h_in, w_in);
        let k = self.k_cols();
        let w2 = self
            .weight
            .value
            .view()
            .into_shape((self.c_out, k))
            .expect("contiguous weight");

        let mut y = ArrayD::<F>::zeros(IxDyn(&[n, self.c_out, t_out, h_out, w_out]));
        let chunk_t = self.chunk_len(h_out, w_out, t_out);
        let xsl = x.as_slice().expect("standard layout input");
        let ysl = y.as_slice_mut().unwrap();
        let in_len = self.c_in * t_in * h_in * w_in;
        let out_len = self.c_out * t_out * h_out * w_out;
        let hw = h_out * w_out;
        let mut buf = vec![F::zero(); k * chunk_t * hw];
        for i in 0..n {
            let xs = &xsl[i * in_len..(i + 1) * in_len];
            let mut t0 = 0;
            while t0 < t_out {
                let chunk = chunk_t.min(t_out - t0);
                let rows = chunk * hw;
                self.im2col(xs, [t_in, h_in, w_in], t0, chunk, h_out, w_out, &mut buf[..k * rows]);
                let cols = ndarray::ArrayView2::from_shape((k, rows), &buf[..k * rows]).unwrap();
                // (c_out, rows)
                let out_chunk = super::gemm::mul(w2.view(), cols);
                let ocs = out_chunk.as_slice().unwrap();
                let ybase = i * out_len;
                for co in 0..self.c_out {
                    let dst = ybase + co * t_out * hw + t0 * hw;
                    ysl[dst..dst + rows].copy_from_slice(&ocs[co * rows..(co + 1) * rows]);
                }
                t0 += chunk;
            }
        }
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    /// gy: (N, c_out, T', H', W') -> input gradient; accumulates into
    /// `self.weight.grad`.
    pub fn backward(&mut self, gy: &ArrayD<F>) -> ArrayD<F> {
        let x = self.cache.take().expect("conv backward without forward");
        let sh = x.shape();
        let (n, t_in, h_in, w_in) = (sh[0], sh[2], sh[3], sh[4]);
        let [t_out, h_out, w_out] = self.out_spatial(t_in, h_in, w_in);
        assert_eq!(
            gy.shape(),
            &[n, self.c_out, t_out, h_out, w_out],
            "conv backward shape mismatch"
        );
        let k = self.k_cols();
        let w2 = self
            .weight
            .value
            .view()
            .into_shape((self.c_out, k))
            .unwrap()
            .to_owned();
        let mut gw = Array2::<F>::zeros((self.c_out, k));

        let mut gx = ArrayD::<F>::zeros(x.raw_dim());
        let chunk_t = self.chunk_len(h_out, w_out, t_out);
        let hw = h_out * w_out;
        let mut buf = vec![F::zero(); k * chunk_t * hw];
        let mut gbuf = vec![F::zero(); self.c_out * chunk_t * hw];
        let xsl = x.as_slice().unwrap();
        let gysl = gy.as_slice().expect("standard layout grad");
        let gxsl = gx.as_slice_mut().unwrap();
        let in_len = self.c_in * t_in * h_in * w_in;
        let out_len = self.c_out * t_out * h_out * w_out;
        for i in 0..n {
            let xs = &xsl[i * in_len..(i + 1) * in_len];
            let gxs = &mut gxsl[i * in_len..(i + 1) * in_len];
            let mut t0 = 0;
            while t0 < t_out {
                let chunk = chunk_t.min(t_out - t0);
                let rows = chunk * hw;
                self.im2col(xs, [t_in, h_in, w_in], t0, chunk, h_out, w_out, &mut buf[..k * rows]);
                {
                    let gybase = i * out_len;
                    for co in 0..self.c_out {
                        let src = gybase + co * t_out * hw + t0 * hw;
                        gbuf[co * rows..(co + 1) * rows].copy_from_slice(&gysl[src..src + rows]);
                    }
                }
                let cols = ndarray::ArrayView2::from_shape((k, rows), &buf[..k * rows]).unwrap();
                let gchunk =
                    ndarray::ArrayView2::from_shape((self.c_out, rows), &gbuf[..self.c_out * rows])
                        .unwrap();
                gw = gw + super::gemm::mul(gchunk, cols.t());
                // (K, rows)
                let gcols = super::gemm::mul(w2.t(), gchunk);
                self.col2im(
                    gxs,
                    [t_in, h_in, w_in],
                    t0,
                    chunk,
                    h_out,
                    w_out,
                    gcols.as_slice().unwrap(),
                );
                t0 += chunk;
            }
        }
        let gwd = gw.into_shape(self.weight.grad.raw_dim()).unwrap();
        self.weight.grad += &gwd;
        gx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
    }
}

/// 2D convolution: a Conv3d with a singleton time axis.
#[derive(Debug)]
pub struct Conv2d<F: Scalar> {
    pub inner: Conv3d<F>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
        pad: [usize; 2],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Conv2d {
            inner: Conv3d::new(
                c_in,
                c_out,
                [1, kernel[0], kernel[1]],
                [1, stride[0], stride[1]],
                [0, pad[0], pad[1]],
                rng,
            ),
        }
    }

    fn to_5d(x: &ArrayD<F>) -> ArrayD<F> {
        let s = x.shape();
        assert_eq!(s.len(), 4, "conv2d expects a 4D input");
        x.view()
            .into_shape(IxDyn(&[s[0], s[1], 1, s[2], s[3]]))
            .unwrap()
            .to_owned()
    }

    fn to_4d(y: ArrayD<F>) -> ArrayD<F> {
        let s = y.shape().to_vec();
        debug_assert_eq!(s[2], 1);
        y.into_shape(IxDyn(&[s[0], s[1], s[3], s[4]])).unwrap()
    }

    pub fn forward(&mut self, x: &ArrayD<F>, train: bool) -> ArrayD<F> {
        Self::to_4d(self.inner.forward(&Self::to_5d(x), train))
    }

    pub fn backward(&mut self, gy: &ArrayD<F>) -> ArrayD<F> {
        Self::to_4d(self.inner.backward(&Self::to_5d(gy)))
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.inner.visit_params(prefix, f);
    }
}
