//! Matrix product used by the convolution layers.
//!
//! `mul` computes `A · B` for arbitrary-stride 2D views. For f32 on CPUs with
//! AVX-512 it runs a packed 8x48 FMA microkernel (one accumulation order, so
//! results are bitwise reproducible); everything else falls back to
//! `ndarray::dot`.

use ndarray::{Array2, ArrayView2};
use std::any::TypeId;

use super::Scalar;

pub fn mul<F: Scalar>(a: ArrayView2<'_, F>, b: ArrayView2<'_, F>) -> Array2<F> {
    let (m, k) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2, "gemm inner dimension mismatch");
    #[cfg(target_arch = "x86_64")]
    if TypeId::of::<F>() == TypeId::of::<f32>() && is_x86_feature_detected!("avx512f") {
        let mut c = Array2::<F>::zeros((m, n));
        unsafe {
            let cs = c.as_slice_mut().unwrap();
            let cs = std::slice::from_raw_parts_mut(cs.as_mut_ptr() as *mut f32, cs.len());
            avx512::gemm(
                m,
                k,
                n,
                a.as_ptr() as *const f32,
                [a.strides()[0], a.strides()[1]],
                b.as_ptr() as *const f32,
                [b.strides()[0], b.strides()[1]],
                cs,
            );
        }
        return c;
    }
    a.dot(&b)
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    pub const MR: usize = 8;
    pub const NR: usize = 48; // 3 zmm registers
    const KC: usize = 256;
    const MC: usize = 128;
    const NC: usize = 960;

    /// Packs an `mc x kc` block of A into MR-row panels, k-major within each
    /// panel: `buf[panel][p*MR + i] = A[i0+i, p0+p]`. Short panels are
    /// zero-padded to MR.
    unsafe fn pack_a(
        a: *const f32,
        [rs, cs]: [isize; 2],
        i0: usize,
        p0: usize,
        mc: usize,
        kc: usize,
        buf: &mut [f32],
    ) {
        let mut panel = 0usize;
        let mut ir = 0usize;
        while ir < mc {
            let mr = MR.min(mc - ir);
            let dst = &mut buf[panel * kc * MR..(panel + 1) * kc * MR];
            if cs == 1 {
                // row-major A: walk each row contiguously, scatter into the
                // small panel buffer
                if mr < MR {
                    dst.fill(0.0);
                }
                for i in 0..mr {
                    let src = a.offset((i0 + ir + i) as isize * rs + p0 as isize);
                    for p in 0..kc {
                        dst[p * MR + i] = *src.add(p);
                    }
                }
            } else {
                for p in 0..kc {
                    let base = (p0 + p) as isize * cs;
                    for i in 0..MR {
                        dst[p * MR + i] = if i < mr {
                            *a.offset((i0 + ir + i) as isize * rs + base)
                        } else {
                            0.0
                        };
                    }
                }
            }
            panel += 1;
            ir += MR;
        }
    }

    /// Packs a `kc x nc` block of B into NR-column panels:
    /// `buf[panel][p*NR + j] = B[p0+p, j0+j]`, zero-padded to NR.
    unsafe fn pack_b(
        b: *const f32,
        [rs, cs]: [isize; 2],
        p0: usize,
        j0: usize,
        kc: usize,
        nc: usize,
        buf: &mut [f32],
    ) {
        let mut panel = 0usize;
        let mut jr = 0usize;
        while jr < nc {
            let nr = NR.min(nc - jr);
            let dst = &mut buf[panel * kc * NR..(panel + 1) * kc * NR];
            if cs == 1 {
                for p in 0..kc {
                    let src = b.offset((p0 + p) as isize * rs + (j0 + jr) as isize);
                    let row = &mut dst[p * NR..(p + 1) * NR];
                    for (d, s) in row[..nr]
                        .iter_mut()
                        .zip(std::slice::from_raw_parts(src, nr))
                    {
                        *d = *s;
                    }
                    row[nr..].fill(0.0);
                }
            } else if rs == 1 {
                // transposed view: columns of the packed panel are contiguous
                // in memory, so walk them one at a time
                if nr < NR {
                    dst.fill(0.0);
                }
                for j in 0..nr {
                    let src = b.offset(p0 as isize + (j0 + jr + j) as isize * cs);
                    for p in 0..kc {
                        dst[p * NR + j] = *src.add(p);
                    }
                }
            } else {
                for p in 0..kc {
                    let base = (p0 + p) as isize * rs;
                    for j in 0..NR {
                        dst[p * NR + j] = if j < nr {
                            *b.offset(base + (j0 + jr + j) as isize * cs)
                        } else {
                            0.0
                        };
                    }
                }
            }
            panel += 1;
            jr += NR;
        }
    }

    /// `C[0..mr, 0..nr] += panelA · panelB` over `kc` terms. `c` points at
    /// C[ir, jr] inside a row-major (ldc) matrix.
    #[target_feature(enable = "avx512f")]
    unsafe fn kernel(
        kc: usize,
        pa: *const f32,
        pb: *const f32,
        c: *mut f32,
        ldc: usize,
        mr: usize,
        nr: usize,
    ) {
        let mut acc = [[_mm512_setzero_ps(); 3]; MR];
        let mut pa = pa;
        let mut pb = pb;
        for _ in 0..kc {
            _mm_prefetch::<_MM_HINT_T0>(pb.add(4 * NR) as *const i8);
            _mm_prefetch::<_MM_HINT_T0>(pb.add(4 * NR + 16) as *const i8);
            _mm_prefetch::<_MM_HINT_T0>(pb.add(4 * NR + 32) as *const i8);
            _mm_prefetch::<_MM_HINT_T0>(pa.add(4 * MR) as *const i8);
            let b0 = _mm512_loadu_ps(pb);
            let b1 = _mm512_loadu_ps(pb.add(16));
            let b2 = _mm512_loadu_ps(pb.add(32));
            // unrolled over the MR rows of the A panel
            macro_rules! row {
                ($i:literal) => {
                    let ai = _mm512_set1_ps(*pa.add($i));
                    acc[$i][0] = _mm512_fmadd_ps(ai, b0, acc[$i][0]);
                    acc[$i][1] = _mm512_fmadd_ps(ai, b1, acc[$i][1]);
                    acc[$i][2] = _mm512_fmadd_ps(ai, b2, acc[$i][2]);
                };
            }
            row!(0);
            row!(1);
            row!(2);
            row!(3);
            row!(4);
            row!(5);
            row!(6);
            row!(7);
            pa = pa.add(MR);
            pb = pb.add(NR);
        }
        if mr == MR && nr == NR {
            for i in 0..MR {
                let ci = c.add(i * ldc);
                _mm512_storeu_ps(ci, _mm512_add_ps(_mm512_loadu_ps(ci), acc[i][0]));
                _mm512_storeu_ps(
                    ci.add(16),
                    _mm512_add_ps(_mm512_loadu_ps(ci.add(16)), acc[i][1]),
                );
                _mm512_storeu_ps(
                    ci.add(32),
                    _mm512_add_ps(_mm512_loadu_ps(ci.add(32)), acc[i][2]),
                );
            }
        } else {
            let mut scratch = [0.0f32; MR * NR];
            for i in 0..MR {
                _mm512_storeu_ps(scratch.as_mut_ptr().add(i * NR), acc[i][0]);
                _mm512_storeu_ps(scratch.as_mut_ptr().add(i * NR + 16), acc[i][1]);
                _mm512_storeu_ps(scratch.as_mut_ptr().add(i * NR + 32), acc[i][2]);
            }
            for i in 0..mr {
                let ci = c.add(i * ldc);
                for j in 0..nr {
                    *ci.add(j) += scratch[i * NR + j];
                }
            }
        }
    }

    /// C (row-major, zero-initialized m x n slice) += A · B.
    pub unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        astr: [isize; 2],
        b: *const f32,
        bstr: [isize; 2],
        c: &mut [f32],
    ) {
        debug_assert_eq!(c.len(), m * n);
        if m == 0 || n == 0 || k == 0 {
            return;
        }
        let mut abuf = vec![0.0f32; MC * KC];
        let mut bbuf = vec![0.0f32; KC * NC];
        let cp = c.as_mut_ptr();
        let mut jc = 0usize;
        while jc < n {
            let nc = NC.min(n - jc);
            let n_panels = (nc + NR - 1) / NR;
            let mut pc = 0usize;
            while pc < k {
                let kc = KC.min(k - pc);
                pack_b(b, bstr, pc, jc, kc, nc, &mut bbuf);
                let mut ic = 0usize;
                while ic < m {
                    let mc = MC.min(m - ic);
                    let m_panels = (mc + MR - 1) / MR;
                    pack_a(a, astr, ic, pc, mc, kc, &mut abuf);
                    for jp in 0..n_panels {
                        let nr = NR.min(nc - jp * NR);
                        for ip in 0..m_panels {
                            let mr = MR.min(mc - ip * MR);
                            kernel(
                                kc,
                                abuf.as_ptr().add(ip * kc * MR),
                                bbuf.as_ptr().add(jp * kc * NR),
                                cp.add((ic + ip * MR) * n + jc + jp * NR),
                                n,
                                mr,
                                nr,
                            );
                        }
                    }
                    ic += MC;
                }
                pc += KC;
            }
            jc += NC;
        }
    }
}
