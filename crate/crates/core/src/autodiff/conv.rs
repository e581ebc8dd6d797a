//! Dense 2-D convolution kernels shared by the forward and backward passes.
//!
//! Layouts: input `[n, cin, h, w]`, weight `[cout, cin, kh, kw]`, output
//! `[n, cout, oh, ow]`. A transposed convolution is the adjoint of a
//! convolution, so its passes reuse these three kernels with the roles of
//! input and output swapped.

use super::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn input_len(&self) -> usize {
        self.n * self.cin * self.h * self.w
    }

    pub fn output_len(&self) -> usize {
        self.n * self.cout * self.oh * self.ow
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kh * self.kw
    }
}

/// Output positions `o` in `[lo, hi)` with `o·stride + k − pad` inside
/// `[0, in_len)`.
fn valid_range(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let k = k as isize;
    let pad = pad as isize;
    let s = stride as isize;
    // smallest o with o·s ≥ pad − k
    let lo = if pad > k { (pad - k + s - 1) / s } else { 0 };
    // largest o with o·s ≤ in_len − 1 + pad − k
    let top = in_len as isize - 1 + pad - k;
    let hi = if top < 0 { 0 } else { top / s + 1 };
    let lo = lo.max(0) as usize;
    let hi = (hi as usize).min(out_len);
    (lo, hi.max(lo))
}

impl ConvGeom {
    /// Rows of the unfolded input, one per (input channel, ky, kx).
    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one sample `[cin, h, w]` into `[cin·kh·kw, oh·ow]` columns;
/// padded taps stay zero.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (s, p) = (g.stride, g.pad);
    let np = g.positions();
    cols.fill(T::zero());
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = valid_range(ky, p, s, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox0, ox1) = valid_range(kx, p, s, g.w, g.ow);
                let row = &mut cols[((ci * g.kh + ky) * g.kw + kx) * np..][..np];
                for oy in oy0..oy1 {
                    let in_row = &plane[(oy * s + ky - p) * g.w..][..g.w];
                    let out = &mut row[oy * g.ow..][..g.ow];
                    for ox in ox0..ox1 {
                        out[ox] = in_row[ox * s + kx - p];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto one sample.
fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (s, p) = (g.stride, g.pad);
    let np = g.positions();
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..][..g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = valid_range(ky, p, s, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox0, ox1) = valid_range(kx, p, s, g.w, g.ow);
                let row = &cols[((ci * g.kh + ky) * g.kw + kx) * np..][..np];
                for oy in oy0..oy1 {
                    let in_row = &mut plane[(oy * s + ky - p) * g.w..][..g.w];
                    let src = &row[oy * g.ow..][..g.ow];
                    for ox in ox0..ox1 {
                        in_row[ox * s + kx - p] += src[ox];
                    }
                }
            }
        }
    }
}

/// `out += conv(x, weight)`.
pub(crate) fn conv_forward<T: Real>(x: &[T], weight: &[T], g: &ConvGeom, out: &mut [T]) {
    debug_assert_eq!(x.len(), g.input_len());
    debug_assert_eq!(weight.len(), g.weight_len());
    debug_assert_eq!(out.len(), g.output_len());
    let (k, np) = (g.patch_len(), g.positions());
    let mut cols = vec![T::zero(); k * np];
    for n in 0..g.n {
        im2col(&x[n * g.cin * g.h * g.w..][..g.cin * g.h * g.w], g, &mut cols);
        let out_n = &mut out[n * g.cout * np..][..g.cout * np];
        T::gemm(g.cout, k, np, weight, (k, 1), &cols, (np, 1), T::one(), out_n, (np, 1));
    }
}

/// `gx += convᵀ(gout, weight)`, the input gradient of [`conv_forward`].
pub(crate) fn conv_backward_input<T: Real>(gout: &[T], weight: &[T], g: &ConvGeom, gx: &mut [T]) {
    debug_assert_eq!(gout.len(), g.output_len());
    debug_assert_eq!(gx.len(), g.input_len());
    let (k, np) = (g.patch_len(), g.positions());
    let mut cols = vec![T::zero(); k * np];
    for n in 0..g.n {
        let gout_n = &gout[n * g.cout * np..][..g.cout * np];
        T::gemm(k, g.cout, np, weight, (1, k), gout_n, (np, 1), T::zero(), &mut cols, (np, 1));
        col2im_add(&cols, g, &mut gx[n * g.cin * g.h * g.w..][..g.cin * g.h * g.w]);
    }
}

/// `gw += ∂⟨gout, conv(x, w)⟩/∂w`.
pub(crate) fn conv_backward_weight<T: Real>(x: &[T], gout: &[T], g: &ConvGeom, gw: &mut [T]) {
    debug_assert_eq!(gw.len(), g.weight_len());
    let (k, np) = (g.patch_len(), g.positions());
    let mut cols = vec![T::zero(); k * np];
    for n in 0..g.n {
        im2col(&x[n * g.cin * g.h * g.w..][..g.cin * g.h * g.w], g, &mut cols);
        let gout_n = &gout[n * g.cout * np..][..g.cout * np];
        T::gemm(g.cout, np, k, gout_n, (np, 1), &cols, (1, np), T::one(), gw, (k, 1));
    }
}
