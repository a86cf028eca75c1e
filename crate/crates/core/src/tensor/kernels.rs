//! Forward and backward loops for the convolution and upsampling ops.
//!
//! Convolution is lowered to im2col followed by small matrix products. All
//! loops run in a fixed order, so results are bit-reproducible.

use super::{ConvParams, Scalar, Shape};

pub(crate) struct ConvGeometry {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub p: ConvParams,
}

impl ConvGeometry {
    pub fn new(input: Shape, kernel: Shape, p: ConvParams) -> Option<Self> {
        let span_h = p.dilation * (kernel.h - 1) + 1;
        let span_w = p.dilation * (kernel.w - 1) + 1;
        if input.h + 2 * p.padding < span_h || input.w + 2 * p.padding < span_w {
            return None;
        }
        Some(ConvGeometry {
            cin: input.c,
            h: input.h,
            w: input.w,
            cout: kernel.n,
            kh: kernel.h,
            kw: kernel.w,
            ho: (input.h + 2 * p.padding - span_h) / p.stride + 1,
            wo: (input.w + 2 * p.padding - span_w) / p.stride + 1,
            p,
        })
    }

    pub fn rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Source coordinate for an output position and kernel tap, if inside the image.
    #[inline]
    fn source(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.p.stride + tap * self.p.dilation) as isize - self.p.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    pub fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let ncols = self.cols();
        for ci in 0..self.cin {
            let plane = &image[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.ho {
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        match self.source(oy, ky, self.h) {
                            None => line.fill(T::zero()),
                            Some(sy) => {
                                for (ox, v) in line.iter_mut().enumerate() {
                                    *v = match self.source(ox, kx, self.w) {
                                        Some(sx) => plane[sy * self.w + sx],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let ncols = self.cols();
        for ci in 0..self.cin {
            let plane = &mut image[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.ho {
                        let Some(sy) = self.source(oy, ky, self.h) else {
                            continue;
                        };
                        for ox in 0..self.wo {
                            if let Some(sx) = self.source(ox, kx, self.w) {
                                plane[sy * self.w + sx] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aik * bv;
            }
        }
    }
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            // four partial sums let the compiler vectorize the reduction
            let mut acc = [T::zero(); 4];
            let chunks = n / 4;
            for q in 0..chunks {
                for l in 0..4 {
                    acc[l] += arow[q * 4 + l] * brow[q * 4 + l];
                }
            }
            let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            for q in chunks * 4..n {
                s += arow[q] * brow[q];
            }
            c[i * k + j] += s;
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for j in 0..k {
            let aij = a[i * k + j];
            if aij == T::zero() {
                continue;
            }
            let crow = &mut c[j * n..(j + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aij * bv;
            }
        }
    }
}

pub(crate) fn conv_forward<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (rows, ncols) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut out = vec![T::zero(); batch * g.cout * ncols];
    let in_stride = g.cin * g.h * g.w;
    for b in 0..batch {
        g.im2col(&input[b * in_stride..(b + 1) * in_stride], &mut cols);
        let dst = &mut out[b * g.cout * ncols..(b + 1) * g.cout * ncols];
        if let Some(bias) = bias {
            for (co, chunk) in dst.chunks_mut(ncols).enumerate() {
                chunk.fill(bias[co]);
            }
        }
        gemm_nn(g.cout, rows, ncols, kernel, &cols, dst);
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv_backward<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let (rows, ncols) = (g.rows(), g.cols());
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * ncols;
    let mut d_input = need[0].then(|| vec![T::zero(); batch * in_stride]);
    let mut d_kernel = need[1].then(|| vec![T::zero(); g.cout * rows]);
    let mut d_bias = need[2].then(|| vec![T::zero(); g.cout]);
    let mut cols = vec![T::zero(); rows * ncols];
    let mut dcols = vec![T::zero(); rows * ncols];
    for b in 0..batch {
        let dout = &grad_out[b * out_stride..(b + 1) * out_stride];
        if let Some(dk) = d_kernel.as_mut() {
            g.im2col(&input[b * in_stride..(b + 1) * in_stride], &mut cols);
            gemm_nt(g.cout, ncols, rows, dout, &cols, dk);
        }
        if let Some(db) = d_bias.as_mut() {
            for (co, chunk) in dout.chunks(ncols).enumerate() {
                db[co] += chunk.iter().copied().sum();
            }
        }
        if let Some(di) = d_input.as_mut() {
            dcols.fill(T::zero());
            gemm_tn(g.cout, rows, ncols, kernel, dout, &mut dcols);
            g.col2im(&dcols, &mut di[b * in_stride..(b + 1) * in_stride]);
        }
    }
    ConvGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias,
    }
}

/// Interpolation taps along one axis for half-pixel-center upsampling.
pub(crate) fn upsample_taps<T: Scalar>(len: usize, factor: usize) -> Vec<(usize, usize, T)> {
    let f = T::of(factor as f64);
    let half = T::of(0.5);
    (0..len * factor)
        .map(|o| {
            let src = ((T::of(o as f64) + half) / f - half).max(T::zero());
            let lo = src.floor().to_usize().unwrap_or(0).min(len - 1);
            let hi = (lo + 1).min(len - 1);
            let frac = src - T::of(lo as f64);
            (lo, hi, frac)
        })
        .collect()
}

pub(crate) fn upsample_forward<T: Scalar>(shape: Shape, factor: usize, input: &[T]) -> Vec<T> {
    let ty = upsample_taps::<T>(shape.h, factor);
    let tx = upsample_taps::<T>(shape.w, factor);
    let (ho, wo) = (shape.h * factor, shape.w * factor);
    let mut out = Vec::with_capacity(shape.n * shape.c * ho * wo);
    for plane in input.chunks(shape.plane()) {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = plane[y0 * shape.w + x0] * (T::one() - fx) + plane[y0 * shape.w + x1] * fx;
                let bot = plane[y1 * shape.w + x0] * (T::one() - fx) + plane[y1 * shape.w + x1] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Scalar>(shape: Shape, factor: usize, grad_out: &[T]) -> Vec<T> {
    let ty = upsample_taps::<T>(shape.h, factor);
    let tx = upsample_taps::<T>(shape.w, factor);
    let out_plane = shape.plane() * factor * factor;
    let mut grad = vec![T::zero(); shape.numel()];
    for (plane, gplane) in grad.chunks_mut(shape.plane()).zip(grad_out.chunks(out_plane)) {
        let mut it = gplane.iter();
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let g = *it.next().expect("gradient covers output");
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                plane[y0 * shape.w + x0] += gt * (T::one() - fx);
                plane[y0 * shape.w + x1] += gt * fx;
                plane[y1 * shape.w + x0] += gb * (T::one() - fx);
                plane[y1 * shape.w + x1] += gb * fx;
            }
        }
    }
    grad
}
