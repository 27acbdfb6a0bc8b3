//! Raw numeric kernels shared by the forward and backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, ShapeBuilder};

/// `c = alpha * op(a) * op(b) + beta * c` for row-major slices, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    let a = if a_trans {
        ArrayView2::from_shape((m, k).strides((1, m)), a)
    } else {
        ArrayView2::from_shape((m, k), a)
    }
    .expect("gemm lhs extent");
    let b = if b_trans {
        ArrayView2::from_shape((k, n).strides((1, k)), b)
    } else {
        ArrayView2::from_shape((k, n), b)
    }
    .expect("gemm rhs extent");
    let mut c = ArrayViewMut2::from_shape((m, n), c).expect("gemm output extent");
    general_mat_mul(alpha, &a, &b, beta, &mut c);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    /// Output extent along one axis, or `None` when it would be non-positive.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

pub(crate) struct ConvPlan {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeometry,
}

impl ConvPlan {
    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Valid output columns `[lo, hi)` for kernel column `kx`, and the input
    /// column of `lo`.
    fn span(&self, kx: usize) -> (usize, usize, isize) {
        let (s, p, d) = (
            self.geom.stride as isize,
            self.geom.padding as isize,
            self.geom.dilation as isize,
        );
        let shift = kx as isize * d - p;
        let lo = if shift >= 0 { 0 } else { ((-shift) + s - 1) / s };
        let last = self.w as isize - 1 - shift;
        let hi = if last < 0 { 0 } else { (last / s + 1).min(self.wo as isize) };
        let lo = lo.min(hi);
        (lo as usize, hi as usize, lo * s + shift)
    }

    /// Unfold one sample `[Cin, H, W]` into columns `col0..col0 + Ho*Wo` of a
    /// `[Cin*kh*kw, ld]` matrix.
    pub fn im2col(&self, x: &[f64], cols: &mut [f64], ld: usize, col0: usize) {
        let (s, p, d) = (
            self.geom.stride as isize,
            self.geom.padding as isize,
            self.geom.dilation as isize,
        );
        let st = self.geom.stride;
        let plane = self.ho * self.wo;
        let mut row = 0;
        for ci in 0..self.cin {
            let xc = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let (lo, hi, ix0) = self.span(kx);
                    let dst = &mut cols[row * ld + col0..row * ld + col0 + plane];
                    for oy in 0..self.ho {
                        let iy = oy as isize * s - p + ky as isize * d;
                        let drow = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize || lo == hi {
                            drow.fill(0.0);
                            continue;
                        }
                        let src = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        drow[..lo].fill(0.0);
                        drow[hi..].fill(0.0);
                        let ix0 = ix0 as usize;
                        if st == 1 {
                            drow[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                        } else {
                            for (i, v) in drow[lo..hi].iter_mut().enumerate() {
                                *v = src[ix0 + i * st];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatter-add columns back into `[Cin, H, W]`.
    pub fn col2im(&self, cols: &[f64], ld: usize, col0: usize, dx: &mut [f64]) {
        let (s, p, d) = (
            self.geom.stride as isize,
            self.geom.padding as isize,
            self.geom.dilation as isize,
        );
        let st = self.geom.stride;
        let plane = self.ho * self.wo;
        let mut row = 0;
        for ci in 0..self.cin {
            let xc = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let (lo, hi, ix0) = self.span(kx);
                    let src = &cols[row * ld + col0..row * ld + col0 + plane];
                    row += 1;
                    if lo == hi {
                        continue;
                    }
                    let ix0 = ix0 as usize;
                    for oy in 0..self.ho {
                        let iy = oy as isize * s - p + ky as isize * d;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let drow = &mut xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let srow = &src[oy * self.wo + lo..oy * self.wo + hi];
                        for (i, v) in srow.iter().enumerate() {
                            drow[ix0 + i * st] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Interpolation taps for one output coordinate (align-corners-false).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub(crate) fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

/// Split a shape around `axis` into `(outer, extent, inner)`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
