//! 2-d convolution as im2col + GEMM over the whole batch.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.n * self.out_h() * self.out_w()
    }
}

/// Unfolds `x` into `[cin*k*k, n*oh*ow]`.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = g.cols();
    let mut cols = vec![T::zero(); g.rows() * ncols];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let plane = &x[(b * g.cin + ci) * g.h * g.w..(b * g.cin + ci + 1) * g.h * g.w];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let base = b * oh * ow + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = g.cols();
    let mut x = vec![T::zero(); g.n * g.cin * g.h * g.w];
    for ci in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.n {
                    let off = (b * g.cin + ci) * g.h * g.w;
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = b * oh * ow + oy * ow;
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                x[off + iy as usize * g.w + ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Output `[n, cout, oh, ow]` plus the unfolded input kept for backward.
pub fn forward<T: Real>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> (Vec<T>, Vec<T>) {
    let cols = im2col(x, g);
    let ncols = g.cols();
    let ohw = g.out_h() * g.out_w();
    let mut mat = vec![T::zero(); g.cout * ncols];
    T::gemm(
        g.cout,
        g.rows(),
        ncols,
        T::one(),
        weight,
        (g.rows() as isize, 1),
        &cols,
        (ncols as isize, 1),
        T::zero(),
        &mut mat,
        (ncols as isize, 1),
    );
    let mut out = vec![T::zero(); g.n * g.cout * ohw];
    for co in 0..g.cout {
        let bv = bias[co];
        for b in 0..g.n {
            let src = &mat[co * ncols + b * ohw..co * ncols + (b + 1) * ohw];
            let dst = &mut out[(b * g.cout + co) * ohw..(b * g.cout + co + 1) * ohw];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + bv;
            }
        }
    }
    (out, cols)
}

/// Gradients `(input, weight, bias)`; the input gradient is skipped when
/// `need_input` is false.
pub fn backward<T: Real>(
    cols: &[T],
    weight: &[T],
    grad: &[T],
    g: &ConvGeom,
    need_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let ncols = g.cols();
    let ohw = g.out_h() * g.out_w();
    let rows = g.rows();
    let mut gmat = vec![T::zero(); g.cout * ncols];
    let mut gb = vec![T::zero(); g.cout];
    for co in 0..g.cout {
        for b in 0..g.n {
            let src = &grad[(b * g.cout + co) * ohw..(b * g.cout + co + 1) * ohw];
            gmat[co * ncols + b * ohw..co * ncols + (b + 1) * ohw].copy_from_slice(src);
        }
        gb[co] = gmat[co * ncols..(co + 1) * ncols].iter().copied().sum();
    }
    let mut gw = vec![T::zero(); g.cout * rows];
    // [cout, ncols] x [ncols, rows]
    T::gemm(
        g.cout,
        ncols,
        rows,
        T::one(),
        &gmat,
        (ncols as isize, 1),
        cols,
        (1, ncols as isize),
        T::zero(),
        &mut gw,
        (rows as isize, 1),
    );
    let gx = need_input.then(|| {
        let mut gcols = vec![T::zero(); rows * ncols];
        // [rows, cout] x [cout, ncols]
        T::gemm(
            rows,
            g.cout,
            ncols,
            T::one(),
            weight,
            (1, rows as isize),
            &gmat,
            (ncols as isize, 1),
            T::zero(),
            &mut gcols,
            (ncols as isize, 1),
        );
        col2im(&gcols, g)
    });
    (gx, gw, gb)
}
