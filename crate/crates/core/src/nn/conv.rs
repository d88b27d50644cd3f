//! Bias-free 2D convolution with zero padding, via im2col and gemm.

use super::{matmul, matmul_nt, matmul_tn, Real};

/// Geometry of one convolution applied to a single `c_in × h × w` frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Rows of the im2col matrix (`c_in · k · k`), also the kernel fan-in.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.patch_len()
    }

    /// A 1×1 convolution with no padding and unit stride reads its input as is.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds `x` into a `patch_len × (out_h · out_w)` matrix.
pub fn im2col<T: Real>(s: &ConvShape, x: &[T], col: &mut Vec<T>) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let k = s.kernel;
    col.clear();
    col.resize(s.patch_len() * oh * ow, T::zero());
    for ci in 0..s.c_in {
        let plane = &x[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && (ix as usize) < s.w {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Adds the columns of `col` back onto the input positions they were read from.
pub fn col2im<T: Real>(s: &ConvShape, col: &[T], dx: &mut [T]) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let k = s.kernel;
    for ci in 0..s.c_in {
        let plane = &mut dx[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..ow {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && (ix as usize) < s.w {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `y = W ⊛ x`. The unfolded input is left in `col` for the backward pass.
pub fn conv_forward<T: Real>(s: &ConvShape, weight: &[T], x: &[T], col: &mut Vec<T>) -> Vec<T> {
    debug_assert_eq!(weight.len(), s.weight_len());
    debug_assert_eq!(x.len(), s.c_in * s.h * s.w);
    let n = s.out_h() * s.out_w();
    let mut y = vec![T::zero(); s.c_out * n];
    if s.is_pointwise() {
        col.clear();
        matmul(s.c_out, s.c_in, n, weight, x, &mut y, false);
    } else {
        im2col(s, x, col);
        matmul(s.c_out, s.patch_len(), n, weight, col, &mut y, false);
    }
    y
}

/// Accumulates `∂L/∂W` into `dweight` and returns `∂L/∂x`.
///
/// `x` and `col` are the input and unfolded input of the matching forward call.
pub fn conv_backward<T: Real>(
    s: &ConvShape,
    weight: &[T],
    x: &[T],
    col: &[T],
    dy: &[T],
    dweight: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let n = s.out_h() * s.out_w();
    let p = s.patch_len();
    let unfolded = if s.is_pointwise() { x } else { col };
    matmul_nt(s.c_out, n, p, dy, unfolded, dweight, true);
    if !need_dx {
        return None;
    }
    let mut dcol = vec![T::zero(); p * n];
    matmul_tn(p, s.c_out, n, weight, dy, &mut dcol, false);
    if s.is_pointwise() {
        return Some(dcol);
    }
    let mut dx = vec![T::zero(); s.c_in * s.h * s.w];
    col2im(s, &dcol, &mut dx);
    Some(dx)
}
