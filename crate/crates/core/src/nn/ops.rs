//! Tensor kernels on single-item `[channel][row][col]` buffers.

use num_traits::Float;

/// Floating-point element type the network can run in.
pub trait Scalar: Float + Default + Send + Sync + core::fmt::Debug + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a * b + beta * c` for row-major strided views.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );
}

#[inline]
fn extent(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(a_strides.0 >= 0 && a_strides.1 >= 0);
                assert!(b_strides.0 >= 0 && b_strides.1 >= 0);
                assert!(c_strides.0 >= 0 && c_strides.1 >= 0);
                assert!(a.len() >= extent(m, k, a_strides), "gemm: a too short");
                assert!(b.len() >= extent(k, n, b_strides), "gemm: b too short");
                assert!(c.len() >= extent(m, n, c_strides), "gemm: c too short");
                // SAFETY: every index the kernel touches lies inside the
                // extents checked above; `c` is uniquely borrowed.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f64, matrixmultiply::dgemm);
impl_scalar!(f32, matrixmultiply::sgemm);

/// Geometry of a 3x3, padding-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        (self.h - 1) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - 1) / self.stride + 1
    }

    pub fn out_len(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn col_rows(&self) -> usize {
        self.c_in * 9
    }
}

/// Unfolds 3x3 patches: row `ci*9 + ky*3 + kx`, column = output pixel.
pub(crate) fn im2col<T: Scalar>(input: &[T], s: &ConvShape, col: &mut [T]) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let n = oh * ow;
    debug_assert_eq!(input.len(), s.c_in * s.h * s.w);
    debug_assert_eq!(col.len(), s.col_rows() * n);
    for ci in 0..s.c_in {
        let plane = &input[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * n..][..n];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - 1;
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= s.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - 1;
                        *o = if ix < 0 || ix >= s.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im_add<T: Scalar>(col: &[T], s: &ConvShape, d_input: &mut [T]) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let n = oh * ow;
    for ci in 0..s.c_in {
        let plane = &mut d_input[ci * s.h * s.w..(ci + 1) * s.h * s.w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * n..][..n];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - 1;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..ow {
                        let ix = (ox * s.stride + kx) as isize - 1;
                        if ix >= 0 && ix < s.w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out = W * im2col(input) + bias`.
pub(crate) fn conv_forward<T: Scalar>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    s: &ConvShape,
    col: &mut alloc::vec::Vec<T>,
    out: &mut [T],
) {
    let n = s.out_len();
    let k = s.col_rows();
    col.resize(k * n, T::zero());
    im2col(input, s, col);
    debug_assert_eq!(out.len(), s.c_out * n);
    for (co, row) in out.chunks_mut(n).enumerate() {
        row.fill(bias[co]);
    }
    T::gemm(
        s.c_out,
        k,
        n,
        weight,
        (k as isize, 1),
        col,
        (n as isize, 1),
        T::one(),
        out,
        (n as isize, 1),
    );
}

/// Accumulates weight/bias gradients and, when requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    input: &[T],
    weight: &[T],
    s: &ConvShape,
    d_out: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
    d_input: Option<&mut [T]>,
    col: &mut alloc::vec::Vec<T>,
) {
    let n = s.out_len();
    let k = s.col_rows();
    col.resize(k * n, T::zero());
    im2col(input, s, col);
    // dW += dOut (c_out x n) * col^T (n x k)
    T::gemm(
        s.c_out,
        n,
        k,
        d_out,
        (n as isize, 1),
        col,
        (1, n as isize),
        T::one(),
        d_weight,
        (k as isize, 1),
    );
    for (co, row) in d_out.chunks(n).enumerate() {
        d_bias[co] = d_bias[co] + row.iter().fold(T::zero(), |a, &b| a + b);
    }
    if let Some(d_input) = d_input {
        // dCol = W^T (k x c_out) * dOut (c_out x n)
        T::gemm(
            k,
            s.c_out,
            n,
            weight,
            (1, k as isize),
            d_out,
            (n as isize, 1),
            T::zero(),
            col,
            (n as isize, 1),
        );
        col2im_add(col, s, d_input);
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub(crate) fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub(crate) fn silu_into<T: Scalar>(input: &[T], out: &mut [T]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = silu(x);
    }
}

/// `grad[i] *= silu'(pre[i])`.
pub(crate) fn silu_backward<T: Scalar>(pre: &[T], grad: &mut [T]) {
    for (g, &x) in grad.iter_mut().zip(pre) {
        *g = *g * silu_grad(x);
    }
}

/// Nearest-neighbor 2x upsampling from `(oh, ow)` planes onto `(h, w)`.
pub(crate) fn upsample_nearest<T: Scalar>(
    input: &[T],
    channels: usize,
    (oh, ow): (usize, usize),
    (h, w): (usize, usize),
    out: &mut [T],
) {
    for c in 0..channels {
        let src = &input[c * oh * ow..(c + 1) * oh * ow];
        let dst = &mut out[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            let srow = &src[(y / 2) * ow..(y / 2 + 1) * ow];
            for x in 0..w {
                dst[y * w + x] = srow[x / 2];
            }
        }
    }
}

pub(crate) fn upsample_nearest_backward<T: Scalar>(
    d_out: &[T],
    channels: usize,
    (oh, ow): (usize, usize),
    (h, w): (usize, usize),
    d_input: &mut [T],
) {
    for c in 0..channels {
        let src = &d_out[c * h * w..(c + 1) * h * w];
        let dst = &mut d_input[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..h {
            for x in 0..w {
                let i = (y / 2) * ow + x / 2;
                dst[i] = dst[i] + src[y * w + x];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn naive_conv(input: &[f64], weight: &[f64], bias: &[f64], s: &ConvShape) -> Vec<f64> {
        let (oh, ow) = (s.out_h(), s.out_w());
        let mut out = vec![0.0; s.c_out * oh * ow];
        for co in 0..s.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..s.c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * s.stride + ky) as isize - 1;
                                let ix = (ox * s.stride + kx) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                    acc += weight[((co * s.c_in + ci) * 3 + ky) * 3 + kx]
                                        * input[(ci * s.h + iy as usize) * s.w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &(stride, h, w) in &[(1, 5, 7), (2, 6, 6), (2, 7, 5)] {
            let s = ConvShape {
                c_in: 3,
                c_out: 4,
                h,
                w,
                stride,
            };
            let input = pseudo(s.c_in * h * w, 1);
            let weight = pseudo(s.c_out * s.col_rows(), 2);
            let bias = pseudo(s.c_out, 3);
            let mut out = vec![0.0; s.c_out * s.out_len()];
            let mut col = Vec::new();
            conv_forward(&input, &weight, &bias, &s, &mut col, &mut out);
            let expect = naive_conv(&input, &weight, &bias, &s);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let s = ConvShape {
            c_in: 2,
            c_out: 1,
            h: 5,
            w: 4,
            stride: 2,
        };
        let x = pseudo(s.c_in * s.h * s.w, 4);
        let y = pseudo(s.col_rows() * s.out_len(), 5);
        let mut col = vec![0.0; y.len()];
        im2col(&x, &s, &mut col);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im_add(&y, &s, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn upsample_adjoint() {
        let (oh, ow, h, w) = (3, 2, 5, 4);
        let x = pseudo(2 * oh * ow, 6);
        let y = pseudo(2 * h * w, 7);
        let mut up = vec![0.0; y.len()];
        upsample_nearest(&x, 2, (oh, ow), (h, w), &mut up);
        let lhs: f64 = up.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        upsample_nearest_backward(&y, 2, (oh, ow), (h, w), &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn silu_derivative() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
