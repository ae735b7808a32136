//! 2-D convolution (cross-correlation, no kernel flip) via im2col + GEMM.
//!
//! Each image of the batch is processed independently; weight and bias
//! gradients are reduced over the batch in image order, so results are
//! bitwise identical for any worker count.

use rayon::prelude::*;

use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output spatial size of a convolution, or `None` if the kernel does not fit.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    (stride > 0 && kernel > 0 && kernel <= padded).then(|| (padded - kernel) / stride + 1)
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let npix = g.out_pixels();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
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

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let npix = g.out_pixels();
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn columns<'a, T: Scalar>(x: &'a [T], g: &Geometry, scratch: &'a mut Vec<T>) -> &'a [T] {
    if g.is_pointwise() {
        x
    } else {
        scratch.resize(g.col_rows() * g.out_pixels(), T::zero());
        im2col(x, g, scratch);
        scratch
    }
}

impl<T: Scalar> Tape<T> {
    /// `input [N, C, H, W]` cross-correlated with `kernel [Co, C, k, k]`,
    /// plus `bias [Co]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, c, h, w] = self.value(input).dims4("conv2d")?;
        let [co, ck, kh, kw] = self.value(kernel).dims4("conv2d kernel")?;
        if ck != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, kernel expects {ck}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
        }
        if self.shape(bias) != [co] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{co}]", self.shape(bias)),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        let (Some(ho), Some(wo)) = (
            conv_output_size(h, kh, stride, padding),
            conv_output_size(w, kw, stride, padding),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh} does not fit {h}x{w} input with padding {padding}"),
            ));
        };
        let g = Geometry {
            c,
            h,
            w,
            co,
            k: kh,
            stride,
            pad: padding,
            ho,
            wo,
        };

        let x = self.value(input).data();
        let wt = self.value(kernel).data();
        let b = self.value(bias).data();
        let (in_len, out_len) = (c * h * w, co * ho * wo);
        let mut out = vec![T::zero(); n * out_len];
        out.par_chunks_mut(out_len)
            .zip(x.par_chunks(in_len))
            .for_each(|(o, xi)| {
                let mut scratch = Vec::new();
                let cols = columns(xi, &g, &mut scratch);
                T::gemm(co, g.col_rows(), g.out_pixels(), wt, false, cols, false, o, T::zero());
                for (plane, &bv) in o.chunks_mut(g.out_pixels()).zip(b) {
                    plane.iter_mut().for_each(|v| *v = *v + bv);
                }
            });
        let value = Tensor::new([n, co, ho, wo], out)?;

        self.custom("conv2d", &[input, kernel, bias], value, move |ctx| {
            conv2d_backward(ctx.grad, ctx.input(0), ctx.input(1), &g, n, [ctx.needs(0), ctx.needs(1), ctx.needs(2)])
        })
    }
}

fn conv2d_backward<T: Scalar>(
    grad: &Tensor<T>,
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    g: &Geometry,
    n: usize,
    needs: [bool; 3],
) -> Vec<Option<Tensor<T>>> {
    let (in_len, out_len) = (g.c * g.h * g.w, g.co * g.out_pixels());
    let (rows, npix) = (g.col_rows(), g.out_pixels());
    let gy = grad.data();
    let x = input.data();
    let wt = kernel.data();

    let dx = needs[0].then(|| {
        let mut dx = vec![T::zero(); n * in_len];
        dx.par_chunks_mut(in_len)
            .zip(gy.par_chunks(out_len))
            .for_each(|(dxi, gi)| {
                if g.is_pointwise() {
                    T::gemm(rows, g.co, npix, wt, true, gi, false, dxi, T::zero());
                } else {
                    let mut dcols = vec![T::zero(); rows * npix];
                    T::gemm(rows, g.co, npix, wt, true, gi, false, &mut dcols, T::zero());
                    col2im(&dcols, g, dxi);
                }
            });
        Tensor::new(input.shape().to_vec(), dx).unwrap()
    });

    let dw = needs[1].then(|| {
        let per_image: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut scratch = Vec::new();
                let cols = columns(&x[i * in_len..(i + 1) * in_len], g, &mut scratch);
                let mut dw = vec![T::zero(); g.co * rows];
                T::gemm(g.co, npix, rows, &gy[i * out_len..(i + 1) * out_len], false, cols, true, &mut dw, T::zero());
                dw
            })
            .collect();
        let mut acc = vec![T::zero(); g.co * rows];
        for dw in per_image {
            for (a, v) in acc.iter_mut().zip(dw) {
                *a = *a + v;
            }
        }
        Tensor::new(kernel.shape().to_vec(), acc).unwrap()
    });

    let db = needs[2].then(|| {
        let mut db = vec![T::zero(); g.co];
        for gi in gy.chunks(out_len) {
            for (acc, plane) in db.iter_mut().zip(gi.chunks(npix)) {
                *acc = *acc + plane.iter().copied().sum::<T>();
            }
        }
        Tensor::new([g.co], db).unwrap()
    });

    vec![dx, dw, db]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_formula() {
        assert_eq!(conv_output_size(32, 3, 1, 1), Some(32));
        assert_eq!(conv_output_size(32, 3, 2, 1), Some(16));
        assert_eq!(conv_output_size(7, 3, 2, 1), Some(4));
        assert_eq!(conv_output_size(2, 9, 1, 0), None);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 1, 4, 4]));
        let k = tape.constant(Tensor::from_fn([1, 1, 3, 3], |i| i as f32));
        let b = tape.constant(Tensor::full([1], 0.5));
        let y = tape.conv2d(x, k, b, 1, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn impulse_reveals_cross_correlation_convention() {
        // An impulse at the center sampled by cross-correlation produces the
        // kernel reversed in both axes (out[y][x] = K[2 - y][2 - x]).
        let mut tape = Tape::<f64>::new();
        let mut impulse = Tensor::zeros([1, 1, 3, 3]);
        impulse.data_mut()[4] = 1.0;
        let kernel = Tensor::from_fn([1, 1, 3, 3], |i| (i + 1) as f64);
        let x = tape.constant(impulse);
        let k = tape.constant(kernel.clone());
        let b = tape.constant(Tensor::zeros([1]));
        let y = tape.conv2d(x, k, b, 1, 1).unwrap();
        let out = tape.value(y).data();
        assert_eq!(out[4], kernel.data()[4]);
        for i in 0..9 {
            assert_eq!(out[i], kernel.data()[8 - i]);
        }
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 2, 4, 4]));
        let k = tape.constant(Tensor::zeros([1, 3, 3, 3]));
        let b = tape.constant(Tensor::zeros([1]));
        assert!(matches!(tape.conv2d(x, k, b, 1, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 1, 2, 2]));
        let k = tape.constant(Tensor::zeros([1, 1, 5, 5]));
        let b = tape.constant(Tensor::zeros([1]));
        assert!(tape.conv2d(x, k, b, 1, 1).is_err());
    }

    #[test]
    fn non_finite_input_is_a_numeric_error() {
        let mut tape = Tape::<f32>::new();
        let mut t = Tensor::zeros([1, 1, 3, 3]);
        t.data_mut()[0] = f32::INFINITY;
        let x = tape.constant(t);
        let k = tape.constant(Tensor::ones([1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros([1]));
        assert!(matches!(tape.conv2d(x, k, b, 1, 1), Err(Error::NonFinite { .. })));
    }
}
