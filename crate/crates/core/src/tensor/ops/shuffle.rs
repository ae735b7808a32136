use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// `[N, C*s*s, H, W] -> [N, C, H*s, W*s]`, with
/// `out[n][c][h*s + i][w*s + j] = in[n][c*s*s + i*s + j][h][w]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, cs, h, w] = x.dims4("pixel_shuffle")?;
    if s == 0 || cs % (s * s) != 0 {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{cs} channels not divisible by {s}^2"),
        ));
    }
    let c = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for img in 0..n {
        for ch in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let ic = ch * s * s + i * s + j;
                    let sbase = (img * cs + ic) * h * w;
                    let obase = (img * c + ch) * oh * ow;
                    for y in 0..h {
                        for xx in 0..w {
                            out[obase + (y * s + i) * ow + xx * s + j] = src[sbase + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = x.dims4("pixel_unshuffle")?;
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("{oh}x{ow} not divisible by {s}"),
        ));
    }
    let (h, w, cs) = (oh / s, ow / s, c * s * s);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for img in 0..n {
        for ch in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let ic = ch * s * s + i * s + j;
                    let obase = (img * cs + ic) * h * w;
                    let sbase = (img * c + ch) * oh * ow;
                    for y in 0..h {
                        for xx in 0..w {
                            out[obase + y * w + xx] = src[sbase + (y * s + i) * ow + xx * s + j];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, cs, h, w], out)
}

impl<T: Scalar> Tape<T> {
    /// Sub-pixel upsampling by `s` (channel blocks become spatial positions).
    pub fn pixel_shuffle(&mut self, input: Var, s: usize) -> Result<Var> {
        let value = pixel_shuffle(self.value(input), s)?;
        self.custom("pixel_shuffle", &[input], value, move |ctx| {
            vec![Some(pixel_unshuffle(ctx.grad, s).unwrap())]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_channels_become_two_by_two_grid() {
        let x = Tensor::<f32>::new([1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f32>::full([2, 8, 3, 3], 0.3);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn indivisible_channels_are_rejected() {
        let x = Tensor::<f32>::zeros([1, 3, 2, 2]);
        assert!(matches!(pixel_shuffle(&x, 2), Err(Error::Shape { .. })));
    }

    #[test]
    fn unshuffle_inverts_shuffle() {
        let x = Tensor::<f64>::from_fn([2, 8, 3, 5], |i| i as f64);
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
    }
}
