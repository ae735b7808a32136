use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

/// Statistics source for [`Tape::batch_norm`].
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    /// Normalize with the statistics of the current batch.
    Batch,
    /// Normalize with frozen running mean and variance.
    Running { mean: &'a [T], var: &'a [T] },
}

/// Per-channel statistics observed in a training-mode batch; the caller
/// folds them into the running estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) variance.
    pub var: Vec<f64>,
}

impl<T: Scalar> Tape<T> {
    /// Per-channel normalization of `[N, C, H, W]` followed by
    /// `scale * x_hat + shift`.
    pub fn batch_norm(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        stats: NormStats<'_, T>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let [n, c, h, w] = self.value(input).dims4("batch_norm")?;
        for (what, v) in [("scale", scale), ("shift", shift)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{what} shape {:?}, expected [{c}]", self.shape(v)),
                ));
            }
        }
        let plane = h * w;
        let count = n * plane;
        let eps = T::from_f64_lossy(BATCH_NORM_EPS);
        let x = self.value(input).data();
        let gamma = self.value(scale).data().to_vec();
        let beta = self.value(shift).data().to_vec();

        let (mean, inv_std, observed): (Vec<T>, Vec<T>, _) = match stats {
            NormStats::Batch => {
                if count < 2 {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("training mode needs N*H*W >= 2 per channel, got {count}"),
                    ));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let cnt = T::from_usize(count).unwrap();
                for ch in 0..c {
                    let mut s = T::zero();
                    for img in 0..n {
                        let off = (img * c + ch) * plane;
                        s = s + x[off..off + plane].iter().copied().sum::<T>();
                    }
                    let m = s / cnt;
                    let mut ss = T::zero();
                    for img in 0..n {
                        let off = (img * c + ch) * plane;
                        ss = ss + x[off..off + plane].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                    }
                    mean[ch] = m;
                    var[ch] = ss / cnt;
                }
                let unbias = count as f64 / (count - 1) as f64;
                let observed = BatchStats {
                    mean: mean.iter().map(|v| v.to_f64_lossy()).collect(),
                    var: var.iter().map(|v| v.to_f64_lossy() * unbias).collect(),
                };
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean, inv_std, Some(observed))
            }
            NormStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("running stats hold {} / {} channels, expected {c}", mean.len(), var.len()),
                    ));
                }
                let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean.to_vec(), inv_std, None)
            }
        };

        let mut x_hat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for img in 0..n {
            for ch in 0..c {
                let off = (img * c + ch) * plane;
                let (m, s, gm, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
                for i in off..off + plane {
                    let xh = (x[i] - m) * s;
                    x_hat[i] = xh;
                    out[i] = gm * xh + bt;
                }
            }
        }
        let value = Tensor::new([n, c, h, w], out)?;
        let training = observed.is_some();

        let var = self.custom("batch_norm", &[input, scale, shift], value, move |ctx| {
            let g = ctx.grad.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for img in 0..n {
                for ch in 0..c {
                    let off = (img * c + ch) * plane;
                    for i in off..off + plane {
                        dgamma[ch] = dgamma[ch] + g[i] * x_hat[i];
                        dbeta[ch] = dbeta[ch] + g[i];
                    }
                }
            }
            let dx = ctx.needs(0).then(|| {
                let mut dx = vec![T::zero(); g.len()];
                let cnt = T::from_usize(count).unwrap();
                for img in 0..n {
                    for ch in 0..c {
                        let off = (img * c + ch) * plane;
                        let k = gamma[ch] * inv_std[ch];
                        if training {
                            let mg = dbeta[ch] / cnt;
                            let mgx = dgamma[ch] / cnt;
                            for i in off..off + plane {
                                dx[i] = k * (g[i] - mg - x_hat[i] * mgx);
                            }
                        } else {
                            for i in off..off + plane {
                                dx[i] = k * g[i];
                            }
                        }
                    }
                }
                Tensor::new([n, c, h, w], dx).unwrap()
            });
            vec![
                dx,
                Some(Tensor::new([c], dgamma).unwrap()),
                Some(Tensor::new([c], dbeta).unwrap()),
            ]
        })?;
        Ok((var, observed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bn(x: Tensor<f64>, stats: NormStats<'_, f64>) -> (Tensor<f64>, Option<BatchStats>) {
        let c = x.shape()[1];
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::ones([c]));
        let b = tape.constant(Tensor::zeros([c]));
        let (y, s) = tape.batch_norm(xv, g, b, stats).unwrap();
        (tape.value(y).clone(), s)
    }

    #[test]
    fn normalized_input_passes_through() {
        // Per channel: values +-1 alternate, so mean 0 and biased variance 1.
        let x = Tensor::from_fn([2, 2, 2, 2], |i| if i % 2 == 0 { 1.0 } else { -1.0 });
        let (y, _) = bn(x.clone(), NormStats::Batch);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_channel_maps_to_shift() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full([2, 1, 3, 3], 0.7));
        let g = tape.constant(Tensor::ones([1]));
        let b = tape.constant(Tensor::full([1], 0.25));
        let (y, stats) = tape.batch_norm(x, g, b, NormStats::Batch).unwrap();
        // Rounding in the f32 mean is amplified by 1 / sqrt(eps).
        assert!(tape.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-4));
        assert!(stats.unwrap().var[0] < 1e-12);
    }

    #[test]
    fn running_mode_is_deterministic() {
        let x = Tensor::from_fn([1, 2, 3, 3], |i| (i as f64 * 0.3).sin());
        let mean = [0.1, -0.2];
        let var = [0.5, 2.0];
        let (a, sa) = bn(x.clone(), NormStats::Running { mean: &mean, var: &var });
        let (b, _) = bn(x, NormStats::Running { mean: &mean, var: &var });
        assert_eq!(a, b);
        assert!(sa.is_none());
    }

    #[test]
    fn training_needs_two_values_per_channel() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 1, 1, 1]));
        let g = tape.constant(Tensor::ones([1]));
        let b = tape.constant(Tensor::zeros([1]));
        assert!(tape.batch_norm(x, g, b, NormStats::Batch).is_err());
    }
}
