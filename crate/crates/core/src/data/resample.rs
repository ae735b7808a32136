//! Separable Gaussian blur and Catmull-Rom bicubic resampling over the last
//! two axes of a tensor, with edge replication at the borders.

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Catmull-Rom parameter of the cubic convolution kernel.
pub const BICUBIC_A: f64 = -0.5;

/// How [`degrade`] removes content above the target Nyquist rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DegradeMode {
    /// Gaussian blur (sigma proportional to r) then bicubic decimation.
    #[default]
    BlurBicubic,
    /// Bicubic decimation only.
    BicubicOnly,
}

fn cubic(x: f64) -> f64 {
    let a = BICUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Sparse 1-D resampling matrix: for every output index, source taps
/// (already clamped to the border) and their weights.
struct Taps {
    taps: Vec<Vec<(usize, f64)>>,
}

impl Taps {
    fn apply<T: Scalar>(&self, src: &[T], stride: usize, dst: &mut [T], dst_stride: usize) {
        for (o, taps) in self.taps.iter().enumerate() {
            let mut acc = 0.0;
            for &(i, w) in taps {
                acc += w * src[i * stride].to_f64_lossy();
            }
            dst[o * dst_stride] = T::from_f64_lossy(acc);
        }
    }

    fn gaussian(len: usize, sigma: f64) -> Self {
        let radius = (3.0 * sigma).ceil() as isize;
        let mut kernel: Vec<f64> = (-radius..=radius)
            .map(|d| (-(d as f64).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|w| *w /= total);
        let last = len as isize - 1;
        let taps = (0..len as isize)
            .map(|o| {
                (-radius..=radius)
                    .zip(&kernel)
                    .map(|(d, &w)| ((o + d).clamp(0, last) as usize, w))
                    .collect()
            })
            .collect();
        Self { taps }
    }

    /// Pixel-center aligned: output `o` samples source `(o + 0.5) / f - 0.5`.
    fn bicubic(len_in: usize, len_out: usize) -> Self {
        let f = len_out as f64 / len_in as f64;
        let last = len_in as isize - 1;
        let taps = (0..len_out)
            .map(|o| {
                let x = (o as f64 + 0.5) / f - 0.5;
                let base = x.floor() as isize;
                (base - 1..=base + 2)
                    .map(|i| (i.clamp(0, last) as usize, cubic(x - i as f64)))
                    .collect()
            })
            .collect();
        Self { taps }
    }
}

/// Apply a row pass and a column pass to every trailing `[H, W]` plane.
fn separable<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize, rows: &Taps, cols: &Taps) -> Result<Tensor<T>> {
    let shape = img.shape();
    if shape.len() < 2 {
        return Err(Error::shape("resample", format!("need at least [H, W], got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let planes = img.numel() / (h * w).max(1);
    let mut out_shape = shape.to_vec();
    let rank = out_shape.len();
    out_shape[rank - 2] = out_h;
    out_shape[rank - 1] = out_w;
    let mut out = vec![T::zero(); planes * out_h * out_w];
    let mut tmp = vec![T::zero(); h * out_w];
    for (src, dst) in img.data().chunks(h * w).zip(out.chunks_mut(out_h * out_w)) {
        for y in 0..h {
            cols.apply(&src[y * w..], 1, &mut tmp[y * out_w..], 1);
        }
        for x in 0..out_w {
            rows.apply(&tmp[x..], out_w, &mut dst[x..], out_w);
        }
    }
    Tensor::new(out_shape, out)
}

fn spatial(img: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    match img.shape() {
        [.., h, w] if *h > 0 && *w > 0 => Ok((*h, *w)),
        s => Err(Error::shape("resample", format!("need non-empty [.., H, W], got {s:?}"))),
    }
}

fn clamp_unit<T: Scalar>(t: Tensor<T>) -> Tensor<T> {
    t.map(|v| v.max(T::zero()).min(T::one()))
}

/// Gaussian blur with kernel radius `ceil(3 sigma)`; not clamped.
pub fn gaussian_blur<T: Scalar>(img: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain {
            op: "gaussian_blur",
            detail: format!("sigma must be positive, got {sigma}"),
        });
    }
    let (h, w) = spatial(img)?;
    separable(img, h, w, &Taps::gaussian(h, sigma), &Taps::gaussian(w, sigma))
}

/// Bicubic resampling to an explicit output size, clamped to `[0, 1]`.
pub fn bicubic_resize<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w) = spatial(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bicubic_resize", format!("output {out_h}x{out_w} is empty")));
    }
    let t = separable(img, out_h, out_w, &Taps::bicubic(h, out_h), &Taps::bicubic(w, out_w))?;
    Ok(clamp_unit(t))
}

/// Bicubic resampling by `factor`; output sizes are `round(size * factor)`.
pub fn bicubic_resample<T: Scalar>(img: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Domain {
            op: "bicubic_resample",
            detail: format!("factor must be positive, got {factor}"),
        });
    }
    let (h, w) = spatial(img)?;
    let oh = (h as f64 * factor).round() as usize;
    let ow = (w as f64 * factor).round() as usize;
    bicubic_resize(img, oh, ow)
}

/// Default blur standard deviation per unit of scale factor.
pub const BLUR_SIGMA_PER_SCALE: f64 = 0.5;

/// A complete HR-to-LR recipe: the mode and, for blurring modes, the
/// Gaussian standard deviation `sigma_per_scale * r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    pub mode: DegradeMode,
    pub sigma_per_scale: f64,
}

impl Default for Degradation {
    fn default() -> Self {
        Self::new(DegradeMode::default())
    }
}

impl Degradation {
    pub fn new(mode: DegradeMode) -> Self {
        Self {
            mode,
            sigma_per_scale: BLUR_SIGMA_PER_SCALE,
        }
    }

    /// Synthesize the LR image for a power-of-two factor `r` dividing both
    /// spatial dims. `r = 1` returns the input.
    pub fn apply<T: Scalar>(&self, hr: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
        if r == 0 || !r.is_power_of_two() {
            return Err(Error::Config(format!("scale factor must be a power of two, got {r}")));
        }
        let (h, w) = spatial(hr)?;
        if h % r != 0 || w % r != 0 {
            return Err(Error::shape("degrade", format!("{h}x{w} is not divisible by {r}")));
        }
        if r == 1 {
            return Ok(hr.clone());
        }
        let src = match self.mode {
            DegradeMode::BlurBicubic => gaussian_blur(hr, self.sigma_per_scale * r as f64)?,
            DegradeMode::BicubicOnly => hr.clone(),
        };
        bicubic_resize(&src, h / r, w / r)
    }
}

/// [`Degradation::apply`] with the default blur strength.
pub fn degrade<T: Scalar>(hr: &Tensor<T>, r: usize, mode: DegradeMode) -> Result<Tensor<T>> {
    Degradation::new(mode).apply(hr, r)
}

/// Bilinear resampling (pixel-center aligned, edge replicated); the
/// baseline upsampler for evaluation.
pub fn bilinear_resize<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (h, w) = spatial(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("bilinear_resize", format!("output {out_h}x{out_w} is empty")));
    }
    let linear = |len_in: usize, len_out: usize| {
        let f = len_out as f64 / len_in as f64;
        let last = len_in as isize - 1;
        let taps = (0..len_out)
            .map(|o| {
                let x = ((o as f64 + 0.5) / f - 0.5).max(0.0);
                let base = x.floor();
                let t = x - base;
                let i0 = (base as isize).clamp(0, last) as usize;
                let i1 = (base as isize + 1).clamp(0, last) as usize;
                vec![(i0, 1.0 - t), (i1, t)]
            })
            .collect();
        Taps { taps }
    };
    separable(img, out_h, out_w, &linear(h, out_h), &linear(w, out_w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_kernel_is_interpolating_and_partitions_unity() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        for t in [0.1, 0.25, 0.5, 0.9] {
            let s: f64 = (-1..=2).map(|i| cubic(t - i as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Half-pixel weights.
        assert!((cubic(0.5) - 0.5625).abs() < 1e-12);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-12);
    }

    #[test]
    fn constants_survive_every_operation() {
        let img = Tensor::<f64>::full([2, 12, 16], 0.37);
        for t in [
            gaussian_blur(&img, 1.3).unwrap(),
            bicubic_resample(&img, 2.0).unwrap(),
            bicubic_resample(&img, 0.5).unwrap(),
            bicubic_resample(&img, 0.75).unwrap(),
            degrade(&img, 4, DegradeMode::BlurBicubic).unwrap(),
            bilinear_resize(&img, 24, 32).unwrap(),
        ] {
            assert!(t.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let img = Tensor::<f64>::from_fn([1, 7, 9], |i| (i as f64 * 0.13).sin() * 0.5 + 0.5);
        let out = bicubic_resample(&img, 1.0).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_is_reproduced_away_from_borders() {
        // Row ramp v(x) = 0.1 + 0.05 x; upsampled sample o sits at x = (o + 0.5) / 2 - 0.5.
        let img = Tensor::<f64>::from_fn([1, 1, 12], |i| 0.1 + 0.05 * i as f64);
        let up = bicubic_resample(&img, 2.0).unwrap();
        assert_eq!(up.shape(), &[1, 2, 24]);
        for o in 4..20 {
            let x = (o as f64 + 0.5) / 2.0 - 0.5;
            assert!((up.data()[o] - (0.1 + 0.05 * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn degrade_shapes_compose() {
        let img = Tensor::<f32>::zeros([1, 32, 32]);
        let twice = degrade(&degrade(&img, 2, DegradeMode::BlurBicubic).unwrap(), 2, DegradeMode::BlurBicubic).unwrap();
        assert_eq!(twice.shape(), degrade(&img, 4, DegradeMode::BlurBicubic).unwrap().shape());
        assert!(degrade(&img, 3, DegradeMode::BlurBicubic).is_err());
        assert!(degrade(&Tensor::<f32>::zeros([1, 30, 32]), 4, DegradeMode::BlurBicubic).is_err());
    }

    #[test]
    fn outputs_are_clamped() {
        let img = Tensor::<f64>::from_fn([1, 8, 8], |i| if (i / 2) % 2 == 0 { 0.0 } else { 1.0 });
        let up = bicubic_resample(&img, 2.0).unwrap();
        assert!(up.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(up.data().iter().any(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn bilinear_interpolates_midpoints() {
        let img = Tensor::<f64>::new([1, 2], vec![0.0, 1.0]).unwrap();
        let up = bilinear_resize(&img, 1, 4).unwrap();
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
    }
}
