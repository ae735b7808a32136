use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Side of the square blocks S3 scores.
pub const S3_BLOCK: usize = 32;
/// Offset between neighbouring blocks.
pub const S3_STRIDE: usize = 16;
/// Fraction of highest-scoring blocks averaged into the final score.
pub const S3_TOP_FRACTION: f64 = 0.01;
/// Blocks whose intensity range is below this have no spectral sharpness.
pub const S3_MIN_CONTRAST: f64 = 0.02;
/// Logistic map from spectral slope `a` to `s1 = 1 - 1 / (1 + exp(-3 (a - 2)))`.
const SLOPE_GAIN: f64 = 3.0;
const SLOPE_MIDPOINT: f64 = 2.0;
const MIN_MAGNITUDE: f64 = 1e-12;

/// Rec. 601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// `[1, H, W]` luma of a `[3, H, W]` image; single-channel input passes through.
pub fn luma(img: &Tensor) -> Result<Tensor> {
    let [c, h, w] = img.dims3("luma")?;
    match c {
        1 => Ok(img.clone()),
        3 => {
            let d = img.data();
            let plane = h * w;
            Ok(Tensor::from_fn([1, h, w], |i| {
                (LUMA_WEIGHTS[0] * d[i] as f64 + LUMA_WEIGHTS[1] * d[plane + i] as f64 + LUMA_WEIGHTS[2] * d[2 * plane + i] as f64)
                    as f32
            }))
        }
        _ => Err(Error::shape("luma", format!("{c} channels; expected 1 or 3"))),
    }
}

/// Spectral and spatial sharpness in `[0, 1]`, higher is sharper.
///
/// Each `32 x 32` block (stride 16) gets `sqrt(s1 * s2)`:
/// - `s1` fits `ln z(f) = c - a ln f` to the ring-averaged magnitude
///   spectrum `z` of the mean-removed, Hann-windowed block over radii
///   `1..=16` and maps the slope through a logistic centred on `a = 2`.
///   Blocks with intensity range below [`S3_MIN_CONTRAST`] get `s1 = 0`.
/// - `s2` is the largest total variation of any `2 x 2` neighbourhood,
///   the six pairwise absolute differences summed and divided by 4.
///
/// The score is the mean of the top 1% of block values (at least one block).
/// Color input is scored on its luma.
pub fn s3_sharpness(img: &Tensor) -> Result<f64> {
    let y = luma(img)?;
    let [_, h, w] = y.dims3("s3_sharpness")?;
    if h < S3_BLOCK || w < S3_BLOCK {
        return Err(Error::shape(
            "s3_sharpness",
            format!("{h}x{w} image is smaller than one {S3_BLOCK}x{S3_BLOCK} block"),
        ));
    }
    let data: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
    let mut spectral = SpectralSlope::new();
    let mut scores = Vec::new();
    for by in block_origins(h) {
        for bx in block_origins(w) {
            let block: Vec<f64> = (0..S3_BLOCK * S3_BLOCK)
                .map(|i| data[(by + i / S3_BLOCK) * w + bx + i % S3_BLOCK])
                .collect();
            let s1 = spectral.score(&block);
            let s2 = local_variation(&block);
            scores.push((s1 * s2).sqrt());
        }
    }
    scores.sort_by(|a, b| b.total_cmp(a));
    let k = ((scores.len() as f64 * S3_TOP_FRACTION).ceil() as usize).max(1);
    Ok(scores[..k].iter().sum::<f64>() / k as f64)
}

fn block_origins(n: usize) -> impl Iterator<Item = usize> {
    (0..=(n - S3_BLOCK) / S3_STRIDE).map(|k| k * S3_STRIDE)
}

struct SpectralSlope {
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    window: Vec<f64>,
    ring: Vec<usize>,
    ring_counts: Vec<usize>,
}

impl SpectralSlope {
    fn new() -> Self {
        let n = S3_BLOCK;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        // Ring index of every frequency bin; 0 marks bins outside 1..=n/2.
        let freq = |k: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        let mut ring = vec![0; n * n];
        let mut ring_counts = vec![0; n / 2 + 1];
        for u in 0..n {
            for v in 0..n {
                let r = (freq(u).hypot(freq(v))).round() as usize;
                if (1..=n / 2).contains(&r) {
                    ring[u * n + v] = r;
                    ring_counts[r] += 1;
                }
            }
        }
        Self {
            fft,
            window,
            ring,
            ring_counts,
        }
    }

    fn score(&mut self, block: &[f64]) -> f64 {
        let n = S3_BLOCK;
        let (lo, hi) = block.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        if hi - lo < S3_MIN_CONTRAST {
            return 0.0;
        }
        let mean = block.iter().sum::<f64>() / block.len() as f64;
        let mut buf: Vec<Complex<f64>> = (0..n * n)
            .map(|i| Complex::new((block[i] - mean) * self.window[i / n] * self.window[i % n], 0.0))
            .collect();
        for row in buf.chunks_mut(n) {
            self.fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for x in 0..n {
            for y in 0..n {
                col[y] = buf[y * n + x];
            }
            self.fft.process(&mut col);
            for y in 0..n {
                buf[y * n + x] = col[y];
            }
        }
        let mut sums = vec![0.0; n / 2 + 1];
        for (i, c) in buf.iter().enumerate() {
            sums[self.ring[i]] += c.norm();
        }
        // Least-squares slope of ln z against ln f.
        let pts: Vec<(f64, f64)> = (1..=n / 2)
            .map(|r| ((r as f64).ln(), (sums[r] / self.ring_counts[r] as f64).max(MIN_MAGNITUDE).ln()))
            .collect();
        let m = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
        let (mx, my) = (sx / m, sy / m);
        let sxy: f64 = pts.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|&(x, _)| (x - mx).powi(2)).sum();
        let slope = -sxy / sxx;
        1.0 - 1.0 / (1.0 + (-SLOPE_GAIN * (slope - SLOPE_MIDPOINT)).exp())
    }
}

fn local_variation(block: &[f64]) -> f64 {
    let n = S3_BLOCK;
    let mut best = 0.0f64;
    for y in 0..n - 1 {
        for x in 0..n - 1 {
            let p = [block[y * n + x], block[y * n + x + 1], block[(y + 1) * n + x], block[(y + 1) * n + x + 1]];
            let mut tv = 0.0;
            for i in 0..4 {
                for j in i + 1..4 {
                    tv += (p[i] - p[j]).abs();
                }
            }
            best = best.max(tv / 4.0);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blur;

    fn checkerboard(size: usize, cell: usize) -> Tensor {
        Tensor::from_fn([1, size, size], |i| {
            let (y, x) = (i / size, i % size);
            if (y / cell + x / cell).is_multiple_of(2) { 0.2 } else { 0.8 }
        })
    }

    #[test]
    fn constant_image_scores_zero() {
        assert_eq!(s3_sharpness(&Tensor::full([1, 48, 48], 0.4)).unwrap(), 0.0);
    }

    #[test]
    fn blur_lowers_checkerboard_score() {
        let sharp = checkerboard(64, 4);
        let blurred = gaussian_blur(&sharp, 2.0).unwrap();
        let (a, b) = (s3_sharpness(&sharp).unwrap(), s3_sharpness(&blurred).unwrap());
        assert!(a > b, "{a} vs {b}");
        assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
    }

    #[test]
    fn offset_does_not_change_score() {
        let img = gaussian_blur(&checkerboard(48, 6), 0.8).unwrap().map(|v| v * 0.8);
        let shifted = img.map(|v| v + 0.1);
        let (a, b) = (s3_sharpness(&img).unwrap(), s3_sharpness(&shifted).unwrap());
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn luma_of_gray_rgb_is_the_gray_level() {
        let rgb = Tensor::full([3, 4, 4], 0.5);
        assert!(luma(&rgb).unwrap().data().iter().all(|v| (v - 0.5).abs() < 1e-6));
        assert!(s3_sharpness(&Tensor::zeros([1, 31, 64])).is_err());
    }
}
