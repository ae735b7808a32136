use crate::tensor::Tensor;
use crate::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
/// SSIM window side length.
pub const SSIM_WINDOW: usize = 11;
/// SSIM Gaussian window standard deviation.
pub const SSIM_SIGMA: f64 = 1.5;
/// SSIM stabilizers for a unit dynamic range.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.numel() == 0 {
        return Err(Error::shape(op, "empty image"));
    }
    Ok(())
}

/// Mean squared difference in double precision.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("mse", a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(max_val^2 / MSE)` over every element, capped at
/// [`PSNR_CAP_DB`] (which identical images reach exactly).
pub fn psnr(a: &Tensor, b: &Tensor, max_val: f64) -> Result<f64> {
    if max_val.is_nan() || max_val <= 0.0 {
        return Err(Error::Config(format!("psnr peak value must be > 0, got {max_val}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max_val * max_val / m).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-region separable filtering of one `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Split any `[..., H, W]` tensor into `H x W` planes.
pub(crate) fn planes(t: &Tensor) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    if t.rank() < 2 {
        return Err(Error::shape("planes", format!("need at least 2 axes, got {:?}", t.shape())));
    }
    let (h, w) = (t.shape()[t.rank() - 2], t.shape()[t.rank() - 1]);
    let planes = t.data().chunks(h * w).map(|c| c.iter().map(|&v| v as f64).collect()).collect();
    Ok((h, w, planes))
}

/// Mean SSIM over the valid region of every `H x W` plane (channels and
/// batch entries averaged with equal weight). Symmetric bit for bit.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (h, w, pa) = planes(a)?;
    let (_, _, pb) = planes(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in pa.iter().zip(&pb) {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter_valid(x, h, w, &taps), filter_valid(y, h, w, &taps));
        let (sxx, syy, sxy) = (
            filter_valid(&xx, h, w, &taps),
            filter_valid(&yy, h, w, &taps),
            filter_valid(&xy, h, w, &taps),
        );
        for i in 0..mx.len() {
            total += ssim_index(mx[i], my[i], sxx[i], syy[i], sxy[i]);
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// Local SSIM from windowed first and second moments. Each operand pair
/// enters through commutative operations so swapping images is exact.
pub(crate) fn ssim_index(mx: f64, my: f64, exx: f64, eyy: f64, exy: f64) -> f64 {
    let (vx, vy, cxy) = (exx - mx * mx, eyy - my * my, exy - mx * my);
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_img(seed: u64, h: usize, w: usize) -> Tensor {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Tensor::from_fn([1, h, w], |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32
        })
    }

    #[test]
    fn psnr_known_values() {
        let a = noise_img(1, 16, 16);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let zero = Tensor::zeros([1, 8, 8]);
        let tenth = Tensor::full([1, 8, 8], 0.1);
        // 0.1f32 is not exactly a tenth; the error is far below the tolerance.
        assert!((psnr(&zero, &tenth, 1.0).unwrap() - 20.0).abs() < 1e-6);
        assert!(psnr(&zero, &Tensor::zeros([1, 8, 9]), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = noise_img(2, 24, 24);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let bin = Tensor::from_fn([1, 16, 16], |i| ((i / 16 + i % 16) % 2) as f32);
        let inv = bin.map(|v| 1.0 - v);
        assert!(ssim(&bin, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_matches_sliding_window_oracle() {
        let a = noise_img(3, 32, 32);
        let b = a.zip_map(&noise_img(4, 32, 32), |x, y| 0.7 * x + 0.3 * y).unwrap();
        let (x, y) = (a.data(), b.data());
        let taps = gaussian_taps(11, 1.5);
        let mut total = 0.0;
        for oy in 0..22 {
            for ox in 0..22 {
                let (mut mx, mut my, mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let (p, q) = (x[(oy + i) * 32 + ox + j] as f64, y[(oy + i) * 32 + ox + j] as f64);
                        let g = taps[i] * taps[j];
                        mx += g * p;
                        my += g * q;
                    }
                }
                for i in 0..11 {
                    for j in 0..11 {
                        let (p, q) = (x[(oy + i) * 32 + ox + j] as f64, y[(oy + i) * 32 + ox + j] as f64);
                        let g = taps[i] * taps[j];
                        vx += g * (p - mx).powi(2);
                        vy += g * (q - my).powi(2);
                        cxy += g * (p - mx) * (q - my);
                    }
                }
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            }
        }
        let oracle = total / (22.0 * 22.0);
        assert!((ssim(&a, &b).unwrap() - oracle).abs() < 1e-4);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::zeros([1, 10, 20]);
        assert!(matches!(ssim(&a, &a), Err(Error::Shape { .. })));
    }
}
