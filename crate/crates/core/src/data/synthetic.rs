use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image_io::{save_image, BitDepth};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Images in the built-in toy corpus.
pub const SYNTHETIC_COUNT: usize = 200;
/// Side length of each toy image.
pub const SYNTHETIC_SIZE: usize = 64;

/// One grayscale `[1, size, size]` toy image, a pure function of `(seed, index)`.
///
/// The image is a background level `b ~ U(0.1, 0.3)` plus
/// - 3 to 6 isotropic Gaussian blobs `a * exp(-|p - c|^2 / (2 s^2))` with
///   `a ~ U(0.15, 0.5)`, `s ~ U(1.5, 0.12 * size)` and centers anywhere in the frame;
/// - 1 to 3 straight bars of half-width `w ~ U(0.6, 2.5)`, length
///   `U(0.3, 0.9) * size`, any orientation, added with amplitude `±U(0.2, 0.4)`.
///
/// Bar edges are antialiased by pixel coverage `clamp(w + 0.5 - d, 0, 1)`
/// where `d` is the distance from the pixel center to the bar segment.
/// The sum is clamped to `[0, 1]`.
pub fn synthetic_image(seed: u64, index: usize, size: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let n = size as f64;
    let background = rng.random_range(0.1..0.3);
    let blobs: Vec<[f64; 4]> = (0..rng.random_range(3..=6))
        .map(|_| {
            [
                rng.random_range(0.0..n),
                rng.random_range(0.0..n),
                rng.random_range(1.5..(0.12 * n).max(2.0)),
                rng.random_range(0.15..0.5),
            ]
        })
        .collect();
    let bars: Vec<[f64; 6]> = (0..rng.random_range(1..=3))
        .map(|_| {
            let (cy, cx) = (rng.random_range(0.2 * n..0.8 * n), rng.random_range(0.2 * n..0.8 * n));
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let half_len = rng.random_range(0.3 * n..0.9 * n) / 2.0;
            let half_width = rng.random_range(0.6..2.5);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            [cy, cx, theta, half_len, half_width, sign * rng.random_range(0.2..0.4)]
        })
        .collect();
    Tensor::from_fn([1, size, size], |i| {
        let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
        let mut v = background;
        for &[cy, cx, s, a] in &blobs {
            let r2 = (y - cy).powi(2) + (x - cx).powi(2);
            v += a * (-r2 / (2.0 * s * s)).exp();
        }
        for &[cy, cx, theta, half_len, half_width, a] in &bars {
            let (dy, dx) = (y - cy, x - cx);
            let (along, across) = (dx * theta.cos() + dy * theta.sin(), -dx * theta.sin() + dy * theta.cos());
            let overshoot = (along.abs() - half_len).max(0.0);
            let d = (overshoot * overshoot + across * across).sqrt();
            v += a * (half_width + 0.5 - d).clamp(0.0, 1.0);
        }
        v.clamp(0.0, 1.0) as f32
    })
}

/// The toy corpus as `(id, image)` pairs with ids `synth_000`, `synth_001`, ...
pub fn synthetic_corpus(count: usize, size: usize, seed: u64) -> Vec<(String, Tensor)> {
    (0..count)
        .map(|i| (format!("synth_{i:03}"), synthetic_image(seed, i, size)))
        .collect()
}

/// Write the toy corpus as 16-bit PNGs named `<id>.png`; returns the paths
/// in id order.
pub fn write_synthetic(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<std::path::PathBuf>> {
    if size < 8 {
        return Err(Error::Config(format!("synthetic image size {size} is below 8")));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    synthetic_corpus(count, size, seed)
        .into_iter()
        .map(|(id, img)| {
            let path = dir.join(format!("{id}.png"));
            save_image(&img, &path, BitDepth::Sixteen)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_deterministic_and_distinct() {
        let a = synthetic_image(7, 3, 32);
        assert_eq!(a, synthetic_image(7, 3, 32));
        assert_ne!(a, synthetic_image(7, 4, 32));
        assert_ne!(a, synthetic_image(8, 3, 32));
    }

    #[test]
    fn images_have_structure_in_range() {
        for (_, img) in synthetic_corpus(20, 64, 0) {
            let d = img.data();
            assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
            let (lo, hi) = d.iter().fold((1.0f32, 0.0f32), |(l, h), &v| (l.min(v), h.max(v)));
            assert!(hi - lo > 0.15, "flat image");
        }
    }

    #[test]
    fn corpus_written_to_disk_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_synthetic(dir.path(), 3, 16, 1).unwrap();
        assert_eq!(paths.len(), 3);
        let back = super::super::load_image(&paths[2]).unwrap();
        let orig = synthetic_image(1, 2, 16);
        assert!(back.data().iter().zip(orig.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 65535.0 + 1e-7));
    }
}
