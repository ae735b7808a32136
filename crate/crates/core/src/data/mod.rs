//! Image I/O, high-to-low resolution synthesis, noise injection and
//! deterministic patch streams.
mod dataset;
mod image_io;
mod noise;
pub mod resample;
mod synthetic;

pub use dataset::{load_dir, Batch, Dataset, ImagePair, PatchStream, Sample, StreamState};
pub use image_io::{is_supported, load_image, save_image, BitDepth};
pub use noise::{add_noise, NoiseKind, NoiseSpec};
pub use resample::{
    bicubic_resample, bicubic_resize, bilinear_resize, degrade, gaussian_blur, DegradeMode, Degradation,
    BLUR_SIGMA_PER_SCALE,
};
pub use synthetic::{synthetic_corpus, synthetic_image, write_synthetic, SYNTHETIC_COUNT, SYNTHETIC_SIZE};
