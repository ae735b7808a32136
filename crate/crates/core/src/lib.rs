//! Progressive GAN super-resolution on the CPU.
//!
//! A pipeline of `K` generator stages, each doubling resolution, upscales
//! images by `2^K`. Stages are trained one at a time against their own
//! discriminator on pixel, feature, adversarial and (from stage 2) triplet
//! losses, then frozen.
//!
//! - [`tensor`]: tensors, a reverse-mode tape, Adam.
//! - [`models`]: generator and discriminator.
//! - [`losses`]: loss terms and their per-stage combination.
//! - [`data`]: image I/O, degradation, noise, synthetic corpus, patch streams.
//! - [`progressive`]: pipelines, the resumable trainer, held-out scoring.
//! - [`metrics`]: PSNR, SSIM, S3 and CSV reports.
//! - [`gradcheck`]: finite-difference verification of every gradient.
//! - [`checkpoint`], [`config`]: persistence and run configuration.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod progressive;
pub mod tensor;

pub use error::{Error, ErrorClass, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/degradation.md")]
    mod degradation {}
    #[doc = include_str!("../../../book/src/progressive.md")]
    mod progressive {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
