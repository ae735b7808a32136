//! Image quality scores (PSNR, SSIM, S3 sharpness) and their reports.
mod quality;
mod report;
mod sharpness;

pub use quality::{gaussian_taps, mse, psnr, ssim, PSNR_CAP_DB, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{evaluate, score, ColorMode, GroupSummary, Labels, MetricRow, MetricsReport, Summary, CSV_HEADER};
pub use sharpness::{luma, s3_sharpness, LUMA_WEIGHTS, S3_BLOCK, S3_MIN_CONTRAST, S3_STRIDE, S3_TOP_FRACTION};
