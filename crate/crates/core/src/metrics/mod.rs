//! Losses and image quality metrics.

mod extractor;
mod loss;
mod quality;
mod report;

pub use extractor::{ExtractorSource, FeatureExtractor, DEFAULT_EXTRACTOR_SEED, DEFAULT_WIDTHS, TAP_NAMES};
pub use loss::{loss_values, mse_loss, perceptual_loss, total_loss, LossConfig, LossTerms, LossValues, DEFAULT_LAMBDA};
pub use quality::{psnr, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{ImageMetrics, MetricReport, PSNR_TEXT_CAP};
