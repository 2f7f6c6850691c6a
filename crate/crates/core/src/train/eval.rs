//! Full-image inference, evaluation sweeps and inference timing.

use std::fmt;
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::Sample;
use crate::checkpoint::Checkpoint;
use crate::error::{usage_err, Result};
use crate::metrics::{psnr, ssim, ImageMetrics, MetricReport};
use crate::model::{ArchConfig, Oucd};
use crate::tensor::{Shape, Tensor};

/// Mirror index without repeating the edge sample (`n = 4`: ... 2 1 [0 1 2 3] 2 1 0 ...).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Reflect-pads the bottom and right edges up to the next multiple of `multiple`.
pub fn reflect_pad(x: &Tensor, multiple: usize) -> Result<Tensor> {
    if multiple == 0 {
        return Err(usage_err!("padding multiple must be positive"));
    }
    let s = x.shape();
    let h = s.h.div_ceil(multiple) * multiple;
    let w = s.w.div_ceil(multiple) * multiple;
    if (h, w) == (s.h, s.w) {
        return Ok(x.clone());
    }
    Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, i, j| x.at(n, c, reflect(i, s.h), reflect(j, s.w))))
}

/// Inference at any image size: reflect-pad to the network's divisor, run, crop back.
pub fn infer_full(net: &Oucd, y: &Tensor) -> Result<Tensor> {
    let s = y.shape();
    let padded = reflect_pad(y, net.config().required_divisor())?;
    let out = net.infer(&padded)?;
    if out.shape() == s {
        return Ok(out);
    }
    out.crop(0, 0, s.h, s.w)
}

fn score(name: &str, restored: &Tensor, clean: &Tensor) -> Result<ImageMetrics> {
    Ok(ImageMetrics { name: name.to_string(), psnr_db: psnr(restored, clean, 1.0)?, ssim: ssim(restored, clean)? })
}

/// PSNR and SSIM of the network output against the clean image, per sample, with the mean
/// wall-clock inference time.
pub fn evaluate(net: &Oucd, samples: &[Sample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(usage_err!("evaluation set is empty"));
    }
    let mut images = Vec::with_capacity(samples.len());
    let mut seconds = 0.0;
    for s in samples {
        let start = Instant::now();
        let restored = infer_full(net, &s.rainy)?;
        seconds += start.elapsed().as_secs_f64();
        images.push(score(&s.name, &restored, &s.clean)?);
    }
    Ok(MetricReport { images, mean_seconds: Some(seconds / samples.len() as f64) })
}

/// [`evaluate`] for a stored bundle; a fingerprint mismatch is a checkpoint error.
pub fn evaluate_checkpoint(arch: &ArchConfig, ckpt: &Checkpoint, samples: &[Sample]) -> Result<MetricReport> {
    let net = super::load_network(arch, ckpt)?;
    evaluate(&net, samples)
}

/// The no-op reference: scores the rainy input itself.
pub fn identity_report(samples: &[Sample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(usage_err!("evaluation set is empty"));
    }
    let images = samples.iter().map(|s| score(&s.name, &s.rainy, &s.clean)).collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { images, mean_seconds: None })
}

/// SHA-256 over parameter names, shapes and values.
pub fn parameter_digest(net: &Oucd) -> [u8; 32] {
    let mut h = Sha256::new();
    for (name, t) in net.params() {
        h.update(name.as_bytes());
        let s = t.shape();
        for d in [s.n, s.c, s.h, s.w] {
            h.update((d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingReport {
    pub height: usize,
    pub width: usize,
    /// Median of `samples`, in seconds.
    pub seconds: f64,
    pub samples: Vec<f64>,
    pub hardware: String,
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "image {}x{}: {:.4} s per image (median of {}) on {}",
            self.height,
            self.width,
            self.seconds,
            self.samples.len(),
            self.hardware
        )
    }
}

fn hardware_note() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}, {} {}, single-threaded, {threads} hardware threads", std::env::consts::OS, std::env::consts::ARCH)
}

/// Median wall-clock time of `repetitions` forward passes on a zero `height x width` RGB
/// image, after three warm-up passes.
pub fn timing_report(net: &Oucd, height: usize, width: usize, repetitions: usize) -> Result<TimingReport> {
    if repetitions == 0 {
        return Err(usage_err!("timing needs at least one repetition"));
    }
    let y = Tensor::zeros(Shape::try_new(1, net.config().in_channels, height, width)?);
    for _ in 0..3 {
        infer_full(net, &y)?;
    }
    let mut samples = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        infer_full(net, &y)?;
        samples.push(start.elapsed().as_secs_f64());
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let seconds = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
    Ok(TimingReport { height, width, seconds, samples, hardware: hardware_note() })
}
