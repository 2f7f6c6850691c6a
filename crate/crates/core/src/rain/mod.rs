//! Synthetic rain: streak rendering, additive composition with a clean image, patch
//! cropping, PNG I/O, procedural clean scenes and split manifests.

mod image_io;
mod manifest;
mod scene;
mod streaks;

pub use image_io::{load_image, save_image};
pub use manifest::{build_manifest, list_pngs, Manifest, Split};
pub use scene::generate_scene;
pub use streaks::{render_streaks, sample_streaks, Streak};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Generator settings. Ranges are inclusive `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainParams {
    pub streak_count: [u32; 2],
    /// Degrees from horizontal.
    pub angle_deg: [f64; 2],
    pub length_px: [u32; 2],
    pub width_px: [u32; 2],
    pub intensity: [f64; 2],
    pub blur_sigma: f64,
    /// Derived from the run seed by callers; never read from or written to parameter files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for RainParams {
    fn default() -> Self {
        RainParams {
            streak_count: [40, 160],
            angle_deg: [60.0, 120.0],
            length_px: [8, 24],
            width_px: [1, 2],
            intensity: [0.1, 0.5],
            blur_sigma: 0.5,
            seed: 0,
        }
    }
}

/// Side of the square patch the default streak counts are chosen for.
pub const REFERENCE_SIDE: usize = 128;

impl RainParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Scales the streak count range by image area relative to a `REFERENCE_SIDE` square, so
    /// small canvases keep the streak density the defaults give a training patch.
    pub fn scaled_to(mut self, h: usize, w: usize) -> Self {
        let ratio = (h * w) as f64 / (REFERENCE_SIDE * REFERENCE_SIDE) as f64;
        self.streak_count = self.streak_count.map(|n| (n as f64 * ratio).round() as u32);
        self
    }

    pub fn validate(&self) -> Result<()> {
        fn ordered<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> Result<()> {
            if r[0] > r[1] {
                return Err(config_err!("rain.{name} range {r:?} is empty"));
            }
            Ok(())
        }
        ordered("streak_count", &self.streak_count)?;
        ordered("angle_deg", &self.angle_deg)?;
        ordered("length_px", &self.length_px)?;
        ordered("width_px", &self.width_px)?;
        ordered("intensity", &self.intensity)?;
        if !self.angle_deg.iter().all(|a| a.is_finite()) {
            return Err(config_err!("rain.angle_deg must be finite"));
        }
        if self.intensity[0] < 0.0 || self.intensity[1] > 1.0 {
            return Err(config_err!("rain.intensity must lie in [0, 1], got {:?}", self.intensity));
        }
        if !(self.blur_sigma >= 0.0) || !self.blur_sigma.is_finite() {
            return Err(config_err!("rain.blur_sigma must be a non-negative number"));
        }
        Ok(())
    }
}

/// A rainy image, its clean source and the streak layer, each `(1, 3, H, W)` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RainPair {
    pub rainy: Tensor,
    pub clean: Tensor,
    pub residual: Tensor,
}

impl RainPair {
    /// Composes `clean + residual`, clipped to `[0, 1]`.
    pub fn compose(clean: Tensor, residual: Tensor) -> Result<RainPair> {
        if clean.shape() != residual.shape() {
            return Err(config_err!("clean image {} and residual {} differ in shape", clean.shape(), residual.shape()));
        }
        let data = clean.data().iter().zip(residual.data()).map(|(&x, &r)| (x + r).clamp(0.0, 1.0)).collect();
        let rainy = Tensor::from_vec(clean.shape(), data)?;
        Ok(RainPair { rainy, clean, residual })
    }
}

fn check_unit_range(t: &Tensor) -> Result<()> {
    if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("clean image values must lie in [0, 1], found {v}")));
    }
    Ok(())
}

/// Adds freshly rendered rain to `clean`.
pub fn synthesize_pair(clean: &Tensor, params: &RainParams) -> Result<RainPair> {
    let s = clean.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::InvalidInput(format!("expected a 1x3xHxW image, got {s}")));
    }
    check_unit_range(clean)?;
    let residual = render_streaks(s.h, s.w, params)?;
    RainPair::compose(clean.clone(), residual)
}

/// Cuts the same random `size` x `size` window out of all three images.
pub fn crop_patch<R: Rng + ?Sized>(pair: &RainPair, size: usize, rng: &mut R) -> Result<RainPair> {
    let s = pair.clean.shape();
    if size == 0 || size % 32 != 0 {
        return Err(usage_err!("patch size {size} must be a positive multiple of 32"));
    }
    if size > s.h.min(s.w) {
        return Err(usage_err!("patch size {size} exceeds the {}x{} image", s.h, s.w));
    }
    let top = rng.gen_range(0..=s.h - size);
    let left = rng.gen_range(0..=s.w - size);
    Ok(RainPair {
        rainy: pair.rainy.crop(top, left, size, size)?,
        clean: pair.clean.crop(top, left, size, size)?,
        residual: pair.residual.crop(top, left, size, size)?,
    })
}

pub(crate) fn image_shape(h: usize, w: usize) -> Shape {
    Shape::new(1, 3, h, w)
}
