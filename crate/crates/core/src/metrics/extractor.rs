//! Fixed convolutional feature stack for the perceptual loss.
//!
//! Three stages of two 3x3 conv + ReLU layers with 2x2 max pooling between stages. Taps sit
//! after the second ReLU of each stage (`relu1_2`, `relu2_2`, `relu3_2`), so a 64x64 input
//! gives taps at 64, 32 and 16 pixels.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{config_err, Error, Result};
use crate::seed::derive_seed;
use crate::tensor::{ConvParams, Element, Tape, Tensor, Var};

pub const TAP_NAMES: [&str; 3] = ["relu1_2", "relu2_2", "relu3_2"];
pub const DEFAULT_EXTRACTOR_SEED: u64 = 1;
pub const DEFAULT_WIDTHS: [usize; 3] = [16, 32, 64];

#[derive(Clone, Debug, PartialEq)]
pub enum ExtractorSource {
    Seeded { seed: u64, widths: [usize; 3] },
    WeightFile(std::path::PathBuf),
}

impl Default for ExtractorSource {
    fn default() -> Self {
        ExtractorSource::Seeded { seed: DEFAULT_EXTRACTOR_SEED, widths: DEFAULT_WIDTHS }
    }
}

fn layer_names() -> impl Iterator<Item = String> {
    (1..=3).flat_map(|s| (1..=2).map(move |k| format!("stage{s}.conv{k}")))
}

#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    layers: Vec<(String, ConvParams)>,
}

impl FeatureExtractor {
    pub fn build(source: &ExtractorSource) -> Result<FeatureExtractor> {
        match source {
            ExtractorSource::Seeded { seed, widths } => FeatureExtractor::seeded(*seed, *widths),
            ExtractorSource::WeightFile(path) => FeatureExtractor::load(path),
        }
    }

    /// Random fixed weights, He-scaled so activations keep their magnitude through depth.
    pub fn seeded(seed: u64, widths: [usize; 3]) -> Result<FeatureExtractor> {
        if widths.contains(&0) {
            return Err(config_err!("extractor widths must be positive, got {widths:?}"));
        }
        let mut layers = Vec::new();
        let mut c = 3;
        for (name, out) in layer_names().zip(widths.iter().flat_map(|&w| [w, w])) {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("extractor/{name}")));
            let mut p = ConvParams::<f32>::init(c, out, 3, 1, 1, &mut rng);
            let gain = 6f32.sqrt();
            p.weight.data_mut().iter_mut().for_each(|v| *v *= gain);
            layers.push((name, p));
            c = out;
        }
        Ok(FeatureExtractor { layers })
    }

    /// Weights from a bundle with records `stage{s}.conv{k}.weight` and `.bias`.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<FeatureExtractor> {
        let mut layers = Vec::new();
        let mut c = 3;
        for name in layer_names() {
            let get = |suffix: &str| {
                ckpt.get(&format!("{name}.{suffix}"))
                    .cloned()
                    .ok_or_else(|| Error::Checkpoint(format!("extractor weights lack {name}.{suffix}")))
            };
            let p = ConvParams::new(get("weight")?, get("bias")?, 1, 1)
                .map_err(|e| Error::Checkpoint(format!("extractor layer {name}: {e}")))?;
            if p.in_channels() != c || p.kernel() != 3 {
                return Err(Error::Checkpoint(format!(
                    "extractor layer {name}: expected a 3x3 kernel over {c} channels"
                )));
            }
            c = p.out_channels();
            layers.push((name, p));
        }
        Ok(FeatureExtractor { layers })
    }

    pub fn load(path: &Path) -> Result<FeatureExtractor> {
        FeatureExtractor::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(0);
        for (name, p) in &self.layers {
            c.push(format!("{name}.weight"), p.weight.clone());
            c.push(format!("{name}.bias"), p.bias.clone());
        }
        c
    }

    pub fn widths(&self) -> [usize; 3] {
        [1, 3, 5].map(|i| self.layers[i].1.out_channels())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(_, p)| p.param_count()).sum()
    }

    pub fn check_taps(taps: &[usize]) -> Result<()> {
        if taps.is_empty() {
            return Err(config_err!("perceptual loss needs at least one tap"));
        }
        if let Some(t) = taps.iter().find(|&&t| t >= TAP_NAMES.len()) {
            return Err(config_err!("perceptual tap {t} out of range 0..{}", TAP_NAMES.len()));
        }
        Ok(())
    }

    /// Tap activations, in tap order. The extractor's weights enter the tape as constants.
    pub fn features_on_tape<T: Element>(&self, tape: &mut Tape<T>, input: Var, taps: &[usize]) -> Result<Vec<Var>> {
        Self::check_taps(taps)?;
        let deepest = *taps.iter().max().expect("non-empty");
        let mut found = [None; 3];
        let mut x = input;
        for (i, (_, p)) in self.layers.iter().enumerate() {
            let stage = i / 2;
            if stage > deepest {
                break;
            }
            if i > 0 && i % 2 == 0 {
                x = tape.maxpool2(x)?;
            }
            let w = tape.constant(p.weight.cast());
            let b = tape.constant(p.bias.cast());
            x = tape.conv2d(x, w, b, 1, 1)?;
            x = tape.relu(x);
            if i % 2 == 1 {
                found[stage] = Some(x);
            }
        }
        Ok(taps.iter().map(|&t| found[t].expect("computed up to the deepest tap")).collect())
    }

    pub fn features<T: Element>(&self, x: &Tensor<T>, taps: &[usize]) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = self.features_on_tape(&mut tape, v, taps)?;
        Ok(out.into_iter().map(|v| tape.value(v).clone()).collect())
    }
}
