use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rain::{crop_patch, generate_scene, load_image, synthesize_pair, Manifest, RainPair, RainParams, Split};
use crate::seed::derive_seed;
use crate::tensor::Tensor;

/// A named rainy/clean pair, each `(1, 3, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub rainy: Tensor,
    pub clean: Tensor,
}

impl Sample {
    pub fn from_pair(name: impl Into<String>, pair: RainPair) -> Sample {
        Sample { name: name.into(), rainy: pair.rainy, clean: pair.clean }
    }

    /// Same random window from both images. The residual is not needed downstream.
    pub fn crop<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Sample> {
        let pair = RainPair { rainy: self.rainy.clone(), clean: self.clean.clone(), residual: self.clean.clone() };
        let c = crop_patch(&pair, size, rng)?;
        Ok(Sample { name: self.name.clone(), rainy: c.rainy, clean: c.clean })
    }
}

/// Loads `dir/rainy/<name>` and `dir/clean/<name>` for every file of `split`.
pub fn load_split(dir: &Path, manifest: &Manifest, split: Split) -> Result<Vec<Sample>> {
    manifest
        .files(split)
        .iter()
        .map(|name| {
            let rainy = load_image(&dir.join("rainy").join(name))?;
            let clean = load_image(&dir.join("clean").join(name))?;
            if rainy.shape() != clean.shape() {
                return Err(Error::Data(format!(
                    "{name}: rainy image {} and clean image {} differ in size",
                    rainy.shape(),
                    clean.shape()
                )));
            }
            Ok(Sample { name: name.clone(), rainy, clean })
        })
        .collect()
}

/// `count` procedural scenes with synthetic rain. Scene `i` uses the sub-seeds
/// `scene/<i>` and `rain/<i>` of `seed`.
pub fn synthetic_samples(count: usize, h: usize, w: usize, rain: &RainParams, seed: u64) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let clean = generate_scene(h, w, derive_seed(seed, &format!("scene/{i}")));
            let params = rain.clone().with_seed(derive_seed(seed, &format!("rain/{i}")));
            Ok(Sample::from_pair(format!("{i:04}.png"), synthesize_pair(&clean, &params)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_samples_are_seeded() {
        let a = synthetic_samples(3, 32, 32, &RainParams::default(), 4).unwrap();
        let b = synthetic_samples(3, 32, 32, &RainParams::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].clean, a[1].clean);
        assert_eq!(a[2].name, "0002.png");
        assert_ne!(a[0].rainy, a[0].clean);
    }
}
