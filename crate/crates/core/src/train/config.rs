use crate::error::{config_err, Result};
use crate::metrics::{ExtractorSource, LossConfig};
use crate::model::{ArchConfig, Preset, Variant};

/// Everything that determines a training run, apart from the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub batch_size: usize,
    pub patch_size: usize,
    /// `(first epoch, learning rate)` pairs; each rate holds until the next threshold.
    pub lr_schedule: Vec<(u64, f64)>,
    pub total_epochs: u64,
    /// Stops early once this many optimizer steps have run.
    pub max_steps: Option<u64>,
    pub loss: LossConfig,
    pub extractor: ExtractorSource,
    pub seed: u64,
    /// Global gradient-norm ceiling; off unless set.
    pub grad_clip: Option<f64>,
    /// Keep every n-th log line (the last step is always kept).
    pub log_every: u64,
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> TrainConfig {
        let patch_size = match preset {
            Preset::Canonical => 128,
            Preset::Small => 32,
        };
        TrainConfig {
            arch: ArchConfig::preset(preset),
            batch_size: 2,
            patch_size,
            lr_schedule: vec![(0, 2e-4), (30, 1e-4)],
            total_epochs: 60,
            max_steps: None,
            loss: LossConfig::default(),
            extractor: ExtractorSource::default(),
            seed: 0,
            grad_clip: None,
            log_every: 1,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> TrainConfig {
        self.arch.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(config_err!("train.batch_size must be positive"));
        }
        if self.patch_size == 0 || self.patch_size % 32 != 0 {
            return Err(config_err!("train.patch_size {} must be a positive multiple of 32", self.patch_size));
        }
        let d = self.arch.required_divisor();
        if self.patch_size % d != 0 {
            return Err(config_err!("train.patch_size {} is not divisible by {d}", self.patch_size));
        }
        match self.lr_schedule.first() {
            Some((0, _)) => {}
            _ => return Err(config_err!("train.lr_schedule must start at epoch 0")),
        }
        if self.lr_schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(config_err!("train.lr_schedule epochs must be strictly increasing"));
        }
        if let Some((_, lr)) = self.lr_schedule.iter().find(|(_, lr)| !(*lr > 0.0) || !lr.is_finite()) {
            return Err(config_err!("train.lr_schedule rates must be positive, got {lr}"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(config_err!("train.grad_clip must be positive, got {c}"));
            }
        }
        if self.log_every == 0 {
            return Err(config_err!("train.log_every must be positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: u64) -> f64 {
        self.lr_schedule
            .iter()
            .take_while(|(start, _)| *start <= epoch)
            .last()
            .map(|&(_, lr)| lr)
            .expect("schedule starts at epoch 0")
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset(Preset::Small)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.lr_at(0), 2e-4);
        assert_eq!(c.lr_at(29), 2e-4);
        assert_eq!(c.lr_at(30), 1e-4);
        assert_eq!(c.lr_at(59), 1e-4);
        assert_eq!(c.total_epochs, 60);
        assert_eq!(c.batch_size, 2);
        assert_eq!(TrainConfig::preset(Preset::Canonical).patch_size, 128);
    }

    #[test]
    fn invalid_configs() {
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.patch_size = 48));
        assert!(bad(|c| c.batch_size = 0));
        assert!(bad(|c| c.lr_schedule = vec![(0, 1e-3), (0, 1e-4)]));
        assert!(bad(|c| c.lr_schedule = vec![(5, 1e-3)]));
        assert!(bad(|c| c.lr_schedule = vec![(0, -1.0)]));
        assert!(bad(|c| c.grad_clip = Some(0.0)));
    }
}
