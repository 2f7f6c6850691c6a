use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::Sample;
use super::state::{build_checkpoint, load_adam, load_network, restore_rng};
use super::BatchSnapshot;
use crate::checkpoint::Checkpoint;
use crate::error::{usage_err, Error, Result};
use crate::metrics::{total_loss, FeatureExtractor};
use crate::model::Oucd;
use crate::seed::derive_seed;
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor};

/// One optimizer step, as written to the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogLine {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: f32,
    pub mse: f32,
    pub perc: f32,
    /// Gradient norm before clipping, when clipping fired.
    pub clipped_from: Option<f64>,
}

impl fmt::Display for LogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} epoch={} lr={} loss={} mse={} perc={}",
            self.step, self.epoch, self.lr, self.loss, self.mse, self.perc
        )?;
        if let Some(n) = self.clipped_from {
            write!(f, " clip={n}")?;
        }
        Ok(())
    }
}

impl LogLine {
    /// Parses a line written by `Display`.
    pub fn parse(line: &str) -> Option<LogLine> {
        let mut l = LogLine { step: 0, epoch: 0, lr: 0.0, loss: 0.0, mse: 0.0, perc: 0.0, clipped_from: None };
        let mut seen = 0;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            match k {
                "step" => l.step = v.parse().ok()?,
                "epoch" => l.epoch = v.parse().ok()?,
                "lr" => l.lr = v.parse().ok()?,
                "loss" => l.loss = v.parse().ok()?,
                "mse" => l.mse = v.parse().ok()?,
                "perc" => l.perc = v.parse().ok()?,
                "clip" => l.clipped_from = Some(v.parse().ok()?),
                _ => return None,
            }
            seen += 1;
        }
        (seen >= 6).then_some(l)
    }
}

/// Owns the network, the optimizer state and the data-order RNG of one run.
pub struct Trainer {
    cfg: TrainConfig,
    net: Oucd,
    adam: Vec<AdamState>,
    extractor: FeatureExtractor,
    rng: ChaCha8Rng,
    epoch: u64,
    step: u64,
    log: Vec<LogLine>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let net = Oucd::new(cfg.arch.clone(), cfg.seed)?;
        let adam = net.params().iter().map(|(_, t)| AdamState::new(t.numel(), AdamConfig::default())).collect();
        let extractor = FeatureExtractor::build(&cfg.extractor)?;
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "data"));
        Ok(Trainer { cfg, net, adam, extractor, rng, epoch: 0, step: 0, log: Vec::new() })
    }

    /// Continues from a bundle written by [`Trainer::checkpoint`].
    pub fn resume(cfg: TrainConfig, ckpt: &Checkpoint) -> Result<Trainer> {
        let mut t = Trainer::new(cfg)?;
        t.net = load_network(&t.cfg.arch, ckpt)?;
        t.adam = load_adam(&t.net, ckpt)?;
        t.rng = restore_rng(&ckpt.rng);
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Oucd {
        &self.net
    }

    pub fn into_network(self) -> Oucd {
        self.net
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &[LogLine] {
        &self.log
    }

    pub fn checkpoint(&self) -> Checkpoint {
        build_checkpoint(&self.net, &self.adam, AdamConfig::default(), self.epoch, self.step, &self.rng)
    }

    fn done(&self) -> bool {
        self.epoch >= self.cfg.total_epochs || self.cfg.max_steps.is_some_and(|m| self.step >= m)
    }

    /// Trains until `total_epochs` epochs or `max_steps` steps, whichever comes first. An
    /// epoch is one shuffled pass over `data` in batches of `batch_size` (the last batch may
    /// be smaller); every image is randomly cropped to `patch_size`.
    pub fn run(&mut self, data: &[Sample], mut on_log: impl FnMut(&LogLine)) -> Result<()> {
        if data.is_empty() {
            return Err(usage_err!("training set is empty"));
        }
        while !self.done() {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut self.rng);
            let batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
            for (b, chunk) in batches.iter().enumerate() {
                let batch = chunk
                    .iter()
                    .map(|&i| data[i].crop(self.cfg.patch_size, &mut self.rng))
                    .collect::<Result<Vec<_>>>()?;
                let line = self.train_step(&batch)?;
                let stop = self.cfg.max_steps.is_some_and(|m| self.step >= m);
                let epoch_end = b + 1 == batches.len();
                let last = stop || (epoch_end && self.epoch + 1 >= self.cfg.total_epochs);
                if self.step % self.cfg.log_every == 0 || last {
                    on_log(&line);
                    self.log.push(line);
                }
                if epoch_end {
                    self.epoch += 1;
                }
                if stop {
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    /// Forward, loss, backward and one Adam update on a batch of equally sized patches.
    pub fn train_step(&mut self, batch: &[Sample]) -> Result<LogLine> {
        let rainy = Tensor::stack(&batch.iter().map(|s| s.rainy.clone()).collect::<Vec<_>>())?;
        let clean = Tensor::stack(&batch.iter().map(|s| s.clean.clone()).collect::<Vec<_>>())?;
        let lr = self.cfg.lr_at(self.epoch);
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape, true);
        let y = tape.constant(rainy.clone());
        let x = tape.constant(clean.clone());
        let fwd = self.net.forward(&mut tape, &bound, y, None)?;
        let terms = total_loss(&mut tape, &self.extractor, fwd.output, x, &self.cfg.loss)?;
        let scalar = |v| tape.value(v).data()[0];
        let (loss, mse) = (scalar(terms.total), scalar(terms.mse));
        let perc = terms.perceptual.map_or(0.0, scalar);
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                loss,
                snapshot: Box::new(BatchSnapshot {
                    rainy,
                    clean,
                    names: batch.iter().map(|s| s.name.clone()).collect(),
                }),
            });
        }
        tape.backward(terms.total)?;

        let vars: Vec<_> = bound.iter().map(|(_, v)| v).collect();
        let mut scale = 1.0f64;
        let mut clipped_from = None;
        if let Some(limit) = self.cfg.grad_clip {
            let mut sq = 0.0f64;
            for &v in &vars {
                sq += tape.grad(v)?.iter().map(|&g| (g as f64).powi(2)).sum::<f64>();
            }
            let norm = sq.sqrt();
            if norm > limit {
                scale = limit / norm;
                clipped_from = Some(norm);
            }
        }
        for (((_, param), state), &v) in self.net.params_mut().into_iter().zip(self.adam.iter_mut()).zip(&vars) {
            let grad = tape.grad(v)?;
            if scale == 1.0 {
                adam_step(param.data_mut(), grad, state, lr)?;
            } else {
                let g: Vec<f32> = grad.iter().map(|&g| (g as f64 * scale) as f32).collect();
                adam_step(param.data_mut(), &g, state, lr)?;
            }
        }
        self.step += 1;
        Ok(LogLine { step: self.step, epoch: self.epoch, lr, loss, mse, perc, clipped_from })
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub network: Oucd,
    pub checkpoint: Checkpoint,
    pub log: Vec<LogLine>,
}

/// Fresh run over `data` with `cfg`.
pub fn train(cfg: TrainConfig, data: &[Sample]) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg)?;
    t.run(data, |_| {})?;
    let checkpoint = t.checkpoint();
    let log = t.log.clone();
    Ok(TrainOutcome { network: t.into_network(), checkpoint, log })
}
