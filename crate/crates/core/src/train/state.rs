//! Conversion between training state and checkpoint bundles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{AdamHeader, Checkpoint, RngState};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, Oucd, ParamStore};
use crate::tensor::{AdamConfig, AdamState, Tensor};

pub const FIRST_MOMENT_PREFIX: &str = "adam.m/";
pub const SECOND_MOMENT_PREFIX: &str = "adam.v/";

pub(crate) fn rng_state(rng: &ChaCha8Rng) -> RngState {
    RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
}

pub(crate) fn restore_rng(s: &RngState) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(s.seed);
    rng.set_stream(s.stream);
    rng.set_word_pos(s.word_pos);
    rng
}

pub(crate) fn build_checkpoint(
    net: &Oucd,
    adam: &[AdamState],
    adam_config: AdamConfig,
    epoch: u64,
    step: u64,
    rng: &ChaCha8Rng,
) -> Checkpoint {
    let mut c = Checkpoint::new(net.fingerprint());
    c.epoch = epoch;
    c.step = step;
    c.rng = rng_state(rng);
    c.adam = AdamHeader { config: adam_config, step: adam.first().map_or(0, |s| s.step_count) };
    let params = net.params();
    for (name, t) in &params {
        c.push(*name, (*t).clone());
    }
    for (prefix, pick) in [(FIRST_MOMENT_PREFIX, 0), (SECOND_MOMENT_PREFIX, 1)] {
        for ((name, t), s) in params.iter().zip(adam) {
            let data = if pick == 0 { &s.first_moment } else { &s.second_moment };
            let m = Tensor::from_vec(t.shape(), data.clone()).expect("moment matches parameter");
            c.push(format!("{prefix}{name}"), m);
        }
    }
    c
}

fn check_fingerprint(arch: &ArchConfig, ckpt: &Checkpoint) -> Result<()> {
    let expected = arch.fingerprint();
    if ckpt.fingerprint != expected {
        return Err(Error::Checkpoint(format!(
            "architecture fingerprint mismatch: checkpoint has {:016x}, configuration gives {expected:016x}",
            ckpt.fingerprint
        )));
    }
    Ok(())
}

/// Network with the parameters of `ckpt`, which must have been written for `arch`.
pub fn load_network(arch: &ArchConfig, ckpt: &Checkpoint) -> Result<Oucd> {
    check_fingerprint(arch, ckpt)?;
    let mut net = Oucd::new(arch.clone(), 0)?;
    let mut store = ParamStore::new();
    for r in ckpt.records.iter().filter(|r| !r.name.starts_with("adam.")) {
        store.push(r.name.clone(), r.tensor.clone());
    }
    net.load_params(&store).map_err(|e| Error::Checkpoint(format!("parameters do not fit the network: {e}")))?;
    Ok(net)
}

/// Optimizer moments stored in `ckpt` for the parameters of `net`.
pub(crate) fn load_adam(net: &Oucd, ckpt: &Checkpoint) -> Result<Vec<AdamState>> {
    net.params()
        .iter()
        .map(|(name, t)| {
            let get = |prefix: &str| {
                let key = format!("{prefix}{name}");
                let m = ckpt.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing optimizer record {key}")))?;
                if m.shape() != t.shape() {
                    return Err(Error::Checkpoint(format!("optimizer record {key} has shape {}", m.shape())));
                }
                Ok(m.data().to_vec())
            };
            Ok(AdamState {
                first_moment: get(FIRST_MOMENT_PREFIX)?,
                second_moment: get(SECOND_MOMENT_PREFIX)?,
                step_count: ckpt.adam.step,
                config: ckpt.adam.config,
            })
        })
        .collect()
}
