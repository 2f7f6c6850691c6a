//! Training objective: mean squared error plus a weighted perceptual term.
//!
//! The pixel term is a mean, not a sum, so the perceptual weight does not depend on the
//! patch size.

use serde::{Deserialize, Serialize};

use super::extractor::FeatureExtractor;
use crate::error::{config_err, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

pub const DEFAULT_LAMBDA: f64 = 0.04;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub perceptual_layers: Vec<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: DEFAULT_LAMBDA, perceptual_layers: vec![0, 1, 2] }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(config_err!("lambda must be a non-negative number, got {}", self.lambda));
        }
        FeatureExtractor::check_taps(&self.perceptual_layers)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub mse: Var,
    /// Absent when lambda is zero.
    pub perceptual: Option<Var>,
}

pub fn mse_loss(tape: &mut Tape, x_hat: Var, x: Var) -> Result<Var> {
    tape.mean_sq_diff(x_hat, x)
}

/// Mean over taps of the per-tap mean squared feature difference. `x` should be a constant.
pub fn perceptual_loss<T: Element>(
    tape: &mut Tape<T>,
    extractor: &FeatureExtractor,
    x_hat: Var,
    x: Var,
    taps: &[usize],
) -> Result<Var> {
    let fa = extractor.features_on_tape(tape, x_hat, taps)?;
    let fb = extractor.features_on_tape(tape, x, taps)?;
    let mut acc: Option<Var> = None;
    for (a, b) in fa.into_iter().zip(fb) {
        let d = tape.mean_sq_diff(a, b)?;
        acc = Some(match acc {
            None => d,
            Some(s) => tape.add(s, d)?,
        });
    }
    let sum = acc.expect("at least one tap");
    Ok(if taps.len() == 1 { sum } else { tape.scale(sum, T::lit(1.0 / taps.len() as f64)) })
}

pub fn total_loss(
    tape: &mut Tape,
    extractor: &FeatureExtractor,
    x_hat: Var,
    x: Var,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    let mse = mse_loss(tape, x_hat, x)?;
    if cfg.lambda == 0.0 {
        return Ok(LossTerms { total: mse, mse, perceptual: None });
    }
    let perc = perceptual_loss(tape, extractor, x_hat, x, &cfg.perceptual_layers)?;
    let weighted = tape.scale(perc, cfg.lambda as f32);
    let total = tape.add(mse, weighted)?;
    Ok(LossTerms { total, mse, perceptual: Some(perc) })
}

/// Scalar values of a loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub total: f32,
    pub mse: f32,
    pub perceptual: f32,
}

/// Evaluates the objective on plain tensors, without gradients.
pub fn loss_values(extractor: &FeatureExtractor, x_hat: &Tensor, x: &Tensor, cfg: &LossConfig) -> Result<LossValues> {
    let mut tape = Tape::new();
    let a = tape.constant(x_hat.clone());
    let b = tape.constant(x.clone());
    let terms = total_loss(&mut tape, extractor, a, b, cfg)?;
    let scalar = |v: Var| tape.value(v).data()[0];
    Ok(LossValues {
        total: scalar(terms.total),
        mse: scalar(terms.mse),
        perceptual: terms.perceptual.map_or(0.0, scalar),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::extractor::{DEFAULT_EXTRACTOR_SEED, DEFAULT_WIDTHS};
    use crate::tensor::Shape;
    use crate::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn extractor() -> FeatureExtractor {
        FeatureExtractor::seeded(DEFAULT_EXTRACTOR_SEED, DEFAULT_WIDTHS).unwrap()
    }

    fn image(seed: u64, h: usize) -> Tensor {
        Tensor::uniform(Shape::new(1, 3, h, h), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn perc(e: &FeatureExtractor, a: &Tensor, b: &Tensor) -> f32 {
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let p = perceptual_loss(&mut tape, e, va, vb, &[0, 1, 2]).unwrap();
        tape.value(p).data()[0]
    }

    #[test]
    fn mse_values() {
        let e = extractor();
        let x = image(0, 16);
        let cfg = LossConfig { lambda: 0.0, ..Default::default() };
        assert_eq!(loss_values(&e, &x, &x, &cfg).unwrap().mse, 0.0);
        let shifted = x.map(|v| v + 0.1);
        let m = loss_values(&e, &shifted, &x, &cfg).unwrap().mse;
        assert!((m - 0.01).abs() < 1e-6);
    }

    #[test]
    fn mse_gradient_is_two_diff_over_count() {
        let (a, b) = (image(1, 8), image(2, 8));
        let mut tape = Tape::new();
        let va = tape.param(a.clone());
        let vb = tape.constant(b.clone());
        let l = mse_loss(&mut tape, va, vb).unwrap();
        tape.backward(l).unwrap();
        let n = a.numel() as f32;
        for ((g, x), y) in tape.grad(va).unwrap().iter().zip(a.data()).zip(b.data()) {
            assert!((g - 2.0 * (x - y) / n).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_is_a_contract_violation() {
        let mut tape = Tape::new();
        let a = tape.constant(image(1, 8));
        let b = tape.constant(image(1, 16));
        assert!(matches!(mse_loss(&mut tape, a, b), Err(Error::Contract(_))));
    }

    #[test]
    fn perceptual_is_zero_on_equal_inputs_and_symmetric() {
        let e = extractor();
        let (a, b) = (image(3, 32), image(4, 32));
        assert_eq!(perc(&e, &a, &a), 0.0);
        let (ab, ba) = (perc(&e, &a, &b), perc(&e, &b, &a));
        assert!(ab > 0.0);
        assert!((ab - ba).abs() <= 1e-6 * ab);
    }

    /// The 32-bit gradient against differences taken in 64-bit: some ReLU sits within 1e-5 of
    /// its kink for most inputs, and 32-bit steps that small are rounding noise.
    #[test]
    fn perceptual_gradient_matches_finite_differences() {
        let e = FeatureExtractor::seeded(2, [4, 6, 8]).unwrap();
        let (a, b) = (image(5, 16), image(6, 16));
        let mut tape = Tape::new();
        let va = tape.param(a.clone());
        let vb = tape.constant(b.clone());
        let l = perceptual_loss(&mut tape, &e, va, vb, &[0, 1, 2]).unwrap();
        tape.backward(l).unwrap();
        let grad = tape.grad(va).unwrap().to_vec();

        let (a64, b64): (Tensor<f64>, Tensor<f64>) = (a.cast(), b.cast());
        let perc64 = |x: &Tensor<f64>| {
            let mut tape: Tape<f64> = Tape::new();
            let (va, vb) = (tape.constant(x.clone()), tape.constant(b64.clone()));
            let p = perceptual_loss(&mut tape, &e, va, vb, &[0, 1, 2]).unwrap();
            tape.value(p).data()[0]
        };
        let h = 1e-6;
        let (mut max_err, mut max_mag) = (0.0f64, 0.0f64);
        for i in (0..a.numel()).step_by(7) {
            let mut p = a64.clone();
            p.data_mut()[i] += h;
            let mut m = a64.clone();
            m.data_mut()[i] -= h;
            let fd = (perc64(&p) - perc64(&m)) / (2.0 * h);
            max_err = max_err.max((fd - grad[i] as f64).abs());
            max_mag = max_mag.max(fd.abs().max((grad[i] as f64).abs()));
        }
        assert!(max_err / max_mag < 1e-2, "{max_err} / {max_mag}");
    }

    #[test]
    fn translation_by_a_pooling_stride() {
        // Content kept well away from the borders, shifted by the product of pool strides.
        let e = extractor();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let patch_a = Tensor::uniform(Shape::new(1, 3, 12, 12), 0.0, 1.0, &mut rng);
        let patch_b = Tensor::uniform(Shape::new(1, 3, 12, 12), 0.0, 1.0, &mut rng);
        let place = |p: &Tensor, off: usize| {
            Tensor::from_fn(Shape::new(1, 3, 96, 96), |_, c, i, j| {
                if (off..off + 12).contains(&i) && (off..off + 12).contains(&j) {
                    p.at(0, c, i - off, j - off)
                } else {
                    0.0
                }
            })
        };
        let l0 = perc(&e, &place(&patch_a, 40), &place(&patch_b, 40));
        let l1 = perc(&e, &place(&patch_a, 44), &place(&patch_b, 44));
        assert!(l0 > 0.0);
        assert!((l0 - l1).abs() <= 1e-5 * l0, "{l0} vs {l1}");
    }

    #[test]
    fn zero_lambda_is_exactly_mse() {
        let e = extractor();
        let (a, b) = (image(7, 32), image(8, 32));
        let v = loss_values(&e, &a, &b, &LossConfig { lambda: 0.0, ..Default::default() }).unwrap();
        assert_eq!(v.total, v.mse);
    }

    #[test]
    fn loss_is_linear_in_lambda() {
        let e = extractor();
        let (a, b) = (image(7, 32), image(8, 32));
        let at = |lambda| loss_values(&e, &a, &b, &LossConfig { lambda, ..Default::default() }).unwrap().total as f64;
        let (l0, l1, l2) = (at(0.0), at(0.04), at(0.08));
        assert!(((l2 - l0) - 2.0 * (l1 - l0)).abs() < 1e-6 * l2);
        assert!(l1 > l0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(LossConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossConfig { perceptual_layers: vec![5], ..Default::default() }.validate().is_err());
        assert_eq!(LossConfig::default().lambda, 0.04);
    }
}
