//! The two branches and the full deraining network.
//!
//! Overcomplete branch: each encoder block is conv, bilinear x2 upsampling, ReLU; each
//! decoder block is conv, 2x2 max pooling, ReLU. The undercomplete branch swaps the two
//! resampling layers. Decoder block `j` of an `n`-block branch adds encoder block
//! `n + 1 - j`'s convolution output to its own output (additive skip).
//!
//! The full network runs the overcomplete branch first, fuses its encoder outputs into the
//! undercomplete branch after its first encoder block and its decoder outputs in front of
//! the undercomplete branch's last decoder block, adds the two branch outputs and maps the
//! sum to RGB with a 1x1 conv. There is no residual path from input to output and no
//! output activation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ArchConfig, BranchConfig, BranchKind, Resample};
use super::msff::msff_on_tape;
use super::params::{Bound, ParamStore};
use super::trace::{chw, ShapeTrace, TraceRow};
use crate::error::{config_err, contract_err, Result};
use crate::seed::derive_seed;
use crate::tensor::{ConvParams, Shape, Tape, Tensor, Var};

fn init_conv(store: &mut ParamStore, name: &str, dims: [usize; 4], seed: u64) {
    let [out, inp, k, _] = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("init/{name}")));
    let p = ConvParams::<f32>::init(inp, out, k, 1, k / 2, &mut rng);
    store.push(format!("{name}.weight"), p.weight);
    store.push(format!("{name}.bias"), p.bias);
}

/// Feature maps produced by one branch.
#[derive(Clone, Debug)]
pub struct BranchRun {
    /// Output of every encoder block, after any fusion injected there.
    pub encoder: Vec<Var>,
    /// Output of every decoder block, skip included.
    pub decoder: Vec<Var>,
    pub output: Var,
}

/// Where fused features enter a branch.
#[derive(Clone, Copy, Debug, Default)]
pub struct Injections {
    pub after_first_encoder: Option<Var>,
    pub before_last_decoder: Option<Var>,
}

/// One encoder-decoder branch with its own parameters.
#[derive(Clone, Debug)]
pub struct Branch {
    config: BranchConfig,
    in_channels: usize,
    params: ParamStore,
}

impl Branch {
    pub fn build(config: BranchConfig, in_channels: usize, seed: u64) -> Result<Branch> {
        config.validate()?;
        let mut params = ParamStore::new();
        let p = config.kind.prefix();
        let mut c = in_channels;
        for (i, &f) in config.encoder.iter().enumerate() {
            init_conv(&mut params, &format!("{p}.enc.{}", i + 1), [f, c, config.kernel, config.kernel], seed);
            c = f;
        }
        for (j, &f) in config.decoder.iter().enumerate() {
            init_conv(&mut params, &format!("{p}.dec.{}", j + 1), [f, c, config.kernel, config.kernel], seed);
            c = f;
        }
        Ok(Branch { config, in_channels, params })
    }

    pub fn config(&self) -> &BranchConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != self.in_channels {
            return Err(config_err!(
                "{} branch expects {} input channels, got {}",
                self.config.kind.prefix(),
                self.in_channels,
                s.c
            ));
        }
        let d = self.config.required_divisor();
        if s.h % d != 0 || s.w % d != 0 {
            return Err(config_err!(
                "input {}x{} is not divisible by {d} as the {} branch requires",
                s.h,
                s.w,
                self.config.kind.prefix()
            ));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: Var,
        inject: Injections,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<BranchRun> {
        self.check_input(tape.shape(input))?;
        let p = self.config.kind.prefix();
        let n = self.config.depth();
        let mut skips = Vec::with_capacity(n);
        let mut encoder = Vec::with_capacity(n);
        let mut x = input;
        for (i, block) in self.config.encoder_blocks().iter().enumerate() {
            let (conv, out) = self.block(
                tape,
                bound,
                &format!("{p}.enc.{}", i + 1),
                x,
                block.resample,
                ("Encoder", i + 1),
                trace.as_deref_mut(),
            )?;
            skips.push(conv);
            x = out;
            if i == 0 {
                if let Some(f) = inject.after_first_encoder {
                    x = tape.add(x, f)?;
                }
            }
            encoder.push(x);
        }
        let mut decoder = Vec::with_capacity(n);
        for (j, block) in self.config.decoder_blocks().iter().enumerate() {
            if j + 1 == n {
                if let Some(f) = inject.before_last_decoder {
                    x = tape.add(x, f)?;
                }
            }
            let (_, out) = self.block(
                tape,
                bound,
                &format!("{p}.dec.{}", j + 1),
                x,
                block.resample,
                ("Decoder", j + 1),
                trace.as_deref_mut(),
            )?;
            x = tape.add(out, skips[n - 1 - j])?;
            decoder.push(x);
        }
        Ok(BranchRun { encoder, decoder, output: x })
    }

    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        name: &str,
        x: Var,
        resample: Resample,
        (block_label, index): (&str, usize),
        trace: Option<&mut ShapeTrace>,
    ) -> Result<(Var, Var)> {
        let (w, b) = bound.conv(name)?;
        let k = self.config.kernel;
        let conv = tape.conv2d(x, w, b, 1, k / 2)?;
        let resampled = match resample {
            Resample::Up2 => tape.up2(conv)?,
            Resample::MaxPool2 => tape.maxpool2(conv)?,
        };
        let out = tape.relu(resampled);
        if let Some(trace) = trace {
            let branch = match self.config.kind {
                BranchKind::Overcomplete => "overcomplete",
                BranchKind::Undercomplete => "undercomplete",
            };
            let row = |layer: String, kernel: &str, filters, padding, i: Var, o: Var| TraceRow {
                branch: branch.to_string(),
                block: block_label.to_string(),
                layer,
                kernel: kernel.to_string(),
                filters,
                padding,
                input: chw(tape.shape(i)),
                output: chw(tape.shape(o)),
            };
            let resample_name = match resample {
                Resample::Up2 => "Upsampling",
                Resample::MaxPool2 => "Max-Pooling",
            };
            trace.rows.push(row(
                format!("Conv{index}"),
                &format!("{k} x {k}"),
                Some(tape.shape(conv).c),
                Some(k / 2),
                x,
                conv,
            ));
            trace.rows.push(row(resample_name.to_string(), "2 x 2", None, None, conv, resampled));
            trace.rows.push(row("ReLU".to_string(), "-", None, None, resampled, out));
        }
        Ok((conv, out))
    }
}

/// Named intermediate maps of a forward pass, usable for inspection.
#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Var,
    pub features: Vec<(String, Var)>,
}

impl Forward {
    pub fn feature(&self, name: &str) -> Option<Var> {
        self.features.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

/// The over-and-under complete deraining network, or one of its ablation variants.
#[derive(Clone, Debug)]
pub struct Oucd {
    config: ArchConfig,
    overcomplete: Option<Branch>,
    undercomplete: Option<Branch>,
    /// Fusion projections and the output head.
    fusion: ParamStore,
}

impl Oucd {
    /// Builds the network with seeded fan-in initialisation. Each tensor's seed depends only
    /// on `seed` and its name, so variants sharing a layer start from identical weights.
    pub fn new(config: ArchConfig, seed: u64) -> Result<Oucd> {
        config.validate()?;
        let v = config.variant;
        let overcomplete = v
            .uses_overcomplete()
            .then(|| Branch::build(config.overcomplete.clone(), config.in_channels, seed))
            .transpose()?;
        let undercomplete = v
            .uses_undercomplete()
            .then(|| Branch::build(config.undercomplete.clone(), config.in_channels, seed))
            .transpose()?;
        let mut fusion = ParamStore::new();
        for (name, dims) in config.conv_layout() {
            if name.starts_with("msff.") || name == "head" {
                init_conv(&mut fusion, &name, dims, seed);
            }
        }
        Ok(Oucd { config, overcomplete, undercomplete, fusion })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> u64 {
        self.config.fingerprint()
    }

    pub fn overcomplete(&self) -> Option<&Branch> {
        self.overcomplete.as_ref()
    }

    pub fn undercomplete(&self) -> Option<&Branch> {
        self.undercomplete.as_ref()
    }

    /// All parameters in checkpoint order.
    pub fn params(&self) -> Vec<(&str, &Tensor)> {
        let mut out: Vec<(&str, &Tensor)> = Vec::new();
        for b in [&self.overcomplete, &self.undercomplete].into_iter().flatten() {
            out.extend(b.params.iter());
        }
        out.extend(self.fusion.iter());
        out
    }

    pub fn params_mut(&mut self) -> Vec<(&str, &mut Tensor)> {
        let mut out: Vec<(&str, &mut Tensor)> = Vec::new();
        for b in [&mut self.overcomplete, &mut self.undercomplete].into_iter().flatten() {
            out.extend(b.params.iter_mut());
        }
        out.extend(self.fusion.iter_mut());
        out
    }

    pub fn param_store(&self) -> ParamStore {
        let mut s = ParamStore::new();
        for (n, t) in self.params() {
            s.push(n, t.clone());
        }
        s
    }

    pub fn load_params(&mut self, store: &ParamStore) -> Result<()> {
        let mut mine = self.param_store();
        mine.load_from(store)?;
        for (name, t) in self.params_mut() {
            *t = mine.get(name).expect("same names").clone();
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let mut bound = Bound::default();
        for b in [&self.overcomplete, &self.undercomplete].into_iter().flatten() {
            bound.extend(&b.params, tape, trainable);
        }
        bound.extend(&self.fusion, tape, trainable);
        bound
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != self.config.in_channels {
            return Err(config_err!("network expects {} input channels, got {}", self.config.in_channels, s.c));
        }
        let d = self.config.required_divisor();
        if s.h % d != 0 || s.w % d != 0 {
            return Err(config_err!("input {}x{} is not divisible by {d}", s.h, s.w));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: Var,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<Forward> {
        let s = tape.shape(input);
        self.check_input(s)?;
        let mut features = Vec::new();
        let record = |features: &mut Vec<(String, Var)>, prefix: &str, run: &BranchRun| {
            for (i, &v) in run.encoder.iter().enumerate() {
                features.push((format!("{prefix}.enc.{}", i + 1), v));
            }
            for (j, &v) in run.decoder.iter().enumerate() {
                features.push((format!("{prefix}.dec.{}", j + 1), v));
            }
        };

        let oc = match &self.overcomplete {
            Some(b) => {
                let run = b.forward(tape, bound, input, Injections::default(), trace.as_deref_mut())?;
                record(&mut features, "oc", &run);
                Some(run)
            }
            None => None,
        };

        let mut inject = Injections::default();
        if self.config.variant.uses_msff() {
            let oc = oc.as_ref().ok_or_else(|| contract_err!("fusion without an overcomplete branch"))?;
            let target = (s.h / 2, s.w / 2);
            for (side, sources) in [("enc", &oc.encoder), ("dec", &oc.decoder)] {
                let convs =
                    (1..=sources.len()).map(|k| bound.conv(&format!("msff.{side}.{k}"))).collect::<Result<Vec<_>>>()?;
                let fused = msff_on_tape(tape, sources, &convs, target)?;
                if let Some(trace) = trace.as_deref_mut() {
                    trace.rows.push(TraceRow {
                        branch: "fusion".to_string(),
                        block: format!("msff.{side}"),
                        layer: format!("{} sources", sources.len()),
                        kernel: "1 x 1".to_string(),
                        filters: Some(tape.shape(fused).c),
                        padding: Some(0),
                        input: chw(tape.shape(sources[0])),
                        output: chw(tape.shape(fused)),
                    });
                }
                features.push((format!("msff.{side}"), fused));
                match side {
                    "enc" => inject.after_first_encoder = Some(fused),
                    _ => inject.before_last_decoder = Some(fused),
                }
            }
        }

        let uc = match &self.undercomplete {
            Some(b) => {
                let run = b.forward(tape, bound, input, inject, trace.as_deref_mut())?;
                record(&mut features, "uc", &run);
                Some(run)
            }
            None => None,
        };

        let fused = match (&oc, &uc) {
            (Some(o), Some(u)) => tape.add(o.output, u.output)?,
            (Some(o), None) => o.output,
            (None, Some(u)) => u.output,
            (None, None) => return Err(contract_err!("network has no branch")),
        };
        features.push(("fused".to_string(), fused));
        let (w, b) = bound.conv("head")?;
        let output = tape.conv2d(fused, w, b, 1, 0)?;
        if let Some(trace) = trace {
            trace.rows.push(TraceRow {
                branch: "output".to_string(),
                block: "head".to_string(),
                layer: "Conv".to_string(),
                kernel: "1 x 1".to_string(),
                filters: Some(self.config.out_channels),
                padding: Some(0),
                input: chw(tape.shape(fused)),
                output: chw(tape.shape(output)),
            });
        }
        features.push(("output".to_string(), output));
        Ok(Forward { output, features })
    }

    /// Forward pass without gradients.
    pub fn infer(&self, y: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let input = tape.constant(y.clone());
        let fwd = self.forward(&mut tape, &bound, input, None)?;
        Ok(tape.value(fwd.output).clone())
    }

    /// Forward pass that also returns the shape log.
    pub fn trace(&self, y: &Tensor) -> Result<(Tensor, ShapeTrace)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let input = tape.constant(y.clone());
        let mut trace = ShapeTrace::new();
        let fwd = self.forward(&mut tape, &bound, input, Some(&mut trace))?;
        Ok((tape.value(fwd.output).clone(), trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::ErrorClass;
    use proptest::prelude::*;

    fn input(n: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(Shape::new(n, 3, h, w), 0.0, 1.0, &mut rng)
    }

    fn run(net: &Oucd, y: &Tensor) -> (Tape, Forward) {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, false);
        let x = tape.constant(y.clone());
        let fwd = net.forward(&mut tape, &bound, x, None).unwrap();
        (tape, fwd)
    }

    #[test]
    fn overcomplete_encoder_shapes() {
        let cfg = ArchConfig::canonical().with_variant(Variant::OvercompleteOnly);
        let net = Oucd::new(cfg, 1).unwrap();
        let (tape, fwd) = run(&net, &input(1, 16, 16, 0));
        let shape = |n: &str| tape.shape(fwd.feature(n).unwrap()).dims();
        assert_eq!(shape("oc.enc.1"), [1, 32, 32, 32]);
        assert_eq!(shape("oc.enc.2"), [1, 64, 64, 64]);
        assert_eq!(shape("oc.enc.3"), [1, 128, 128, 128]);
        assert_eq!(shape("oc.dec.3"), [1, 32, 16, 16]);
        assert_eq!(tape.shape(fwd.output).dims(), [1, 3, 16, 16]);
    }

    #[test]
    fn undercomplete_bottleneck_shape() {
        let cfg = ArchConfig::canonical().with_variant(Variant::UndercompleteOnly);
        let net = Oucd::new(cfg, 1).unwrap();
        let (tape, fwd) = run(&net, &input(1, 32, 32, 0));
        assert_eq!(tape.shape(fwd.feature("uc.enc.5").unwrap()).dims(), [1, 512, 1, 1]);
        assert_eq!(tape.shape(fwd.feature("uc.dec.4").unwrap()).dims(), [1, 64, 16, 16]);
    }

    #[test]
    fn indivisible_input_is_a_config_error() {
        let net = Oucd::new(ArchConfig::small(), 1).unwrap();
        let err = net.infer(&input(1, 33, 32, 0)).unwrap_err();
        assert_eq!(err.class(), ErrorClass::Usage);
        assert!(err.to_string().contains("divisible"));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let net = Oucd::new(ArchConfig::small(), 1).unwrap();
        let y = Tensor::zeros(Shape::new(1, 1, 32, 32));
        assert!(net.infer(&y).is_err());
    }

    #[test]
    fn same_seed_same_output() {
        let y = input(1, 32, 32, 4);
        let a = Oucd::new(ArchConfig::small(), 9).unwrap().infer(&y).unwrap();
        let b = Oucd::new(ArchConfig::small(), 9).unwrap().infer(&y).unwrap();
        assert_eq!(a.data(), b.data());
        let c = Oucd::new(ArchConfig::small(), 10).unwrap().infer(&y).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn parameter_count_matches_layout() {
        for v in Variant::ALL {
            for cfg in [ArchConfig::small(), ArchConfig::canonical()] {
                let cfg = cfg.with_variant(v);
                let net = Oucd::new(cfg.clone(), 0).unwrap();
                assert_eq!(net.param_count(), cfg.param_count());
            }
        }
    }

    /// Hand-summed over the architecture tables: (in, out) of every 3x3 conv, then the 1x1
    /// fusion projections and the output head.
    #[test]
    fn canonical_count_is_pinned() {
        let conv3 = |i: usize, o: usize| i * o * 9 + o;
        let conv1 = |i: usize, o: usize| i * o + o;
        let oc: usize =
            [(3, 32), (32, 64), (64, 128), (128, 128), (128, 64), (64, 32)].iter().map(|&(i, o)| conv3(i, o)).sum();
        let uc: usize = [
            (3, 32),
            (32, 64),
            (64, 128),
            (128, 256),
            (256, 512),
            (512, 512),
            (512, 256),
            (256, 128),
            (128, 64),
            (64, 32),
        ]
        .iter()
        .map(|&(i, o)| conv3(i, o))
        .sum();
        let msff_enc = conv1(32, 32) + conv1(64, 32) + conv1(128, 32);
        let msff_dec = conv1(128, 64) + conv1(64, 64) + conv1(32, 64);
        let head = conv1(32, 3);
        assert_eq!((oc, uc, msff_enc, msff_dec, head), (333_088, 5_495_584, 7_264, 14_528, 99));
        let total = oc + uc + msff_enc + msff_dec + head;
        assert_eq!(total, 5_850_563);
        let net = Oucd::new(ArchConfig::canonical(), 0).unwrap();
        assert_eq!(net.param_count(), total);
    }

    #[test]
    fn single_conv_count() {
        let mut s = ParamStore::new();
        init_conv(&mut s, "c", [32, 3, 3, 3], 0);
        assert_eq!(s.param_count(), 896);
    }

    #[test]
    fn batch_rows_are_independent() {
        let net = Oucd::new(ArchConfig::small(), 2).unwrap();
        let y = input(2, 64, 64, 5);
        let batched = net.infer(&y).unwrap();
        let alone = net.infer(&y.sample(0)).unwrap();
        let row0 = batched.sample(0);
        assert!(row0.max_abs_diff(&alone) < 1e-5);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut net = Oucd::new(ArchConfig::small(), 2).unwrap();
        for (_, t) in net.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let out = net.infer(&input(1, 32, 32, 1)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroed_fusion_equals_variant_without_it() {
        let mut full = Oucd::new(ArchConfig::small(), 7).unwrap();
        let plain = Oucd::new(ArchConfig::small().with_variant(Variant::OucdNoMsff), 7).unwrap();
        let y = input(1, 32, 32, 3);
        let before = full.infer(&y).unwrap();
        assert_ne!(before.data(), plain.infer(&y).unwrap().data());
        for (name, t) in full.params_mut() {
            if name.starts_with("msff.") {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        assert_eq!(full.infer(&y).unwrap().data(), plain.infer(&y).unwrap().data());
    }

    #[test]
    fn load_params_round_trip() {
        let a = Oucd::new(ArchConfig::small(), 1).unwrap();
        let mut b = Oucd::new(ArchConfig::small(), 2).unwrap();
        b.load_params(&a.param_store()).unwrap();
        let y = input(1, 32, 32, 0);
        assert_eq!(a.infer(&y).unwrap().data(), b.infer(&y).unwrap().data());
    }

    #[test]
    fn trace_covers_both_branches() {
        let net = Oucd::new(ArchConfig::small(), 1).unwrap();
        let (_, trace) = net.trace(&input(1, 32, 32, 0)).unwrap();
        assert_eq!(trace.branch_rows("overcomplete").count(), 18);
        assert_eq!(trace.branch_rows("undercomplete").count(), 30);
        assert_eq!(trace.branch_rows("fusion").count(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]
        #[test]
        fn output_shape_equals_input_shape(hm in 1usize..3, wm in 1usize..3, seed in 0u64..100) {
            let net = Oucd::new(ArchConfig::small(), seed).unwrap();
            let y = input(1, 32 * hm, 32 * wm, seed);
            let out = net.infer(&y).unwrap();
            prop_assert_eq!(out.shape(), y.shape());
        }
    }
}
