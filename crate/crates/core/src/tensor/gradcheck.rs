//! Central finite-difference checks of every primitive's backward pass.
//!
//! Each case draws random operands and a random probe tensor `p`, and compares the tape's
//! gradient of `sum(p * op(operands))` with `sum(p * (op(x + h) - op(x - h))) / 2h`, the
//! difference being taken elementwise before the reduction so that unaffected outputs
//! cancel exactly. All primitives are piecewise polynomials of degree at most two, so the
//! central difference carries no truncation error as long as operands stay clear of kinks.
//! The error reported per operand is `max|analytic - numeric| / max(|analytic|, |numeric|)`.

use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::conv2d_raw;
use super::pointwise::{add, relu};
use super::pool::maxpool2;
use super::resample::bilinear_resize;
use super::{Element, Shape, Tape, Tensor};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GradOp {
    Conv2d,
    MaxPool2,
    BilinearUp2,
    BilinearDown,
    Relu,
    Add,
    MeanSqDiff,
}

impl GradOp {
    pub const ALL: [GradOp; 7] = [
        GradOp::Conv2d,
        GradOp::MaxPool2,
        GradOp::BilinearUp2,
        GradOp::BilinearDown,
        GradOp::Relu,
        GradOp::Add,
        GradOp::MeanSqDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Conv2d => "conv2d",
            GradOp::MaxPool2 => "maxpool2",
            GradOp::BilinearUp2 => "bilinear_up2",
            GradOp::BilinearDown => "bilinear_down",
            GradOp::Relu => "relu",
            GradOp::Add => "add",
            GradOp::MeanSqDiff => "mse",
        }
    }

    pub fn from_name(name: &str) -> Option<GradOp> {
        GradOp::ALL.into_iter().find(|op| op.name() == name)
    }

    fn operands(self) -> &'static [&'static str] {
        match self {
            GradOp::Conv2d => &["input", "weight", "bias"],
            GradOp::Add | GradOp::MeanSqDiff => &["a", "b"],
            _ => &["input"],
        }
    }

    /// Shape of the primary operand used when the caller has no preference.
    pub fn default_shape(self) -> Shape {
        match self {
            GradOp::Conv2d => Shape::new(1, 2, 6, 6),
            GradOp::MaxPool2 | GradOp::BilinearDown => Shape::new(1, 2, 8, 8),
            _ => Shape::new(1, 2, 5, 6),
        }
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    /// Finite-difference step.
    pub fn step(self) -> f64 {
        match self {
            Precision::Single => 1e-3,
            Precision::Double => 1e-6,
        }
    }

    /// Default pass threshold on the relative error.
    pub fn default_tolerance(self) -> f64 {
        match self {
            Precision::Single => 1e-2,
            Precision::Double => 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InputSpec {
    pub shape: Shape,
    pub cases: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl InputSpec {
    pub fn new(op: GradOp, precision: Precision) -> Self {
        InputSpec { shape: op.default_shape(), cases: 100, seed: 0, precision }
    }
}

#[derive(Clone, Debug)]
pub struct OperandReport {
    pub op: GradOp,
    pub operand: &'static str,
    pub cases: usize,
    /// Worst case over all cases; `NaN` when a case failed to evaluate.
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub precision: Precision,
    pub tolerance: f64,
    pub rows: Vec<OperandReport>,
    pub errors: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.errors.is_empty() && self.rows.iter().all(|r| r.passed)
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.rows.extend(other.rows);
        self.errors.extend(other.errors);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let bits = match self.precision {
            Precision::Single => 32,
            Precision::Double => 64,
        };
        let _ = writeln!(out, "gradient check ({bits}-bit, tolerance {:e})", self.tolerance);
        let _ = writeln!(out, "{:<14} {:<8} {:>6} {:>14}  result", "op", "operand", "cases", "max rel err");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14} {:<8} {:>6} {:>14.3e}  {}",
                r.op.name(),
                r.operand,
                r.cases,
                r.max_rel_error,
                if r.passed { "pass" } else { "FAIL" }
            );
        }
        for e in &self.errors {
            let _ = writeln!(out, "error: {e}");
        }
        out
    }
}

pub fn gradient_check(op: GradOp, spec: InputSpec, tolerance: f64) -> GradCheckReport {
    let outcome = match spec.precision {
        Precision::Single => run_cases::<f32>(op, &spec),
        Precision::Double => run_cases::<f64>(op, &spec),
    };
    let names = op.operands();
    let (worst, errors) = match outcome {
        Ok(worst) => (worst, Vec::new()),
        Err(e) => (vec![f64::NAN; names.len()], vec![format!("{op}: {e}")]),
    };
    GradCheckReport {
        precision: spec.precision,
        tolerance,
        rows: names
            .iter()
            .zip(worst)
            .map(|(&operand, err)| OperandReport {
                op,
                operand,
                cases: spec.cases,
                max_rel_error: err,
                passed: err < tolerance,
            })
            .collect(),
        errors,
    }
}

/// Runs every op in `ops` and concatenates the reports.
pub fn gradient_check_all(
    ops: &[GradOp],
    precision: Precision,
    tolerance: f64,
    cases: usize,
    seed: u64,
) -> GradCheckReport {
    let mut report = GradCheckReport { precision, tolerance, rows: Vec::new(), errors: Vec::new() };
    for &op in ops {
        let spec = InputSpec { cases, seed, ..InputSpec::new(op, precision) };
        report.merge(gradient_check(op, spec, tolerance));
    }
    report
}

#[derive(Clone, Copy, Debug)]
struct CaseConfig {
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

fn draw_case(op: GradOp, shape: Shape, rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, CaseConfig) {
    let mut cfg = CaseConfig { stride: 1, padding: 1, out_h: shape.h, out_w: shape.w };
    let uniform = |rng: &mut ChaCha8Rng, s: Shape| Tensor::<f64>::uniform(s, -1.0, 1.0, rng);
    let operands = match op {
        GradOp::Conv2d => {
            cfg.stride = rng.gen_range(1..=2);
            cfg.padding = rng.gen_range(0..=1);
            let filters = rng.gen_range(1..=3);
            let k = if rng.gen_bool(0.75) { 3 } else { 1 };
            vec![
                uniform(rng, shape),
                uniform(rng, Shape::new(filters, shape.c, k, k)),
                uniform(rng, Shape::new(filters, 1, 1, 1)),
            ]
        }
        GradOp::MaxPool2 => {
            // distinct entries 0.05 apart, far wider than any finite-difference step
            let mut vals: Vec<f64> = (0..shape.numel()).map(|i| i as f64 * 0.05 - 1.0).collect();
            vals.shuffle(rng);
            vec![Tensor::from_vec(shape, vals).expect("length matches")]
        }
        GradOp::BilinearUp2 => {
            cfg.out_h = 2 * shape.h;
            cfg.out_w = 2 * shape.w;
            vec![uniform(rng, shape)]
        }
        GradOp::BilinearDown => {
            let f = *[2usize, 4].choose(rng).expect("non-empty");
            cfg.out_h = (shape.h / f).max(1);
            cfg.out_w = (shape.w / f).max(1);
            vec![uniform(rng, shape)]
        }
        GradOp::Relu => {
            let t = Tensor::<f64>::uniform(shape, 0.1, 1.0, rng);
            let signs: Vec<f64> = (0..shape.numel()).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
            let data = t.data().iter().zip(signs).map(|(v, s)| v * s).collect();
            vec![Tensor::from_vec(shape, data).expect("length matches")]
        }
        GradOp::Add | GradOp::MeanSqDiff => vec![uniform(rng, shape), uniform(rng, shape)],
    };
    (operands, cfg)
}

fn apply<T: Element>(op: GradOp, xs: &[Tensor<T>], cfg: CaseConfig) -> Result<Tensor<T>> {
    match op {
        GradOp::Conv2d => conv2d_raw(&xs[0], &xs[1], &xs[2], cfg.stride, cfg.padding),
        GradOp::MaxPool2 => Ok(maxpool2(&xs[0])?.0),
        GradOp::BilinearUp2 | GradOp::BilinearDown => bilinear_resize(&xs[0], cfg.out_h, cfg.out_w),
        GradOp::Relu => Ok(relu(&xs[0])),
        GradOp::Add => add(&xs[0], &xs[1]),
        GradOp::MeanSqDiff => {
            let mut tape = Tape::<T>::new();
            let (a, b) = (tape.constant(xs[0].clone()), tape.constant(xs[1].clone()));
            let m = tape.mean_sq_diff(a, b)?;
            Ok(tape.value(m).clone())
        }
    }
}

fn analytic<T: Element>(op: GradOp, xs: &[Tensor<T>], cfg: CaseConfig, probe: &Tensor<T>) -> Result<Vec<Vec<T>>> {
    let mut tape = Tape::<T>::new();
    let vars: Vec<_> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let y = match op {
        GradOp::Conv2d => tape.conv2d(vars[0], vars[1], vars[2], cfg.stride, cfg.padding)?,
        GradOp::MaxPool2 => tape.maxpool2(vars[0])?,
        GradOp::BilinearUp2 | GradOp::BilinearDown => tape.resize(vars[0], cfg.out_h, cfg.out_w)?,
        GradOp::Relu => tape.relu(vars[0]),
        GradOp::Add => tape.add(vars[0], vars[1])?,
        GradOp::MeanSqDiff => tape.mean_sq_diff(vars[0], vars[1])?,
    };
    let loss = tape.dot(y, probe)?;
    tape.backward(loss)?;
    vars.iter().map(|&v| Ok(tape.grad(v)?.to_vec())).collect()
}

fn run_cases<T: Element>(op: GradOp, spec: &InputSpec) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (op as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let h = spec.precision.step();
    let mut worst = vec![0.0f64; op.operands().len()];
    for _ in 0..spec.cases {
        let (operands, cfg) = draw_case(op, spec.shape, &mut rng);
        let xs: Vec<Tensor<T>> = operands.iter().map(|t| t.cast()).collect();
        let out_shape = apply(op, &xs, cfg)?.shape();
        let probe = Tensor::<f64>::uniform(out_shape, -1.0, 1.0, &mut rng);
        let grads = analytic(op, &xs, cfg, &probe.cast())?;

        for (slot, grad) in grads.iter().enumerate() {
            let mut max_diff = 0.0f64;
            let mut scale = 0.0f64;
            for i in 0..xs[slot].numel() {
                let mut plus = xs.clone();
                let mut minus = xs.clone();
                let base = xs[slot].data()[i].as_f64();
                plus[slot].data_mut()[i] = T::lit(base + h);
                minus[slot].data_mut()[i] = T::lit(base - h);
                // the step actually representable in T
                let span = plus[slot].data()[i].as_f64() - minus[slot].data()[i].as_f64();
                let (yp, ym) = (apply(op, &plus, cfg)?, apply(op, &minus, cfg)?);
                let numeric: f64 = yp
                    .data()
                    .iter()
                    .zip(ym.data())
                    .zip(probe.data())
                    .map(|((a, b), p)| (a.as_f64() - b.as_f64()) * p)
                    .sum::<f64>()
                    / span;
                let a = grad[i].as_f64();
                max_diff = max_diff.max((a - numeric).abs());
                scale = scale.max(a.abs()).max(numeric.abs());
            }
            let rel = if scale == 0.0 { 0.0 } else { max_diff / scale };
            worst[slot] = worst[slot].max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_passes_in_single_precision() {
        let spec = InputSpec { cases: 20, ..InputSpec::new(GradOp::Conv2d, Precision::Single) };
        let r = gradient_check(GradOp::Conv2d, spec, 1e-2);
        assert!(r.passed(), "{}", r.render());
        assert_eq!(r.rows.len(), 3);
    }

    #[test]
    fn relu_and_maxpool_pass_at_tight_tolerance() {
        for op in [GradOp::Relu, GradOp::MaxPool2] {
            let spec = InputSpec { cases: 20, ..InputSpec::new(op, Precision::Single) };
            let r = gradient_check(op, spec, 1e-3);
            assert!(r.passed(), "{}", r.render());
        }
    }

    #[test]
    fn names_round_trip() {
        for op in GradOp::ALL {
            assert_eq!(GradOp::from_name(op.name()), Some(op));
        }
        assert_eq!(GradOp::from_name("softmax"), None);
    }

    #[test]
    fn report_renders_one_row_per_operand() {
        let spec = InputSpec { cases: 2, ..InputSpec::new(GradOp::Relu, Precision::Double) };
        let r = gradient_check(GradOp::Relu, spec, 1e-5);
        let text = r.render();
        assert_eq!(text.lines().filter(|l| l.starts_with("relu")).count(), 1);
    }
}
