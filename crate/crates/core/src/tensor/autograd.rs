//! Reverse-mode differentiation over a recorded sequence of primitive calls.
//!
//! Nodes are appended in execution order, so every node's inputs have smaller indices and
//! walking the tape backwards visits nodes in reverse topological order. A value used by
//! several consumers receives the sum of their contributions.

use super::conv::{conv2d_backward_raw, conv2d_raw};
use super::pointwise::{add, relu, relu_backward};
use super::pool::{maxpool2, maxpool2_backward};
use super::resample::{bilinear_resize, bilinear_resize_backward};
use super::{check_same_shape, Element, Shape, Tensor};
use crate::error::{contract_err, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv { input: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    MaxPool { input: Var, argmax: Vec<usize> },
    Resize { input: Var },
    Relu { input: Var },
    Add { a: Var, b: Var },
    Scale { input: Var, factor: T },
    MeanSqDiff { a: Var, b: Var },
    Sum { input: Var },
    Dot { input: Var, weights: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    differentiated: bool,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), differentiated: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last differentiated loss with respect to `v`.
    ///
    /// Values that require a gradient but were not reached from the loss report zeros.
    pub fn grad(&self, v: Var) -> Result<&[T]> {
        if !self.differentiated {
            return Err(contract_err!("gradient requested before backward"));
        }
        let node = self.nodes.get(v.0).ok_or_else(|| contract_err!("variable {} is not on this tape", v.0))?;
        node.value.grad().ok_or_else(|| contract_err!("variable {} does not require a gradient", v.0))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let value = conv2d_raw(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(value, Op::Conv { input, weight, bias, stride, padding }, rg))
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (value, argmax) = maxpool2(self.value(input))?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::MaxPool { input, argmax }, rg))
    }

    pub fn resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = bilinear_resize(self.value(input), out_h, out_w)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Resize { input }, rg))
    }

    pub fn up2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        self.resize(input, 2 * s.h, 2 * s.w)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = relu(self.value(input));
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Relu { input }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = add(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    /// Mean of squared differences, as a scalar. Accumulates in 64-bit.
    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same_shape("mean squared difference", ta.shape(), tb.shape())?;
        let total: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| {
                let d = x.as_f64() - y.as_f64();
                d * d
            })
            .sum();
        let value = Tensor::full(Shape::scalar(), T::lit(total / ta.numel() as f64));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MeanSqDiff { a, b }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::full(Shape::scalar(), T::lit(self.value(input).sum()));
        let rg = self.any_grad(&[input]);
        self.push(value, Op::Sum { input }, rg)
    }

    /// `sum(input * weights)` for a fixed weight tensor.
    pub fn dot(&mut self, input: Var, weights: &Tensor<T>) -> Result<Var> {
        check_same_shape("dot", self.shape(input), weights.shape())?;
        let total: f64 =
            self.value(input).data().iter().zip(weights.data()).map(|(x, w)| x.as_f64() * w.as_f64()).sum();
        let value = Tensor::full(Shape::scalar(), T::lit(total));
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Dot { input, weights: weights.data().to_vec() }, rg))
    }

    /// Populates the gradient of every value that requires one with `d loss / d value`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| contract_err!("backward on variable {} before it was recorded", loss.0))?;
        if node.value.numel() != 1 {
            return Err(contract_err!("backward needs a scalar loss, got shape {}", node.value.shape()));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let upstream = Tensor::from_vec(self.nodes[i].value.shape(), g)?;
            self.propagate(i, &upstream, &mut grads)?;
            grads[i] = Some(upstream.into_data());
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                let g = g.unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                node.value.set_grad(g)?;
            } else {
                node.value.clear_grad();
            }
        }
        self.differentiated = true;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv { input, weight, bias, stride, padding } => {
                let want_params = wants(*weight) || wants(*bias);
                let (gx, gw, gb) = conv2d_backward_raw(
                    g,
                    self.value(*input),
                    self.value(*weight),
                    *stride,
                    *padding,
                    wants(*input),
                    want_params,
                )?;
                if let Some(gx) = gx {
                    accumulate(grads, *input, gx.into_data());
                }
                if wants(*weight) {
                    accumulate(grads, *weight, gw.expect("requested").into_data());
                }
                if wants(*bias) {
                    accumulate(grads, *bias, gb.expect("requested").into_data());
                }
            }
            Op::MaxPool { input, argmax } => {
                if wants(*input) {
                    let gx = maxpool2_backward(g, argmax, self.shape(*input))?;
                    accumulate(grads, *input, gx.into_data());
                }
            }
            Op::Resize { input } => {
                if wants(*input) {
                    let gx = bilinear_resize_backward(g, self.shape(*input))?;
                    accumulate(grads, *input, gx.into_data());
                }
            }
            Op::Relu { input } => {
                if wants(*input) {
                    let gx = relu_backward(g, self.value(*input))?;
                    accumulate(grads, *input, gx.into_data());
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if wants(v) {
                        accumulate(grads, v, g.data().to_vec());
                    }
                }
            }
            Op::Scale { input, factor } => {
                if wants(*input) {
                    accumulate(grads, *input, g.data().iter().map(|&v| v * *factor).collect());
                }
            }
            Op::MeanSqDiff { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let k = g.data()[0] * T::lit(2.0 / ta.numel() as f64);
                if wants(*a) {
                    accumulate(grads, *a, ta.data().iter().zip(tb.data()).map(|(&x, &y)| k * (x - y)).collect());
                }
                if wants(*b) {
                    accumulate(grads, *b, ta.data().iter().zip(tb.data()).map(|(&x, &y)| k * (y - x)).collect());
                }
            }
            Op::Sum { input } => {
                if wants(*input) {
                    accumulate(grads, *input, vec![g.data()[0]; self.value(*input).numel()]);
                }
            }
            Op::Dot { input, weights } => {
                if wants(*input) {
                    let s = g.data()[0];
                    accumulate(grads, *input, weights.iter().map(|&w| w * s).collect());
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
