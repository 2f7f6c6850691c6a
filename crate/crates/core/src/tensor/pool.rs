//! 2x2 max pooling with stride 2.

use super::{check_same_shape, Element, Shape, Tensor};
use crate::error::{config_err, contract_err, Result};

/// Returns the pooled tensor and, per output element, the flat index of the winning input
/// element. Ties go to the first element of the window in row-major order.
pub fn maxpool2<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(config_err!("max pooling needs even spatial extents, got {}x{}", s.h, s.w));
    }
    let out = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let x = input.data();
    let mut values = Vec::with_capacity(out.numel());
    let mut argmax = Vec::with_capacity(out.numel());
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for oy in 0..out.h {
            for ox in 0..out.w {
                let first = base + 2 * oy * s.w + 2 * ox;
                let mut best = first;
                for idx in [first + 1, first + s.w, first + s.w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                values.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(out, values)?, argmax))
}

pub fn maxpool2_backward<T: Element>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: Shape) -> Result<Tensor<T>> {
    let expected = Shape::new(input_shape.n, input_shape.c, input_shape.h / 2, input_shape.w / 2);
    check_same_shape("max pool backward grad_out", grad_out.shape(), expected)?;
    if argmax.len() != grad_out.numel() {
        return Err(contract_err!("argmax map has {} entries for {} outputs", argmax.len(), grad_out.numel()));
    }
    let mut gx = vec![T::zero(); input_shape.numel()];
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        let slot = gx.get_mut(idx).ok_or_else(|| contract_err!("argmax index {idx} outside input {input_shape}"))?;
        *slot = *slot + g;
    }
    Tensor::from_vec(input_shape, gx)
}
