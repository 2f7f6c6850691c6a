//! Bilinear resampling with half-pixel centers and border clamping.
//!
//! Output index `o` along an axis samples source coordinate `(o + 0.5) * in / out - 0.5`,
//! clamped to the valid range. Upsampling by two and the integer-factor downsampling used
//! by feature fusion are both instances of [`bilinear_resize`].

use super::{check_same_shape, Element, Shape, Tensor};
use crate::error::{contract_err, Result};

#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    w_lo: T,
    w_hi: T,
}

fn axis_taps<T: Element>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if lo == input - 1 { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, w_lo: T::lit(1.0 - frac), w_hi: T::lit(frac) }
        })
        .collect()
}

pub fn bilinear_resize<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    let out = Shape::try_new(s.n, s.c, out_h, out_w)?;
    if out_h == s.h && out_w == s.w {
        return Ok(Tensor::from_vec(out, input.data().to_vec())?);
    }
    let ty = axis_taps::<T>(s.h, out_h);
    let tx = axis_taps::<T>(s.w, out_w);
    let mut data = Vec::with_capacity(out.numel());
    for plane in input.data().chunks_exact(s.plane()) {
        for y in &ty {
            let (r0, r1) = (&plane[y.lo * s.w..][..s.w], &plane[y.hi * s.w..][..s.w]);
            for x in &tx {
                let top = r0[x.lo] * x.w_lo + r0[x.hi] * x.w_hi;
                let bottom = r1[x.lo] * x.w_lo + r1[x.hi] * x.w_hi;
                data.push(top * y.w_lo + bottom * y.w_hi);
            }
        }
    }
    Tensor::from_vec(out, data)
}

/// Adjoint of [`bilinear_resize`]: scatters each upstream value through its four weights.
pub fn bilinear_resize_backward<T: Element>(grad_out: &Tensor<T>, input_shape: Shape) -> Result<Tensor<T>> {
    let gs = grad_out.shape();
    if gs.n != input_shape.n || gs.c != input_shape.c {
        return Err(contract_err!("resize backward: upstream {gs} incompatible with input {input_shape}"));
    }
    if gs.h == input_shape.h && gs.w == input_shape.w {
        return Tensor::from_vec(input_shape, grad_out.data().to_vec());
    }
    let ty = axis_taps::<T>(input_shape.h, gs.h);
    let tx = axis_taps::<T>(input_shape.w, gs.w);
    let mut gx = vec![T::zero(); input_shape.numel()];
    for (plane, g) in gx.chunks_exact_mut(input_shape.plane()).zip(grad_out.data().chunks_exact(gs.plane())) {
        let mut it = g.iter();
        for y in &ty {
            for x in &tx {
                let v = *it.next().expect("upstream plane size checked above");
                let (top, bottom) = (v * y.w_lo, v * y.w_hi);
                let w = input_shape.w;
                plane[y.lo * w + x.lo] = plane[y.lo * w + x.lo] + top * x.w_lo;
                plane[y.lo * w + x.hi] = plane[y.lo * w + x.hi] + top * x.w_hi;
                plane[y.hi * w + x.lo] = plane[y.hi * w + x.lo] + bottom * x.w_lo;
                plane[y.hi * w + x.hi] = plane[y.hi * w + x.hi] + bottom * x.w_hi;
            }
        }
    }
    Tensor::from_vec(input_shape, gx)
}

pub fn bilinear_up2<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    bilinear_resize(input, 2 * s.h, 2 * s.w)
}

pub fn bilinear_up2_backward<T: Element>(grad_out: &Tensor<T>, input_shape: Shape) -> Result<Tensor<T>> {
    let expected = Shape::new(input_shape.n, input_shape.c, 2 * input_shape.h, 2 * input_shape.w);
    check_same_shape("upsample backward grad_out", grad_out.shape(), expected)?;
    bilinear_resize_backward(grad_out, input_shape)
}
