//! 2-D cross-correlation with square kernels, zero padding and integer stride.
//!
//! The forward pass lowers blocks of whole output rows to a GEMM (im2col), so scratch
//! memory stays bounded near `in_channels * k * k * COLUMN_BLOCK` regardless of the image
//! size. Blocks are visited in a fixed order, which keeps every reduction
//! deterministic.

use rand::Rng;

use super::{check_same_shape, Element, Shape, Tensor};
use crate::error::{config_err, contract_err, Result};

const COLUMN_BLOCK: usize = 1024;

/// Weight `(out, in, k, k)`, bias `(out, 1, 1, 1)`, stride and zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let ws = weight.shape();
        if ws.h != ws.w {
            return Err(config_err!("only square kernels are supported, got {}x{}", ws.h, ws.w));
        }
        if bias.shape() != Shape::new(ws.n, 1, 1, 1) {
            return Err(config_err!("bias shape {} does not match {} output channels", bias.shape(), ws.n));
        }
        if stride == 0 {
            return Err(config_err!("stride must be positive"));
        }
        Ok(ConvParams { weight, bias, stride, padding })
    }

    /// Fan-in scaled uniform weights in `±sqrt(1 / (in * k * k))`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (1.0 / (in_channels * kernel * kernel) as f64).sqrt();
        ConvParams {
            weight: Tensor::uniform(Shape::new(out_channels, in_channels, kernel, kernel), -bound, bound, rng),
            bias: Tensor::zeros(Shape::new(out_channels, 1, 1, 1)),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().h
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// Gradients of a convolution with respect to its three operands.
#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Self> {
        if weight.h != weight.w {
            return Err(config_err!("non-square kernel {}x{}", weight.h, weight.w));
        }
        if input.c != weight.c {
            return Err(config_err!("input has {} channels but the kernel expects {}", input.c, weight.c));
        }
        if stride == 0 {
            return Err(config_err!("stride must be positive"));
        }
        let k = weight.h;
        if input.h + 2 * pad < k || input.w + 2 * pad < k {
            return Err(config_err!("kernel {k} with padding {pad} does not fit a {}x{} input", input.h, input.w));
        }
        Ok(Geometry {
            c: input.c,
            h: input.h,
            w: input.w,
            o: weight.n,
            k,
            stride,
            pad,
            oh: (input.h + 2 * pad - k) / stride + 1,
            ow: (input.w + 2 * pad - k) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[lo, hi)` whose tap `kx` lands inside the input row.
    fn valid_columns(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx { (self.pad - kx).div_ceil(self.stride) } else { 0 };
        let hi = if self.w + self.pad > kx { ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.ow) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Output rows per column block; blocks always hold whole output rows.
    fn block_rows(&self) -> usize {
        (COLUMN_BLOCK / self.ow).clamp(1, self.oh)
    }

    /// Visits every (column-buffer row, output row) pair of the block of output rows
    /// `oy0..oy0 + rows`. `f(dst, seg)` gets the offset of the output row inside the column
    /// buffer and, when any tap lands inside the input, `(src, lo, hi)`: the input offset of
    /// output column 0 and the valid output columns `lo..hi`.
    fn for_each_row(&self, oy0: usize, rows: usize, mut f: impl FnMut(usize, Option<(isize, usize, usize)>)) {
        let len = rows * self.ow;
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let (lo, hi) = self.valid_columns(kx);
                    for r in 0..rows {
                        let dst = row * len + r * self.ow;
                        let iy = ((oy0 + r) * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h || lo == hi {
                            f(dst, None);
                            continue;
                        }
                        let src =
                            (ci * self.h + iy as usize) as isize * self.w as isize + kx as isize - self.pad as isize;
                        f(dst, Some((src, lo, hi)));
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, x: &[T], oy0: usize, rows: usize, cols: &mut [T]) {
        let (ow, s) = (self.ow, self.stride);
        self.for_each_row(oy0, rows, |dst, seg| {
            let out = &mut cols[dst..dst + ow];
            let Some((src, lo, hi)) = seg else {
                out.fill(T::zero());
                return;
            };
            out[..lo].fill(T::zero());
            out[hi..].fill(T::zero());
            let first = (src + (lo * s) as isize) as usize;
            if s == 1 {
                out[lo..hi].copy_from_slice(&x[first..first + hi - lo]);
            } else {
                for (o, &v) in out[lo..hi].iter_mut().zip(x[first..].iter().step_by(s)) {
                    *o = v;
                }
            }
        });
    }

    fn col2im_add<T: Element>(&self, cols: &[T], oy0: usize, rows: usize, gx: &mut [T]) {
        let s = self.stride;
        self.for_each_row(oy0, rows, |dst, seg| {
            let Some((src, lo, hi)) = seg else { return };
            let first = (src + (lo * s) as isize) as usize;
            let seg = &cols[dst + lo..dst + hi];
            if s == 1 {
                for (g, &v) in gx[first..first + hi - lo].iter_mut().zip(seg) {
                    *g = *g + v;
                }
            } else {
                for (g, &v) in gx[first..].iter_mut().step_by(s).zip(seg) {
                    *g = *g + v;
                }
            }
        });
    }
}

/// Stride-1 lowering without a column buffer. On a zero-padded copy of the input whose
/// rows are `wp = w + 2 * pad` wide, tap `(ky, kx)` of output position `q = oy * wp + ox` reads
/// `q + ky * wp + kx`, so each tap is a single GEMM on a shifted contiguous view. Columns
/// `ow..wp` of every output row are computed on junk and discarded.
struct Shifted {
    wp: usize,
    plane: usize,
    rows: usize,
}

impl Shifted {
    fn new(g: &Geometry) -> Self {
        let wp = g.w + 2 * g.pad;
        let hp = g.h + 2 * g.pad;
        Shifted { wp, plane: hp * wp + g.k - 1, rows: (COLUMN_BLOCK / wp).clamp(1, g.oh) }
    }

    fn pad<T: Element>(&self, g: &Geometry, x: &[T], xp: &mut [T]) {
        xp.fill(T::zero());
        for ci in 0..g.c {
            for y in 0..g.h {
                let src = (ci * g.h + y) * g.w;
                let dst = ci * self.plane + (y + g.pad) * self.wp + g.pad;
                xp[dst..dst + g.w].copy_from_slice(&x[src..src + g.w]);
            }
        }
    }

    fn unpad_add<T: Element>(&self, g: &Geometry, xp: &[T], x: &mut [T]) {
        for ci in 0..g.c {
            for y in 0..g.h {
                let dst = (ci * g.h + y) * g.w;
                let src = ci * self.plane + (y + g.pad) * self.wp + g.pad;
                for (d, &v) in x[dst..dst + g.w].iter_mut().zip(&xp[src..src + g.w]) {
                    *d = *d + v;
                }
            }
        }
    }

    /// Calls `f(oy0, rows, q0, len)` for every block of whole output rows.
    fn blocks(&self, g: &Geometry, mut f: impl FnMut(usize, usize, usize, usize)) {
        let mut oy0 = 0;
        while oy0 < g.oh {
            let rows = self.rows.min(g.oh - oy0);
            f(oy0, rows, oy0 * self.wp, rows * self.wp);
            oy0 += rows;
        }
    }

    fn taps(g: &Geometry) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..g.k).flat_map(move |ky| (0..g.k).map(move |kx| (ky, kx)))
    }

    fn forward<T: Element>(&self, g: &Geometry, w: &[T], b: &[T], xp: &[T], ext: &mut [T], y: &mut [T]) {
        let (kk, kdim, positions) = (g.k * g.k, g.patch(), g.positions());
        self.blocks(g, |oy0, rows, q0, len| {
            ext[..g.o * len].fill(T::zero());
            for (ky, kx) in Self::taps(g) {
                let off = q0 + ky * self.wp + kx;
                // SAFETY: the tap slice of w is o x c with strides (kdim, kk); the shifted view
                // of xp is c x len with row stride `plane` and stays inside xp because `plane`
                // carries k - 1 trailing zeros; ext is o x len.
                unsafe {
                    T::gemm(
                        g.o,
                        g.c,
                        len,
                        T::one(),
                        w.as_ptr().add(ky * g.k + kx),
                        kdim as isize,
                        kk as isize,
                        xp.as_ptr().add(off),
                        self.plane as isize,
                        1,
                        T::one(),
                        ext.as_mut_ptr(),
                        len as isize,
                        1,
                    );
                }
            }
            for (oc, &bias) in b.iter().enumerate() {
                for r in 0..rows {
                    let src = &ext[oc * len + r * self.wp..][..g.ow];
                    let dst = &mut y[oc * positions + (oy0 + r) * g.ow..][..g.ow];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d = v + bias;
                    }
                }
            }
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn backward<T: Element>(
        &self,
        g: &Geometry,
        w: &[T],
        xp: &[T],
        dy: &[T],
        gext: &mut [T],
        mut gw: Option<&mut [T]>,
        mut dxp: Option<&mut [T]>,
    ) {
        let (kk, kdim, positions) = (g.k * g.k, g.patch(), g.positions());
        self.blocks(g, |oy0, rows, q0, len| {
            gext[..g.o * len].fill(T::zero());
            for oc in 0..g.o {
                for r in 0..rows {
                    let src = &dy[oc * positions + (oy0 + r) * g.ow..][..g.ow];
                    gext[oc * len + r * self.wp..][..g.ow].copy_from_slice(src);
                }
            }
            for (ky, kx) in Self::taps(g) {
                let off = q0 + ky * self.wp + kx;
                let tap = ky * g.k + kx;
                // SAFETY: gext is o x len; the shifted view of xp read transposed is len x c
                // (strides 1, plane); the gw tap slice is o x c with strides (kdim, kk).
                if let Some(gw) = gw.as_deref_mut() {
                    unsafe {
                        T::gemm(
                            g.o,
                            len,
                            g.c,
                            T::one(),
                            gext.as_ptr(),
                            len as isize,
                            1,
                            xp.as_ptr().add(off),
                            1,
                            self.plane as isize,
                            T::one(),
                            gw.as_mut_ptr().add(tap),
                            kdim as isize,
                            kk as isize,
                        );
                    }
                }
                // SAFETY: the w tap slice read transposed is c x o (strides kk, kdim); gext is
                // o x len; the shifted view of dxp is c x len with row stride `plane`.
                if let Some(dxp) = dxp.as_deref_mut() {
                    unsafe {
                        T::gemm(
                            g.c,
                            g.o,
                            len,
                            T::one(),
                            w.as_ptr().add(tap),
                            kk as isize,
                            kdim as isize,
                            gext.as_ptr(),
                            len as isize,
                            1,
                            T::one(),
                            dxp.as_mut_ptr().add(off),
                            self.plane as isize,
                            1,
                        );
                    }
                }
            }
        });
    }
}

pub fn conv_output_shape(input: Shape, weight: Shape, stride: usize, padding: usize) -> Result<Shape> {
    let g = Geometry::new(input, weight, stride, padding)?;
    Ok(Shape::new(input.n, g.o, g.oh, g.ow))
}

pub fn conv2d<T: Element>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    conv2d_raw(input, &params.weight, &params.bias, params.stride, params.padding)
}

pub(crate) fn conv2d_raw<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let is = input.shape();
    let g = Geometry::new(is, weight.shape(), stride, padding)?;
    if bias.numel() != g.o {
        return Err(config_err!("bias has {} entries for {} filters", bias.numel(), g.o));
    }
    let out_shape = Shape::new(is.n, g.o, g.oh, g.ow);
    let (kdim, positions) = (g.patch(), g.positions());
    let mut out = vec![T::zero(); out_shape.numel()];
    let w = weight.data();
    if g.stride == 1 && !g.is_pointwise() {
        let sh = Shifted::new(&g);
        let mut xp = vec![T::zero(); g.c * sh.plane];
        let mut ext = vec![T::zero(); g.o * sh.rows * sh.wp];
        for (x, y) in input.data().chunks_exact(is.sample()).zip(out.chunks_exact_mut(out_shape.sample())) {
            sh.pad(&g, x, &mut xp);
            sh.forward(&g, w, bias.data(), &xp, &mut ext, y);
        }
        return Tensor::from_vec(out_shape, out);
    }
    let mut cols = vec![T::zero(); kdim * g.block_rows() * g.ow];

    for (x, y) in input.data().chunks_exact(is.sample()).zip(out.chunks_exact_mut(out_shape.sample())) {
        for (row, &b) in y.chunks_exact_mut(positions).zip(bias.data()) {
            row.fill(b);
        }
        if g.is_pointwise() {
            // SAFETY: w is o x c, x is c x positions, y is o x positions, all row-major.
            unsafe {
                T::gemm(
                    g.o,
                    g.c,
                    positions,
                    T::one(),
                    w.as_ptr(),
                    g.c as isize,
                    1,
                    x.as_ptr(),
                    positions as isize,
                    1,
                    T::one(),
                    y.as_mut_ptr(),
                    positions as isize,
                    1,
                );
            }
            continue;
        }
        let mut oy0 = 0;
        while oy0 < g.oh {
            let rows = g.block_rows().min(g.oh - oy0);
            let (p0, len) = (oy0 * g.ow, rows * g.ow);
            g.im2col(x, oy0, rows, &mut cols);
            // SAFETY: w is o x kdim, cols is kdim x len, the output block is o x len with
            // row stride `positions`, inside y.
            unsafe {
                T::gemm(
                    g.o,
                    kdim,
                    len,
                    T::one(),
                    w.as_ptr(),
                    kdim as isize,
                    1,
                    cols.as_ptr(),
                    len as isize,
                    1,
                    T::one(),
                    y.as_mut_ptr().add(p0),
                    positions as isize,
                    1,
                );
            }
            oy0 += rows;
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn conv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    cached_input: &Tensor<T>,
    params: &ConvParams<T>,
) -> Result<ConvGrads<T>> {
    let (input, weight, bias) =
        conv2d_backward_raw(grad_out, cached_input, &params.weight, params.stride, params.padding, true, true)?;
    Ok(ConvGrads {
        input: input.expect("input gradient requested"),
        weight: weight.expect("weight gradient requested"),
        bias: bias.expect("bias gradient requested"),
    })
}

type RawConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

pub(crate) fn conv2d_backward_raw<T: Element>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    want_input: bool,
    want_params: bool,
) -> Result<RawConvGrads<T>> {
    let is = input.shape();
    let g = Geometry::new(is, weight.shape(), stride, padding).map_err(|e| contract_err!("conv backward: {e}"))?;
    let out_shape = Shape::new(is.n, g.o, g.oh, g.ow);
    check_same_shape("conv backward grad_out", grad_out.shape(), out_shape)?;

    let (kdim, positions) = (g.patch(), g.positions());
    let w = weight.data();
    let mut gx = want_input.then(|| vec![T::zero(); is.numel()]);
    let mut gw = want_params.then(|| vec![T::zero(); weight.numel()]);
    let mut gb = want_params.then(|| vec![T::zero(); g.o]);
    if g.stride == 1 && !g.is_pointwise() {
        let sh = Shifted::new(&g);
        let mut xp = vec![T::zero(); g.c * sh.plane];
        let mut dxp = vec![T::zero(); if want_input { g.c * sh.plane } else { 0 }];
        let mut gext = vec![T::zero(); g.o * sh.rows * sh.wp];
        for s in 0..is.n {
            let x = &input.data()[s * is.sample()..(s + 1) * is.sample()];
            let dy = &grad_out.data()[s * out_shape.sample()..(s + 1) * out_shape.sample()];
            if let Some(gb) = gb.as_mut() {
                for (acc, row) in gb.iter_mut().zip(dy.chunks_exact(positions)) {
                    *acc = *acc + row.iter().copied().sum::<T>();
                }
            }
            if want_params {
                sh.pad(&g, x, &mut xp);
            }
            if want_input {
                dxp.fill(T::zero());
            }
            sh.backward(&g, w, &xp, dy, &mut gext, gw.as_deref_mut(), want_input.then_some(&mut dxp[..]));
            if let Some(gx) = gx.as_mut() {
                sh.unpad_add(&g, &dxp, &mut gx[s * is.sample()..(s + 1) * is.sample()]);
            }
        }
        return finish_grads(is, weight.shape(), g.o, gx, gw, gb);
    }
    let block = g.block_rows() * g.ow;
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { kdim * block }];
    let mut gcols = vec![T::zero(); if g.is_pointwise() || !want_input { 0 } else { kdim * block }];

    for s in 0..is.n {
        let x = &input.data()[s * is.sample()..(s + 1) * is.sample()];
        let dy = &grad_out.data()[s * out_shape.sample()..(s + 1) * out_shape.sample()];
        let dx = gx.as_mut().map(|v| &mut v[s * is.sample()..(s + 1) * is.sample()]);

        if let Some(gb) = gb.as_mut() {
            for (acc, row) in gb.iter_mut().zip(dy.chunks_exact(positions)) {
                *acc = *acc + row.iter().copied().sum::<T>();
            }
        }

        if g.is_pointwise() {
            // SAFETY (both calls): dy is o x positions, x is c x positions (read transposed
            // as positions x c), w is o x c (read transposed as c x o).
            if let Some(gw) = gw.as_mut() {
                unsafe {
                    T::gemm(
                        g.o,
                        positions,
                        g.c,
                        T::one(),
                        dy.as_ptr(),
                        positions as isize,
                        1,
                        x.as_ptr(),
                        1,
                        positions as isize,
                        T::one(),
                        gw.as_mut_ptr(),
                        g.c as isize,
                        1,
                    );
                }
            }
            if let Some(dx) = dx {
                unsafe {
                    T::gemm(
                        g.c,
                        g.o,
                        positions,
                        T::one(),
                        w.as_ptr(),
                        1,
                        g.c as isize,
                        dy.as_ptr(),
                        positions as isize,
                        1,
                        T::zero(),
                        dx.as_mut_ptr(),
                        positions as isize,
                        1,
                    );
                }
            }
            continue;
        }

        let mut dx = dx;
        let mut oy0 = 0;
        while oy0 < g.oh {
            let rows = g.block_rows().min(g.oh - oy0);
            let (p0, len) = (oy0 * g.ow, rows * g.ow);
            if let Some(gw) = gw.as_mut() {
                g.im2col(x, oy0, rows, &mut cols);
                // SAFETY: dy block is o x len (row stride positions); cols read transposed
                // as len x kdim; gw is o x kdim.
                unsafe {
                    T::gemm(
                        g.o,
                        len,
                        kdim,
                        T::one(),
                        dy.as_ptr().add(p0),
                        positions as isize,
                        1,
                        cols.as_ptr(),
                        1,
                        len as isize,
                        T::one(),
                        gw.as_mut_ptr(),
                        kdim as isize,
                        1,
                    );
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                // SAFETY: w read transposed as kdim x o; dy block is o x len; gcols kdim x len.
                unsafe {
                    T::gemm(
                        kdim,
                        g.o,
                        len,
                        T::one(),
                        w.as_ptr(),
                        1,
                        kdim as isize,
                        dy.as_ptr().add(p0),
                        positions as isize,
                        1,
                        T::zero(),
                        gcols.as_mut_ptr(),
                        len as isize,
                        1,
                    );
                }
                g.col2im_add(&gcols, oy0, rows, dx);
            }
            oy0 += rows;
        }
    }

    finish_grads(is, weight.shape(), g.o, gx, gw, gb)
}

fn finish_grads<T: Element>(
    input: Shape,
    weight: Shape,
    o: usize,
    gx: Option<Vec<T>>,
    gw: Option<Vec<T>>,
    gb: Option<Vec<T>>,
) -> Result<RawConvGrads<T>> {
    let gx = gx.map(|v| Tensor::from_vec(input, v)).transpose()?;
    let gw = gw.map(|v| Tensor::from_vec(weight, v)).transpose()?;
    let gb = gb.map(|v| Tensor::from_vec(Shape::new(o, 1, 1, 1), v)).transpose()?;
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple loop, written without any of the lowering machinery above.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let k = ws.h;
        let oh = (xs.h + 2 * pad - k) / stride + 1;
        let ow = (xs.w + 2 * pad - k) / stride + 1;
        Tensor::from_fn(Shape::new(xs.n, ws.n, oh, ow), |n, o, i, j| {
            let mut acc = b[o];
            for c in 0..xs.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (i * stride + ky) as isize - pad as isize;
                        let ix = (j * stride + kx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                            continue;
                        }
                        acc += x.at(n, c, iy as usize, ix as usize) * w.at(o, c, ky, kx);
                    }
                }
            }
            acc
        })
    }

    fn ones_params(k: usize, pad: usize) -> ConvParams<f32> {
        ConvParams::new(Tensor::full(Shape::new(1, 1, k, k), 1.0), Tensor::zeros(Shape::new(1, 1, 1, 1)), 1, pad)
            .unwrap()
    }

    #[test]
    fn all_ones_box_sum() {
        let x = Tensor::full(Shape::new(1, 1, 3, 3), 1.0f32);
        let y = conv2d(&x, &ones_params(3, 1)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 3));
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (h, w) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, h, w), 4.0);
        }
        for (h, w) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert_eq!(y.at(0, 0, h, w), 6.0);
        }
    }

    #[test]
    fn identity_pointwise_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::uniform(Shape::new(2, 4, 5, 7), -1.0, 1.0, &mut rng);
        let w = Tensor::from_fn(Shape::new(4, 4, 1, 1), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        let p = ConvParams::new(w, Tensor::zeros(Shape::new(4, 1, 1, 1)), 1, 0).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::uniform(Shape::new(2, 4, 8, 8), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(Shape::new(8, 4, 3, 3), -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(Shape::new(8, 1, 1, 1), -1.0, 1.0, &mut rng);
        let expected = naive_conv(&x, &w, b.data(), 1, 1);
        let p = ConvParams::new(w.cast::<f32>(), b.cast::<f32>(), 1, 1).unwrap();
        let got = conv2d(&x.cast::<f32>(), &p).unwrap();
        assert!(got.cast::<f64>().max_abs_diff(&expected) < 1e-5);
    }

    #[test]
    fn large_input_spans_several_column_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::uniform(Shape::new(1, 2, 40, 37), -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut rng);
        let b = vec![0.1, -0.2, 0.3];
        let expected = naive_conv(&x, &w, &b, 2, 1);
        let p = ConvParams::new(w.clone(), Tensor::from_vec(Shape::new(3, 1, 1, 1), b).unwrap(), 2, 1).unwrap();
        assert!(conv2d(&x, &p).unwrap().max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn channel_mismatch_is_a_configuration_error() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let err = conv2d(&x, &ones_params(3, 1)).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
        let tiny = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        assert!(matches!(conv2d(&tiny, &ones_params(3, 0)), Err(crate::Error::Config(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f32>::uniform(Shape::new(1, 2, 6, 6), -1.0, 1.0, &mut rng);
        let p = ConvParams::init(2, 3, 3, 1, 1, &mut rng);
        let gy = Tensor::zeros(Shape::new(1, 3, 6, 6));
        let g = conv2d_backward(&gy, &x, &p).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_upstream_stamps_flipped_kernel() {
        let w = Tensor::from_fn(Shape::new(1, 1, 3, 3), |_, _, h, w| (h * 3 + w + 1) as f32);
        let p = ConvParams::new(w.clone(), Tensor::zeros(Shape::new(1, 1, 1, 1)), 1, 1).unwrap();
        let x = Tensor::zeros(Shape::new(1, 1, 5, 5));
        let mut gy = Tensor::zeros(Shape::new(1, 1, 5, 5));
        gy.set(0, 0, 2, 2, 1.0);
        let g = conv2d_backward(&gy, &x, &p).unwrap();
        for dy in 0..3 {
            for dx in 0..3 {
                // input (1+dy, 1+dx) reaches output (2,2) through kernel tap (dy, dx)
                assert_eq!(g.input.at(0, 0, 1 + dy, 1 + dx), w.at(0, 0, dy, dx));
            }
        }
        assert_eq!(g.input.sum(), w.sum());
        assert_eq!(g.bias.data(), &[1.0]);

        let ones = ones_params(3, 1);
        let g = conv2d_backward(&gy, &x, &ones).unwrap();
        assert_eq!(g.input.sum(), 9.0);
    }

    #[test]
    fn backward_rejects_wrong_upstream_shape() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 5, 5));
        let gy = Tensor::zeros(Shape::new(1, 1, 4, 4));
        assert!(matches!(conv2d_backward(&gy, &x, &ones_params(3, 1)), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn backward_matches_finite_differences_in_f64() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(Shape::new(2, 2, 5, 6), -1.0, 1.0, &mut rng);
        let p = ConvParams::<f64>::init(2, 3, 3, 2, 1, &mut rng);
        let y = conv2d(&x, &p).unwrap();
        let probe = Tensor::<f64>::uniform(y.shape(), -1.0, 1.0, &mut rng);
        let loss = |x: &Tensor<f64>, p: &ConvParams<f64>| -> f64 {
            conv2d(x, p).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let g = conv2d_backward(&probe, &x, &p).unwrap();
        let h = 1e-6;
        for i in 0..x.numel() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp, &p) - loss(&xm, &p)) / (2.0 * h);
            assert!((fd - g.input.data()[i]).abs() < 1e-7);
        }
        for i in 0..p.weight.numel() {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp.weight.data_mut()[i] += h;
            pm.weight.data_mut()[i] -= h;
            let fd = (loss(&x, &pp) - loss(&x, &pm)) / (2.0 * h);
            assert!((fd - g.weight.data()[i]).abs() < 1e-7);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn output_shape_follows_formula(
            h in 1usize..12, w in 1usize..12, k in prop::sample::select(vec![1usize, 3, 5]),
            s in 1usize..4, p in 0usize..3, c in 1usize..3, o in 1usize..3,
        ) {
            prop_assume!(h + 2 * p >= k && w + 2 * p >= k);
            let x = Tensor::<f64>::full(Shape::new(1, c, h, w), 0.5);
            let params = ConvParams::<f64>::new(
                Tensor::full(Shape::new(o, c, k, k), 0.25),
                Tensor::zeros(Shape::new(o, 1, 1, 1)),
                s,
                p,
            ).unwrap();
            let y = conv2d(&x, &params).unwrap();
            prop_assert_eq!(y.shape(), Shape::new(1, o, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1));
            let expected = naive_conv(&x, &params.weight, &vec![0.0; o], s, p);
            prop_assert!(y.max_abs_diff(&expected) < 1e-12);
        }

        #[test]
        fn linear_in_input_without_bias(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Shape::new(1, 2, 6, 5);
            let a = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
            let b = Tensor::<f32>::uniform(s, -1.0, 1.0, &mut rng);
            let mut p = ConvParams::<f32>::init(2, 3, 3, 1, 1, &mut rng);
            p.bias = Tensor::zeros(p.bias.shape());
            let (al, be) = (alpha as f32, beta as f32);
            let mix = Tensor::from_vec(s, a.data().iter().zip(b.data()).map(|(x, y)| al * x + be * y).collect()).unwrap();
            let lhs = conv2d(&mix, &p).unwrap();
            let (ca, cb) = (conv2d(&a, &p).unwrap(), conv2d(&b, &p).unwrap());
            let rhs = Tensor::from_vec(lhs.shape(), ca.data().iter().zip(cb.data()).map(|(x, y)| al * x + be * y).collect()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-5);
        }
    }
}
