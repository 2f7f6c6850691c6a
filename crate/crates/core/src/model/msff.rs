//! Multi-scale feature fusion: bring several feature maps to one scale and width, then sum.

use crate::error::{config_err, Result};
use crate::tensor::{add, ConvParams};
use crate::tensor::{bilinear_resize, conv2d, Tape, Tensor, Var};

fn reduction(src: (usize, usize), target: (usize, usize)) -> Result<()> {
    let (sh, sw) = src;
    let (th, tw) = target;
    if sh < th || sw < tw || sh % th != 0 || sw % tw != 0 || sh / th != sw / tw {
        return Err(config_err!("fusion source {sh}x{sw} is not an integer multiple of target {th}x{tw}"));
    }
    Ok(())
}

/// Tape version: `convs[k]` is the (weight, bias) pair of the 1x1 conv for `sources[k]`.
pub fn msff_on_tape(tape: &mut Tape, sources: &[Var], convs: &[(Var, Var)], target: (usize, usize)) -> Result<Var> {
    if sources.is_empty() || sources.len() != convs.len() {
        return Err(config_err!("fusion has {} sources and {} projections", sources.len(), convs.len()));
    }
    let mut acc: Option<Var> = None;
    for (&src, &(w, b)) in sources.iter().zip(convs) {
        let s = tape.shape(src);
        reduction((s.h, s.w), target)?;
        let down = tape.resize(src, target.0, target.1)?;
        let proj = tape.conv2d(down, w, b, 1, 0)?;
        acc = Some(match acc {
            None => proj,
            Some(a) => tape.add(a, proj)?,
        });
    }
    Ok(acc.expect("at least one source"))
}

/// Eager version over plain tensors.
pub fn msff(sources: &[Tensor], convs: &[ConvParams], target: (usize, usize)) -> Result<Tensor> {
    if sources.is_empty() || sources.len() != convs.len() {
        return Err(config_err!("fusion has {} sources and {} projections", sources.len(), convs.len()));
    }
    let mut acc: Option<Tensor> = None;
    for (src, conv) in sources.iter().zip(convs) {
        let s = src.shape();
        reduction((s.h, s.w), target)?;
        if conv.kernel() != 1 {
            return Err(config_err!("fusion projections must be 1x1"));
        }
        let proj = conv2d(&bilinear_resize(src, target.0, target.1)?, conv)?;
        acc = Some(match acc {
            None => proj,
            Some(a) => add(&a, &proj)?,
        });
    }
    Ok(acc.expect("at least one source"))
}
