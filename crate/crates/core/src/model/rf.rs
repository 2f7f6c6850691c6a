//! Receptive field of a conv block with respect to the input image, counting only the
//! resampling layers: every max-pool doubles it, every x2 upsampling halves it.

use super::config::BranchKind;
use crate::error::{usage_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RfQuery {
    pub branch: BranchKind,
    /// 1-based conv block index.
    pub layer: usize,
    /// Side of the conv kernel.
    pub kernel: usize,
}

/// Side length of the receptive field, in input pixels.
pub fn receptive_field(q: RfQuery) -> Result<f64> {
    if q.layer == 0 || q.kernel == 0 {
        return Err(usage_err!(
            "receptive field needs layer >= 1 and kernel >= 1, got layer {} kernel {}",
            q.layer,
            q.kernel
        ));
    }
    let e = (q.layer - 1) as i32;
    let scale = match q.branch {
        BranchKind::Undercomplete => 2f64.powi(e),
        BranchKind::Overcomplete => 0.5f64.powi(e),
    };
    Ok(scale * q.kernel as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfRow {
    pub layer: usize,
    pub undercomplete: f64,
    pub overcomplete: f64,
}

/// Receptive fields of blocks `1..=layers` for both branches.
pub fn rf_table(layers: usize, kernel: usize) -> Result<Vec<RfRow>> {
    (1..=layers)
        .map(|layer| {
            let q = |branch| RfQuery { branch, layer, kernel };
            Ok(RfRow {
                layer,
                undercomplete: receptive_field(q(BranchKind::Undercomplete))?,
                overcomplete: receptive_field(q(BranchKind::Overcomplete))?,
            })
        })
        .collect()
}

pub fn render_rf_table(rows: &[RfRow], kernel: usize) -> String {
    let mut out = format!("receptive field side (k = {kernel})\nblock  undercomplete  overcomplete\n");
    for r in rows {
        out.push_str(&format!("{:>5}  {:>13}  {:>12}\n", r.layer, r.undercomplete, r.overcomplete));
    }
    out
}
