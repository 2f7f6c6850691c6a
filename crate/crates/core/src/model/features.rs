//! Writes intermediate feature maps as grayscale PNGs.

use std::path::{Path, PathBuf};

use super::network::Oucd;
use crate::error::{usage_err, Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Picks feature names matching a comma-separated selector. Each pattern is either an exact
/// name or a prefix followed by `*`. A pattern matching nothing is a usage error.
pub fn select_features(available: &[String], selector: &str) -> Result<Vec<String>> {
    let mut picked: Vec<String> = Vec::new();
    for pat in selector.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let matches: Vec<&String> = match pat.strip_suffix('*') {
            Some(prefix) => available.iter().filter(|n| n.starts_with(prefix)).collect(),
            None => available.iter().filter(|n| *n == pat).collect(),
        };
        if matches.is_empty() {
            return Err(usage_err!("selector {pat:?} matches no feature map; available: {}", available.join(", ")));
        }
        for m in matches {
            if !picked.contains(m) {
                picked.push(m.clone());
            }
        }
    }
    if picked.is_empty() {
        return Err(usage_err!("empty feature selector"));
    }
    Ok(picked)
}

#[derive(Clone, Debug)]
pub struct DumpedMap {
    pub layer: String,
    pub sample: usize,
    pub channel: usize,
    pub height: usize,
    pub width: usize,
    pub path: PathBuf,
    /// True when the map was constant and written as zeros.
    pub degenerate: bool,
}

fn normalize(plane: &[f32]) -> (Vec<u8>, bool) {
    let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return (vec![0; plane.len()], true);
    }
    let px = plane.iter().map(|&v| (((v - lo) / range) * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    (px, false)
}

fn write_gray(path: &Path, w: usize, h: usize, px: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(w as u32, h as u32, px).expect("buffer matches extent");
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Runs `network` on `y` and writes the selected maps, one PNG per sample and channel, into
/// `out_dir/<layer>/s<sample>_c<channel>.png`. `max_channels` caps channels per layer.
pub fn dump_feature_maps(
    network: &Oucd,
    y: &Tensor,
    selector: &str,
    out_dir: &Path,
    max_channels: Option<usize>,
) -> Result<Vec<DumpedMap>> {
    let mut tape = Tape::new();
    let bound = network.bind(&mut tape, false);
    let input = tape.constant(y.clone());
    let fwd = network.forward(&mut tape, &bound, input, None)?;
    let names: Vec<String> = fwd.features.iter().map(|(n, _)| n.clone()).collect();
    let picked = select_features(&names, selector)?;
    let mut written = Vec::new();
    for layer in picked {
        let var: Var = fwd.feature(&layer).expect("selected from the forward pass");
        let t = tape.value(var);
        let s = t.shape();
        let dir = out_dir.join(&layer);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let channels = max_channels.map_or(s.c, |m| m.min(s.c));
        for n in 0..s.n {
            for c in 0..channels {
                let start = s.offset(n, c, 0, 0);
                let (px, degenerate) = normalize(&t.data()[start..start + s.plane()]);
                if degenerate {
                    log::warn!("{layer} sample {n} channel {c} is constant; written as zeros");
                }
                let path = dir.join(format!("s{n}_c{c}.png"));
                write_gray(&path, s.w, s.h, px)?;
                written.push(DumpedMap {
                    layer: layer.clone(),
                    sample: n,
                    channel: c,
                    height: s.h,
                    width: s.w,
                    path,
                    degenerate,
                });
            }
        }
    }
    Ok(written)
}
