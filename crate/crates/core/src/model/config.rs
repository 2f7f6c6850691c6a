//! Declarative description of the two branches, the fusion points and the ablation variant.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    /// Encoder upsamples, decoder pools back down.
    Overcomplete,
    /// Encoder pools, decoder upsamples (U-Net style).
    Undercomplete,
}

impl BranchKind {
    pub fn prefix(self) -> &'static str {
        match self {
            BranchKind::Overcomplete => "oc",
            BranchKind::Undercomplete => "uc",
        }
    }

    pub fn encoder_resample(self) -> Resample {
        match self {
            BranchKind::Overcomplete => Resample::Up2,
            BranchKind::Undercomplete => Resample::MaxPool2,
        }
    }

    pub fn decoder_resample(self) -> Resample {
        match self.encoder_resample() {
            Resample::Up2 => Resample::MaxPool2,
            Resample::MaxPool2 => Resample::Up2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Resample {
    Up2,
    MaxPool2,
}

impl Resample {
    /// log2 of the spatial scale change.
    pub fn log2_factor(self) -> i32 {
        match self {
            Resample::Up2 => 1,
            Resample::MaxPool2 => -1,
        }
    }
}

/// One layer row of a branch table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    MaxPool2,
    Upsample2,
    Relu,
    AddSkip,
    Conv1x1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Conv kinds only.
    pub filters: Option<usize>,
    pub kernel: Option<usize>,
    pub padding: Option<usize>,
}

impl LayerSpec {
    pub fn conv(filters: usize, kernel: usize) -> Self {
        LayerSpec {
            kind: if kernel == 1 { LayerKind::Conv1x1 } else { LayerKind::Conv },
            filters: Some(filters),
            kernel: Some(kernel),
            padding: Some(kernel / 2),
        }
    }

    pub fn bare(kind: LayerKind) -> Self {
        LayerSpec { kind, filters: None, kernel: None, padding: None }
    }
}

/// A conv block: 3x3 conv, then the resampling layer, then ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub filters: usize,
    pub resample: Resample,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub kind: BranchKind,
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

fn default_kernel() -> usize {
    3
}

impl BranchConfig {
    pub fn new(kind: BranchKind, encoder: Vec<usize>, decoder: Vec<usize>) -> Self {
        BranchConfig { kind, encoder, decoder, kernel: 3 }
    }

    pub fn encoder_blocks(&self) -> Vec<BlockSpec> {
        let resample = self.kind.encoder_resample();
        self.encoder.iter().map(|&filters| BlockSpec { filters, resample }).collect()
    }

    pub fn decoder_blocks(&self) -> Vec<BlockSpec> {
        let resample = self.kind.decoder_resample();
        self.decoder.iter().map(|&filters| BlockSpec { filters, resample }).collect()
    }

    pub fn depth(&self) -> usize {
        self.encoder.len()
    }

    /// Output channels of the branch.
    pub fn out_channels(&self) -> usize {
        *self.decoder.last().expect("validated branch has blocks")
    }

    /// Layer rows of the encoder followed by the decoder, as listed in the branch tables.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut rows = Vec::new();
        for block in self.encoder_blocks().into_iter().chain(self.decoder_blocks()) {
            rows.push(LayerSpec::conv(block.filters, self.kernel));
            rows.push(LayerSpec::bare(match block.resample {
                Resample::Up2 => LayerKind::Upsample2,
                Resample::MaxPool2 => LayerKind::MaxPool2,
            }));
            rows.push(LayerSpec::bare(LayerKind::Relu));
        }
        rows
    }

    /// Additive skips pair encoder block `i`'s convolution output with decoder block
    /// `depth + 1 - i`'s output, so the two must agree in channels and scale.
    pub fn validate(&self) -> Result<()> {
        let name = self.kind.prefix();
        let n = self.encoder.len();
        if n == 0 {
            return Err(config_err!("{name}: branch needs at least one block"));
        }
        if self.decoder.len() != n {
            return Err(config_err!("{name}: {} encoder blocks but {} decoder blocks", n, self.decoder.len()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(config_err!("{name}: kernel must be odd, got {}", self.kernel));
        }
        if self.encoder.iter().chain(&self.decoder).any(|&f| f == 0) {
            return Err(config_err!("{name}: filter counts must be positive"));
        }
        for j in 0..n {
            let mirror = self.encoder[n - 1 - j];
            if self.decoder[j] != mirror {
                return Err(config_err!(
                    "{name}: decoder block {} has {} filters but its skip from encoder block {} carries {}",
                    j + 1,
                    self.decoder[j],
                    n - j,
                    mirror
                ));
            }
        }
        Ok(())
    }

    /// Side lengths must be multiples of this. The overcomplete branch only pools what it
    /// upsampled first, so any size works there.
    pub fn required_divisor(&self) -> usize {
        match self.kind {
            BranchKind::Overcomplete => 1,
            BranchKind::Undercomplete => 1 << self.depth(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    UndercompleteOnly,
    OvercompleteOnly,
    OucdNoMsff,
    Oucd,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::UndercompleteOnly, Variant::OvercompleteOnly, Variant::OucdNoMsff, Variant::Oucd];

    pub fn uses_overcomplete(self) -> bool {
        self != Variant::UndercompleteOnly
    }

    pub fn uses_undercomplete(self) -> bool {
        self != Variant::OvercompleteOnly
    }

    pub fn uses_msff(self) -> bool {
        self == Variant::Oucd
    }

    pub fn key(self) -> &'static str {
        match self {
            Variant::UndercompleteOnly => "undercomplete_only",
            Variant::OvercompleteOnly => "overcomplete_only",
            Variant::OucdNoMsff => "oucd_no_msff",
            Variant::Oucd => "oucd",
        }
    }

    /// Row label used in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::UndercompleteOnly => "under complete UNet",
            Variant::OvercompleteOnly => "Overcomplete UNet",
            Variant::OucdNoMsff => "OUCD w/o MSFF block",
            Variant::Oucd => "OUCD w/ MSFF block",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Fusion of several feature scales into one: per-source bilinear downsampling to the
/// target size, a 1x1 conv to the target width, then an elementwise sum.
#[derive(Clone, Debug, PartialEq)]
pub struct MsffConfig {
    /// (spatial scale relative to the network input, channels) per source.
    pub source_scales: Vec<(f64, usize)>,
    pub target_scale: f64,
    pub target_channels: usize,
}

impl MsffConfig {
    /// Downsampling factor for each source.
    pub fn factors(&self) -> Result<Vec<usize>> {
        self.source_scales
            .iter()
            .map(|&(scale, _)| {
                let ratio = scale / self.target_scale;
                let rounded = ratio.round();
                if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 {
                    return Err(config_err!(
                        "fusion source at scale {scale} cannot be reduced to {} by an integer factor",
                        self.target_scale
                    ));
                }
                Ok(rounded as usize)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_channels == 0 || self.source_scales.is_empty() {
            return Err(config_err!("fusion block needs sources and a positive width"));
        }
        self.factors().map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Canonical,
    Small,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub variant: Variant,
    pub in_channels: usize,
    pub out_channels: usize,
    pub overcomplete: BranchConfig,
    pub undercomplete: BranchConfig,
}

impl ArchConfig {
    /// Full-width network: overcomplete 32-64-128, undercomplete 32-...-512.
    pub fn canonical() -> Self {
        ArchConfig {
            variant: Variant::Oucd,
            in_channels: 3,
            out_channels: 3,
            overcomplete: BranchConfig::new(BranchKind::Overcomplete, vec![32, 64, 128], vec![128, 64, 32]),
            undercomplete: BranchConfig::new(
                BranchKind::Undercomplete,
                vec![32, 64, 128, 256, 512],
                vec![512, 256, 128, 64, 32],
            ),
        }
    }

    /// Quarter-width variant of [`ArchConfig::canonical`] for CPU-scale experiments.
    pub fn small() -> Self {
        let mut cfg = Self::canonical();
        for branch in [&mut cfg.overcomplete, &mut cfg.undercomplete] {
            for f in branch.encoder.iter_mut().chain(branch.decoder.iter_mut()) {
                *f /= 4;
            }
        }
        cfg
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Canonical => Self::canonical(),
            Preset::Small => Self::small(),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn is_canonical(&self) -> bool {
        let c = Self::canonical();
        self.overcomplete == c.overcomplete
            && self.undercomplete == c.undercomplete
            && self.in_channels == 3
            && self.out_channels == 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(config_err!("channel counts must be positive"));
        }
        if self.overcomplete.kind != BranchKind::Overcomplete {
            return Err(config_err!("the overcomplete branch must have kind = \"overcomplete\""));
        }
        if self.undercomplete.kind != BranchKind::Undercomplete {
            return Err(config_err!("the undercomplete branch must have kind = \"undercomplete\""));
        }
        self.overcomplete.validate()?;
        self.undercomplete.validate()?;
        if self.variant.uses_overcomplete()
            && self.variant.uses_undercomplete()
            && self.overcomplete.out_channels() != self.undercomplete.out_channels()
        {
            return Err(config_err!(
                "branch outputs ({} and {} channels) cannot be added",
                self.overcomplete.out_channels(),
                self.undercomplete.out_channels()
            ));
        }
        if self.variant.uses_msff() {
            if self.undercomplete.depth() < 2 {
                return Err(config_err!("fusion needs at least two undercomplete blocks"));
            }
            self.msff_encoder().validate()?;
            self.msff_decoder().validate()?;
        }
        Ok(())
    }

    /// Side lengths must be multiples of this.
    pub fn required_divisor(&self) -> usize {
        let mut d = 1;
        if self.variant.uses_undercomplete() {
            d = d.max(self.undercomplete.required_divisor());
        }
        if self.variant.uses_overcomplete() {
            d = d.max(self.overcomplete.required_divisor());
        }
        d
    }

    /// Encoder-side fusion: every overcomplete encoder output, into the first undercomplete
    /// encoder block's output.
    pub fn msff_encoder(&self) -> MsffConfig {
        let mut scale = 1.0;
        let sources = self
            .overcomplete
            .encoder
            .iter()
            .map(|&c| {
                scale *= 2.0;
                (scale, c)
            })
            .collect();
        MsffConfig { source_scales: sources, target_scale: 0.5, target_channels: self.undercomplete.encoder[0] }
    }

    /// Decoder-side fusion: every overcomplete decoder output, into the undercomplete
    /// decoder features entering its last block.
    pub fn msff_decoder(&self) -> MsffConfig {
        let mut scale = 2f64.powi(self.overcomplete.depth() as i32);
        let sources = self
            .overcomplete
            .decoder
            .iter()
            .map(|&c| {
                scale /= 2.0;
                (scale, c)
            })
            .collect();
        let n = self.undercomplete.depth();
        MsffConfig { source_scales: sources, target_scale: 0.5, target_channels: self.undercomplete.decoder[n - 2] }
    }

    /// Names and shapes `(out, in, k, k)` of every trainable convolution, in a fixed order.
    pub fn conv_layout(&self) -> Vec<(String, [usize; 4])> {
        let mut out = Vec::new();
        let mut branch = |b: &BranchConfig| {
            let p = b.kind.prefix();
            let mut c = self.in_channels;
            for (i, &f) in b.encoder.iter().enumerate() {
                out.push((format!("{p}.enc.{}", i + 1), [f, c, b.kernel, b.kernel]));
                c = f;
            }
            for (j, &f) in b.decoder.iter().enumerate() {
                out.push((format!("{p}.dec.{}", j + 1), [f, c, b.kernel, b.kernel]));
                c = f;
            }
        };
        if self.variant.uses_overcomplete() {
            branch(&self.overcomplete);
        }
        if self.variant.uses_undercomplete() {
            branch(&self.undercomplete);
        }
        if self.variant.uses_msff() {
            for (side, cfg) in [("enc", self.msff_encoder()), ("dec", self.msff_decoder())] {
                for (k, &(_, c)) in cfg.source_scales.iter().enumerate() {
                    out.push((format!("msff.{side}.{}", k + 1), [cfg.target_channels, c, 1, 1]));
                }
            }
        }
        let fused = if self.variant.uses_overcomplete() {
            self.overcomplete.out_channels()
        } else {
            self.undercomplete.out_channels()
        };
        out.push(("head".to_string(), [self.out_channels, fused, 1, 1]));
        out
    }

    /// Trainable scalars, from the layout alone.
    pub fn param_count(&self) -> usize {
        self.conv_layout().iter().map(|(_, [o, i, kh, kw])| o * i * kh * kw + o).sum()
    }

    /// Stable text form used for fingerprinting.
    pub fn canonical_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "variant={};in={};out={};oc.k={};oc.enc={};oc.dec={};uc.k={};uc.enc={};uc.dec={}",
            self.variant.key(),
            self.in_channels,
            self.out_channels,
            self.overcomplete.kernel,
            list(&self.overcomplete.encoder),
            list(&self.overcomplete.decoder),
            self.undercomplete.kernel,
            list(&self.undercomplete.encoder),
            list(&self.undercomplete.decoder),
        )
    }

    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}
