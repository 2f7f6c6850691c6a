//! Binary parameter bundle. Little-endian throughout:
//!
//! ```text
//! "OUCD"  u32 version  u64 fingerprint  u64 epoch  u64 step
//! rng:    [u8; 32] seed  u64 stream  u128 word_pos
//! adam:   f64 beta1  f64 beta2  f64 eps  u64 step
//! u32 record count, then per record:
//!   u32 name length, name (UTF-8), u64 n, u64 c, u64 h, u64 w, n*c*h*w f32 values
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"OUCD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHeader {
    pub config: AdamConfig,
    pub step: u64,
}

impl Default for AdamHeader {
    fn default() -> Self {
        AdamHeader { config: AdamConfig::default(), step: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u64,
    pub epoch: u64,
    pub step: u64,
    pub rng: RngState,
    pub adam: AdamHeader,
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn new(fingerprint: u64) -> Self {
        Checkpoint {
            fingerprint,
            epoch: 0,
            step: 0,
            rng: RngState::default(),
            adam: AdamHeader::default(),
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.records.push(Record { name: name.into(), tensor });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|r| r.name == name).map(|r| &r.tensor)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let numel: usize = self.records.iter().map(|r| r.tensor.numel()).sum();
        let mut out = Vec::with_capacity(128 + 4 * numel + 64 * self.records.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [self.fingerprint, self.epoch, self.step] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let a = &self.adam.config;
        for v in [a.beta1, a.beta2, a.epsilon] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            for d in r.tensor.shape().dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in r.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes, not a checkpoint".into()));
        }
        let version = r.u32("version")?;
        if version > FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (this build reads up to {FORMAT_VERSION})"
            )));
        }
        if version == 0 {
            return Err(Error::Checkpoint("invalid format version 0".into()));
        }
        let fingerprint = r.u64("fingerprint")?;
        let epoch = r.u64("epoch")?;
        let step = r.u64("step")?;
        let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = r.u64("rng stream")?;
        let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
        let config =
            AdamConfig { beta1: r.f64("adam beta1")?, beta2: r.f64("adam beta2")?, epsilon: r.f64("adam eps")? };
        let adam_step = r.u64("adam step")?;
        let count = r.u32("record count")? as usize;
        let mut records = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let ctx = format!("record {i}");
            let len = r.u32(&format!("{ctx} name length"))? as usize;
            let name = String::from_utf8(r.take(len, &format!("{ctx} name"))?.to_vec())
                .map_err(|_| Error::Checkpoint(format!("{ctx}: name is not UTF-8")))?;
            let ctx = format!("record {i} ({name})");
            let mut dims = [0usize; 4];
            for d in dims.iter_mut() {
                *d = usize::try_from(r.u64(&format!("{ctx} shape"))?)
                    .map_err(|_| Error::Checkpoint(format!("{ctx}: shape overflows")))?;
            }
            let shape = Shape::try_new(dims[0], dims[1], dims[2], dims[3])
                .map_err(|_| Error::Checkpoint(format!("{ctx}: invalid shape {dims:?}")))?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Checkpoint(format!("{ctx}: shape overflows")))?;
            let raw = r.take(n, &format!("{ctx} data"))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let tensor = Tensor::from_vec(shape, data).expect("length matches shape");
            records.push(Record { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes after the last record", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            fingerprint,
            epoch,
            step,
            rng: RngState { seed, stream, word_pos },
            adam: AdamHeader { config, step: adam_step },
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated at {what}: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
