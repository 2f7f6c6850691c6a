//! Train/validation/test file lists.
//!
//! ```text
//! #seed=7 fractions=0.8,0.1,0.1
//! #split=train
//! 0003.png
//! #split=val
//! #split=test
//! ```
//!
//! Paths are relative to the dataset's `clean/` and `rainy/` directories.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{usage_err, Error, Result};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub splits: [Vec<String>; 3],
}

impl Manifest {
    pub fn files(&self, split: Split) -> &[String] {
        &self.splits[split as usize]
    }

    pub fn render(&self) -> String {
        let [a, b, c] = self.fractions;
        let mut out = format!("#seed={} fractions={a},{b},{c}\n", self.seed);
        for split in Split::ALL {
            out.push_str(&format!("#split={}\n", split.name()));
            for f in self.files(split) {
                out.push_str(f);
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Manifest> {
        let bad = |line: usize, what: &str| Error::Data(format!("manifest line {line}: {what}"));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty manifest"))?;
        let rest = header.strip_prefix("#seed=").ok_or_else(|| bad(1, "missing #seed= header"))?;
        let (seed, fractions) = rest.split_once(" fractions=").ok_or_else(|| bad(1, "missing fractions"))?;
        let seed = seed.parse().map_err(|_| bad(1, "seed is not an integer"))?;
        let parts = fractions
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(1, "fractions are not numbers"))?;
        let fractions: [f64; 3] = parts.try_into().map_err(|_| bad(1, "expected three fractions"))?;
        let mut splits: [Vec<String>; 3] = Default::default();
        let mut current: Option<usize> = None;
        for (i, line) in lines {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix("#split=") {
                let s = Split::ALL.iter().position(|s| s.name() == name).ok_or_else(|| bad(i + 1, "unknown split"))?;
                current = Some(s);
            } else {
                let s = current.ok_or_else(|| bad(i + 1, "file listed before any #split= line"))?;
                splits[s].push(line.to_string());
            }
        }
        Ok(Manifest { seed, fractions, splits })
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

/// Sorted PNG file names directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn validate_fractions(f: [f64; 3]) -> Result<()> {
    if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(usage_err!("split fractions {f:?} must be non-negative and sum to 1"));
    }
    Ok(())
}

/// Splits the PNGs in `dir/clean` by a seeded shuffle and writes `dir/manifest.txt`.
pub fn build_manifest(dir: &Path, fractions: [f64; 3], seed: u64) -> Result<Manifest> {
    validate_fractions(fractions)?;
    let clean: PathBuf = dir.join("clean");
    let mut names = list_pngs(&clean)?;
    if names.is_empty() {
        return Err(usage_err!("no PNG files in {}", clean.display()));
    }
    names.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "split")));
    let n = names.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut test = names.split_off(n_train + n_val);
    let mut val = names.split_off(n_train);
    let mut train = names;
    train.sort();
    val.sort();
    test.sort();
    let m = Manifest { seed, fractions, splits: [train, val, test] };
    m.write(&dir.join("manifest.txt"))?;
    Ok(m)
}
