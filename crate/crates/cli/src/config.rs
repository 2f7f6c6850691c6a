//! Run configuration: preset defaults, then the config file, then `--set` overrides.

use std::path::{Path, PathBuf};

use oucd_core::metrics::{ExtractorSource, LossConfig, DEFAULT_EXTRACTOR_SEED, DEFAULT_WIDTHS};
use oucd_core::model::{ArchConfig, Preset, Variant};
use oucd_core::rain::RainParams;
use oucd_core::train::TrainConfig;
use oucd_core::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Name of the merged configuration written next to every output.
pub const CONFIG_FILE: &str = "config.toml";

/// Keys that may be set even though the defaults leave them out.
const OPTIONAL_KEYS: [&str; 3] = ["train.max_steps", "train.grad_clip", "loss.extractor_weights"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub variant: Variant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr_schedule: Vec<(u64, f64)>,
    pub total_epochs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    pub log_every: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub perceptual_layers: Vec<usize>,
    pub extractor_seed: u64,
    pub extractor_widths: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor_weights: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset root holding `clean/`, `rainy/` and `manifest.txt`.
    pub dir: PathBuf,
    /// Train, validation and test shares used when synthesizing a dataset.
    pub fractions: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossSection,
    pub rain: RainParams,
    pub data: DataSection,
}

impl RunConfig {
    pub fn defaults(preset: Preset) -> RunConfig {
        let t = TrainConfig::preset(preset);
        RunConfig {
            seed: 0,
            model: ModelSection { preset, variant: Variant::Oucd },
            train: TrainSection {
                batch_size: t.batch_size,
                patch_size: t.patch_size,
                lr_schedule: t.lr_schedule,
                total_epochs: t.total_epochs,
                max_steps: None,
                grad_clip: None,
                log_every: t.log_every,
            },
            loss: LossSection {
                lambda: t.loss.lambda,
                perceptual_layers: t.loss.perceptual_layers,
                extractor_seed: DEFAULT_EXTRACTOR_SEED,
                extractor_widths: DEFAULT_WIDTHS,
                extractor_weights: None,
            },
            rain: RainParams::default(),
            data: DataSection { dir: PathBuf::from("data"), fractions: [0.8, 0.1, 0.1] },
        }
    }

    /// Merges `file` (if any) and `overrides` over the defaults of the selected preset.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut layered = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
            }
            None => Table::new(),
        };
        let parsed = overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>>>()?;
        for (key, value) in &parsed {
            set_path(&mut layered, key, value.clone())?;
        }

        let preset = match layered.get("model").and_then(|m| m.get("preset")) {
            Some(v) => v
                .clone()
                .try_into::<Preset>()
                .map_err(|_| Error::Config(format!("model.preset must be \"small\" or \"canonical\", got {v}")))?,
            None => Preset::Small,
        };
        let mut merged = Table::try_from(RunConfig::defaults(preset)).expect("defaults serialize");
        for (key, _) in &parsed {
            check_known(&merged, key)?;
        }
        merge(&mut merged, layered);
        let cfg: RunConfig =
            Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.rain.validate()?;
        let sum: f64 = self.data.fractions.iter().sum();
        if self.data.fractions.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "data.fractions {:?} must be non-negative and sum to 1",
                self.data.fractions
            )));
        }
        Ok(())
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig::preset(self.model.preset).with_variant(self.model.variant)
    }

    pub fn train_config(&self) -> TrainConfig {
        let extractor = match &self.loss.extractor_weights {
            Some(path) => ExtractorSource::WeightFile(path.clone()),
            None => ExtractorSource::Seeded { seed: self.loss.extractor_seed, widths: self.loss.extractor_widths },
        };
        TrainConfig {
            arch: self.arch(),
            batch_size: self.train.batch_size,
            patch_size: self.train.patch_size,
            lr_schedule: self.train.lr_schedule.clone(),
            total_epochs: self.train.total_epochs,
            max_steps: self.train.max_steps,
            loss: LossConfig { lambda: self.loss.lambda, perceptual_layers: self.loss.perceptual_layers.clone() },
            extractor,
            seed: self.seed,
            grad_clip: self.train.grad_clip,
            log_every: self.train.log_every,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// `section.key=value`; the value is read as a TOML literal, or as a bare string.
fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (key, value) =
        raw.split_once('=').ok_or_else(|| Error::Usage(format!("override {raw:?} is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Usage(format!("override {raw:?} has an empty key")));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

fn check_known(defaults: &Table, key: &str) -> Result<()> {
    if OPTIONAL_KEYS.contains(&key) {
        return Ok(());
    }
    let mut node = defaults;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        match node.get(*part) {
            Some(Value::Table(t)) if i + 1 < parts.len() => node = t,
            Some(v) if i + 1 == parts.len() && !v.is_table() => return Ok(()),
            _ => break,
        }
    }
    Err(Error::Usage(format!("unknown configuration key {key:?}")))
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut node = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            node.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = node.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Usage(format!("override {key:?} descends into a non-table value")))?;
    }
    Ok(())
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        for preset in [Preset::Small, Preset::Canonical] {
            let cfg = RunConfig::defaults(preset);
            let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn overrides_win_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n[train]\nbatch_size = 4\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &set(&["train.batch_size=1", "loss.lambda=0"])).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.train.batch_size, 1);
        assert_eq!(cfg.loss.lambda, 0.0);
        assert_eq!(cfg.train.patch_size, 32);
    }

    #[test]
    fn preset_override_switches_the_defaults() {
        let cfg = RunConfig::load(None, &set(&["model.preset=canonical"])).unwrap();
        assert_eq!(cfg.train.patch_size, 128);
        assert!(cfg.arch().is_canonical());
    }

    #[test]
    fn strings_and_optional_keys() {
        let cfg = RunConfig::load(None, &set(&["model.variant=oucd_no_msff", "train.max_steps=5", "data.dir=/tmp/x"]))
            .unwrap();
        assert_eq!(cfg.model.variant, Variant::OucdNoMsff);
        assert_eq!(cfg.train.max_steps, Some(5));
        assert_eq!(cfg.data.dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.train_config().max_steps, Some(5));
    }

    #[test]
    fn unknown_override_key_is_a_usage_error() {
        for bad in ["train.bogus=1", "nope=2", "train=3", "rain.seed=4"] {
            let err = RunConfig::load(None, &set(&[bad])).unwrap_err();
            assert!(matches!(err, Error::Usage(_)), "{bad}: {err}");
        }
        assert!(matches!(RunConfig::load(None, &set(&["no-equals"])), Err(Error::Usage(_))));
    }

    #[test]
    fn unknown_file_key_and_bad_values_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nbogus = 1\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&path), &[]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &set(&["train.patch_size=30"])), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &set(&["data.fractions=[0.5, 0.1, 0.1]"])), Err(Error::Config(_))));
    }

    #[test]
    fn written_config_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::load(None, &set(&["seed=9", "train.grad_clip=1.5"])).unwrap();
        let path = cfg.write_to(dir.path()).unwrap();
        assert_eq!(RunConfig::load(Some(&path), &[]).unwrap(), cfg);
    }
}
