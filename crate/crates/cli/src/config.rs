//! Run configuration: defaults, then a `key = value` file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use mbtnet::data::{DatasetSpec, SynthConfig, DATASET_KEYS, SYNTH_KEYS};
use mbtnet::kv::KvFile;
use mbtnet::model::{ModelConfig, MODEL_KEYS};
use mbtnet::supervision::MaskConfig;
use mbtnet::trainer::{TrainConfig, TRAIN_KEYS};

use crate::error::{CliError, CliResult};

pub const RUN_CONFIG_NAME: &str = "run.conf";

const MASK_KEYS: &[&str] = &["canny_sigma", "canny_ksize", "canny_low", "canny_high", "body_sigma", "body_ksize"];

/// Flags shared by every command that builds or trains a model.
#[derive(Args, Clone, Debug, Default)]
pub struct ModelFlags {
    /// Key-value configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of transformer stage pairs, 0..=4.
    #[arg(long)]
    pub tr_depth: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Four comma-separated stage widths.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub widths: Option<Vec<usize>>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub span: Option<usize>,
    /// Drop the body and edge branches; the final head reads the decoder feature.
    #[arg(long)]
    pub no_body_edge: bool,
}

impl ModelFlags {
    /// True when any flag touching the model architecture was given.
    pub fn touches_model(&self) -> bool {
        self.config.is_some()
            || self.tr_depth.is_some()
            || self.widths.is_some()
            || self.heads.is_some()
            || self.span.is_some()
            || self.no_body_edge
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub dataset: DatasetSpec,
    pub masks: MaskConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            dataset: DatasetSpec::default(),
            masks: MaskConfig::default(),
        }
    }
}

fn without(kv: KvFile, key: &str) -> KvFile {
    KvFile::from_pairs(kv.entries().iter().filter(|(k, _)| k != key).map(|(k, v)| (k.clone(), v)))
}

impl RunConfig {
    pub fn to_kv(&self) -> KvFile {
        let m = &self.masks;
        let masks = KvFile::from_pairs([
            ("canny_sigma", m.canny.sigma.to_string()),
            ("canny_ksize", m.canny.ksize.to_string()),
            ("canny_low", m.canny.low.to_string()),
            ("canny_high", m.canny.high.to_string()),
            ("body_sigma", m.body.sigma.to_string()),
            ("body_ksize", m.body.ksize.to_string()),
        ]);
        let mut kv = KvFile::from_pairs([("seed", self.seed)]);
        kv.merge(&self.model.to_kv().prefixed("model"));
        kv.merge(&without(self.train.to_kv(), "seed").prefixed("train"));
        kv.merge(&without(self.synth.to_kv(), "seed").prefixed("synth"));
        kv.merge(&self.dataset.to_kv().prefixed("data"));
        kv.merge(&masks.prefixed("masks"));
        kv
    }

    pub fn apply_kv(&mut self, kv: &KvFile) -> CliResult<()> {
        let known: Vec<String> = std::iter::once("seed".to_owned())
            .chain(MODEL_KEYS.iter().map(|k| format!("model.{k}")))
            .chain(TRAIN_KEYS.iter().filter(|&&k| k != "seed").map(|k| format!("train.{k}")))
            .chain(SYNTH_KEYS.iter().filter(|&&k| k != "seed").map(|k| format!("synth.{k}")))
            .chain(DATASET_KEYS.iter().map(|k| format!("data.{k}")))
            .chain(MASK_KEYS.iter().map(|k| format!("masks.{k}")))
            .collect();
        let known: Vec<&str> = known.iter().map(String::as_str).collect();
        kv.reject_unknown(&known)?;
        if let Some(seed) = kv.value("seed")? {
            self.seed = seed;
        }
        self.model.apply_kv(&kv.section("model"))?;
        self.train.apply_kv(&kv.section("train"))?;
        self.synth.apply_kv(&kv.section("synth"))?;
        self.dataset.apply_kv(&kv.section("data"))?;
        let masks = kv.section("masks");
        let m = &mut self.masks;
        macro_rules! take {
            ($($key:literal => $slot:expr),*) => {
                $(if let Some(v) = masks.value($key)? {
                    $slot = v;
                })*
            };
        }
        take!(
            "canny_sigma" => m.canny.sigma,
            "canny_ksize" => m.canny.ksize,
            "canny_low" => m.canny.low,
            "canny_high" => m.canny.high,
            "body_sigma" => m.body.sigma,
            "body_ksize" => m.body.ksize
        );
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(&KvFile::load(path)?)?;
        cfg.finish()?;
        Ok(cfg)
    }

    /// Defaults, then `--config`, then the remaining flags.
    pub fn from_flags(flags: &ModelFlags) -> CliResult<Self> {
        let mut cfg = Self::default();
        if let Some(path) = &flags.config {
            cfg.apply_kv(&KvFile::load(path)?)?;
        }
        cfg.apply_flags(flags)?;
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn apply_flags(&mut self, flags: &ModelFlags) -> CliResult<()> {
        if let Some(v) = flags.seed {
            self.seed = v;
        }
        if let Some(v) = flags.tr_depth {
            self.model.tr_depth = v;
        }
        if let Some(v) = flags.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = &flags.widths {
            self.model.widths = v
                .as_slice()
                .try_into()
                .map_err(|_| CliError::usage(format!("--widths needs 4 values, got {}", v.len())))?;
        }
        if let Some(v) = flags.heads {
            self.model.heads = v;
        }
        if let Some(v) = flags.span {
            self.model.span = v;
        }
        if flags.no_body_edge {
            self.model.body_edge = false;
        }
        Ok(())
    }

    /// Propagates the master seed and the body/edge switch, then validates.
    pub fn finish(&mut self) -> CliResult<()> {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        if !self.model.body_edge {
            self.train.weights.body = 0.0;
            self.train.weights.edge = 0.0;
        }
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.dataset.validate(&self.synth)?;
        self.masks.canny.validate()?;
        self.masks.body.validate()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        std::fs::write(dir.join(RUN_CONFIG_NAME), self.to_kv().render())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = RunConfig { seed: 7, ..Default::default() };
        cfg.model.tr_depth = 3;
        cfg.train.epochs = 4;
        cfg.synth.cells = 30;
        cfg.dataset.patch_size = 32;
        cfg.masks.body.sigma = 1.5;
        cfg.finish().unwrap();
        let mut back = RunConfig::default();
        back.apply_kv(&cfg.to_kv()).unwrap();
        back.finish().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "seed = 3\nmodel.tr_depth = 1\ntrain.epochs = 9\n").unwrap();
        let flags = ModelFlags {
            config: Some(path),
            tr_depth: Some(4),
            no_body_edge: true,
            ..Default::default()
        };
        let cfg = RunConfig::from_flags(&flags).unwrap();
        assert_eq!((cfg.seed, cfg.model.tr_depth, cfg.train.epochs), (3, 4, 9));
        assert_eq!((cfg.train.weights.body, cfg.train.weights.edge), (0.0, 0.0));
        assert_eq!(cfg.train.seed, 3);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let kv = KvFile::parse("seed = 1\nmodel.depth = 2\n", "x.conf").unwrap();
        let err = RunConfig::default().apply_kv(&kv).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("model.depth"), "{err}");
    }
}
