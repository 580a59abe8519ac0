//! Run configuration: one TOML file with a section per stage.
//!
//! Unknown keys are rejected. The only environment override is
//! `PRFDR_OUT_DIR`, which replaces `paths.out_dir`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::SyntheticSpec;
use crate::encoder::EncoderConfig;
use crate::retrieval::PrfConfig;
use crate::train::TrainConfig;

pub const OUT_DIR_ENV: &str = "PRFDR_OUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Where every artifact is written.
    pub out_dir: PathBuf,
    /// Existing benchmark directory; empty means generate the synthetic one.
    pub data_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), data_dir: PathBuf::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    pub min_count: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { min_count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub baseline: TrainConfig,
    pub prf: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            baseline: TrainConfig { k: 0, negatives: 32, ..TrainConfig::default() },
            prf: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Feedback depths trained and evaluated; 0 is the control.
    pub ks: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { ks: vec![0, 1, 2, 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Test queries rendered on the highlight page.
    pub highlight_queries: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { highlight_queries: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for parameter initialization.
    pub seed: u64,
    pub paths: Paths,
    pub synthetic: SyntheticSpec,
    pub vocab: VocabConfig,
    /// `vocab_size = 0` takes the size of the built vocabulary.
    pub model: EncoderConfig,
    pub train: TrainSection,
    pub prf: PrfConfig,
    pub ablation: AblationConfig,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            paths: Paths::default(),
            synthetic: SyntheticSpec::default(),
            vocab: VocabConfig::default(),
            model: EncoderConfig::default(),
            train: TrainSection::default(),
            prf: PrfConfig::default(),
            ablation: AblationConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a file that may set any subset of keys. Omitted keys take the
    /// values of `RunConfig::default()`, so the baseline section keeps its own
    /// defaults even when only some of its keys are given.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let parse_err = |e: &dyn std::fmt::Display| ConfigError::Parse { path: origin.to_string(), msg: e.to_string() };
        let user: toml::Table = toml::from_str(text).map_err(|e| parse_err(&e))?;
        let mut merged = toml::Table::try_from(RunConfig::default()).expect("config serializes");
        overlay(&mut merged, user);
        let config: RunConfig = toml::Value::Table(merged).try_into().map_err(|e| parse_err(&e))?;
        config.checked()
    }

    /// Loads a file, or the built-in defaults for the name `default`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let p = path.as_ref();
        let mut config = if p == Path::new("default") {
            RunConfig::default().checked()?
        } else {
            let text = fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
            Self::from_toml(&text, &p.display().to_string())?
        };
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            config.paths.out_dir = PathBuf::from(dir);
        }
        Ok(config)
    }

    fn checked(self) -> Result<Self, ConfigError> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Every violation, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        errs.extend(self.synthetic.validate());
        let model = EncoderConfig { vocab_size: self.model.vocab_size.max(1), ..self.model };
        errs.extend(model.validate().into_iter().map(|e| format!("model: {e}")));
        errs.extend(self.train.baseline.validate("train.baseline"));
        errs.extend(self.train.prf.validate("train.prf"));
        errs.extend(self.prf.validate());
        if self.train.prf.k != self.prf.k {
            log::debug!("evaluating at k={} with an encoder trained at k={}", self.prf.k, self.train.prf.k);
        }
        if self.vocab.min_count == 0 {
            errs.push("vocab.min_count must be positive".into());
        }
        if self.ablation.ks.iter().any(|&k| k > self.prf.first_pass_depth) {
            errs.push("ablation.ks must not exceed prf.first_pass_depth".into());
        }
        errs
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Short SHA-256 prefix of the resolved config, excluding the output
    /// directory so relocating a run does not change it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.out_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = RunConfig::default();
        assert!(c.validate().is_empty(), "{:?}", c.validate());
        let back = RunConfig::from_toml(&c.to_toml(), "x").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_toml("[model]\nlayerz = 3\n", "cfg.toml").unwrap_err();
        assert!(e.to_string().contains("layerz"), "{e}");
        let e = RunConfig::from_toml("bogus = 1\n", "cfg.toml").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn all_violations_are_listed() {
        let text = "[model]\ndim = 10\nheads = 4\n[train.prf]\nbatch_size = 0\n[synthetic]\np_topic = 2.0\n";
        match RunConfig::from_toml(text, "c").unwrap_err() {
            ConfigError::Invalid(errs) => {
                assert!(errs.len() >= 3, "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("batch_size")));
                assert!(errs.iter().any(|e| e.contains("p_topic")));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn hash_tracks_content_not_out_dir() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 12);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml("seed = 9\n[prf]\nk = 2\n", "c").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.prf.k, 2);
        assert_eq!(c.model, EncoderConfig::default());
        let c = RunConfig::from_toml("[train.baseline]\nseed = 3\n", "c").unwrap();
        assert_eq!(c.train.baseline, TrainConfig { seed: 3, ..RunConfig::default().train.baseline });
    }
}
