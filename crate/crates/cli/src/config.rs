//! Run configuration files.
//!
//! Both files are TOML. Unknown keys are rejected. Relative paths resolve
//! against the directory holding the config file, and command-line flags
//! override whatever the file says.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thcm_core::ingestion::Stage1Config;
use thcm_core::synthetic::GeneratorConfig;
use thcm_core::training::TrainConfig;
use thcm_core::{Error, Result};

/// Config for `thcm generate`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub generator: GeneratorConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub cohort: Option<PathBuf>,
    pub icd_map: Option<PathBuf>,
    /// Keyword list; the bundled list when absent.
    pub keywords: Option<PathBuf>,
    pub headings: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[default]
    Hash,
    File,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default)]
    pub kind: EncoderKind,
    /// Embedding table for `kind = "file"`.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    #[default]
    Rule,
    Remote,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    #[serde(default)]
    pub kind: ExtractorKind,
    pub endpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Miscoverage levels for the calibration sweep.
    pub epsilons: Vec<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.05, 0.1, 0.2],
        }
    }
}

/// Config for `thcm train`, `thcm calibrate` and `thcm evaluate`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

impl GenerateConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_toml(path)?;
        resolve(&base_dir(path), &mut cfg.output_dir);
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_toml(path)?;
        let base = base_dir(path);
        let p = &mut cfg.paths;
        for field in [
            &mut p.cohort,
            &mut p.icd_map,
            &mut p.keywords,
            &mut p.headings,
            &mut p.output_dir,
        ] {
            resolve(&base, field);
        }
        resolve(&base, &mut cfg.encoder.path);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.encoder.kind == EncoderKind::File && self.encoder.path.is_none() {
            return Err(Error::Config("encoder.kind = \"file\" needs encoder.path".into()));
        }
        if self.extractor.kind == ExtractorKind::Remote && self.extractor.endpoint.is_none() {
            return Err(Error::Config(
                "extractor.kind = \"remote\" needs extractor.endpoint".into(),
            ));
        }
        if self.calibration.epsilons.is_empty() {
            return Err(Error::Config("calibration.epsilons is empty".into()));
        }
        for &e in self.calibration.epsilons.iter().chain([self.train.epsilon].iter()) {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Config(format!("epsilon must lie in (0, 1), got {e}")));
            }
        }
        if self.stage1.top_k == 0 {
            return Err(Error::Config("stage1.top_k must be positive".into()));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("run"))
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::Config(format!("paths.{name} is not set")))
    }

    /// FNV-64 hex digest of the serialized config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        thcm_core::encoding::text_hash(&json)
    }
}
