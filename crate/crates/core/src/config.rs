//! Run configuration: one TOML document holding every tunable constant.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::TrainerConfig;
use crate::losses::LossWeights;
use crate::model::{CollapseRule, PropertyKind};
use crate::predict::{sha256_hex, VlmConfig};
use crate::propagate::PropagationConfig;
use crate::volume::{IntegrationMode, VolumeConfig};

/// File locations relative to an object directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub splat: PathBuf,
    /// Splat reconstructed without the geometry-aware losses, used by the `garl` ablation.
    pub splat_no_garl: PathBuf,
    /// Transforms JSON file, or a directory with `transforms.json` or a COLMAP text model.
    pub cameras: PathBuf,
    pub images: PathBuf,
    pub masks: PathBuf,
    pub embeddings: PathBuf,
    pub dictionary: PathBuf,
    pub ground_truth: PathBuf,
    pub vlm_cache: PathBuf,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            splat: "point_cloud.ply".into(),
            splat_no_garl: "point_cloud.no_garl.ply".into(),
            cameras: ".".into(),
            images: "images".into(),
            masks: "masks".into(),
            embeddings: "embeddings.json".into(),
            dictionary: "dictionary.json".into(),
            ground_truth: "ground_truth.json".into(),
            vlm_cache: "vlm_cache".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionarySource {
    /// Use the dictionary file when present, otherwise ask the model.
    #[default]
    Auto,
    File,
    Vlm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    pub property: PropertyKind,
    /// Range collapse rule; the property's default when absent.
    pub collapse: Option<CollapseRule>,
    pub source: DictionarySource,
    pub vlm: VlmConfig,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self { property: PropertyKind::Density, collapse: None, source: DictionarySource::Auto, vlm: VlmConfig::default() }
    }
}

impl PredictionConfig {
    pub fn collapse_rule(&self) -> CollapseRule {
        self.collapse.unwrap_or(self.property.default_collapse())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingBackend {
    #[default]
    Archive,
    Http,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackend,
    pub endpoint: String,
    /// Dimension of synthetic vectors.
    pub synthetic_dim: usize,
    pub timeout_secs: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { backend: EmbeddingBackend::Archive, endpoint: String::new(), synthetic_dim: 64, timeout_secs: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub background: [f64; 3],
    pub near_clip: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { background: [0.0; 3], near_clip: 0.01 }
    }
}

/// Pipeline stages that an ablation may switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Use the splat reconstructed without the geometry-aware losses.
    Garl,
    /// Propagate by spatial nearest neighbor instead of region features.
    Raft,
    /// Integrate by surface area × thickness instead of Gaussian volumes.
    Thickness,
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "garl" => Ok(Self::Garl),
            "raft" => Ok(Self::Raft),
            "thickness" => Ok(Self::Thickness),
            _ => Err(Error::Config(format!("unknown ablation `{s}` (expected garl, raft or thickness)"))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Garl => "garl",
            Self::Raft => "raft",
            Self::Thickness => "thickness",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub ablations: BTreeSet<Ablation>,
    pub paths: PathsConfig,
    pub render: RenderConfig,
    pub losses: LossWeights,
    pub features: TrainerConfig,
    pub prediction: PredictionConfig,
    pub embeddings: EmbeddingConfig,
    pub propagation: PropagationConfig,
    pub volume: VolumeConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.losses.validate()?;
        self.features.validate()?;
        self.propagation.validate()?;
        self.volume.validate()?;
        if !(self.render.near_clip > 0.0) {
            return Err(Error::Config("render.near_clip must be > 0".into()));
        }
        Ok(())
    }

    /// The configuration with the global seed pushed into every seeded stage and ablations applied.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.features.seed = self.seed;
        if self.ablations.contains(&Ablation::Thickness) {
            c.volume.mode = IntegrationMode::Thickness;
        }
        c
    }

    pub fn has(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Provenance block attached to every JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub ablations: BTreeSet<Ablation>,
    pub config: Config,
}

impl RunMetadata {
    pub fn new(config: &Config) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            seed: config.seed,
            ablations: config.ablations.clone(),
            config: config.clone(),
        }
    }
}
