use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::data::{DomainShift, SyntheticSpec};
use crate::defense::DefenseConfig;
use crate::detection::GsConfig;
use crate::error::{Error, Result};
use crate::models::TARGET_BLOCKS;
use crate::nn::{OptimizerConfig, Precision};
use crate::protocol::{DriverKind, ServerBehavior, SessionConfig, Topology, TransportKind};

fn sgd() -> OptimizerConfig {
    OptimizerConfig::sgd(0.05, 0.9)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default)]
    pub transport: TransportKind,
    #[serde(default)]
    pub driver: DriverKind,
    /// Directory under the output root that receives the artifacts.
    pub output_dir: String,
}

fn default_precision() -> Precision {
    Precision::Fp32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub source: DataSource,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    /// CIFAR-10 binary file or directory of `*.bin` batches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cifar_path: Option<PathBuf>,
    #[serde(default = "default_private")]
    pub private_size: usize,
    #[serde(default = "default_aux")]
    pub aux_size: usize,
    #[serde(default = "default_test")]
    pub test_size: usize,
    /// Keep only these classes in the auxiliary set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_categories: Option<Vec<usize>>,
    /// Render the auxiliary set with this palette/texture shift (synthetic only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_shift: Option<DomainShift>,
}

fn default_private() -> usize {
    2048
}
fn default_aux() -> usize {
    512
}
fn default_test() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub split_point: usize,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub server_behavior: ServerBehavior,
    #[serde(default = "sgd")]
    pub client_optimizer: OptimizerConfig,
    #[serde(default = "sgd")]
    pub server_optimizer: OptimizerConfig,
    #[serde(default = "sgd")]
    pub top_optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    NoMkmmd,
    NoDisc,
    Untrained,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Self::NoMkmmd => "no_mkmmd",
            Self::NoDisc => "no_disc",
            Self::Untrained => "untrained",
        }
    }

    pub fn apply(self, base: &AttackConfig) -> AttackConfig {
        let mut c = base.clone();
        match self {
            Self::NoMkmmd => c.no_mkmmd = true,
            Self::NoDisc => c.no_disc = true,
            Self::Untrained => c.train_substitute = false,
        }
        c
    }
}

/// Extra attackers observing the same session for side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default)]
    pub variants: Vec<Baseline>,
}

/// Full description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    #[serde(default = "default_dataset")]
    pub dataset: DatasetSection,
    pub model: ModelSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default, skip_serializing_if = "BaselineSection::is_empty")]
    pub baselines: BaselineSection,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<GsConfig>,
}

impl BaselineSection {
    fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }
}

fn default_dataset() -> DatasetSection {
    toml::from_str("").expect("every dataset field has a default")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_value(value: toml::Value) -> Result<Self> {
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical (sorted-key) JSON form.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(&serde_json::to_value(self)?)?;
        Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.epochs == 0 || r.batch_size == 0 {
            return Err(Error::Config("run.epochs and run.batch_size must be positive".into()));
        }
        if r.output_dir.trim().is_empty() || Path::new(&r.output_dir).is_absolute() || r.output_dir.contains("..") {
            return Err(Error::Config("run.output_dir must be a non-empty relative path without '..'".into()));
        }
        let m = &self.model;
        if !(1..=TARGET_BLOCKS).contains(&m.split_point) {
            return Err(Error::Config(format!("model.split_point must be in 1..={TARGET_BLOCKS}")));
        }
        let d = &self.dataset;
        if d.private_size == 0 || d.test_size == 0 {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        match d.source {
            DataSource::Synthetic => {
                d.synthetic.validate()?;
                if d.cifar_path.is_some() {
                    return Err(Error::Config("dataset.cifar_path is only valid with source = \"cifar10\"".into()));
                }
            }
            DataSource::Cifar10 => {
                if d.cifar_path.is_none() {
                    return Err(Error::Config("dataset.cifar_path is required for cifar10".into()));
                }
                if d.aux_shift.is_some() {
                    return Err(Error::Config("dataset.aux_shift only applies to synthetic data".into()));
                }
            }
        }
        if let Some(keep) = &d.aux_categories {
            if keep.is_empty() {
                return Err(Error::Config("dataset.aux_categories must not be empty".into()));
            }
        }
        if let Some(a) = &self.attack {
            a.validate()?;
            if d.aux_size < 2 {
                return Err(Error::Config("an attack needs at least two auxiliary images".into()));
            }
        } else if !self.baselines.variants.is_empty() {
            return Err(Error::Config("baselines require an [attack] section".into()));
        }
        self.session().validate()
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig {
            topology: self.model.topology,
            split_point: self.model.split_point,
            batch_size: self.run.batch_size,
            epochs: self.run.epochs,
            max_iterations: self.run.max_iterations,
            client_optimizer: self.model.client_optimizer,
            server_optimizer: self.model.server_optimizer,
            top_optimizer: self.model.top_optimizer,
            transport: self.run.transport,
            driver: self.run.driver,
            server_behavior: self.model.server_behavior,
            defense: self.defense,
            monitor: self.detection,
            seed: self.run.seed,
        }
    }
}
