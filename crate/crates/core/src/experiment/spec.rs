//! Experiment specification: TOML file with `[section]` headers mirroring
//! the runner's configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::UNetConfig;
use crate::record::ChannelSelection;

use super::train::TrainingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Loso,
    CrossDataset,
    FineTune,
    Personalize,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Protocol::Loso => "loso",
            Protocol::CrossDataset => "cross_dataset",
            Protocol::FineTune => "fine_tune",
            Protocol::Personalize => "personalize",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub depth: usize,
    pub base_filters: usize,
    pub kernel_size: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            depth: 4,
            base_filters: 16,
            kernel_size: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    pub min_box_len: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams { min_box_len: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PersonalizeParams {
    /// Chronological fraction of each user's windows used for adaptation.
    pub split_fraction: f64,
}

impl Default for PersonalizeParams {
    fn default() -> Self {
        PersonalizeParams { split_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub protocol: Protocol,
    pub train_datasets: Vec<String>,
    pub test_dataset: String,
    pub channel_mode: ChannelSelection,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    42
}

/// Full experiment description, loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub training: TrainingParams,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub detect: DetectParams,
    #[serde(default)]
    pub personalize: PersonalizeParams,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("spec file: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.train_datasets.is_empty() {
            return Err(Error::Config("train_datasets is empty".into()));
        }
        if e.protocol == Protocol::Loso
            && (e.train_datasets.len() != 1 || e.train_datasets[0] != e.test_dataset)
        {
            return Err(Error::Config(
                "loso requires train_datasets == [test_dataset]".into(),
            ));
        }
        if !(0.0 < self.personalize.split_fraction && self.personalize.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "personalize split_fraction must be in (0, 1), got {}",
                self.personalize.split_fraction
            )));
        }
        self.unet_config().validate()
    }

    /// Architecture implied by the spec (channel mode fixes the input width).
    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            depth: self.model.depth,
            base_filters: self.model.base_filters,
            kernel_size: self.model.kernel_size,
            in_channels: self.experiment.channel_mode.channel_count(),
            input_length: 320,
        }
    }

    /// Hash of the canonical JSON serialization; names the run directory.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[experiment]
protocol = "loso"
train_datasets = ["clean"]
test_dataset = "clean"
channel_mode = "single_z"
seed = 7

[training]
batch_size = 16
learning_rate = 1e-3
max_epochs = 25
patience = 5

[model]
base_filters = 8
"#;

    #[test]
    fn parses_with_defaults() {
        let spec = ExperimentSpec::parse(SAMPLE).unwrap();
        assert_eq!(spec.experiment.seed, 7);
        assert_eq!(spec.training.batch_size, 16);
        assert_eq!(spec.model.depth, 4);
        assert_eq!(spec.model.base_filters, 8);
        assert_eq!(spec.detect.min_box_len, 2);
        assert_eq!(spec.unet_config().in_channels, 1);
    }

    #[test]
    fn loso_requires_matching_datasets() {
        let bad = SAMPLE.replace("test_dataset = \"clean\"", "test_dataset = \"other\"");
        assert!(ExperimentSpec::parse(&bad).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentSpec::parse(SAMPLE).unwrap();
        let b = ExperimentSpec::parse(SAMPLE).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = ExperimentSpec::parse(&SAMPLE.replace("seed = 7", "seed = 8")).unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn round_trips_through_toml() {
        let spec = ExperimentSpec::parse(SAMPLE).unwrap();
        let again = ExperimentSpec::parse(&spec.to_toml()).unwrap();
        assert_eq!(spec, again);
    }
}
