//! Multi-channel SCG records and channel selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical SCG channel order. ECG is carried separately and always last on disk.
pub const CANONICAL_CHANNELS: [&str; 6] = ["acc_x", "acc_y", "acc_z", "gyr_x", "gyr_y", "gyr_z"];

/// Column name used for the reference ECG in record files.
pub const ECG_CHANNEL: &str = "ecg";

fn canonical_rank(name: &str) -> Option<usize> {
    CANONICAL_CHANNELS.iter().position(|c| *c == name)
}

/// One subject's multi-channel SCG recording, optionally with a synchronized ECG.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub subject_id: String,
    pub dataset_id: String,
    pub sample_rate_hz: f64,
    /// SCG channels in canonical order (`acc_x` .. `gyr_z`), names unique.
    pub channels: Vec<(String, Vec<f64>)>,
    /// Reference ECG at the same rate and length, when recorded.
    pub ecg: Option<Vec<f64>>,
}

impl Record {
    /// Build a record, sorting channels into canonical order and checking invariants:
    /// equal channel lengths >= 1, positive rate, unique recognized channel names.
    pub fn new(
        subject_id: impl Into<String>,
        dataset_id: impl Into<String>,
        sample_rate_hz: f64,
        mut channels: Vec<(String, Vec<f64>)>,
        ecg: Option<Vec<f64>>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Schema(format!(
                "sample_rate_hz must be positive, got {sample_rate_hz}"
            )));
        }
        if channels.is_empty() {
            return Err(Error::Schema("record declares no SCG channels".into()));
        }
        for (name, _) in &channels {
            if canonical_rank(name).is_none() {
                return Err(Error::Schema(format!(
                    "unrecognized channel name {name:?} (expected one of {CANONICAL_CHANNELS:?})"
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for (name, _) in &channels {
            if !seen.insert(name.clone()) {
                return Err(Error::Schema(format!("duplicate channel name {name:?}")));
            }
        }
        channels.sort_by_key(|(name, _)| canonical_rank(name).unwrap());

        let len = channels[0].1.len();
        if len == 0 {
            return Err(Error::EmptyRecord("channel has zero samples".into()));
        }
        for (name, samples) in &channels {
            if samples.len() != len {
                return Err(Error::Schema(format!(
                    "channel {name:?} has {} samples, expected {len}",
                    samples.len()
                )));
            }
        }
        if let Some(ecg) = &ecg {
            if ecg.len() != len {
                return Err(Error::Schema(format!(
                    "ecg has {} samples, expected {len}",
                    ecg.len()
                )));
            }
        }
        Ok(Record {
            subject_id: subject_id.into(),
            dataset_id: dataset_id.into(),
            sample_rate_hz,
            channels,
            ecg,
        })
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Duration of the recording in seconds.
    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_slice())
    }

    /// The dorso-ventral accelerometer axis used for AO labeling.
    pub fn acc_z(&self) -> Result<&[f64]> {
        self.channel("acc_z")
            .ok_or_else(|| Error::Schema(format!("record {} has no acc_z channel", self.subject_id)))
    }
}

/// Which sensor channels feed the model, mirroring the experiment table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSelection {
    /// z-axis accelerometer only.
    SingleZ,
    /// Tri-axial accelerometer.
    Acc3,
    /// Tri-axial gyroscope.
    Gyr3,
    /// All six channels.
    Acc3Gyr3,
}

impl ChannelSelection {
    /// Channel names this mode consumes, in canonical order.
    pub fn channel_names(&self) -> &'static [&'static str] {
        match self {
            ChannelSelection::SingleZ => &["acc_z"],
            ChannelSelection::Acc3 => &["acc_x", "acc_y", "acc_z"],
            ChannelSelection::Gyr3 => &["gyr_x", "gyr_y", "gyr_z"],
            ChannelSelection::Acc3Gyr3 => {
                &["acc_x", "acc_y", "acc_z", "gyr_x", "gyr_y", "gyr_z"]
            }
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channel_names().len()
    }

    /// Extract the selected channels from `record`, erroring if any is absent.
    pub fn select<'a>(&self, record: &'a Record) -> Result<Vec<&'a [f64]>> {
        self.channel_names()
            .iter()
            .map(|name| {
                record.channel(name).ok_or_else(|| {
                    Error::Schema(format!(
                        "channel mode {self:?} requires {name:?}, absent from record {}",
                        record.subject_id
                    ))
                })
            })
            .collect()
    }
}

impl std::fmt::Display for ChannelSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ChannelSelection::SingleZ => "single_z",
            ChannelSelection::Acc3 => "acc3",
            ChannelSelection::Gyr3 => "gyr3",
            ChannelSelection::Acc3Gyr3 => "acc3_gyr3",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ChannelSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_z" => Ok(ChannelSelection::SingleZ),
            "acc3" => Ok(ChannelSelection::Acc3),
            "gyr3" => Ok(ChannelSelection::Gyr3),
            "acc3_gyr3" => Ok(ChannelSelection::Acc3Gyr3),
            other => Err(Error::Config(format!(
                "unknown channel mode {other:?} (expected single_z | acc3 | gyr3 | acc3_gyr3)"
            ))),
        }
    }
}
