use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::groupquant::{GroupCalibration, GroupConfig, KMeansInit};
use crate::quantizers::{Denominator, LinearConfig, OffsetForm, MAX_BITS, MIN_BITS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationPolicy {
    #[serde(default = "default_bits")]
    pub bits: u32,
    #[serde(default = "default_groups")]
    pub groups: usize,
    #[serde(default)]
    pub denominator: Denominator,
    #[serde(default)]
    pub offset_form: OffsetForm,
    #[serde(default)]
    pub calibration: GroupCalibration,
}

impl Default for ActivationPolicy {
    fn default() -> Self {
        Self {
            bits: default_bits(),
            groups: default_groups(),
            denominator: Denominator::default(),
            offset_form: OffsetForm::default(),
            calibration: GroupCalibration::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionPolicy {
    #[serde(default = "default_bits")]
    pub bits: u32,
    /// Per-matrix scale at inference; otherwise a running-minmax static scale.
    #[serde(default = "yes")]
    pub dynamic: bool,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "yes")]
    pub has_start_token: bool,
}

impl Default for AttentionPolicy {
    fn default() -> Self {
        Self {
            bits: default_bits(),
            dynamic: true,
            momentum: default_momentum(),
            has_start_token: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsPolicy {
    /// Break activation errors down by quantization group.
    #[serde(default = "yes")]
    pub per_group: bool,
}

impl Default for MetricsPolicy {
    fn default() -> Self {
        Self { per_group: true }
    }
}

/// The JSON config file: everything that shapes a plan except file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantPolicy {
    #[serde(default)]
    pub activation: ActivationPolicy,
    #[serde(default)]
    pub attention: AttentionPolicy,
    #[serde(default)]
    pub metrics: MetricsPolicy,
    /// Seeds K-means initialization; absent means the deterministic quantile start.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Storage size of one scale or offset entry, for overhead accounting.
    #[serde(default = "default_param_bytes")]
    pub overhead_bytes_per_param: u64,
}

impl Default for QuantPolicy {
    fn default() -> Self {
        Self {
            activation: ActivationPolicy::default(),
            attention: AttentionPolicy::default(),
            metrics: MetricsPolicy::default(),
            seed: None,
            overhead_bytes_per_param: default_param_bytes(),
        }
    }
}

fn default_bits() -> u32 {
    8
}
fn default_groups() -> usize {
    8
}
fn default_momentum() -> f64 {
    0.95
}
fn default_param_bytes() -> u64 {
    4
}
fn yes() -> bool {
    true
}

impl QuantPolicy {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let policy: Self =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, bits) in [
            ("activation", self.activation.bits),
            ("attention", self.attention.bits),
        ] {
            if !(MIN_BITS..=MAX_BITS).contains(&bits) {
                return Err(Error::Validation(format!(
                    "{what} bits {bits} outside [{MIN_BITS}, {MAX_BITS}]"
                )));
            }
        }
        if self.activation.groups == 0 {
            return Err(Error::Validation(
                "activation groups must be at least 1".into(),
            ));
        }
        let m = self.attention.momentum;
        if !(m > 0.0 && m < 1.0) {
            return Err(Error::Validation(format!("momentum {m} outside (0, 1)")));
        }
        if self.overhead_bytes_per_param == 0 {
            return Err(Error::Validation(
                "overhead_bytes_per_param must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn group_config(&self) -> GroupConfig {
        GroupConfig {
            linear: LinearConfig {
                denominator: self.activation.denominator,
                offset_form: self.activation.offset_form,
            },
            calibration: self.activation.calibration,
            init: self.seed.map_or(KMeansInit::Quantile, KMeansInit::Random),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("policy serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub policy: QuantPolicy,
}

impl PipelineConfig {
    pub fn new(
        manifest: impl Into<PathBuf>,
        out_dir: impl Into<PathBuf>,
        policy: QuantPolicy,
    ) -> Self {
        Self {
            manifest: manifest.into(),
            out_dir: out_dir.into(),
            policy,
        }
    }
}
