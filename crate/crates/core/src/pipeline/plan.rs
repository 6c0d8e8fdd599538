use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::Provenance;
use crate::attention::AttentionScale;
use crate::error::{Error, Result};
use crate::groupquant::GroupQuantScheme;
use crate::quantizers::{MAX_BITS, MIN_BITS};

/// Inference-time settings for one attention layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionPlan {
    pub layer: String,
    pub bits: u32,
    pub has_start_token: bool,
    /// Present for static calibration; absent means per-matrix scaling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_scale: Option<f32>,
}

impl AttentionPlan {
    pub fn scale(&self) -> AttentionScale {
        self.static_scale
            .map_or(AttentionScale::Dynamic, AttentionScale::Static)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerPlan {
    Activation(GroupQuantScheme),
    Attention(AttentionPlan),
}

impl LayerPlan {
    pub fn layer(&self) -> &str {
        match self {
            LayerPlan::Activation(s) => &s.layer,
            LayerPlan::Attention(a) => &a.layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerOverhead {
    pub layer: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadSummary {
    pub bytes_per_param: u64,
    pub total_bytes: u64,
    pub layers: Vec<LayerOverhead>,
}

impl OverheadSummary {
    pub fn from_layers(layers: &[LayerPlan], bytes_per_param: u64) -> Self {
        let layers: Vec<LayerOverhead> = layers
            .iter()
            .filter_map(|l| match l {
                LayerPlan::Activation(s) => Some(LayerOverhead {
                    layer: s.layer.clone(),
                    bytes: s.overhead_bytes(bytes_per_param),
                }),
                LayerPlan::Attention(_) => None,
            })
            .collect();
        Self {
            bytes_per_param,
            total_bytes: layers.iter().map(|l| l.bytes).sum(),
            layers,
        }
    }
}

/// Everything needed to fake-quantize a model's dumps, in manifest layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantPlan {
    pub provenance: Provenance,
    pub num_timesteps: usize,
    pub layers: Vec<LayerPlan>,
    pub overhead: OverheadSummary,
}

impl QuantPlan {
    pub fn layer(&self, id: &str) -> Option<&LayerPlan> {
        self.layers.iter().find(|l| l.layer() == id)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for l in &self.layers {
            if !seen.insert(l.layer()) {
                return Err(Error::Validation(format!(
                    "plan lists layer '{}' twice",
                    l.layer()
                )));
            }
            match l {
                LayerPlan::Activation(s) => {
                    s.validate()?;
                    if s.num_timesteps() != self.num_timesteps {
                        return Err(Error::Validation(format!(
                            "layer '{}' has {} timesteps, plan has {}",
                            s.layer,
                            s.num_timesteps(),
                            self.num_timesteps
                        )));
                    }
                }
                LayerPlan::Attention(a) => {
                    if !(MIN_BITS..=MAX_BITS).contains(&a.bits) {
                        return Err(Error::Validation(format!(
                            "layer '{}': bits {} outside [{MIN_BITS}, {MAX_BITS}]",
                            a.layer, a.bits
                        )));
                    }
                    if let Some(s) = a.static_scale {
                        if !(s.is_finite() && s > 0.0) {
                            return Err(Error::Validation(format!(
                                "layer '{}': static scale {s} must be positive",
                                a.layer
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("plan serializes");
        text.push('\n');
        text
    }

    /// SHA-256 of the serialized plan.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: Self =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        plan.validate()?;
        Ok(plan)
    }
}
