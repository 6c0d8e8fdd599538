use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensorio::npy;
use crate::tensorio::tensor::{AxisRole, Tensor};

/// On-disk manifest, field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_timesteps: usize,
    pub layers: Vec<LayerSpec>,
    pub entries: Vec<EntrySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub axis_roles: Vec<AxisRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntrySpec {
    pub layer: String,
    pub timestep: usize,
    pub sample: usize,
    /// Relative paths resolve against the manifest's directory.
    pub file: String,
}

impl Manifest {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Activation,
    /// Softmax attention scores; the last axis is the key/token axis.
    Attention,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub id: String,
    pub shape: Vec<usize>,
    pub axis_roles: Vec<AxisRole>,
}

impl LayerRecord {
    pub fn kind(&self) -> LayerKind {
        if self.axis_roles.last() == Some(&AxisRole::Token) {
            LayerKind::Attention
        } else {
            LayerKind::Activation
        }
    }

    /// Axis 0 may differ between dumps when it is a batch axis.
    fn batch_varies(&self) -> bool {
        self.shape.len() >= 2 && self.axis_roles.first() == Some(&AxisRole::Other)
    }

    fn accepts(&self, shape: &[usize]) -> bool {
        if shape.len() != self.shape.len() {
            return false;
        }
        let skip = usize::from(self.batch_varies());
        shape[skip..] == self.shape[skip..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct EntryKey {
    pub layer: String,
    pub timestep: usize,
    pub sample: usize,
}

/// A validated, manifest-indexed collection of activation dumps.
///
/// Construction checks every referenced file's header eagerly; tensor data
/// is read on demand.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    num_timesteps: usize,
    layers: Vec<LayerRecord>,
    entries: BTreeMap<EntryKey, PathBuf>,
    digest: String,
}

impl CalibrationSet {
    pub fn num_timesteps(&self) -> usize {
        self.num_timesteps
    }

    pub fn layers(&self) -> &[LayerRecord] {
        &self.layers
    }

    pub fn layer(&self, id: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SHA-256 of the manifest bytes this set was loaded from.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn entries(&self) -> impl Iterator<Item = (&EntryKey, &Path)> {
        self.entries.iter().map(|(k, p)| (k, p.as_path()))
    }

    /// Files for one layer at one timestep, ordered by sample id.
    pub fn files_at<'a>(
        &'a self,
        layer: &'a str,
        timestep: usize,
    ) -> impl Iterator<Item = (usize, &'a Path)> + 'a {
        let lo = EntryKey {
            layer: layer.to_string(),
            timestep,
            sample: 0,
        };
        self.entries
            .range(lo..)
            .take_while(move |(k, _)| k.layer == layer && k.timestep == timestep)
            .map(|(k, p)| (k.sample, p.as_path()))
    }

    /// Load every dump of `layer` at `timestep`, with the layer's axis roles attached.
    pub fn tensors_at(&self, layer: &str, timestep: usize) -> Result<Vec<Tensor>> {
        let record = self
            .layer(layer)
            .ok_or_else(|| Error::Validation(format!("unknown layer '{layer}'")))?;
        let tensors = self
            .files_at(layer, timestep)
            .map(|(_, path)| {
                let t = npy::load_tensor(path)?;
                if record.axis_roles.is_empty() {
                    Ok(t)
                } else {
                    t.with_roles(record.axis_roles.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if tensors.is_empty() {
            return Err(Error::Validation(format!(
                "layer '{layer}' has no data at timestep {timestep}"
            )));
        }
        Ok(tensors)
    }
}

pub fn load_calibration_set(manifest_path: impl AsRef<Path>) -> Result<CalibrationSet> {
    let path = manifest_path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut set = from_manifest(manifest, root)?;
    set.digest = hex::encode(Sha256::digest(&bytes));
    Ok(set)
}

/// Validate an in-memory manifest whose relative paths resolve against `root`.
pub fn from_manifest(manifest: Manifest, root: &Path) -> Result<CalibrationSet> {
    let t_count = manifest.num_timesteps;
    if t_count == 0 {
        return Err(Error::Validation("num_timesteps must be positive".into()));
    }

    let mut seen = HashSet::new();
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for l in manifest.layers {
        if !seen.insert(l.id.clone()) {
            return Err(Error::Validation(format!("duplicate layer id '{}'", l.id)));
        }
        if l.shape.len() > super::tensor::MAX_RANK {
            return Err(Error::Validation(format!(
                "layer '{}' has rank {} (max {})",
                l.id,
                l.shape.len(),
                super::tensor::MAX_RANK
            )));
        }
        if !l.axis_roles.is_empty() && l.axis_roles.len() != l.shape.len() {
            return Err(Error::Validation(format!(
                "layer '{}': {} axis roles for rank {}",
                l.id,
                l.axis_roles.len(),
                l.shape.len()
            )));
        }
        layers.push(LayerRecord {
            id: l.id,
            shape: l.shape,
            axis_roles: l.axis_roles,
        });
    }

    let mut entries = BTreeMap::new();
    let mut timesteps: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for e in &manifest.entries {
        let record = layers.iter().find(|l| l.id == e.layer).ok_or_else(|| {
            Error::Validation(format!("entry references unknown layer '{}'", e.layer))
        })?;
        if e.timestep >= t_count {
            return Err(Error::Validation(format!(
                "layer '{}': timestep {} outside [0, {t_count})",
                e.layer, e.timestep
            )));
        }
        let file = root.join(&e.file);
        if !file.is_file() {
            return Err(Error::Validation(format!(
                "layer '{}' timestep {} sample {}: missing file {}",
                e.layer,
                e.timestep,
                e.sample,
                file.display()
            )));
        }
        let shape = npy::read_shape(&file)?;
        if !record.accepts(&shape) {
            return Err(Error::Validation(format!(
                "{}: shape {shape:?} does not match layer '{}' shape {:?}",
                file.display(),
                e.layer,
                record.shape
            )));
        }
        let key = EntryKey {
            layer: e.layer.clone(),
            timestep: e.timestep,
            sample: e.sample,
        };
        if entries.insert(key, file).is_some() {
            return Err(Error::Validation(format!(
                "duplicate entry for layer '{}' timestep {} sample {}",
                e.layer, e.timestep, e.sample
            )));
        }
        timesteps.entry(&e.layer).or_default().insert(e.timestep);
    }

    for l in &layers {
        let present = timesteps.get(l.id.as_str());
        let missing: Vec<usize> = (0..t_count)
            .filter(|t| !present.is_some_and(|s| s.contains(t)))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "layer '{}': timesteps are not dense in [0, {t_count}); missing {missing:?}",
                l.id
            )));
        }
    }

    Ok(CalibrationSet {
        num_timesteps: t_count,
        layers,
        entries,
        digest: String::new(),
    })
}
