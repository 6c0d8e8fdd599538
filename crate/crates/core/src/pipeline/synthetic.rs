//! Synthetic dumps with planted outlier vectors, for demos and tests.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groupquant::GroupDim;
use crate::tensorio::{save_tensor, AxisRole, EntrySpec, LayerKind, LayerSpec, Manifest, Tensor};

const CHANNELS: usize = 32;
const PIXELS: usize = 64;
const TOKENS: usize = 16;
const HEADS: usize = 2;
const OUTLIER_MAGNITUDE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Layers cycle through channel-outlier, pixel-outlier and attention.
    pub layers: usize,
    pub timesteps: usize,
    pub samples: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            layers: 3,
            timesteps: 4,
            samples: 2,
            batch: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLayer {
    pub id: String,
    pub kind: LayerKind,
    /// Axis the outliers were planted along.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_dim: Option<GroupDim>,
    /// Channel indices, or flattened spatial indices for pixel outliers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outlier_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSuite {
    pub spec: SyntheticSpec,
    pub layers: Vec<SyntheticLayer>,
}

impl SyntheticSuite {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

enum Pattern {
    Channel,
    Pixel,
    Attention,
}

fn pattern(i: usize) -> Pattern {
    match i % 3 {
        0 => Pattern::Channel,
        1 => Pattern::Pixel,
        _ => Pattern::Attention,
    }
}

fn layer_spec(i: usize, batch: usize) -> LayerSpec {
    use AxisRole::*;
    match pattern(i) {
        Pattern::Channel => LayerSpec {
            id: format!("act{i}"),
            shape: vec![batch, PIXELS, CHANNELS],
            axis_roles: vec![Other, Pixel, Channel],
        },
        Pattern::Pixel => LayerSpec {
            id: format!("act{i}"),
            shape: vec![batch, CHANNELS, 8, 8],
            axis_roles: vec![Other, Channel, Pixel, Pixel],
        },
        Pattern::Attention => LayerSpec {
            id: format!("attn{i}"),
            shape: vec![batch * HEADS, PIXELS, TOKENS],
            axis_roles: vec![Other, Pixel, Token],
        },
    }
}

/// Fixed per-layer statistics shared by every timestep and sample.
struct Profile {
    mean: Vec<f64>,
    std: Vec<f64>,
    outliers: Vec<usize>,
}

impl Profile {
    fn draw(rng: &mut ChaCha8Rng, vectors: usize) -> Self {
        let mean_dist = Normal::new(0.0, 0.5).unwrap();
        let std_dist = Uniform::new(0.5, 2.0);
        let mut outliers = sample(rng, vectors, 2).into_vec();
        outliers.sort_unstable();
        Self {
            mean: (0..CHANNELS).map(|_| mean_dist.sample(rng)).collect(),
            std: (0..CHANNELS).map(|_| std_dist.sample(rng)).collect(),
            outliers,
        }
    }

    /// Planted vectors alternate positive and negative.
    fn outlier_sign(&self, index: usize) -> Option<f64> {
        self.outliers
            .iter()
            .position(|&o| o == index)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 })
    }

    fn value(&self, rng: &mut ChaCha8Rng, channel: usize, outlier: Option<f64>, drift: f64) -> f32 {
        let n: f64 = rng.sample(rand_distr::StandardNormal);
        let x = match outlier {
            Some(sign) => sign * (OUTLIER_MAGNITUDE + n),
            None => self.mean[channel] + self.std[channel] * n,
        };
        (x * drift) as f32
    }
}

fn activation_dump(
    rng: &mut ChaCha8Rng,
    profile: &Profile,
    spec: &LayerSpec,
    channel_major: bool,
    drift: f64,
) -> Result<Tensor> {
    let batch = spec.shape[0];
    let mut data = Vec::with_capacity(batch * PIXELS * CHANNELS);
    for _ in 0..batch {
        if channel_major {
            // [C, H, W] with pixel outliers
            for c in 0..CHANNELS {
                for p in 0..PIXELS {
                    data.push(profile.value(rng, c, profile.outlier_sign(p), drift));
                }
            }
        } else {
            // [P, C] with channel outliers
            for _ in 0..PIXELS {
                for c in 0..CHANNELS {
                    data.push(profile.value(rng, c, profile.outlier_sign(c), drift));
                }
            }
        }
    }
    Tensor::new(spec.shape.clone(), data)
}

/// Softmax-like rows: a dominant `<start>` share and a log-normal remainder
/// whose spread depends on the sample.
fn attention_dump(rng: &mut ChaCha8Rng, spec: &LayerSpec) -> Result<Tensor> {
    let start = Uniform::new(0.55, 0.98);
    let spread = Uniform::new(0.5, 1.5).sample(rng);
    let rows = spec.shape[0] * spec.shape[1];
    let mut data = Vec::with_capacity(rows * TOKENS);
    for _ in 0..rows {
        let p0: f64 = start.sample(rng);
        let w: Vec<f64> = (1..TOKENS)
            .map(|_| (spread * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp())
            .collect();
        let total: f64 = w.iter().sum();
        data.push(p0 as f32);
        data.extend(w.iter().map(|x| ((1.0 - p0) * x / total) as f32));
    }
    Tensor::new(spec.shape.clone(), data)
}

/// Write a synthetic suite under `dir`: dumps, `manifest.json` and `synthetic.json`.
/// Returns the manifest path and the planted-outlier metadata.
pub fn generate_synthetic(
    dir: impl AsRef<Path>,
    spec: SyntheticSpec,
) -> Result<(PathBuf, SyntheticSuite)> {
    if spec.layers == 0 || spec.timesteps == 0 || spec.samples == 0 || spec.batch == 0 {
        return Err(Error::Validation(
            "layers, timesteps, samples and batch must all be positive".into(),
        ));
    }
    let dir = dir.as_ref();
    let data_dir = dir.join("data");
    fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut layers = Vec::new();
    let mut specs = Vec::new();
    let mut entries = Vec::new();
    for i in 0..spec.layers {
        let ls = layer_spec(i, spec.batch);
        let (kind, dim, profile) = match pattern(i) {
            Pattern::Channel => (
                LayerKind::Activation,
                Some(GroupDim::Channel),
                Some(Profile::draw(&mut rng, CHANNELS)),
            ),
            Pattern::Pixel => (
                LayerKind::Activation,
                Some(GroupDim::Pixel),
                Some(Profile::draw(&mut rng, PIXELS)),
            ),
            Pattern::Attention => (LayerKind::Attention, None, None),
        };
        for t in 0..spec.timesteps {
            let drift = 1.0 + 0.5 * t as f64 / (spec.timesteps.max(2) - 1) as f64;
            for s in 0..spec.samples {
                let tensor = match (&profile, dim) {
                    (Some(p), Some(d)) => {
                        activation_dump(&mut rng, p, &ls, d == GroupDim::Pixel, drift)?
                    }
                    _ => attention_dump(&mut rng, &ls)?,
                };
                let file = format!("data/{}_t{t:03}_s{s:03}.npy", ls.id);
                save_tensor(&tensor, dir.join(&file))?;
                entries.push(EntrySpec {
                    layer: ls.id.clone(),
                    timestep: t,
                    sample: s,
                    file,
                });
            }
        }
        layers.push(SyntheticLayer {
            id: ls.id.clone(),
            kind,
            outlier_dim: dim,
            outlier_indices: profile.map(|p| p.outliers).unwrap_or_default(),
        });
        specs.push(ls);
    }

    let manifest_path = dir.join("manifest.json");
    Manifest {
        num_timesteps: spec.timesteps,
        layers: specs,
        entries,
    }
    .write(&manifest_path)?;
    let suite = SyntheticSuite { spec, layers };
    let meta = dir.join("synthetic.json");
    let mut text = serde_json::to_string_pretty(&suite).expect("suite serializes");
    text.push('\n');
    fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
    Ok((manifest_path, suite))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::load_calibration_set;

    #[test]
    fn suite_loads_and_is_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (ma, sa) = generate_synthetic(a.path(), SyntheticSpec::default()).unwrap();
        let (mb, sb) = generate_synthetic(b.path(), SyntheticSpec::default()).unwrap();
        assert_eq!(sa, sb);
        let set = load_calibration_set(&ma).unwrap();
        assert_eq!(set.layers().len(), 3);
        assert_eq!(set.layers()[2].kind(), LayerKind::Attention);
        assert_eq!(set.len(), 3 * 4 * 2);
        let ta = set.tensors_at("act1", 2).unwrap();
        let tb = load_calibration_set(&mb)
            .unwrap()
            .tensors_at("act1", 2)
            .unwrap();
        assert_eq!(ta, tb);
        assert_eq!(
            SyntheticSuite::read(a.path().join("synthetic.json")).unwrap(),
            sa
        );
    }

    #[test]
    fn attention_rows_are_distributions() {
        let d = tempfile::tempdir().unwrap();
        let (m, _) = generate_synthetic(d.path(), SyntheticSpec::default()).unwrap();
        let set = load_calibration_set(m).unwrap();
        for t in set.tensors_at("attn2", 0).unwrap() {
            for m in crate::attention::matrices(&t).unwrap() {
                crate::attention::AttentionScores::new(m, true).unwrap();
            }
        }
    }
}
