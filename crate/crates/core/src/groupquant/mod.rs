//! Outlier-preserving group quantization.
//!
//! A layer's activations are viewed as a pixel x channel plane. The axis whose
//! per-vector ranges vary the most is chosen for grouping, vectors along it are
//! clustered by range, and each group gets its own scale and offset for every
//! timestep.

mod kmeans;
mod scheme;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{PlaneView, Tensor};

pub use kmeans::{cluster_ranges, KMeansInit, MAX_ITERATIONS, TOLERANCE};
pub use scheme::{
    apply_group_quant, element_groups, fit_group_scheme, fit_group_scheme_from_tensors,
    parameter_overhead_bytes, scheme_overhead_bytes, GroupCalibration, GroupConfig, GroupParams,
    GroupQuantScheme,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupDim {
    Channel,
    Pixel,
}

impl GroupDim {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupDim::Channel => "channel",
            GroupDim::Pixel => "pixel",
        }
    }
}

impl std::fmt::Display for GroupDim {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-vector ranges along one axis and the variability score derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionStats {
    pub dim: GroupDim,
    pub mins: Vec<f32>,
    pub maxs: Vec<f32>,
    pub score: f64,
}

impl DimensionStats {
    pub fn from_ranges(dim: GroupDim, mins: Vec<f32>, maxs: Vec<f32>) -> Result<Self> {
        if mins.is_empty() || mins.len() != maxs.len() {
            return Err(Error::Domain(format!(
                "need matching non-empty range vectors, got {} and {}",
                mins.len(),
                maxs.len()
            )));
        }
        let score = variability(&mins, &maxs);
        Ok(Self {
            dim,
            mins,
            maxs,
            score,
        })
    }

    /// Spread of the maxima plus spread of the minima.
    pub fn recompute_score(&self) -> f64 {
        variability(&self.mins, &self.maxs)
    }
}

fn spread(v: &[f32]) -> f64 {
    let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lo = v.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    hi - lo
}

fn variability(mins: &[f32], maxs: &[f32]) -> f64 {
    spread(maxs) + spread(mins)
}

/// Per-vector ranges of a plane along `dim`. Pixel vectors span the batch
/// (each batch row is its own pixel vector here).
fn plane_ranges(view: &PlaneView, dim: GroupDim) -> (Vec<f32>, Vec<f32>) {
    let (rows, cols) = (view.rows(), view.channels);
    let n = match dim {
        GroupDim::Channel => cols,
        GroupDim::Pixel => rows,
    };
    let mut mins = vec![f32::INFINITY; n];
    let mut maxs = vec![f32::NEG_INFINITY; n];
    for r in 0..rows {
        for c in 0..cols {
            let v = view.data[r * cols + c];
            let i = match dim {
                GroupDim::Channel => c,
                GroupDim::Pixel => r,
            };
            mins[i] = mins[i].min(v);
            maxs[i] = maxs[i].max(v);
        }
    }
    (mins, maxs)
}

/// Variability score of `t` along `dim`, with any batch axis folded into pixels.
pub fn compute_dimension_score(t: &Tensor, dim: GroupDim) -> Result<DimensionStats> {
    if t.is_empty() {
        return Err(Error::Domain("dimension score of an empty tensor".into()));
    }
    let view = t.plane_view()?;
    let (mins, maxs) = plane_ranges(&view, dim);
    DimensionStats::from_ranges(dim, mins, maxs)
}

/// The axis with the larger score; ties go to channel.
pub fn select_dimension(channel: &DimensionStats, pixel: &DimensionStats) -> GroupDim {
    if pixel.score > channel.score {
        GroupDim::Pixel
    } else {
        GroupDim::Channel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Tensor {
        Tensor::from_matrix(2, 3, vec![0.0, 0.0, 10.0, 0.0, 0.0, 10.5]).unwrap()
    }

    #[test]
    fn scores_of_worked_example() {
        let ch = compute_dimension_score(&example(), GroupDim::Channel).unwrap();
        assert_eq!(ch.score, 20.5);
        let px = compute_dimension_score(&example(), GroupDim::Pixel).unwrap();
        assert_eq!(px.score, 0.5);
        assert_eq!(select_dimension(&ch, &px), GroupDim::Channel);
        assert_eq!(ch.recompute_score(), ch.score);
    }

    #[test]
    fn constant_scores_zero_and_ties_to_channel() {
        let t = Tensor::from_matrix(4, 5, vec![3.0; 20]).unwrap();
        let ch = compute_dimension_score(&t, GroupDim::Channel).unwrap();
        let px = compute_dimension_score(&t, GroupDim::Pixel).unwrap();
        assert_eq!((ch.score, px.score), (0.0, 0.0));
        assert_eq!(select_dimension(&ch, &px), GroupDim::Channel);
    }

    #[test]
    fn planted_pixel_row_selects_pixel() {
        let mut data: Vec<f32> = (0..48)
            .map(|i| ((i * 37 % 11) as f32) / 10.0 + 1.0)
            .collect();
        for v in &mut data[16..24] {
            *v *= 100.0;
        }
        let t = Tensor::from_matrix(6, 8, data).unwrap();
        let ch = compute_dimension_score(&t, GroupDim::Channel).unwrap();
        let px = compute_dimension_score(&t, GroupDim::Pixel).unwrap();
        assert!(px.score > ch.score);
        assert_eq!(select_dimension(&ch, &px), GroupDim::Pixel);
    }

    #[test]
    fn empty_tensor_is_an_error() {
        let t = Tensor::new(vec![0, 3], vec![]).unwrap();
        assert!(compute_dimension_score(&t, GroupDim::Channel).is_err());
    }
}
