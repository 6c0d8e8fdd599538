use crate::error::{Error, Result};
use crate::tensorio::Tensor;

/// Default z-score above which an activation counts as an outlier.
pub const DEFAULT_Z_THRESHOLD: f64 = 6.0;

/// Entries with `|x - mean| > z * std`, largest magnitude first.
///
/// Returns `(flat index, value)` pairs. A constant tensor has no outliers.
pub fn find_outliers(t: &Tensor, z_threshold: f64) -> Vec<(usize, f32)> {
    let n = t.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = t.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = t
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Vec::new();
    }
    let cut = z_threshold * std;
    let mut hits: Vec<(usize, f32)> = t
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| (v as f64 - mean).abs() > cut)
        .map(|(i, &v)| (i, v))
        .collect();
    hits.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    hits
}

/// Copy of `t` with the listed flat indices zeroed.
pub fn drop_activations(t: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let mut data = t.data().to_vec();
    for &i in indices {
        let slot = data.get_mut(i).ok_or_else(|| {
            Error::Domain(format!(
                "index {i} outside a tensor of {} elements",
                t.len()
            ))
        })?;
        *slot = 0.0;
    }
    t.with_data(data)
}
