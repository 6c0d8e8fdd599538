use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cluster_ranges, plane_ranges, select_dimension, DimensionStats, GroupDim, KMeansInit};
use crate::error::{Error, Result};
use crate::quantizers::{
    linear_params_from_range, mse_search_values, Denominator, LinearConfig, OffsetForm, QuantKind,
    QuantParams,
};
use crate::tensorio::{CalibrationSet, PlaneView, Tensor};

/// How each (timestep, group) range is turned into parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupCalibration {
    #[default]
    Minmax,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupConfig {
    #[serde(flatten)]
    pub linear: LinearConfig,
    #[serde(default)]
    pub calibration: GroupCalibration,
    #[serde(default)]
    pub init: KMeansInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub s: f32,
    pub z: f32,
}

/// Fitted grouping for one layer: the shared assignment plus a T x K table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupQuantScheme {
    pub layer: String,
    pub dim: GroupDim,
    #[serde(rename = "K")]
    pub groups: usize,
    pub bits: u32,
    /// Group of every vector along `dim`.
    pub assignment: Vec<usize>,
    /// Outer index timestep, inner index group.
    pub table: Vec<Vec<GroupParams>>,
    #[serde(default)]
    pub denominator: Denominator,
    #[serde(default)]
    pub offset_form: OffsetForm,
}

impl GroupQuantScheme {
    pub fn num_timesteps(&self) -> usize {
        self.table.len()
    }

    pub fn params(&self, timestep: usize, group: usize) -> Result<QuantParams> {
        let row = self.table.get(timestep).ok_or_else(|| {
            Error::Domain(format!(
                "timestep {timestep} outside [0, {})",
                self.table.len()
            ))
        })?;
        let g = row
            .get(group)
            .ok_or_else(|| Error::Domain(format!("group {group} outside [0, {})", row.len())))?;
        QuantParams::linear(self.bits, g.s, g.z, self.offset_form)
    }

    /// Parameters of every group at one timestep.
    pub fn timestep_params(&self, timestep: usize) -> Result<Vec<QuantParams>> {
        (0..self.groups).map(|g| self.params(timestep, g)).collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.groups];
        for &a in &self.assignment {
            if a < self.groups {
                sizes[a] += 1;
            }
        }
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("scheme '{}': {m}", self.layer)));
        if self.groups == 0 {
            return bad("K must be at least 1".into());
        }
        if let Some(a) = self.assignment.iter().find(|&&a| a >= self.groups) {
            return bad(format!("assignment references group {a}"));
        }
        if let Some(g) = self.group_sizes().iter().position(|&s| s == 0) {
            return bad(format!("group {g} is empty"));
        }
        if self.table.is_empty() {
            return bad("parameter table is empty".into());
        }
        for (t, row) in self.table.iter().enumerate() {
            if row.len() != self.groups {
                return bad(format!(
                    "timestep {t} has {} groups, expected {}",
                    row.len(),
                    self.groups
                ));
            }
            for g in 0..self.groups {
                self.params(t, g).map_err(|e| {
                    Error::Validation(format!("scheme '{}' t={t} k={g}: {e}", self.layer))
                })?;
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scheme: Self =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Bytes spent on this scheme's scale and offset tables.
    pub fn overhead_bytes(&self, bytes_per_param: u64) -> u64 {
        parameter_overhead_bytes(
            self.num_timesteps() as u64,
            self.groups as u64,
            bytes_per_param,
        )
    }

    fn vector_count(&self, view: &PlaneView) -> usize {
        match self.dim {
            GroupDim::Channel => view.channels,
            GroupDim::Pixel => view.pixels,
        }
    }
}

/// `T x K x per_layer_param_bytes x 2`: one scale array and one offset array.
pub fn parameter_overhead_bytes(timesteps: u64, groups: u64, per_layer_param_bytes: u64) -> u64 {
    timesteps * groups * per_layer_param_bytes * 2
}

pub fn scheme_overhead_bytes(scheme: &GroupQuantScheme, bytes_per_param: u64) -> u64 {
    scheme.overhead_bytes(bytes_per_param)
}

/// Per-timestep, per-vector ranges of a layer's dumps.
struct RangeStats {
    pixels: usize,
    channels: usize,
    /// `[timestep][channel]`
    ch_min: Vec<Vec<f32>>,
    ch_max: Vec<Vec<f32>>,
    /// `[timestep][pixel]`, pixels aggregated over the batch axis
    px_min: Vec<Vec<f32>>,
    px_max: Vec<Vec<f32>>,
}

impl RangeStats {
    fn collect(views: &[Vec<PlaneView>]) -> Result<Self> {
        let first = views
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| Error::Validation("no calibration tensors".into()))?;
        let (pixels, channels) = (first.pixels, first.channels);
        if pixels * channels == 0 {
            return Err(Error::Domain("calibration tensors are empty".into()));
        }
        let mut s = Self {
            pixels,
            channels,
            ch_min: Vec::new(),
            ch_max: Vec::new(),
            px_min: Vec::new(),
            px_max: Vec::new(),
        };
        for (t, step) in views.iter().enumerate() {
            if step.is_empty() {
                return Err(Error::Validation(format!(
                    "no calibration tensors at timestep {t}"
                )));
            }
            let mut cmin = vec![f32::INFINITY; channels];
            let mut cmax = vec![f32::NEG_INFINITY; channels];
            let mut pmin = vec![f32::INFINITY; pixels];
            let mut pmax = vec![f32::NEG_INFINITY; pixels];
            for v in step {
                if (v.pixels, v.channels) != (pixels, channels) {
                    return Err(Error::Domain(format!(
                        "timestep {t}: plane {}x{} differs from {pixels}x{channels}",
                        v.pixels, v.channels
                    )));
                }
                let (lo, hi) = plane_ranges(v, GroupDim::Channel);
                merge(&mut cmin, &mut cmax, &lo, &hi);
                let (lo, hi) = plane_ranges(v, GroupDim::Pixel);
                for (r, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
                    let p = r % pixels;
                    pmin[p] = pmin[p].min(l);
                    pmax[p] = pmax[p].max(h);
                }
            }
            s.ch_min.push(cmin);
            s.ch_max.push(cmax);
            s.px_min.push(pmin);
            s.px_max.push(pmax);
        }
        Ok(s)
    }

    fn per_step(&self, dim: GroupDim) -> (&[Vec<f32>], &[Vec<f32>]) {
        match dim {
            GroupDim::Channel => (&self.ch_min, &self.ch_max),
            GroupDim::Pixel => (&self.px_min, &self.px_max),
        }
    }

    fn aggregated(&self, dim: GroupDim) -> (Vec<f32>, Vec<f32>) {
        let (mins, maxs) = self.per_step(dim);
        let n = match dim {
            GroupDim::Channel => self.channels,
            GroupDim::Pixel => self.pixels,
        };
        let mut lo = vec![f32::INFINITY; n];
        let mut hi = vec![f32::NEG_INFINITY; n];
        for (m, x) in mins.iter().zip(maxs) {
            merge(&mut lo, &mut hi, m, x);
        }
        (lo, hi)
    }
}

fn merge(lo: &mut [f32], hi: &mut [f32], other_lo: &[f32], other_hi: &[f32]) {
    for i in 0..lo.len() {
        lo[i] = lo[i].min(other_lo[i]);
        hi[i] = hi[i].max(other_hi[i]);
    }
}

/// Fit a scheme from in-memory dumps, `timesteps[t]` holding every sample at step `t`.
///
/// `groups` is capped at the number of vectors along the selected axis.
pub fn fit_group_scheme_from_tensors(
    layer: &str,
    timesteps: &[Vec<Tensor>],
    groups: usize,
    bits: u32,
    cfg: GroupConfig,
) -> Result<GroupQuantScheme> {
    if groups == 0 {
        return Err(Error::Validation("K must be at least 1".into()));
    }
    if timesteps.is_empty() {
        return Err(Error::Validation(format!(
            "layer '{layer}' has no timesteps"
        )));
    }
    let views = timesteps
        .iter()
        .map(|step| {
            step.iter()
                .map(Tensor::plane_view)
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let stats = RangeStats::collect(&views)?;

    let (lo, hi) = stats.aggregated(GroupDim::Channel);
    let channel = DimensionStats::from_ranges(GroupDim::Channel, lo, hi)?;
    let (lo, hi) = stats.aggregated(GroupDim::Pixel);
    let pixel = DimensionStats::from_ranges(GroupDim::Pixel, lo, hi)?;
    let chosen = match select_dimension(&channel, &pixel) {
        GroupDim::Channel => channel,
        GroupDim::Pixel => pixel,
    };
    let k = groups.min(chosen.mins.len());
    let assignment = cluster_ranges(&chosen.mins, &chosen.maxs, k, cfg.init)?;

    let (step_min, step_max) = stats.per_step(chosen.dim);
    let mut table = Vec::with_capacity(timesteps.len());
    for t in 0..timesteps.len() {
        let row = match cfg.calibration {
            GroupCalibration::Minmax => {
                let mut lo = vec![f32::INFINITY; k];
                let mut hi = vec![f32::NEG_INFINITY; k];
                for (i, &g) in assignment.iter().enumerate() {
                    lo[g] = lo[g].min(step_min[t][i]);
                    hi[g] = hi[g].max(step_max[t][i]);
                }
                (0..k)
                    .map(|g| linear_params_from_range(lo[g], hi[g], bits, cfg.linear))
                    .collect::<Result<Vec<_>>>()?
            }
            GroupCalibration::Mse => {
                let mut values: Vec<Vec<f32>> = vec![Vec::new(); k];
                for v in &views[t] {
                    for (r, row) in v.data.chunks_exact(v.channels).enumerate() {
                        for (c, &x) in row.iter().enumerate() {
                            let i = match chosen.dim {
                                GroupDim::Channel => c,
                                GroupDim::Pixel => r % v.pixels,
                            };
                            values[assignment[i]].push(x);
                        }
                    }
                }
                values
                    .iter()
                    .map(|vals| {
                        mse_search_values(vals, bits, QuantKind::Linear, cfg.linear)
                            .map(|s| s.params)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        table.push(
            row.into_iter()
                .map(|p| GroupParams {
                    s: p.scale,
                    z: p.offset,
                })
                .collect(),
        );
    }

    let scheme = GroupQuantScheme {
        layer: layer.to_string(),
        dim: chosen.dim,
        groups: k,
        bits,
        assignment,
        table,
        denominator: cfg.linear.denominator,
        offset_form: cfg.linear.offset_form,
    };
    scheme.validate()?;
    Ok(scheme)
}

/// Fit a scheme for `layer_id` from every sample of every timestep in `set`.
pub fn fit_group_scheme(
    set: &CalibrationSet,
    layer_id: &str,
    groups: usize,
    bits: u32,
    cfg: GroupConfig,
) -> Result<GroupQuantScheme> {
    if set.layer(layer_id).is_none() {
        return Err(Error::Validation(format!("unknown layer '{layer_id}'")));
    }
    let timesteps = (0..set.num_timesteps())
        .map(|t| set.tensors_at(layer_id, t))
        .collect::<Result<Vec<_>>>()?;
    fit_group_scheme_from_tensors(layer_id, &timesteps, groups, bits, cfg)
        .map_err(|e| e.with_context(&format!("layer '{layer_id}'")))
}

fn plane_groups(view: &PlaneView, scheme: &GroupQuantScheme) -> Result<Vec<usize>> {
    let n = scheme.vector_count(view);
    if n != scheme.assignment.len() {
        return Err(Error::Domain(format!(
            "tensor has {n} {} vectors, scheme '{}' expects {}",
            scheme.dim,
            scheme.layer,
            scheme.assignment.len()
        )));
    }
    let mut out = Vec::with_capacity(view.data.len());
    for r in 0..view.rows() {
        for c in 0..view.channels {
            let i = match scheme.dim {
                GroupDim::Channel => c,
                GroupDim::Pixel => r % view.pixels,
            };
            out.push(scheme.assignment[i]);
        }
    }
    Ok(out)
}

/// Group index of every element of `t`, in `t`'s own layout.
pub fn element_groups(t: &Tensor, scheme: &GroupQuantScheme) -> Result<Vec<usize>> {
    let view = t.plane_view()?;
    Ok(view.restore(&plane_groups(&view, scheme)?))
}

/// Fake-quantize `t` with its group's parameters at `timestep`.
pub fn apply_group_quant(t: &Tensor, scheme: &GroupQuantScheme, timestep: usize) -> Result<Tensor> {
    if timestep >= scheme.num_timesteps() {
        return Err(Error::Domain(format!(
            "timestep {timestep} outside [0, {})",
            scheme.num_timesteps()
        )));
    }
    let params = scheme.timestep_params(timestep)?;
    let view = t.plane_view()?;
    let groups = plane_groups(&view, scheme)?;
    let plane: Vec<f32> = view
        .data
        .iter()
        .zip(&groups)
        .map(|(&x, &g)| {
            let p = &params[g];
            p.linear_value(p.linear_code(x))
        })
        .collect();
    t.with_data(view.restore(&plane))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizers::{calibrate_minmax, fake_quantize};

    /// Three channels with ranges [0,1], [0,1.1], [90,100] over four pixels.
    fn three_channels() -> Tensor {
        let rows = [
            [0.0, 0.0, 90.0],
            [1.0, 1.1, 100.0],
            [0.5, 0.3, 95.0],
            [0.2, 0.9, 92.5],
        ];
        Tensor::from_matrix(4, 3, rows.concat()).unwrap()
    }

    #[test]
    fn fits_worked_example() {
        let s = fit_group_scheme_from_tensors(
            "l",
            &[vec![three_channels()]],
            2,
            8,
            GroupConfig::default(),
        )
        .unwrap();
        assert_eq!(s.dim, GroupDim::Channel);
        assert_eq!(s.assignment, vec![0, 0, 1]);
        assert_eq!(s.table.len(), 1);
        assert_eq!(
            s.table[0][0],
            GroupParams {
                s: (1.1f64 / 256.0) as f32,
                z: 0.0
            }
        );
        assert_eq!(
            s.table[0][1],
            GroupParams {
                s: (10.0f64 / 256.0) as f32,
                z: 90.0
            }
        );
    }

    #[test]
    fn outlier_group_error_is_bounded_by_its_own_scale() {
        let t = three_channels();
        let s =
            fit_group_scheme_from_tensors("l", &[vec![t.clone()]], 2, 8, GroupConfig::default())
                .unwrap();
        let fq = apply_group_quant(&t, &s, 0).unwrap();
        // 95 sits in group 1
        let err95 = (fq.data()[8] - 95.0).abs();
        assert!(err95 <= 10.0 / 512.0, "{err95}");
        // outlier channel at this denominator: the clamped maximum costs one step
        let outlier_err = (0..4)
            .map(|r| (fq.data()[r * 3 + 2] - t.data()[r * 3 + 2]).abs())
            .fold(0f32, f32::max);
        assert!(outlier_err <= 10.0 / 256.0 + 1e-5);
        let layer = calibrate_minmax(&t, 8, QuantKind::Linear, LinearConfig::default()).unwrap();
        let layer_fq = fake_quantize(&t, &layer).unwrap();
        let layer_err = (0..4)
            .map(|r| (layer_fq.data()[r * 3 + 2] - t.data()[r * 3 + 2]).abs())
            .fold(0f32, f32::max);
        assert!(
            outlier_err * 5.0 < layer_err,
            "{outlier_err} vs {layer_err}"
        );
    }

    #[test]
    fn standard_denominator_holds_half_step_bound() {
        let t = three_channels();
        let cfg = GroupConfig {
            linear: LinearConfig {
                denominator: Denominator::Pow2MinusOne,
                ..Default::default()
            },
            ..Default::default()
        };
        let s = fit_group_scheme_from_tensors("l", &[vec![t.clone()]], 2, 8, cfg).unwrap();
        let fq = apply_group_quant(&t, &s, 0).unwrap();
        let groups = element_groups(&t, &s).unwrap();
        for ((x, y), g) in t.data().iter().zip(fq.data()).zip(groups) {
            let sc = s.table[0][g].s;
            assert!((x - y).abs() <= sc / 2.0 + f32::EPSILON * x.abs().max(1.0));
        }
    }

    #[test]
    fn k1_matches_layerwise_minmax() {
        let t = three_channels();
        let s =
            fit_group_scheme_from_tensors("l", &[vec![t.clone()]], 1, 8, GroupConfig::default())
                .unwrap();
        let layer = calibrate_minmax(&t, 8, QuantKind::Linear, LinearConfig::default()).unwrap();
        assert_eq!(s.params(0, 0).unwrap(), layer);
        assert_eq!(
            apply_group_quant(&t, &s, 0).unwrap(),
            fake_quantize(&t, &layer).unwrap()
        );
    }

    #[test]
    fn doubled_timestep_doubles_params() {
        let t0 = three_channels();
        let t1 = t0
            .with_data(t0.data().iter().map(|v| v * 2.0).collect())
            .unwrap();
        let s =
            fit_group_scheme_from_tensors("l", &[vec![t0], vec![t1]], 2, 8, GroupConfig::default())
                .unwrap();
        for g in 0..2 {
            assert_eq!(s.table[1][g].s, 2.0 * s.table[0][g].s);
            assert_eq!(s.table[1][g].z, 2.0 * s.table[0][g].z);
        }
    }

    #[test]
    fn k_capped_at_vector_count() {
        let s = fit_group_scheme_from_tensors(
            "l",
            &[vec![three_channels()]],
            8,
            8,
            GroupConfig::default(),
        )
        .unwrap();
        assert_eq!(s.groups, 3);
    }

    #[test]
    fn apply_checks_shape_and_timestep() {
        let s = fit_group_scheme_from_tensors(
            "l",
            &[vec![three_channels()]],
            2,
            8,
            GroupConfig::default(),
        )
        .unwrap();
        let wrong = Tensor::from_matrix(2, 4, vec![0.0; 8]).unwrap();
        assert!(matches!(
            apply_group_quant(&wrong, &s, 0),
            Err(Error::Domain(_))
        ));
        assert!(apply_group_quant(&three_channels(), &s, 1).is_err());
    }

    #[test]
    fn mse_calibration_never_increases_group_error() {
        let t = three_channels();
        let mm =
            fit_group_scheme_from_tensors("l", &[vec![t.clone()]], 2, 4, GroupConfig::default())
                .unwrap();
        let cfg = GroupConfig {
            calibration: GroupCalibration::Mse,
            ..Default::default()
        };
        let mse = fit_group_scheme_from_tensors("l", &[vec![t.clone()]], 2, 4, cfg).unwrap();
        assert_eq!(mm.assignment, mse.assignment);
        let err = |s: &GroupQuantScheme| {
            let fq = apply_group_quant(&t, s, 0).unwrap();
            t.data()
                .iter()
                .zip(fq.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
        };
        assert!(err(&mse) <= err(&mm));
    }

    #[test]
    fn overhead_arithmetic() {
        assert_eq!(parameter_overhead_bytes(25, 16, 3008), 2_406_400);
        assert_eq!(parameter_overhead_bytes(1, 1, 3008), 2 * 3008);
        assert_eq!(parameter_overhead_bytes(25, 32, 3008), 2 * 2_406_400);
    }

    #[test]
    fn scheme_json_layout() {
        let s = fit_group_scheme_from_tensors(
            "down.1",
            &[vec![three_channels()]],
            2,
            8,
            GroupConfig::default(),
        )
        .unwrap();
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["layer"], "down.1");
        assert_eq!(v["dim"], "channel");
        assert_eq!(v["K"], 2);
        assert_eq!(v["table"][0][1]["z"], 90.0);
        let back: GroupQuantScheme = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn validate_rejects_broken_schemes() {
        let mut s = fit_group_scheme_from_tensors(
            "l",
            &[vec![three_channels()]],
            2,
            8,
            GroupConfig::default(),
        )
        .unwrap();
        s.assignment = vec![0, 0, 0];
        assert!(s.validate().is_err());
        s.assignment = vec![0, 0, 1];
        s.table[0][1].s = 0.0;
        assert!(s.validate().is_err());
    }
}
