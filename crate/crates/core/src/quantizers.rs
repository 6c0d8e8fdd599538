//! Uniform and power-of-two (logarithmic) fake quantizers and their calibration.
//!
//! All rounding is round-half-to-even. Quantizer arithmetic runs in f64 and is
//! narrowed to f32 only when a value is produced.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::Tensor;

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 16;

/// Scale used when the calibration range collapses to a single value.
pub const DEGENERATE_SCALE: f32 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantKind {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetForm {
    /// `code = round(x / s) + z`, `z` an integer code.
    IntegerZeroPoint,
    /// `code = round((x - z) / s)`, `z` a real offset (the range minimum).
    #[default]
    RealOffset,
}

/// Divisor applied to the calibration range to get the step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// `2^b`. The range maximum lands one step past the last code and clamps.
    #[default]
    Pow2,
    /// `2^b - 1`, the usual choice; the range maximum is representable.
    Pow2MinusOne,
}

impl Denominator {
    pub fn value(self, bits: u32) -> f64 {
        let levels = (1u64 << bits) as f64;
        match self {
            Denominator::Pow2 => levels,
            Denominator::Pow2MinusOne => levels - 1.0,
        }
    }
}

/// Settings shared by every linear calibration routine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinearConfig {
    #[serde(default)]
    pub denominator: Denominator,
    #[serde(default)]
    pub offset_form: OffsetForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub kind: QuantKind,
    pub bits: u32,
    pub scale: f32,
    /// Real offset or integer zero-point, per `offset_form`. Always 0 for log.
    pub offset: f32,
    pub offset_form: OffsetForm,
}

impl QuantParams {
    pub fn linear(bits: u32, scale: f32, offset: f32, offset_form: OffsetForm) -> Result<Self> {
        let p = Self {
            kind: QuantKind::Linear,
            bits,
            scale,
            offset,
            offset_form,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn log(bits: u32, scale: f32) -> Result<Self> {
        let p = Self {
            kind: QuantKind::Log,
            bits,
            scale,
            offset: 0.0,
            offset_form: OffsetForm::RealOffset,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Domain(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if !self.offset.is_finite() {
            return Err(Error::Domain("offset must be finite".into()));
        }
        match (self.kind, self.offset_form) {
            (QuantKind::Log, _) if self.offset != 0.0 => {
                Err(Error::Domain("log quantizer offset must be 0".into()))
            }
            (QuantKind::Linear, OffsetForm::IntegerZeroPoint)
                if self.offset.fract() != 0.0
                    || self.offset < 0.0
                    || self.offset > self.max_code() as f32 =>
            {
                Err(Error::Domain(format!(
                    "zero-point {} is not an integer code in [0, {}]",
                    self.offset,
                    self.max_code()
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn max_code(&self) -> u32 {
        ((1u64 << self.bits) - 1) as u32
    }

    /// Unclamped, rounded code for a linear quantizer.
    fn linear_raw(&self, x: f32) -> f64 {
        let s = self.scale as f64;
        match self.offset_form {
            OffsetForm::IntegerZeroPoint => (x as f64 / s).round_ties_even() + self.offset as f64,
            OffsetForm::RealOffset => ((x as f64 - self.offset as f64) / s).round_ties_even(),
        }
    }

    pub fn linear_code(&self, x: f32) -> u32 {
        self.linear_raw(x).clamp(0.0, self.max_code() as f64) as u32
    }

    pub fn linear_value(&self, code: u32) -> f32 {
        let s = self.scale as f64;
        let v = match self.offset_form {
            OffsetForm::IntegerZeroPoint => s * (code as f64 - self.offset as f64),
            OffsetForm::RealOffset => s * code as f64 + self.offset as f64,
        };
        v as f32
    }

    /// Unclamped, rounded code for a log quantizer; `None` for zero input.
    fn log_raw(&self, x: f32) -> Result<Option<f64>> {
        if x < 0.0 {
            return Err(Error::Domain(format!(
                "log quantizer input must be non-negative, got {x}"
            )));
        }
        if x == 0.0 {
            return Ok(None);
        }
        Ok(Some(
            (-(x as f64 / self.scale as f64).log2()).round_ties_even(),
        ))
    }

    /// Zero maps to the largest code.
    pub fn log_code(&self, x: f32) -> Result<u32> {
        let max = self.max_code();
        Ok(match self.log_raw(x)? {
            None => max,
            Some(raw) => raw.clamp(0.0, max as f64) as u32,
        })
    }

    pub fn log_value(&self, code: u32) -> f32 {
        (self.scale as f64 * (-(code as f64)).exp2()) as f32
    }

    /// Whether `x` falls inside the quantizer's unclamped code range.
    pub fn in_range(&self, x: f32) -> bool {
        let max = self.max_code() as f64;
        let raw = match self.kind {
            QuantKind::Linear => Some(self.linear_raw(x)),
            QuantKind::Log => self.log_raw(x).ok().flatten(),
        };
        raw.is_some_and(|r| (0.0..=max).contains(&r))
    }

    pub fn code(&self, x: f32) -> Result<u32> {
        match self.kind {
            QuantKind::Linear => Ok(self.linear_code(x)),
            QuantKind::Log => self.log_code(x),
        }
    }

    pub fn value(&self, code: u32) -> f32 {
        match self.kind {
            QuantKind::Linear => self.linear_value(code),
            QuantKind::Log => self.log_value(code),
        }
    }

    /// Quantize then dequantize a single value.
    pub fn fake(&self, x: f32) -> Result<f32> {
        Ok(self.value(self.code(x)?))
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::Domain(format!(
            "bit-width {bits} outside [{MIN_BITS}, {MAX_BITS}]"
        )));
    }
    Ok(())
}

fn expect_kind(p: &QuantParams, kind: QuantKind) -> Result<()> {
    if p.kind != kind {
        return Err(Error::Domain(format!(
            "expected {kind:?} params, got {:?}",
            p.kind
        )));
    }
    Ok(())
}

fn codes_to_tensor(t: &Tensor, codes: Vec<u32>) -> Result<Tensor> {
    t.with_data(codes.into_iter().map(|c| c as f32).collect())
}

fn tensor_to_codes(codes: &Tensor, p: &QuantParams) -> Result<Vec<u32>> {
    let max = p.max_code();
    codes
        .data()
        .iter()
        .map(|&c| {
            if c < 0.0 || c > max as f32 || c.fract() != 0.0 {
                Err(Error::Domain(format!("code {c} outside [0, {max}]")))
            } else {
                Ok(c as u32)
            }
        })
        .collect()
}

pub fn linear_quantize(x: &Tensor, p: &QuantParams) -> Result<Tensor> {
    expect_kind(p, QuantKind::Linear)?;
    codes_to_tensor(x, x.data().iter().map(|&v| p.linear_code(v)).collect())
}

pub fn linear_dequantize(codes: &Tensor, p: &QuantParams) -> Result<Tensor> {
    expect_kind(p, QuantKind::Linear)?;
    let values = tensor_to_codes(codes, p)?
        .into_iter()
        .map(|c| p.linear_value(c))
        .collect();
    codes.with_data(values)
}

pub fn log_quantize(x: &Tensor, p: &QuantParams) -> Result<Tensor> {
    expect_kind(p, QuantKind::Log)?;
    let codes = x
        .data()
        .iter()
        .map(|&v| p.log_code(v))
        .collect::<Result<Vec<_>>>()?;
    codes_to_tensor(x, codes)
}

pub fn log_dequantize(codes: &Tensor, p: &QuantParams) -> Result<Tensor> {
    expect_kind(p, QuantKind::Log)?;
    let values = tensor_to_codes(codes, p)?
        .into_iter()
        .map(|c| p.log_value(c))
        .collect();
    codes.with_data(values)
}

pub fn fake_quantize(x: &Tensor, p: &QuantParams) -> Result<Tensor> {
    let values = x
        .data()
        .iter()
        .map(|&v| p.fake(v))
        .collect::<Result<Vec<_>>>()?;
    x.with_data(values)
}

/// Linear parameters covering `[min, max]`.
pub fn linear_params_from_range(
    min: f32,
    max: f32,
    bits: u32,
    cfg: LinearConfig,
) -> Result<QuantParams> {
    check_bits(bits)?;
    if min.is_nan() || max.is_nan() || min > max {
        return Err(Error::Domain(format!("empty range [{min}, {max}]")));
    }
    let (scale, offset) = if min == max {
        degenerate(min, cfg.offset_form)
    } else {
        let s = ((max as f64 - min as f64) / cfg.denominator.value(bits)) as f32;
        let s = if s > 0.0 { s } else { DEGENERATE_SCALE };
        match cfg.offset_form {
            OffsetForm::RealOffset => (s, min),
            OffsetForm::IntegerZeroPoint => {
                let max_code = ((1u64 << bits) - 1) as f64;
                let z = (-(min as f64) / s as f64)
                    .round_ties_even()
                    .clamp(0.0, max_code);
                (s, z as f32)
            }
        }
    };
    QuantParams::linear(bits, scale, offset, cfg.offset_form)
}

/// Parameters that reproduce the constant `c` exactly.
fn degenerate(c: f32, form: OffsetForm) -> (f32, f32) {
    match form {
        OffsetForm::RealOffset => (DEGENERATE_SCALE, c),
        // code = round(c / |c|) + z lands on a code whose dequantized value is c
        OffsetForm::IntegerZeroPoint if c > 0.0 => (c, 0.0),
        OffsetForm::IntegerZeroPoint if c < 0.0 => (-c, 1.0),
        OffsetForm::IntegerZeroPoint => (DEGENERATE_SCALE, 0.0),
    }
}

fn nonempty_range(t: &Tensor) -> Result<(f32, f32)> {
    match (t.min(), t.max()) {
        (Some(lo), Some(hi)) => Ok((lo, hi)),
        _ => Err(Error::Domain("cannot calibrate on an empty tensor".into())),
    }
}

fn log_params_from_max(max: f32, bits: u32) -> Result<QuantParams> {
    if max.is_nan() || max <= 0.0 {
        return Err(Error::Domain(format!(
            "log calibration needs a positive maximum, got {max}"
        )));
    }
    QuantParams::log(bits, max)
}

/// Min/max calibration. For log quantizers the scale is the tensor maximum.
pub fn calibrate_minmax(
    t: &Tensor,
    bits: u32,
    kind: QuantKind,
    cfg: LinearConfig,
) -> Result<QuantParams> {
    let (lo, hi) = nonempty_range(t)?;
    match kind {
        QuantKind::Linear => linear_params_from_range(lo, hi, bits, cfg),
        QuantKind::Log => {
            if lo < 0.0 {
                return Err(Error::Domain("log calibration on negative values".into()));
            }
            log_params_from_max(hi, bits)
        }
    }
}

/// Outcome of the clipping search behind [`calibrate_mse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseSearch {
    pub params: QuantParams,
    pub alpha: f64,
    pub mse: f64,
}

/// Clip fractions searched by [`calibrate_mse`]: 0.50, 0.51, ..., 1.00.
pub fn mse_alpha_grid() -> impl DoubleEndedIterator<Item = (u32, f64)> {
    (50..=100u32).map(|i| (i, i as f64 / 100.0))
}

/// Candidate parameters for one clip fraction, `percent` in [50, 100].
pub fn clipped_params(
    min: f32,
    max: f32,
    percent: u32,
    bits: u32,
    kind: QuantKind,
    cfg: LinearConfig,
) -> Result<QuantParams> {
    if percent == 100 {
        return match kind {
            QuantKind::Linear => linear_params_from_range(min, max, bits, cfg),
            QuantKind::Log => log_params_from_max(max, bits),
        };
    }
    let alpha = percent as f64 / 100.0;
    match kind {
        QuantKind::Linear => {
            let mid = (min as f64 + max as f64) / 2.0;
            let half = (max as f64 - min as f64) / 2.0 * alpha;
            let lo = (mid - half) as f32;
            let hi = ((mid + half) as f32).max(lo);
            linear_params_from_range(lo, hi, bits, cfg)
        }
        QuantKind::Log => log_params_from_max((max as f64 * alpha) as f32, bits),
    }
}

/// Mean squared fake-quantization error of `values` under `p`.
pub fn quant_mse(values: &[f32], p: &QuantParams) -> Result<f64> {
    let mut acc = 0.0f64;
    for &v in values {
        let d = p.fake(v)? as f64 - v as f64;
        acc += d * d;
    }
    Ok(acc / values.len().max(1) as f64)
}

/// Grid search over clip fractions, keeping the lowest-MSE candidate.
/// Ties go to the larger fraction.
pub fn mse_search(t: &Tensor, bits: u32, kind: QuantKind, cfg: LinearConfig) -> Result<MseSearch> {
    mse_search_values(t.data(), bits, kind, cfg)
}

pub fn mse_search_values(
    values: &[f32],
    bits: u32,
    kind: QuantKind,
    cfg: LinearConfig,
) -> Result<MseSearch> {
    let lo = values.iter().copied().reduce(f32::min);
    let hi = values.iter().copied().reduce(f32::max);
    let (Some(lo), Some(hi)) = (lo, hi) else {
        return Err(Error::Domain("cannot calibrate on an empty tensor".into()));
    };
    if kind == QuantKind::Log && lo < 0.0 {
        return Err(Error::Domain("log calibration on negative values".into()));
    }
    let mut best: Option<MseSearch> = None;
    for (percent, alpha) in mse_alpha_grid().rev() {
        let params = clipped_params(lo, hi, percent, bits, kind, cfg)?;
        let mse = quant_mse(values, &params)?;
        if best.is_none_or(|b| mse < b.mse) {
            best = Some(MseSearch { params, alpha, mse });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

pub fn calibrate_mse(
    t: &Tensor,
    bits: u32,
    kind: QuantKind,
    cfg: LinearConfig,
) -> Result<QuantParams> {
    mse_search(t, bits, kind, cfg).map(|s| s.params)
}

/// Exponential-moving-average range tracker over calibration batches.
#[derive(Debug, Clone)]
pub struct RunningMinMax {
    momentum: f64,
    range: Option<(f64, f64)>,
}

impl RunningMinMax {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Domain(format!("momentum {momentum} outside (0, 1)")));
        }
        Ok(Self {
            momentum,
            range: None,
        })
    }

    pub fn update(&mut self, batch: &Tensor) -> Result<()> {
        let (lo, hi) = nonempty_range(batch)?;
        self.update_range(lo, hi);
        Ok(())
    }

    pub fn update_range(&mut self, batch_min: f32, batch_max: f32) {
        let (bmin, bmax) = (batch_min as f64, batch_max as f64);
        let m = self.momentum;
        self.range = Some(match self.range {
            None => (bmin, bmax),
            Some((rmin, rmax)) => (m * rmin + (1.0 - m) * bmin, m * rmax + (1.0 - m) * bmax),
        });
    }

    pub fn range(&self) -> Option<(f32, f32)> {
        self.range.map(|(lo, hi)| (lo as f32, hi as f32))
    }

    pub fn finish(&self, bits: u32, kind: QuantKind, cfg: LinearConfig) -> Result<QuantParams> {
        let (lo, hi) = self
            .range()
            .ok_or_else(|| Error::Domain("running min/max saw no batches".into()))?;
        match kind {
            QuantKind::Linear => linear_params_from_range(lo, hi, bits, cfg),
            QuantKind::Log => log_params_from_max(hi, bits),
        }
    }
}

pub fn calibrate_running_minmax<'a>(
    batches: impl IntoIterator<Item = &'a Tensor>,
    bits: u32,
    kind: QuantKind,
    momentum: f64,
    cfg: LinearConfig,
) -> Result<QuantParams> {
    let mut tracker = RunningMinMax::new(momentum)?;
    for b in batches {
        tracker.update(b)?;
    }
    tracker.finish(bits, kind, cfg)
}
