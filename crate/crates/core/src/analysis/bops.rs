use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bit-width product of the full-precision reference (32-bit weights x 32-bit activations).
const FULL_PRECISION_BITS: f64 = 32.0 * 32.0;

/// Bit operations: `flops * b_w * b_a`.
pub fn bops(flops: f64, b_w: u32, b_a: u32) -> f64 {
    flops * b_w as f64 * b_a as f64
}

/// Rescale a BOPs figure measured at 32/32 bits to `b_w`/`b_a`.
pub fn bops_rescale(full_precision_bops: f64, b_w: u32, b_a: u32) -> f64 {
    full_precision_bops * (b_w as f64 * b_a as f64) / FULL_PRECISION_BITS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BopsModel {
    pub flops: f64,
    pub b_w: u32,
    pub b_a: u32,
    pub bops: f64,
}

impl BopsModel {
    pub fn new(flops: f64, b_w: u32, b_a: u32) -> Result<Self> {
        if !(flops > 0.0 && flops.is_finite()) || b_w == 0 || b_a == 0 {
            return Err(Error::Domain(format!(
                "BOPs inputs must be positive (flops={flops}, b_w={b_w}, b_a={b_a})"
            )));
        }
        Ok(Self {
            flops,
            b_w,
            b_a,
            bops: bops(flops, b_w, b_a),
        })
    }

    /// Model for a figure quoted in BOPs at full precision.
    pub fn from_full_precision_bops(full_bops: f64, b_w: u32, b_a: u32) -> Result<Self> {
        Self::new(full_bops / FULL_PRECISION_BITS, b_w, b_a)
    }
}
