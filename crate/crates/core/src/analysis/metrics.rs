use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensorio::Tensor;

/// Running sums behind an [`ErrorReport`]; merge accumulators to aggregate
/// over samples, timesteps or layers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorAccumulator {
    pub count: u64,
    pub sum_sq_err: f64,
    pub sum_sq_ref: f64,
    pub max_abs_err: f64,
    pub peak: f64,
}

impl ErrorAccumulator {
    pub fn push(&mut self, reference: f32, candidate: f32) {
        let r = reference as f64;
        let e = r - candidate as f64;
        self.count += 1;
        self.sum_sq_err += e * e;
        self.sum_sq_ref += r * r;
        self.max_abs_err = self.max_abs_err.max(e.abs());
        self.peak = self.peak.max(r.abs());
    }

    pub fn extend(&mut self, reference: &[f32], candidate: &[f32]) {
        for (&r, &c) in reference.iter().zip(candidate) {
            self.push(r, c);
        }
    }

    pub fn merge(&mut self, other: &ErrorAccumulator) {
        self.count += other.count;
        self.sum_sq_err += other.sum_sq_err;
        self.sum_sq_ref += other.sum_sq_ref;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.peak = self.peak.max(other.peak);
    }

    pub fn mse(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum_sq_err / self.count as f64
        }
    }

    pub fn report(&self) -> ErrorReport {
        let mse = self.mse();
        ErrorReport {
            mse,
            max_abs_err: self.max_abs_err,
            sqnr_db: decibels(self.sum_sq_ref, self.sum_sq_err),
            psnr_db: decibels(self.peak * self.peak, mse),
            groups: Vec::new(),
        }
    }
}

/// `10 log10(signal / noise)`, +inf for zero noise.
fn decibels(signal: f64, noise: f64) -> f64 {
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mse: f64,
    pub max_abs_err: f64,
    /// +inf when the candidate matches exactly.
    #[serde(serialize_with = "db_value", deserialize_with = "db_value_de")]
    pub sqnr_db: f64,
    /// Peak is `max |reference|`.
    #[serde(serialize_with = "db_value", deserialize_with = "db_value_de")]
    pub psnr_db: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupError>,
}

/// Error restricted to one quantization group, with that group's half-step bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub group: usize,
    pub count: u64,
    pub mse: f64,
    pub max_abs_err: f64,
    /// Largest `s / 2` the group used across the aggregated timesteps.
    pub half_step: f64,
}

/// JSON has no infinities; write them as strings.
fn db_value<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else if *v < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("nan")
    }
}

fn db_value_de<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!(
                "bad decibel value '{other}'"
            ))),
        },
    }
}

pub fn error_metrics(reference: &Tensor, candidate: &Tensor) -> Result<ErrorReport> {
    if reference.shape() != candidate.shape() {
        return Err(Error::Domain(format!(
            "shape mismatch: {:?} vs {:?}",
            reference.shape(),
            candidate.shape()
        )));
    }
    let mut acc = ErrorAccumulator::default();
    acc.extend(reference.data(), candidate.data());
    Ok(acc.report())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f32]) -> Tensor {
        Tensor::new(vec![x.len()], x.to_vec()).unwrap()
    }

    #[test]
    fn identical_is_infinite_sqnr() {
        let r = error_metrics(&v(&[1.0, -2.0]), &v(&[1.0, -2.0])).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.sqnr_db, f64::INFINITY);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["sqnr_db"], "inf");
        let back: ErrorReport = serde_json::from_value(json).unwrap();
        assert_eq!(back.sqnr_db, f64::INFINITY);
    }

    #[test]
    fn hand_example() {
        let r = error_metrics(&v(&[0.0, 1.0]), &v(&[0.0, 0.9])).unwrap();
        assert!((r.mse - 0.005).abs() < 1e-8);
        assert!((r.max_abs_err - 0.1).abs() < 1e-7);
        // 10 log10(1 / 0.01)
        assert!((r.sqnr_db - 20.0).abs() < 1e-5);
        // 20 log10(1 / sqrt(0.005))
        assert!((r.psnr_db - 20.0 * (1.0 / 0.005f64.sqrt()).log10()).abs() < 1e-5);
    }

    #[test]
    fn sign_of_error_does_not_matter() {
        let reference = v(&[0.5, -1.0, 2.0]);
        let up = v(&[0.75, -0.75, 2.25]);
        let down = v(&[0.25, -1.25, 1.75]);
        let a = error_metrics(&reference, &up).unwrap();
        let b = error_metrics(&reference, &down).unwrap();
        assert_eq!(a.mse, b.mse);
        assert_eq!(a.max_abs_err, b.max_abs_err);
    }

    #[test]
    fn shape_mismatch() {
        assert!(error_metrics(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }
}
