//! Attention-score fixtures and the attention-aware log quantizer.
//!
//! Cross-attention rows put most of their mass on the `<start>` key (column 0).
//! That column is carried through at full precision while the remaining scores
//! are log-quantized against a scale taken from their own maximum, so the
//! product with V splits into a dense rank-1 term plus a shift-only term.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizers::QuantParams;
use crate::tensorio::{load_tensor, save_tensor, Tensor};

/// Allowed deviation of a softmax row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScores {
    scores: Tensor,
    has_start_token: bool,
}

impl AttentionScores {
    /// Wrap an `n_q x n_k` softmax output. Rows must sum to 1.
    pub fn new(scores: Tensor, has_start_token: bool) -> Result<Self> {
        let a = Self::unnormalized(scores, has_start_token)?;
        for r in 0..a.n_q() {
            let sum: f64 = a.scores.row(r).iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Domain(format!("row {r} sums to {sum}, not 1")));
            }
        }
        Ok(a)
    }

    /// Scores in [0, 1] without the row-sum check, e.g. ablated or rescaled matrices.
    pub fn unnormalized(scores: Tensor, has_start_token: bool) -> Result<Self> {
        if scores.rank() != 2 {
            return Err(Error::Domain(format!(
                "attention scores must be a matrix, got shape {:?}",
                scores.shape()
            )));
        }
        if let Some(v) = scores.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("attention score {v} outside [0, 1]")));
        }
        if has_start_token && scores.shape()[1] == 0 {
            return Err(Error::Domain("start token needs at least one key".into()));
        }
        Ok(Self {
            scores,
            has_start_token,
        })
    }

    pub fn with_start_token(mut self, has_start_token: bool) -> Result<Self> {
        if has_start_token && self.n_k() == 0 {
            return Err(Error::Domain("start token needs at least one key".into()));
        }
        self.has_start_token = has_start_token;
        Ok(self)
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    pub fn has_start_token(&self) -> bool {
        self.has_start_token
    }

    pub fn n_q(&self) -> usize {
        self.scores.shape()[0]
    }

    pub fn n_k(&self) -> usize {
        self.scores.shape()[1]
    }

    fn first_quantized(&self) -> usize {
        usize::from(self.has_start_token)
    }

    /// Largest score outside the start column.
    pub fn max_non_start(&self) -> f32 {
        let skip = self.first_quantized();
        (0..self.n_q())
            .flat_map(|r| self.scores.row(r)[skip..].iter().copied())
            .fold(0.0, f32::max)
    }
}

/// Row-wise `softmax(Q K^T / sqrt(d))`, stabilised by subtracting each row's maximum.
pub fn attention_scores(q: &Tensor, k: &Tensor) -> Result<AttentionScores> {
    if q.rank() != 2 || k.rank() != 2 {
        return Err(Error::Domain("Q and K must be matrices".into()));
    }
    let (n_q, d) = (q.shape()[0], q.shape()[1]);
    let (n_k, dk) = (k.shape()[0], k.shape()[1]);
    if d != dk {
        return Err(Error::Domain(format!(
            "inner dimensions differ: {d} vs {dk}"
        )));
    }
    if d == 0 {
        return Err(Error::Domain("inner dimension must be at least 1".into()));
    }
    let norm = (d as f64).sqrt();
    let mut out = Vec::with_capacity(n_q * n_k);
    let mut logits = vec![0.0f64; n_k];
    for i in 0..n_q {
        let qi = q.row(i);
        for (j, l) in logits.iter_mut().enumerate() {
            let kj = k.row(j);
            *l = qi
                .iter()
                .zip(kj)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>()
                / norm;
        }
        let peak = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / total) as f32));
    }
    AttentionScores::new(Tensor::from_matrix(n_q, n_k, out)?, false)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "scale")]
pub enum AttentionScale {
    /// Scale = maximum non-start score of the matrix being quantized.
    Dynamic,
    /// Fixed scale from offline calibration.
    Static(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedAttention {
    /// Full-precision `<start>` scores, one per query row.
    pub start_column: Option<Vec<f32>>,
    /// Row-major `n_q x (n_k - start)` log codes.
    pub codes: Vec<u32>,
    pub n_q: usize,
    pub n_k: usize,
    pub scale: f32,
    pub bits: u32,
}

impl QuantizedAttention {
    pub fn params(&self) -> Result<QuantParams> {
        QuantParams::log(self.bits, self.scale)
    }

    fn code_cols(&self) -> usize {
        self.n_k - usize::from(self.start_column.is_some())
    }

    /// Reassemble the full `n_q x n_k` score matrix.
    pub fn dequantize(&self) -> Result<Tensor> {
        let p = self.params()?;
        let cols = self.code_cols();
        let mut out = Vec::with_capacity(self.n_q * self.n_k);
        for r in 0..self.n_q {
            if let Some(start) = &self.start_column {
                out.push(start[r]);
            }
            out.extend(
                self.codes[r * cols..(r + 1) * cols]
                    .iter()
                    .map(|&c| p.log_value(c)),
            );
        }
        Tensor::from_matrix(self.n_q, self.n_k, out)
    }

    /// Write `<stem>.start.npy` (if any), `<stem>.codes.npy` and a `<stem>.json`
    /// header holding the scale.
    pub fn write_dump(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let cols = self.code_cols();
        let codes = Tensor::from_matrix(
            self.n_q,
            cols,
            self.codes.iter().map(|&c| c as f32).collect(),
        )?;
        let codes_file = format!("{stem}.codes.npy");
        save_tensor(&codes, dir.join(&codes_file))?;
        let start_file = match &self.start_column {
            Some(col) => {
                let name = format!("{stem}.start.npy");
                save_tensor(&Tensor::new(vec![col.len()], col.clone())?, dir.join(&name))?;
                Some(name)
            }
            None => None,
        };
        let header = DumpHeader {
            scale: self.scale,
            bits: self.bits,
            n_q: self.n_q,
            n_k: self.n_k,
            codes: codes_file,
            start: start_file,
        };
        let path = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&header)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn read_dump(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(format!("{stem}.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let h: DumpHeader =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let p = QuantParams::log(h.bits, h.scale)?;
        let codes = load_tensor(dir.join(&h.codes))?;
        let cols = h.n_k - usize::from(h.start.is_some());
        if codes.shape() != [h.n_q, cols] {
            return Err(Error::Validation(format!(
                "code matrix shape {:?}, expected [{}, {cols}]",
                codes.shape(),
                h.n_q
            )));
        }
        let codes = codes
            .data()
            .iter()
            .map(|&c| {
                if c < 0.0 || c > p.max_code() as f32 || c.fract() != 0.0 {
                    Err(Error::Validation(format!(
                        "code {c} outside [0, {}]",
                        p.max_code()
                    )))
                } else {
                    Ok(c as u32)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let start_column = match &h.start {
            Some(f) => Some(load_tensor(dir.join(f))?.into_data()),
            None => None,
        };
        Ok(Self {
            start_column,
            codes,
            n_q: h.n_q,
            n_k: h.n_k,
            scale: h.scale,
            bits: h.bits,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    scale: f32,
    bits: u32,
    n_q: usize,
    n_k: usize,
    codes: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<String>,
}

/// Log-quantize every score except the `<start>` column, which is copied as is.
pub fn quantize_attention(
    a: &AttentionScores,
    bits: u32,
    scale: AttentionScale,
) -> Result<QuantizedAttention> {
    let start = a.first_quantized();
    if a.has_start_token && a.n_k() < 2 {
        return Err(Error::Domain(
            "need at least one key besides <start>".into(),
        ));
    }
    let s = match scale {
        AttentionScale::Dynamic => {
            let m = a.max_non_start();
            if m <= 0.0 {
                return Err(Error::Domain(
                    "all non-start scores are zero; dynamic scale is degenerate".into(),
                ));
            }
            m
        }
        AttentionScale::Static(s) => s,
    };
    let p = QuantParams::log(bits, s)?;
    let mut codes = Vec::with_capacity(a.n_q() * (a.n_k() - start));
    for r in 0..a.n_q() {
        for &v in &a.scores.row(r)[start..] {
            codes.push(p.log_code(v)?);
        }
    }
    let start_column = a
        .has_start_token
        .then(|| (0..a.n_q()).map(|r| a.scores.row(r)[0]).collect());
    Ok(QuantizedAttention {
        start_column,
        codes,
        n_q: a.n_q(),
        n_k: a.n_k(),
        scale: s,
        bits,
    })
}

/// `A V` computed without dequantizing: the start column multiplies V's first
/// row directly, the rest is `s * sum 2^-code * V[k]`.
pub fn attention_value_product(qa: &QuantizedAttention, v: &Tensor) -> Result<Tensor> {
    if v.rank() != 2 || v.shape()[0] != qa.n_k {
        return Err(Error::Domain(format!(
            "V has shape {:?}, expected {} rows",
            v.shape(),
            qa.n_k
        )));
    }
    let d_v = v.shape()[1];
    let first = usize::from(qa.start_column.is_some());
    let cols = qa.code_cols();
    let s = qa.scale as f64;
    let mut out = Vec::with_capacity(qa.n_q * d_v);
    let mut acc = vec![0.0f64; d_v];
    for r in 0..qa.n_q {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (k, &code) in qa.codes[r * cols..(r + 1) * cols].iter().enumerate() {
            let shift = (-(code as f64)).exp2();
            for (a, &x) in acc.iter_mut().zip(v.row(first + k)) {
                *a += shift * x as f64;
            }
        }
        let head = qa.start_column.as_ref().map(|c| c[r] as f64);
        for (j, a) in acc.iter().enumerate() {
            let dense = head.map_or(0.0, |h| h * v.row(0)[j] as f64);
            out.push((dense + s * a) as f32);
        }
    }
    Tensor::from_matrix(qa.n_q, d_v, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Set the start column to 0.
    Drop,
    /// Set each row's start score to that row's largest other score.
    Clamp,
}

/// Intervene on the `<start>` column. Rows are not renormalized afterwards.
pub fn start_token_ablation(a: &AttentionScores, mode: Ablation) -> Result<AttentionScores> {
    if !a.has_start_token {
        return Err(Error::Domain("ablation needs a start-token column".into()));
    }
    let n_k = a.n_k();
    let mut data = a.scores.data().to_vec();
    for row in data.chunks_exact_mut(n_k) {
        row[0] = match mode {
            Ablation::Drop => 0.0,
            Ablation::Clamp => row[1..].iter().copied().fold(0.0, f32::max),
        };
    }
    AttentionScores::unnormalized(a.scores.with_data(data)?, true)
}

/// Fake-quantize a stack of attention matrices (`[..., n_q, n_k]`), each with its own scale.
pub fn fake_quantize_attention_stack(
    t: &Tensor,
    bits: u32,
    has_start_token: bool,
    scale: AttentionScale,
) -> Result<Tensor> {
    let mut out = Vec::with_capacity(t.len());
    for m in matrices(t)? {
        let a = AttentionScores::new(m, has_start_token)?;
        out.extend(
            quantize_attention(&a, bits, scale)?
                .dequantize()?
                .into_data(),
        );
    }
    t.with_data(out)
}

/// Split a `[..., n_q, n_k]` tensor into its trailing matrices.
pub fn matrices(t: &Tensor) -> Result<Vec<Tensor>> {
    let rank = t.rank();
    if rank < 2 {
        return Err(Error::Domain(format!(
            "attention dumps need rank >= 2, got shape {:?}",
            t.shape()
        )));
    }
    let (n_q, n_k) = (t.shape()[rank - 2], t.shape()[rank - 1]);
    let size = n_q * n_k;
    if size == 0 {
        return Ok(Vec::new());
    }
    t.data()
        .chunks_exact(size)
        .map(|c| Tensor::from_matrix(n_q, n_k, c.to_vec()))
        .collect()
}
