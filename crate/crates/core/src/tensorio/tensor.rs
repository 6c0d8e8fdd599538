use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest rank the toolkit accepts.
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisRole {
    Pixel,
    Channel,
    Token,
    Other,
}

impl AxisRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AxisRole::Pixel => "pixel",
            AxisRole::Channel => "channel",
            AxisRole::Token => "token",
            AxisRole::Other => "other",
        }
    }
}

impl std::str::FromStr for AxisRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel" => Ok(AxisRole::Pixel),
            "channel" => Ok(AxisRole::Channel),
            "token" => Ok(AxisRole::Token),
            "other" => Ok(AxisRole::Other),
            _ => Err(Error::Validation(format!("unknown axis role '{s}'"))),
        }
    }
}

/// Dense row-major f32 tensor. Immutable once built; every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    roles: Option<Vec<AxisRole>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.len() > MAX_RANK {
            return Err(Error::UnsupportedFormat(format!(
                "rank {} exceeds the supported maximum of {MAX_RANK}",
                shape.len()
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Domain(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {v} at flat index {i}"
            )));
        }
        Ok(Self {
            shape,
            data,
            roles: None,
        })
    }

    pub fn scalar(value: f32) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn from_matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn with_roles(mut self, roles: Vec<AxisRole>) -> Result<Self> {
        if roles.len() != self.shape.len() {
            return Err(Error::Validation(format!(
                "{} axis roles given for a rank-{} tensor",
                roles.len(),
                self.shape.len()
            )));
        }
        self.roles = Some(roles);
        Ok(self)
    }

    /// Same shape and roles, new values. Values must be finite.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        let mut t = Self::new(self.shape.clone(), data)?;
        t.roles = self.roles.clone();
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn roles(&self) -> Option<&[AxisRole]> {
        self.roles.as_deref()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn min(&self) -> Option<f32> {
        self.data.iter().copied().reduce(f32::min)
    }

    pub fn max(&self) -> Option<f32> {
        self.data.iter().copied().reduce(f32::max)
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f32] {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    /// Flatten to the pixel x channel plane used by the grouping statistics.
    pub fn plane_view(&self) -> Result<PlaneView> {
        PlaneView::new(self)
    }
}

/// Per-slice minimum and maximum along `dim`.
pub fn axis_minmax(t: &Tensor, dim: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    if dim >= t.rank() {
        return Err(Error::Domain(format!(
            "axis {dim} out of range for rank {}",
            t.rank()
        )));
    }
    if t.is_empty() {
        return Err(Error::Domain("axis_minmax of an empty tensor".into()));
    }
    let shape = t.shape();
    let outer: usize = shape[..dim].iter().product();
    let n = shape[dim];
    let inner: usize = shape[dim + 1..].iter().product();
    let mut mins = vec![f32::INFINITY; n];
    let mut maxs = vec![f32::NEG_INFINITY; n];
    let data = t.data();
    for o in 0..outer {
        for i in 0..n {
            let start = (o * n + i) * inner;
            for &v in &data[start..start + inner] {
                mins[i] = mins[i].min(v);
                maxs[i] = maxs[i].max(v);
            }
        }
    }
    Ok((mins, maxs))
}

/// A tensor rearranged as `[batch][pixel][channel]`.
///
/// The channel axis is the one labelled `channel` (or the last axis when no
/// roles are attached). Axis 0 is a batch axis when its role is `other`, or,
/// without roles, when the rank is at least 3. Every remaining axis folds
/// into the pixel index, in order.
#[derive(Debug, Clone)]
pub struct PlaneView {
    pub batch: usize,
    pub pixels: usize,
    pub channels: usize,
    /// Contiguous `[batch][pixel][channel]` values.
    pub data: Vec<f32>,
    perm: Vec<usize>,
    shape: Vec<usize>,
}

impl PlaneView {
    fn new(t: &Tensor) -> Result<Self> {
        let (batch_axis, pixel_axes, channel_axis) = plane_axes(t.shape(), t.roles())?;
        let shape = t.shape().to_vec();
        let mut perm = Vec::with_capacity(shape.len());
        perm.extend(batch_axis);
        perm.extend(pixel_axes.iter().copied());
        perm.extend(channel_axis);
        let batch = batch_axis.map_or(1, |a| shape[a]);
        let pixels = pixel_axes.iter().map(|&a| shape[a]).product();
        let channels = channel_axis.map_or(1, |a| shape[a]);
        let data = permute(t.data(), &shape, &perm);
        Ok(Self {
            batch,
            pixels,
            channels,
            data,
            perm,
            shape,
        })
    }

    /// Rows = batch x pixel, columns = channel.
    pub fn rows(&self) -> usize {
        self.batch * self.pixels
    }

    /// Undo the rearrangement, producing values in the original layout.
    pub fn restore<T: Copy>(&self, plane: &[T]) -> Vec<T> {
        debug_assert_eq!(plane.len(), self.data.len());
        let permuted: Vec<usize> = self.perm.iter().map(|&a| self.shape[a]).collect();
        let mut inverse = vec![0; self.perm.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            inverse[p] = i;
        }
        permute(plane, &permuted, &inverse)
    }
}

fn plane_axes(
    shape: &[usize],
    roles: Option<&[AxisRole]>,
) -> Result<(Option<usize>, Vec<usize>, Option<usize>)> {
    let rank = shape.len();
    if rank == 0 {
        return Ok((None, Vec::new(), None));
    }
    let channel = match roles {
        Some(r) => {
            let chans: Vec<usize> = (0..rank).filter(|&i| r[i] == AxisRole::Channel).collect();
            match chans.as_slice() {
                [] => rank - 1,
                [c] => *c,
                _ => {
                    return Err(Error::Validation(
                        "more than one axis is labelled channel".into(),
                    ))
                }
            }
        }
        None => rank - 1,
    };
    let batch = match roles {
        Some(r) => (rank >= 2 && channel != 0 && r[0] == AxisRole::Other).then_some(0),
        None => (rank >= 3).then_some(0),
    };
    let pixels = (0..rank)
        .filter(|&a| a != channel && Some(a) != batch)
        .collect();
    Ok((batch, pixels, Some(channel)))
}

/// Gather `data` (row-major under `shape`) into the axis order `perm`.
fn permute<T: Copy>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return data.to_vec();
    }
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&a| strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    for _ in 0..data.len() {
        let src: usize = idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum();
        out.push(data[src]);
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < out_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    out
}
