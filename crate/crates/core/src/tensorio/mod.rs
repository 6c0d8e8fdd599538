//! Tensor container, slice statistics and the on-disk dump format.

mod manifest;
mod npy;
mod tensor;

pub use manifest::{
    from_manifest, load_calibration_set, CalibrationSet, EntryKey, EntrySpec, LayerKind,
    LayerRecord, LayerSpec, Manifest,
};
pub use npy::{load_tensor, read_npy, read_shape, save_tensor, write_npy};
pub use tensor::{axis_minmax, AxisRole, PlaneView, Tensor, MAX_RANK};
