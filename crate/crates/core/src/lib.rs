//! Distribution-aware group quantization for diffusion-model activations.
//!
//! Activations are quantized per group of outlier-similar channels or pixels,
//! with parameters per denoising timestep. Post-softmax attention scores use a
//! base-2 log quantizer that keeps the `<start>` token at full precision.

pub mod analysis;
pub mod attention;
pub mod error;
pub mod groupquant;
pub mod pipeline;
pub mod quantizers;
pub mod tensorio;

pub use analysis::{bops, bops_rescale, error_metrics, AnalysisReport, ErrorReport};
pub use attention::{
    attention_value_product, quantize_attention, AttentionScale, AttentionScores,
    QuantizedAttention,
};
pub use error::{Error, Result};
pub use groupquant::{
    apply_group_quant, compute_dimension_score, fit_group_scheme, select_dimension, GroupDim,
    GroupQuantScheme,
};
pub use pipeline::{QuantPlan, QuantPolicy};
pub use quantizers::{Denominator, LinearConfig, OffsetForm, QuantKind, QuantParams};
pub use tensorio::{
    load_calibration_set, load_tensor, save_tensor, AxisRole, CalibrationSet, Tensor,
};
