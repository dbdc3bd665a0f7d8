//! Store linear raw images inside standard baseline JPEG files.
//!
//! A learnable, fully invertible pre-processing pipeline (per-channel tone
//! LUTs, an optional global DCT coefficient scale, and a spatial gamma map)
//! is fitted per image through a differentiable JPEG simulator, applied
//! before encoding, and exactly inverted after decoding. The fitted
//! coefficients are quantized, compressed, and embedded in the JPEG COM
//! segment, so the stored file remains a valid JPEG readable by any viewer.
//!
//! Core math is generic over the scalar type via [`num::Scalar`]; the
//! aliases below pin the default double-precision pipeline used by the CLI
//! and the serialization layer.

pub mod codec;
pub mod container;
pub mod dct;
pub mod fft;
pub mod fitter;
pub mod image;
pub mod jpegsim;
pub mod metrics;
pub mod num;
pub mod ssim;
pub mod synth;
pub mod transform;

pub use crate::image::{
    load_raw, normalize, resize_bilinear, save_raw, ImageError, ImageFormat, NormalizationSpec,
};
pub use crate::codec::{deserialize, serialize, ComPayload};
pub use crate::container::{decode_jpeg, encode_jpeg, extract_com, insert_com, scan_markers};
pub use crate::fitter::{constrain, fit, gradient, loss, preset, FitConfig, Preset};
pub use crate::jpegsim::{quality_factor, quantize8, simulate_jpeg, soft_round, JpegSimConfig};
pub use crate::metrics::MetricsReport;
pub use crate::num::Scalar;
pub use crate::synth::{synth_raw, SynthProfile};
pub use crate::transform::{
    apply_color, apply_gamma, apply_lut, invert_color, invert_gamma, invert_lut, post_decode,
    pre_encode, scale_dct, unscale_dct, TransformError,
};

/// Default scalar type for the full pipeline.
pub type Sample = f64;
/// Double-precision raw image, the working type of the CLI.
pub type Image = image::RawImage<Sample>;
/// Double-precision adapter parameters.
pub type Params = transform::AdapterParams<Sample>;
