//! The invertible pre-encode pipeline and its exact inverse.
//!
//! Encode order: optional color transform, channel-wise tone LUTs, optional
//! blockwise DCT coefficient scaling (then a clamp to `[0, 1]`, the one lossy
//! point of the pipeline), and a pixel-wise gamma map upsampled from a
//! 100×100 grid. Decode applies the exact inverses in reverse order.
//!
//! Every stage ships with a reverse-mode `*_backward` companion used by the
//! fitter; each backward consumes the same inputs its forward saw, so the
//! derivatives are exactly those of the code path that runs in production.

use crate::dct::{dct_scale_plane, dct_scale_plane_backward, Dct8, ScaleMode};
use crate::image::{clamp01, resample_plane, resample_plane_adjoint, AxisMap, RawImage};
use crate::num::Scalar;

/// Number of entries per tone-curve channel.
pub const LUT_SIZE: usize = 128;
/// Side length of the gamma exponent grid.
pub const GRID_SIZE: usize = 100;
/// Gamma exponents live in `[exp(-GAMMA_LOG_BOUND), exp(GAMMA_LOG_BOUND)]`.
pub const GAMMA_LOG_BOUND: f64 = 2.0;
/// DCT scales live in `[exp(-DCT_LOG_BOUND), exp(DCT_LOG_BOUND)]`.
pub const DCT_LOG_BOUND: f64 = 0.7;

// Validation slack in log domain: serialized parameters pass through f32 /
// u16 lattices whose rounding can exceed the analytic bound by a few ulps.
const LOG_BOUND_SLACK: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum TransformError {
    #[error("LUT channel {channel} is not strictly increasing at entry {index}")]
    LutNotIncreasing { channel: usize, index: usize },
    #[error("LUT channel {channel} endpoints must be exactly 0 and 1")]
    LutEndpoints { channel: usize },
    #[error("gamma grid must hold {expected} values, found {found}")]
    GammaGridSize { expected: usize, found: usize },
    #[error("gamma value {value} outside [e^-2, e^2]")]
    GammaOutOfRange { value: f64 },
    #[error("DCT scale value {value} outside [e^-0.7, e^0.7]")]
    DctScaleOutOfRange { value: f64 },
    #[error("color matrix is singular")]
    SingularColorMatrix,
    #[error("white-balance gains and gamma must be strictly positive")]
    NonPositiveColorParam,
}

/// Strictly increasing 128-entry tone curve per color channel, min–max
/// normalized so entry 0 is exactly 0 and entry 127 exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelLut<T> {
    entries: [Vec<T>; 3],
}

impl<T: Scalar> ChannelLut<T> {
    pub fn new(entries: [Vec<T>; 3]) -> Result<ChannelLut<T>, TransformError> {
        for (c, e) in entries.iter().enumerate() {
            if e.len() != LUT_SIZE {
                return Err(TransformError::LutEndpoints { channel: c });
            }
            if e[0] != T::zero() || e[LUT_SIZE - 1] != T::one() {
                return Err(TransformError::LutEndpoints { channel: c });
            }
            for i in 1..LUT_SIZE {
                if e[i] <= e[i - 1] {
                    return Err(TransformError::LutNotIncreasing {
                        channel: c,
                        index: i,
                    });
                }
            }
        }
        Ok(ChannelLut { entries })
    }

    /// The identity curve: entry `i` holds `i / 127`.
    pub fn identity() -> ChannelLut<T> {
        let ramp: Vec<T> = (0..LUT_SIZE)
            .map(|i| T::from_usize(i).unwrap() / T::from_usize(LUT_SIZE - 1).unwrap())
            .collect();
        ChannelLut {
            entries: [ramp.clone(), ramp.clone(), ramp],
        }
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.entries[c]
    }
}

/// 100×100 grid of per-region gamma exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaGrid<T> {
    values: Vec<T>,
}

impl<T: Scalar> GammaGrid<T> {
    pub fn new(values: Vec<T>) -> Result<GammaGrid<T>, TransformError> {
        if values.len() != GRID_SIZE * GRID_SIZE {
            return Err(TransformError::GammaGridSize {
                expected: GRID_SIZE * GRID_SIZE,
                found: values.len(),
            });
        }
        let bound = GAMMA_LOG_BOUND + LOG_BOUND_SLACK;
        for &v in &values {
            if !(v > T::zero()) || v.as_f64().ln().abs() > bound {
                return Err(TransformError::GammaOutOfRange { value: v.as_f64() });
            }
        }
        Ok(GammaGrid { values })
    }

    pub fn constant(value: T) -> Result<GammaGrid<T>, TransformError> {
        GammaGrid::new(vec![value; GRID_SIZE * GRID_SIZE])
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Bilinearly upsample the grid to a full-resolution exponent plane.
    pub fn upsample(&self, width: usize, height: usize) -> Vec<T> {
        let xs = AxisMap::new(GRID_SIZE, width);
        let ys = AxisMap::new(GRID_SIZE, height);
        resample_plane(&self.values, GRID_SIZE, &xs, &ys)
    }

    /// Scatter a full-resolution exponent-plane gradient back onto the grid.
    pub(crate) fn upsample_adjoint(&self, d_field: &[T], width: usize, height: usize) -> Vec<T> {
        let xs = AxisMap::new(GRID_SIZE, width);
        let ys = AxisMap::new(GRID_SIZE, height);
        resample_plane_adjoint(d_field, GRID_SIZE, GRID_SIZE, &xs, &ys)
    }
}

/// Global 8×8 multiplier applied to blockwise DCT coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DctScale<T> {
    values: [T; 64],
}

impl<T: Scalar> DctScale<T> {
    pub fn new(values: [T; 64]) -> Result<DctScale<T>, TransformError> {
        let bound = DCT_LOG_BOUND + LOG_BOUND_SLACK;
        for &v in &values {
            if !(v > T::zero()) || v.as_f64().ln().abs() > bound {
                return Err(TransformError::DctScaleOutOfRange { value: v.as_f64() });
            }
        }
        Ok(DctScale { values })
    }

    pub fn identity() -> DctScale<T> {
        DctScale {
            values: [T::one(); 64],
        }
    }

    pub fn values(&self) -> &[T; 64] {
        &self.values
    }
}

/// White-balance gains, color matrix, and display gamma for the raw↔sRGB
/// baseline. The matrix inverse is fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorTransform<T> {
    pub gains: [T; 3],
    pub ccm: [[T; 3]; 3],
    pub gamma: T,
    inv_ccm: [[T; 3]; 3],
}

impl<T: Scalar> ColorTransform<T> {
    pub fn new(gains: [T; 3], ccm: [[T; 3]; 3], gamma: T) -> Result<ColorTransform<T>, TransformError> {
        if gains.iter().any(|g| !(*g > T::zero())) || !(gamma > T::zero()) {
            return Err(TransformError::NonPositiveColorParam);
        }
        let inv_ccm = invert_3x3(&ccm).ok_or(TransformError::SingularColorMatrix)?;
        Ok(ColorTransform {
            gains,
            ccm,
            gamma,
            inv_ccm,
        })
    }
}

fn invert_3x3<T: Scalar>(m: &[[T; 3]; 3]) -> Option<[[T; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs().as_f64() < 1e-12 {
        return None;
    }
    let inv_det = T::one() / det;
    let mut inv = [[T::zero(); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
            let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
            // Transposed cofactor.
            inv[c][r] = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) * inv_det;
        }
    }
    Some(inv)
}

/// The full coefficient set of the invertible pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams<T> {
    pub luts: ChannelLut<T>,
    pub gamma: GammaGrid<T>,
    pub dct: Option<DctScale<T>>,
    pub color: Option<ColorTransform<T>>,
}

impl<T: Scalar> AdapterParams<T> {
    /// Neutral parameters: pre-encode is the identity map.
    pub fn identity() -> AdapterParams<T> {
        AdapterParams {
            luts: ChannelLut::identity(),
            gamma: GammaGrid::constant(T::one()).unwrap(),
            dct: None,
            color: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Channel-wise tone LUTs
// ---------------------------------------------------------------------------

#[inline]
fn lut_segment<T: Scalar>(x: T) -> (usize, T) {
    let t = clamp01(x) * T::from_usize(LUT_SIZE - 1).unwrap();
    let mut i = t.floor().to_usize().unwrap_or(0);
    if i >= LUT_SIZE - 1 {
        i = LUT_SIZE - 2;
    }
    (i, t - T::from_usize(i).unwrap())
}

/// Map every sample through its channel's tone curve by linear interpolation
/// at position `x * 127`.
pub fn apply_lut<T: Scalar>(img: &RawImage<T>, luts: &ChannelLut<T>) -> RawImage<T> {
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            let e = luts.channel(c);
            let (i, f) = lut_segment(v);
            data.push(e[i] + f * (e[i + 1] - e[i]));
        }
    }
    RawImage::new(img.width(), img.height(), data)
}

/// Gradients of [`apply_lut`] with respect to the input samples and the LUT
/// entries.
pub(crate) fn apply_lut_backward<T: Scalar>(
    input: &RawImage<T>,
    luts: &ChannelLut<T>,
    d_out: &RawImage<T>,
) -> (RawImage<T>, [Vec<T>; 3]) {
    let mut d_in = d_out.clone();
    let mut d_e = [
        vec![T::zero(); LUT_SIZE],
        vec![T::zero(); LUT_SIZE],
        vec![T::zero(); LUT_SIZE],
    ];
    let n127 = T::from_usize(LUT_SIZE - 1).unwrap();
    for (idx, g) in d_in.data_mut().iter_mut().enumerate() {
        let c = idx % 3;
        let x = input.data()[idx];
        let e = luts.channel(c);
        let (i, f) = lut_segment(x);
        d_e[c][i] += *g * (T::one() - f);
        d_e[c][i + 1] += *g * f;
        let pass = x >= T::zero() && x <= T::one();
        *g = if pass {
            *g * n127 * (e[i + 1] - e[i])
        } else {
            T::zero()
        };
    }
    (d_in, d_e)
}

/// Bin-accelerated segment lookup for the exact piecewise-linear inverse.
struct LutInverter<'a, T> {
    entries: &'a [T],
    bin_start: [u16; 257],
    inv_d: [T; LUT_SIZE - 1],
}

impl<'a, T: Scalar> LutInverter<'a, T> {
    fn new(entries: &'a [T]) -> LutInverter<'a, T> {
        let mut bin_start = [0u16; 257];
        let mut seg = 0usize;
        for (k, slot) in bin_start.iter_mut().enumerate() {
            let lo = T::from_usize(k).unwrap() / T::c(256.0);
            while seg + 1 < LUT_SIZE - 1 && entries[seg + 1] <= lo {
                seg += 1;
            }
            *slot = seg as u16;
        }
        let mut inv_d = [T::zero(); LUT_SIZE - 1];
        for (j, slot) in inv_d.iter_mut().enumerate() {
            *slot = T::one() / (entries[j + 1] - entries[j]);
        }
        LutInverter {
            entries,
            bin_start,
            inv_d,
        }
    }

    /// Segment index `j` with `e[j] <= y <= e[j+1]`.
    #[inline]
    fn segment(&self, y: T) -> usize {
        let bin = (y * T::c(256.0)).to_usize().unwrap_or(0).min(256);
        let mut j = self.bin_start[bin] as usize;
        while j < LUT_SIZE - 2 && self.entries[j + 1] < y {
            j += 1;
        }
        j
    }

    #[inline]
    fn invert(&self, y: T) -> (T, usize) {
        let j = self.segment(y);
        let x = (T::from_usize(j).unwrap() + (y - self.entries[j]) * self.inv_d[j])
            / T::from_usize(LUT_SIZE - 1).unwrap();
        (x, j)
    }
}

/// Exact inverse of [`apply_lut`]: locate the segment containing each sample
/// and invert the linear piece. Inputs are clamped to `[0, 1]` first.
pub fn invert_lut<T: Scalar>(img: &RawImage<T>, luts: &ChannelLut<T>) -> RawImage<T> {
    let mut out = img.clone();
    invert_lut_in_place(&mut out, luts);
    out
}

pub(crate) fn invert_lut_in_place<T: Scalar>(img: &mut RawImage<T>, luts: &ChannelLut<T>) {
    let inverters = [
        LutInverter::new(luts.channel(0)),
        LutInverter::new(luts.channel(1)),
        LutInverter::new(luts.channel(2)),
    ];
    for px in img.data_mut().chunks_exact_mut(3) {
        for (c, v) in px.iter_mut().enumerate() {
            *v = inverters[c].invert(clamp01(*v)).0;
        }
    }
}

/// Gradients of [`invert_lut`] with respect to the input samples and the LUT
/// entries.
pub(crate) fn invert_lut_backward<T: Scalar>(
    input: &RawImage<T>,
    luts: &ChannelLut<T>,
    d_out: &RawImage<T>,
) -> (RawImage<T>, [Vec<T>; 3]) {
    let inverters = [
        LutInverter::new(luts.channel(0)),
        LutInverter::new(luts.channel(1)),
        LutInverter::new(luts.channel(2)),
    ];
    let mut d_in = d_out.clone();
    let mut d_e = [
        vec![T::zero(); LUT_SIZE],
        vec![T::zero(); LUT_SIZE],
        vec![T::zero(); LUT_SIZE],
    ];
    let n127 = T::from_usize(LUT_SIZE - 1).unwrap();
    for (idx, g) in d_in.data_mut().iter_mut().enumerate() {
        let c = idx % 3;
        let y_raw = input.data()[idx];
        let y = clamp01(y_raw);
        let e = luts.channel(c);
        let j = inverters[c].segment(y);
        let d = e[j + 1] - e[j];
        let denom = n127 * d;
        d_e[c][j] += *g * (y - e[j + 1]) / (denom * d);
        d_e[c][j + 1] -= *g * (y - e[j]) / (denom * d);
        let pass = y_raw >= T::zero() && y_raw <= T::one();
        *g = if pass { *g / denom } else { T::zero() };
    }
    (d_in, d_e)
}

// ---------------------------------------------------------------------------
// Pixel-wise gamma map
// ---------------------------------------------------------------------------

/// Raise every sample to the exponent given by the bilinearly upsampled grid;
/// `0^g` is defined as 0, and 1 maps to 1 exactly.
pub fn apply_gamma<T: Scalar>(img: &RawImage<T>, grid: &GammaGrid<T>) -> RawImage<T> {
    let field = grid.upsample(img.width(), img.height());
    pow_field(img, &field, false)
}

/// Exact inverse of [`apply_gamma`]: raise to `1 / gamma`.
pub fn invert_gamma<T: Scalar>(img: &RawImage<T>, grid: &GammaGrid<T>) -> RawImage<T> {
    let field = grid.upsample(img.width(), img.height());
    pow_field(img, &field, true)
}

/// Shared power-map kernel over a per-pixel exponent plane.
///
/// Arguments are staged per chunk so the exponential runs over a dense
/// cache-resident batch; decoded JPEG samples sit on the `k/255` lattice, so
/// their logs come from a 256-entry table instead of `ln` calls.
pub(crate) fn pow_field<T: Scalar>(img: &RawImage<T>, field: &[T], invert: bool) -> RawImage<T> {
    debug_assert_eq!(field.len(), img.pixels());
    let mut ln_lut = [T::zero(); 256];
    let mut val_lut = [T::zero(); 256];
    for k in 0..256 {
        val_lut[k] = T::from_usize(k).unwrap() / T::c(255.0);
        ln_lut[k] = val_lut[k].ln();
    }
    let full = T::c(255.0);
    const CHUNK: usize = 512; // pixels per batch
    let mut args = [T::zero(); CHUNK * 3];
    let mut data = Vec::with_capacity(img.data().len());

    let pixels = img.pixels();
    let mut base = 0usize;
    while base < pixels {
        let count = CHUNK.min(pixels - base);
        let samples = &img.data()[base * 3..(base + count) * 3];
        for (i, (px, &gamma)) in samples
            .chunks_exact(3)
            .zip(&field[base..base + count])
            .enumerate()
        {
            let e = if invert { T::one() / gamma } else { gamma };
            for (c, &v) in px.iter().enumerate() {
                args[i * 3 + c] = if v <= T::zero() || v == T::one() || e == T::one() {
                    T::zero() // fixed up below
                } else {
                    let ki = (v * full + T::c(0.5)).to_usize().unwrap_or(0).min(255);
                    let ln_v = if val_lut[ki] == v { ln_lut[ki] } else { v.ln() };
                    ln_v * e
                };
            }
        }
        T::exp_slice(&mut args[..count * 3]);
        for (i, (px, &gamma)) in samples
            .chunks_exact(3)
            .zip(&field[base..base + count])
            .enumerate()
        {
            let e = if invert { T::one() / gamma } else { gamma };
            for (c, &v) in px.iter().enumerate() {
                data.push(if v <= T::zero() {
                    T::zero()
                } else if v == T::one() || e == T::one() {
                    // x^1 is the identity; 1^g is exactly 1.
                    v
                } else {
                    args[i * 3 + c]
                });
            }
        }
        base += count;
    }
    RawImage::new(img.width(), img.height(), data)
}

/// Gradients of the power map with respect to the input image and the
/// full-resolution exponent plane.
///
/// `output` must be the forward result for `input` under the same `field` /
/// `invert` flag. Samples at 0 get zero gradients (the forward pins them).
pub(crate) fn pow_field_backward<T: Scalar>(
    input: &RawImage<T>,
    output: &RawImage<T>,
    field: &[T],
    invert: bool,
    d_out: &RawImage<T>,
) -> (RawImage<T>, Vec<T>) {
    let mut d_in = d_out.clone();
    let mut d_field = vec![T::zero(); field.len()];
    let data_in = input.data();
    let data_out = output.data();
    let g = d_in.data_mut();
    for (p, &gamma) in field.iter().enumerate() {
        let e = if invert { T::one() / gamma } else { gamma };
        let mut acc = T::zero();
        for c in 0..3 {
            let idx = p * 3 + c;
            let x = data_in[idx];
            if x <= T::zero() {
                g[idx] = T::zero();
                continue;
            }
            let y = data_out[idx];
            let ln_x = x.ln();
            // d(out)/d(exponent) = out * ln(in)
            let d_exp = g[idx] * y * ln_x;
            acc += if invert { -d_exp / (gamma * gamma) } else { d_exp };
            // d(out)/d(in) = e * out / in
            g[idx] = g[idx] * e * y / x;
        }
        d_field[p] = acc;
    }
    (d_in, d_field)
}

// ---------------------------------------------------------------------------
// Blockwise DCT coefficient scaling
// ---------------------------------------------------------------------------

/// Multiply each 8×8 block's DCT coefficients by the scale matrix (per
/// channel; the image is edge-replicated to block multiples and cropped
/// back).
pub fn scale_dct<T: Scalar>(img: &RawImage<T>, s: &DctScale<T>) -> RawImage<T> {
    dct_scale_image(img, s, ScaleMode::Mul)
}

/// Divide each block's DCT coefficients by the scale matrix; inverse of
/// [`scale_dct`].
///
/// On block-aligned dimensions the pair is exact. Otherwise the decode side
/// re-pads from the cropped image, so blocks touching the replicated margin
/// invert only approximately (interior blocks stay exact).
pub fn unscale_dct<T: Scalar>(img: &RawImage<T>, s: &DctScale<T>) -> RawImage<T> {
    dct_scale_image(img, s, ScaleMode::Div)
}

fn dct_scale_image<T: Scalar>(img: &RawImage<T>, s: &DctScale<T>, mode: ScaleMode) -> RawImage<T> {
    let dct = Dct8::new();
    let (w, h) = (img.width(), img.height());
    let planes = [
        dct_scale_plane(&dct, &img.channel_plane(0), w, h, s.values(), mode),
        dct_scale_plane(&dct, &img.channel_plane(1), w, h, s.values(), mode),
        dct_scale_plane(&dct, &img.channel_plane(2), w, h, s.values(), mode),
    ];
    RawImage::from_planes(w, h, &planes)
}

pub(crate) fn dct_scale_image_backward<T: Scalar>(
    input: &RawImage<T>,
    s: &DctScale<T>,
    mode: ScaleMode,
    d_out: &RawImage<T>,
) -> (RawImage<T>, [T; 64]) {
    let dct = Dct8::new();
    let (w, h) = (input.width(), input.height());
    let mut d_s = [T::zero(); 64];
    let planes = [
        dct_scale_plane_backward(
            &dct,
            &input.channel_plane(0),
            w,
            h,
            s.values(),
            mode,
            &d_out.channel_plane(0),
            &mut d_s,
        ),
        dct_scale_plane_backward(
            &dct,
            &input.channel_plane(1),
            w,
            h,
            s.values(),
            mode,
            &d_out.channel_plane(1),
            &mut d_s,
        ),
        dct_scale_plane_backward(
            &dct,
            &input.channel_plane(2),
            w,
            h,
            s.values(),
            mode,
            &d_out.channel_plane(2),
            &mut d_s,
        ),
    ];
    (RawImage::from_planes(w, h, &planes), d_s)
}

// ---------------------------------------------------------------------------
// Optional color transform (raw <-> sRGB baseline)
// ---------------------------------------------------------------------------

/// White balance, color matrix, and display-gamma encode: the wrapper stage
/// of the raw↔sRGB baseline.
pub fn apply_color<T: Scalar>(img: &RawImage<T>, ct: &ColorTransform<T>) -> RawImage<T> {
    let inv_gamma = T::one() / ct.gamma;
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let wb = [
            px[0] * ct.gains[0],
            px[1] * ct.gains[1],
            px[2] * ct.gains[2],
        ];
        for (c, v) in px.iter_mut().enumerate() {
            let m = ct.ccm[c][0] * wb[0] + ct.ccm[c][1] * wb[1] + ct.ccm[c][2] * wb[2];
            let m = m.max(T::zero());
            *v = clamp01(m.powf(inv_gamma));
        }
    }
    out
}

/// Inverse of [`apply_color`] for in-gamut pixels: gamma, matrix inverse,
/// then gain division.
pub fn invert_color<T: Scalar>(img: &RawImage<T>, ct: &ColorTransform<T>) -> RawImage<T> {
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let lin = [
            clamp01(px[0]).powf(ct.gamma),
            clamp01(px[1]).powf(ct.gamma),
            clamp01(px[2]).powf(ct.gamma),
        ];
        for (c, v) in px.iter_mut().enumerate() {
            let m = ct.inv_ccm[c][0] * lin[0] + ct.inv_ccm[c][1] * lin[1] + ct.inv_ccm[c][2] * lin[2];
            *v = m / ct.gains[c];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

/// Run the full pre-encode pipeline. Output samples are in `[0, 1]`.
pub fn pre_encode<T: Scalar>(img: &RawImage<T>, params: &AdapterParams<T>) -> RawImage<T> {
    let mut x = match &params.color {
        Some(ct) => apply_color(img, ct),
        None => img.clone(),
    };
    x = apply_lut(&x, &params.luts);
    if let Some(s) = &params.dct {
        x = scale_dct(&x, s);
    }
    // DCT scaling can overshoot the unit range; JPEG input must be in range.
    x.clamp_unit();
    apply_gamma(&x, &params.gamma)
}

/// Exactly invert [`pre_encode`] (up to the clamp, which is a no-op when the
/// scaled image stayed in range).
pub fn post_decode<T: Scalar>(img: &RawImage<T>, params: &AdapterParams<T>) -> RawImage<T> {
    if params.dct.is_none() && params.color.is_none() {
        // Hot path for the common configuration: one pass, no intermediate
        // buffers, bit-identical to the staged chain below.
        return post_decode_fused(img, params);
    }
    let mut x = invert_gamma(img, &params.gamma);
    if let Some(s) = &params.dct {
        x = unscale_dct(&x, s);
    }
    invert_lut_in_place(&mut x, &params.luts);
    if let Some(ct) = &params.color {
        x = invert_color(&x, ct);
    }
    x.clamp_unit();
    x
}

/// Fused gamma-inverse + LUT-inverse + clamp. Every per-sample expression
/// mirrors the staged stages exactly (same interpolation order, same log
/// table, same exp kernel), so the output is bit-identical.
fn post_decode_fused<T: Scalar>(img: &RawImage<T>, params: &AdapterParams<T>) -> RawImage<T> {
    let (w, h) = (img.width(), img.height());
    let xs = AxisMap::<T>::new(GRID_SIZE, w);
    let ys = AxisMap::<T>::new(GRID_SIZE, h);
    let grid = params.gamma.values();
    let mut ln_lut = [T::zero(); 256];
    let mut val_lut = [T::zero(); 256];
    for k in 0..256 {
        val_lut[k] = T::from_usize(k).unwrap() / T::c(255.0);
        ln_lut[k] = val_lut[k].ln();
    }
    let full = T::c(255.0);
    let inverters = [
        LutInverter::new(params.luts.channel(0)),
        LutInverter::new(params.luts.channel(1)),
        LutInverter::new(params.luts.channel(2)),
    ];
    let input = img.data();
    let mut data = Vec::with_capacity(input.len());
    let mut exponents = vec![T::zero(); w];
    let mut args = vec![T::zero(); w * 3];
    for y in 0..h {
        let (r0, r1, wy) = (ys.lo[y] * GRID_SIZE, ys.hi[y] * GRID_SIZE, ys.w[y]);
        let row = &input[y * w * 3..(y + 1) * w * 3];
        for x in 0..w {
            let (x0, x1, wx) = (xs.lo[x], xs.hi[x], xs.w[x]);
            let top = grid[r0 + x0] + (grid[r0 + x1] - grid[r0 + x0]) * wx;
            let bot = grid[r1 + x0] + (grid[r1 + x1] - grid[r1 + x0]) * wx;
            let gamma = top + (bot - top) * wy;
            let e = T::one() / gamma;
            exponents[x] = e;
            for c in 0..3 {
                let v = row[x * 3 + c];
                args[x * 3 + c] = if v <= T::zero() || v == T::one() || e == T::one() {
                    T::zero() // fixed up below
                } else {
                    let ki = (v * full + T::c(0.5)).to_usize().unwrap_or(0).min(255);
                    let ln_v = if val_lut[ki] == v { ln_lut[ki] } else { v.ln() };
                    ln_v * e
                };
            }
        }
        T::exp_slice(&mut args);
        for x in 0..w {
            let e = exponents[x];
            for (c, inverter) in inverters.iter().enumerate() {
                let v = row[x * 3 + c];
                let z = if v <= T::zero() {
                    T::zero()
                } else if v == T::one() || e == T::one() {
                    v
                } else {
                    args[x * 3 + c]
                };
                data.push(clamp01(inverter.invert(clamp01(z)).0));
            }
        }
    }
    RawImage::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn random_image(rng: &mut StdRng, w: usize, h: usize) -> RawImage<f64> {
        RawImage::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect())
    }

    fn gamma_shaped_lut(g: f64) -> ChannelLut<f64> {
        let curve: Vec<f64> = (0..LUT_SIZE)
            .map(|i| (i as f64 / 127.0).powf(1.0 / g))
            .collect();
        ChannelLut::new([curve.clone(), curve.clone(), curve]).unwrap()
    }

    #[test]
    fn identity_lut_is_identity() {
        let mut rng = StdRng::seed_from_u64(1);
        let img = random_image(&mut rng, 9, 7);
        let out = apply_lut(&img, &ChannelLut::identity());
        assert!(img.max_abs_diff(&out) <= 1e-12);
    }

    #[test]
    fn lut_endpoints_are_pinned() {
        let lut = gamma_shaped_lut(2.2);
        let img = RawImage::new(1, 1, vec![0.0f64, 1.0, 0.5]);
        let out = apply_lut(&img, &lut);
        assert_eq!(out.data()[0], 0.0);
        assert_eq!(out.data()[1], 1.0);
    }

    #[test]
    fn gamma_shaped_lut_tracks_power_curve() {
        // Linear interpolation of a sampled power curve deviates from the
        // curve by at most the sag over the segment containing the query;
        // a dense sweep of that one segment measures the bound directly.
        let lut = gamma_shaped_lut(2.2);
        let f = |x: f64| x.powf(1.0 / 2.2);
        let (seg, _) = lut_segment(0.25);
        let e = lut.channel(0);
        let mut seg_err: f64 = 0.0;
        for k in 0..=1000 {
            let x = (seg as f64 + k as f64 / 1000.0) / 127.0;
            let fr = x * 127.0 - seg as f64;
            let interp = e[seg] + fr * (e[seg + 1] - e[seg]);
            seg_err = seg_err.max((interp - f(x)).abs());
        }
        let img = RawImage::new(1, 1, vec![0.25f64; 3]);
        let out = apply_lut(&img, &lut);
        assert!((out.data()[0] - f(0.25)).abs() <= seg_err + 1e-12);
        // Away from the steep toe the 128-entry table tracks tightly.
        assert!(seg_err < 1e-4, "seg_err {seg_err}");
    }

    #[test]
    fn lut_roundtrip_exact() {
        let mut rng = StdRng::seed_from_u64(2);
        let lut = gamma_shaped_lut(1.7);
        let img = random_image(&mut rng, 25, 40); // 1000 samples per channel
        let there = apply_lut(&img, &lut);
        let back = invert_lut(&there, &lut);
        assert!(img.max_abs_diff(&back) <= 1e-10);
        // Endpoints invert exactly.
        let ends = RawImage::new(1, 1, vec![0.0f64, 1.0, 0.0]);
        let back = invert_lut(&ends, &lut);
        assert_eq!(back.data()[0], 0.0);
        assert_eq!(back.data()[1], 1.0);
    }

    #[test]
    fn invert_identity_lut_is_identity() {
        let mut rng = StdRng::seed_from_u64(3);
        let img = random_image(&mut rng, 8, 8);
        let out = invert_lut(&img, &ChannelLut::identity());
        assert!(img.max_abs_diff(&out) <= 1e-12);
    }

    #[test]
    fn gamma_unit_grid_is_identity() {
        let mut rng = StdRng::seed_from_u64(4);
        let img = random_image(&mut rng, 10, 6);
        let grid = GammaGrid::constant(1.0).unwrap();
        assert!(img.max_abs_diff(&apply_gamma(&img, &grid)) <= 1e-15);
        assert!(img.max_abs_diff(&invert_gamma(&img, &grid)) <= 1e-15);
    }

    #[test]
    fn gamma_constant_two_squares() {
        let grid = GammaGrid::constant(2.0).unwrap();
        let img = RawImage::new(1, 1, vec![0.5f64, 0.0, 1.0]);
        let out = apply_gamma(&img, &grid);
        assert!((out.data()[0] - 0.25).abs() < 1e-15);
        assert_eq!(out.data()[1], 0.0);
        assert_eq!(out.data()[2], 1.0);
    }

    #[test]
    fn gamma_matches_reference_interpolation() {
        let mut rng = StdRng::seed_from_u64(5);
        let values: Vec<f64> = (0..GRID_SIZE * GRID_SIZE)
            .map(|_| (2.0 * (rng.gen::<f64>() * 2.0 - 1.0_f64).tanh()).exp())
            .collect();
        let grid = GammaGrid::new(values.clone()).unwrap();
        let img = random_image(&mut rng, 37, 23);
        let out = apply_gamma(&img, &grid);
        // Reference: per-pixel bilinear interpolation done longhand.
        let (w, h) = (img.width(), img.height());
        for &(x, y) in &[(0usize, 0usize), (36, 22), (17, 11), (5, 20)] {
            let fx = x as f64 * (GRID_SIZE - 1) as f64 / (w - 1) as f64;
            let fy = y as f64 * (GRID_SIZE - 1) as f64 / (h - 1) as f64;
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(GRID_SIZE - 1), (y0 + 1).min(GRID_SIZE - 1));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            let g = values[y0 * GRID_SIZE + x0] * (1.0 - ax) * (1.0 - ay)
                + values[y0 * GRID_SIZE + x1] * ax * (1.0 - ay)
                + values[y1 * GRID_SIZE + x0] * (1.0 - ax) * ay
                + values[y1 * GRID_SIZE + x1] * ax * ay;
            for c in 0..3 {
                let expect = img.at(x, y, c).powf(g);
                assert!((out.at(x, y, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_roundtrip() {
        let mut rng = StdRng::seed_from_u64(6);
        let values: Vec<f64> = (0..GRID_SIZE * GRID_SIZE)
            .map(|_| (2.0 * (rng.gen::<f64>() * 2.0 - 1.0_f64).tanh()).exp())
            .collect();
        let grid = GammaGrid::new(values).unwrap();
        let img = random_image(&mut rng, 64, 48);
        let back = invert_gamma(&apply_gamma(&img, &grid), &grid);
        assert!(img.max_abs_diff(&back) <= 1e-9);
    }

    #[test]
    fn scale_dct_unit_is_identity() {
        let mut rng = StdRng::seed_from_u64(7);
        let img = random_image(&mut rng, 16, 16);
        let out = scale_dct(&img, &DctScale::identity());
        assert!(img.max_abs_diff(&out) <= 1e-12);
    }

    #[test]
    fn constant_block_unchanged_iff_dc_scale_unit() {
        let img = RawImage::new(8, 8, vec![1.0f64; 192]);
        let mut s = [1.0f64; 64];
        for (i, v) in s.iter_mut().enumerate() {
            if i != 0 {
                *v = 1.0 + 0.5 * ((i % 7) as f64 / 7.0);
            }
        }
        let keep = scale_dct(&img, &DctScale::new(s).unwrap());
        assert!(img.max_abs_diff(&keep) <= 1e-12);
        s[0] = 1.5;
        let changed = scale_dct(&img, &DctScale::new(s).unwrap());
        assert!(img.max_abs_diff(&changed) > 0.1);
    }

    #[test]
    fn scale_dct_roundtrip() {
        let mut rng = StdRng::seed_from_u64(8);
        let img = random_image(&mut rng, 24, 16);
        let mut s = [0.0f64; 64];
        for v in &mut s {
            *v = (0.7 * (rng.gen::<f64>() * 2.0 - 1.0_f64).tanh()).exp();
        }
        let s = DctScale::new(s).unwrap();
        let back = unscale_dct(&scale_dct(&img, &s), &s);
        assert!(img.max_abs_diff(&back) <= 1e-10);
    }

    #[test]
    fn scale_dct_roundtrip_unaligned_exact_away_from_border() {
        // When dimensions are not block multiples, the decode side re-pads
        // from the cropped output, so blocks touching the replicated margin
        // invert only approximately. Fully interior blocks invert exactly.
        let mut rng = StdRng::seed_from_u64(81);
        let (w, h) = (21, 13);
        let img = random_image(&mut rng, w, h);
        let mut s = [0.0f64; 64];
        for v in &mut s {
            *v = (0.7 * (rng.gen::<f64>() * 2.0 - 1.0_f64).tanh()).exp();
        }
        let s = DctScale::new(s).unwrap();
        let back = unscale_dct(&scale_dct(&img, &s), &s);
        let mut interior_worst = 0.0f64;
        for y in 0..8 {
            for x in 0..16 {
                for c in 0..3 {
                    interior_worst =
                        interior_worst.max((img.at(x, y, c) - back.at(x, y, c)).abs());
                }
            }
        }
        assert!(interior_worst <= 1e-10, "interior err {interior_worst}");
        // Border-block error stays bounded.
        assert!(img.max_abs_diff(&back) < 0.5);
    }

    #[test]
    fn color_identity_roundtrip() {
        let ct = ColorTransform::new(
            [1.0, 1.0, 1.0],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            1.0,
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        let img = random_image(&mut rng, 6, 6);
        assert!(img.max_abs_diff(&apply_color(&img, &ct)) <= 1e-12);
    }

    #[test]
    fn color_gamma_22_gray() {
        let ct = ColorTransform::new(
            [1.0, 1.0, 1.0],
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            2.2,
        )
        .unwrap();
        let img = RawImage::new(1, 1, vec![0.25f64; 3]);
        let out = apply_color(&img, &ct);
        let expect = 0.25f64.powf(1.0 / 2.2);
        assert!((out.data()[0] - expect).abs() < 1e-12);
        assert!((expect - 0.5325).abs() < 1e-3);
    }

    #[test]
    fn color_roundtrip_in_gamut() {
        let ct = ColorTransform::new(
            [1.9, 1.0, 1.5],
            [
                [1.6, -0.4, -0.2],
                [-0.3, 1.5, -0.2],
                [-0.1, -0.5, 1.6],
            ],
            2.2,
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(10);
        let mut worst = 0.0f64;
        let mut tried = 0;
        while tried < 1000 {
            let rgb = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let img = RawImage::new(1, 1, rgb.to_vec());
            let enc = apply_color(&img, &ct);
            // Skip out-of-gamut pixels (clamped by the forward).
            if enc.data().iter().any(|&v| v <= 0.0 || v >= 1.0) {
                continue;
            }
            let back = invert_color(&enc, &ct);
            worst = worst.max(img.max_abs_diff(&back));
            tried += 1;
        }
        assert!(worst <= 1e-9, "worst {worst}");
    }

    #[test]
    fn singular_ccm_rejected() {
        let r = ColorTransform::new(
            [1.0, 1.0, 1.0],
            [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]],
            2.2,
        );
        assert!(matches!(r, Err(TransformError::SingularColorMatrix)));
    }

    #[test]
    fn pre_encode_identity_params() {
        let mut rng = StdRng::seed_from_u64(11);
        let img = random_image(&mut rng, 12, 9);
        let out = pre_encode(&img, &AdapterParams::identity());
        assert!(img.max_abs_diff(&out) <= 1e-12);
        let back = post_decode(&img, &AdapterParams::identity());
        assert!(img.max_abs_diff(&back) <= 1e-12);
    }

    #[test]
    fn pre_encode_gamma_only_squares() {
        let mut params = AdapterParams::identity();
        params.gamma = GammaGrid::constant(2.0).unwrap();
        let img = RawImage::new(2, 2, vec![0.5f64; 12]);
        let out = pre_encode(&img, &params);
        for &v in out.data() {
            assert!((v - 0.25).abs() < 1e-14);
        }
    }

    #[test]
    fn pre_encode_matches_stage_composition() {
        let mut rng = StdRng::seed_from_u64(12);
        let lut = gamma_shaped_lut(1.9);
        let gvalues: Vec<f64> = (0..GRID_SIZE * GRID_SIZE)
            .map(|_| (2.0 * (rng.gen::<f64>() * 2.0 - 1.0_f64).tanh()).exp())
            .collect();
        let mut s = [0.0f64; 64];
        for v in &mut s {
            *v = (0.7 * (rng.gen::<f64>() * 2.0 - 1.0_f64).tanh()).exp();
        }
        let params = AdapterParams {
            luts: lut.clone(),
            gamma: GammaGrid::new(gvalues.clone()).unwrap(),
            dct: Some(DctScale::new(s).unwrap()),
            color: None,
        };
        let img = random_image(&mut rng, 16, 16);
        let composed = pre_encode(&img, &params);
        let mut manual = apply_lut(&img, &lut);
        manual = scale_dct(&manual, params.dct.as_ref().unwrap());
        manual.clamp_unit();
        manual = apply_gamma(&manual, &params.gamma);
        assert!(composed.max_abs_diff(&manual) <= 1e-14);
    }

    #[test]
    fn fused_decode_is_bit_identical_to_staged() {
        let mut rng = StdRng::seed_from_u64(99);
        let lut = gamma_shaped_lut(2.1);
        let gvalues: Vec<f64> = (0..GRID_SIZE * GRID_SIZE)
            .map(|_| (2.0 * (rng.gen::<f64>() * 2.0 - 1.0_f64).tanh()).exp())
            .collect();
        let params = AdapterParams {
            luts: lut,
            gamma: GammaGrid::new(gvalues).unwrap(),
            dct: None,
            color: None,
        };
        // Mix of lattice (k/255) and arbitrary samples.
        let img = RawImage::new(
            31,
            17,
            (0..31 * 17 * 3)
                .map(|i| {
                    if i % 2 == 0 {
                        ((i / 2) % 256) as f64 / 255.0
                    } else {
                        rng.gen()
                    }
                })
                .collect(),
        );
        let fused = post_decode(&img, &params);
        let mut staged = invert_gamma(&img, &params.gamma);
        invert_lut_in_place(&mut staged, &params.luts);
        staged.clamp_unit();
        assert_eq!(fused, staged);
    }

    #[test]
    fn roundtrip_without_dct() {
        let mut rng = StdRng::seed_from_u64(13);
        let lut = gamma_shaped_lut(2.4);
        let gvalues: Vec<f64> = (0..GRID_SIZE * GRID_SIZE)
            .map(|_| (2.0 * (rng.gen::<f64>() * 2.0 - 1.0_f64).tanh()).exp())
            .collect();
        let params = AdapterParams {
            luts: lut,
            gamma: GammaGrid::new(gvalues).unwrap(),
            dct: None,
            color: None,
        };
        let img = random_image(&mut rng, 33, 17);
        let back = post_decode(&pre_encode(&img, &params), &params);
        assert!(img.max_abs_diff(&back) <= 1e-9);
    }

    #[test]
    fn roundtrip_with_dct_on_range_safe_image() {
        let mut rng = StdRng::seed_from_u64(14);
        let lut = ChannelLut::identity();
        let gvalues: Vec<f64> = (0..GRID_SIZE * GRID_SIZE)
            .map(|_| (0.5 * (rng.gen::<f64>() * 2.0 - 1.0_f64).tanh()).exp())
            .collect();
        let mut s = [0.0f64; 64];
        for v in &mut s {
            *v = 1.0 + 0.05 * (rng.gen::<f64>() - 0.5);
        }
        let params = AdapterParams {
            luts: lut,
            gamma: GammaGrid::new(gvalues).unwrap(),
            dct: Some(DctScale::new(s).unwrap()),
            color: None,
        };
        // Mid-range image so DCT scaling cannot push values out of [0, 1].
        let img = RawImage::new(
            24,
            24,
            (0..24 * 24 * 3)
                .map(|_| 0.1 + 0.8 * rng.gen::<f64>() * 0.5 + 0.2)
                .collect(),
        );
        let pre = pre_encode(&img, &params);
        assert!(pre.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let back = post_decode(&pre, &params);
        assert!(img.max_abs_diff(&back) <= 1e-6);
    }
}
