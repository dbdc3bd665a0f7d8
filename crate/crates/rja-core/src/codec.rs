//! Bit-exact serialization of adapter parameters into the JPEG COM payload.
//!
//! Wire layout (version 1, little-endian), before compression:
//!
//! ```text
//! magic "RJA1"            4 bytes
//! version                 1 byte  (= 1)
//! flags                   1 byte  (bit0 DCT present, bit1 color present,
//!                                  bit2 reserved)
//! gamma log-min           4 bytes (f32)
//! gamma log-max           4 bytes (f32)
//! gamma grid              10000 × u16  (ln(gamma) linearly quantized over
//!                                       [log-min, log-max])
//! tone LUTs               3 × 128 × u16 (quantized over [0,1], strictly
//!                                        increasing after repair)
//! [DCT scale]             64 × f32
//! [color transform]       3 × f32 gains, 9 × f32 row-major matrix, 1 × f32 gamma
//! ```
//!
//! The body is DEFLATE-compressed with a zlib wrapper (RFC 1950), Base64
//! encoded (RFC 4648, standard alphabet with padding), and prefixed with
//! `RJA:`. The encoder itself uses the dequantized values, so the decoder
//! reads bit-identical coefficients ("decode what you encode").

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use std::io::{Read, Write};

use crate::transform::{
    AdapterParams, ChannelLut, ColorTransform, DctScale, GammaGrid, TransformError, GRID_SIZE,
    LUT_SIZE,
};

pub const MAGIC: [u8; 4] = *b"RJA1";
pub const VERSION: u8 = 1;
pub const TEXT_PREFIX: &str = "RJA:";
/// Hard ceiling from the JPEG COM segment: 65535 minus the length field.
pub const MAX_COM_PAYLOAD: usize = 65533;

const FLAG_DCT: u8 = 0x01;
const FLAG_COLOR: u8 = 0x02;

// Log-ranges narrower than this are stored as a degenerate (constant) range;
// below it, u16 re-quantization of exp/ln round-trip noise would not be
// idempotent.
const DEGENERATE_LOG_RANGE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("payload text must start with {TEXT_PREFIX:?}")]
    MissingPrefix,
    #[error("invalid base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("deflate error: {0}")]
    Deflate(std::io::Error),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported payload version {0}")]
    UnsupportedVersion(u8),
    #[error("payload body truncated or oversized")]
    BadBodyLength,
    #[error("LUT entries not strictly increasing after decode")]
    NonMonotoneLut,
    #[error("payload would exceed the COM segment limit: {0} bytes")]
    OversizePayload(usize),
    #[error("parameter validation failed: {0}")]
    Transform(#[from] TransformError),
    #[error("parameters contain non-finite values")]
    NonFinite,
}

/// The Base64 COM payload text, `RJA:`-prefixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComPayload {
    text: String,
}

impl ComPayload {
    /// Wrap existing payload text, checking prefix and COM size limit.
    pub fn from_text(text: String) -> Result<ComPayload, CodecError> {
        if !text.starts_with(TEXT_PREFIX) {
            return Err(CodecError::MissingPrefix);
        }
        if text.len() > MAX_COM_PAYLOAD {
            return Err(CodecError::OversizePayload(text.len()));
        }
        Ok(ComPayload { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Payload size in bytes as stored in the COM segment.
    pub fn byte_len(&self) -> usize {
        self.text.len()
    }
}

/// Header facts surfaced by `deserialize` (and the `inspect` command).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadInfo {
    pub version: u8,
    pub has_dct: bool,
    pub has_color: bool,
    /// Uncompressed body size in bytes.
    pub body_bytes: usize,
    /// Compressed (pre-Base64) size in bytes.
    pub compressed_bytes: usize,
}

// ---------------------------------------------------------------------------
// Quantizers (shared by serialize / deserialize / quantize)
// ---------------------------------------------------------------------------

fn f32_at_most(v: f64) -> f32 {
    let c = v as f32;
    if (c as f64) > v {
        c.next_down()
    } else {
        c
    }
}

fn f32_at_least(v: f64) -> f32 {
    let c = v as f32;
    if (c as f64) < v {
        c.next_up()
    } else {
        c
    }
}

struct GammaQuant {
    log_min: f32,
    log_max: f32,
    q: Vec<u16>,
}

fn quantize_gamma(values: &[f64]) -> Result<GammaQuant, CodecError> {
    let ln: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    if ln.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite);
    }
    let lo = ln.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ln.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < DEGENERATE_LOG_RANGE {
        // Constant (or near-constant) grid: store a degenerate range so the
        // values restore exactly from log-min alone.
        let l = lo as f32;
        return Ok(GammaQuant {
            log_min: l,
            log_max: l,
            q: vec![0u16; values.len()],
        });
    }
    // Round the endpoints outward so every sample stays inside the range.
    let log_min = f32_at_most(lo);
    let log_max = f32_at_least(hi);
    let range = log_max as f64 - log_min as f64;
    let q = ln
        .iter()
        .map(|&v| {
            let t = (v - log_min as f64) / range * 65535.0;
            t.round().clamp(0.0, 65535.0) as u16
        })
        .collect();
    Ok(GammaQuant {
        log_min,
        log_max,
        q,
    })
}

fn dequantize_gamma(log_min: f32, log_max: f32, q: &[u16]) -> Vec<f64> {
    let lo = log_min as f64;
    let range = log_max as f64 - lo;
    q.iter()
        .map(|&k| (lo + k as f64 / 65535.0 * range).exp())
        .collect()
}

/// Quantize one LUT channel to the u16 lattice, repairing strict
/// monotonicity: a forward cumulative-max-plus-one pass, then a backward
/// clamp so the curve still ends exactly at 65535. 128 entries always fit in
/// 65536 levels.
fn quantize_lut_channel(entries: &[f64]) -> [u16; LUT_SIZE] {
    let mut q = [0i64; LUT_SIZE];
    for (o, &e) in q.iter_mut().zip(entries) {
        *o = (e * 65535.0).round().clamp(0.0, 65535.0) as i64;
    }
    q[0] = 0;
    for i in 1..LUT_SIZE {
        q[i] = q[i].max(q[i - 1] + 1);
    }
    q[LUT_SIZE - 1] = 65535;
    for i in (0..LUT_SIZE - 1).rev() {
        q[i] = q[i].min(q[i + 1] - 1);
    }
    let mut out = [0u16; LUT_SIZE];
    for (o, &v) in out.iter_mut().zip(&q) {
        *o = v as u16;
    }
    out
}

fn dequantize_lut_channel(q: &[u16; LUT_SIZE]) -> Vec<f64> {
    q.iter().map(|&k| k as f64 / 65535.0).collect()
}

// ---------------------------------------------------------------------------
// Serialize / deserialize
// ---------------------------------------------------------------------------

/// Serialize parameters into the COM payload text.
pub fn serialize(params: &AdapterParams<f64>) -> Result<ComPayload, CodecError> {
    let gq = quantize_gamma(params.gamma.values())?;
    let mut body = Vec::with_capacity(6 + 8 + 2 * GRID_SIZE * GRID_SIZE + 6 * LUT_SIZE + 64 * 4 + 52);
    body.extend_from_slice(&MAGIC);
    body.push(VERSION);
    let mut flags = 0u8;
    if params.dct.is_some() {
        flags |= FLAG_DCT;
    }
    if params.color.is_some() {
        flags |= FLAG_COLOR;
    }
    body.push(flags);
    body.extend_from_slice(&gq.log_min.to_le_bytes());
    body.extend_from_slice(&gq.log_max.to_le_bytes());
    for &k in &gq.q {
        body.extend_from_slice(&k.to_le_bytes());
    }
    for c in 0..3 {
        let q = quantize_lut_channel(params.luts.channel(c));
        for k in q {
            body.extend_from_slice(&k.to_le_bytes());
        }
    }
    if let Some(s) = &params.dct {
        for &v in s.values() {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    if let Some(ct) = &params.color {
        for &g in &ct.gains {
            body.extend_from_slice(&(g as f32).to_le_bytes());
        }
        for row in &ct.ccm {
            for &v in row {
                body.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        body.extend_from_slice(&(ct.gamma as f32).to_le_bytes());
    }

    let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(6));
    enc.write_all(&body).map_err(CodecError::Deflate)?;
    let compressed = enc.finish().map_err(CodecError::Deflate)?;
    let text = format!(
        "{TEXT_PREFIX}{}",
        base64::Engine::encode(&base64::engine::general_purpose::STANDARD, &compressed)
    );
    if text.len() > MAX_COM_PAYLOAD {
        return Err(CodecError::OversizePayload(text.len()));
    }
    Ok(ComPayload { text })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::BadBodyLength);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
}

/// Decode and validate the COM payload back into parameters.
pub fn deserialize(payload: &ComPayload) -> Result<(AdapterParams<f64>, PayloadInfo), CodecError> {
    let b64 = payload
        .text
        .strip_prefix(TEXT_PREFIX)
        .ok_or(CodecError::MissingPrefix)?;
    let compressed = base64::Engine::decode(&base64::engine::general_purpose::STANDARD, b64)?;
    let mut body = Vec::new();
    // The v1 body is ~21 KB; anything past this is malformed.
    ZlibDecoder::new(&compressed[..])
        .take(1 << 20)
        .read_to_end(&mut body)
        .map_err(CodecError::Deflate)?;

    let mut r = Reader { buf: &body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let flags = r.u8()?;
    let log_min = r.f32()?;
    let log_max = r.f32()?;
    let mut gq = Vec::with_capacity(GRID_SIZE * GRID_SIZE);
    for _ in 0..GRID_SIZE * GRID_SIZE {
        gq.push(r.u16()?);
    }
    let gamma = GammaGrid::new(dequantize_gamma(log_min, log_max, &gq))?;

    let mut lut_channels: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for channel in &mut lut_channels {
        let mut q = [0u16; LUT_SIZE];
        for slot in &mut q {
            *slot = r.u16()?;
        }
        if q[0] != 0 || q[LUT_SIZE - 1] != 65535 || q.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CodecError::NonMonotoneLut);
        }
        *channel = dequantize_lut_channel(&q);
    }
    let luts = ChannelLut::new(lut_channels)?;

    let dct = if flags & FLAG_DCT != 0 {
        let mut s = [0.0f64; 64];
        for v in &mut s {
            *v = r.f32()? as f64;
        }
        Some(DctScale::new(s)?)
    } else {
        None
    };
    let color = if flags & FLAG_COLOR != 0 {
        let gains = [r.f32()? as f64, r.f32()? as f64, r.f32()? as f64];
        let mut ccm = [[0.0f64; 3]; 3];
        for row in &mut ccm {
            for v in row.iter_mut() {
                *v = r.f32()? as f64;
            }
        }
        let gamma_exp = r.f32()? as f64;
        Some(ColorTransform::new(gains, ccm, gamma_exp)?)
    } else {
        None
    };
    if r.pos != body.len() {
        return Err(CodecError::BadBodyLength);
    }

    Ok((
        AdapterParams {
            luts,
            gamma,
            dct,
            color,
        },
        PayloadInfo {
            version,
            has_dct: flags & FLAG_DCT != 0,
            has_color: flags & FLAG_COLOR != 0,
            body_bytes: body.len(),
            compressed_bytes: compressed.len(),
        },
    ))
}

/// Project parameters onto the serialization lattice without going through
/// bytes; `deserialize(serialize(p))` equals `quantize(p)` exactly.
pub fn quantize(params: &AdapterParams<f64>) -> Result<AdapterParams<f64>, CodecError> {
    let gq = quantize_gamma(params.gamma.values())?;
    let gamma = GammaGrid::new(dequantize_gamma(gq.log_min, gq.log_max, &gq.q))?;
    let mut lut_channels: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (c, channel) in lut_channels.iter_mut().enumerate() {
        *channel = dequantize_lut_channel(&quantize_lut_channel(params.luts.channel(c)));
    }
    let luts = ChannelLut::new(lut_channels)?;
    let dct = match &params.dct {
        Some(s) => {
            let mut v = [0.0f64; 64];
            for (o, &x) in v.iter_mut().zip(s.values()) {
                *o = (x as f32) as f64;
            }
            Some(DctScale::new(v)?)
        }
        None => None,
    };
    let color = match &params.color {
        Some(ct) => {
            let gains = [
                (ct.gains[0] as f32) as f64,
                (ct.gains[1] as f32) as f64,
                (ct.gains[2] as f32) as f64,
            ];
            let mut ccm = [[0.0f64; 3]; 3];
            for (r, row) in ccm.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = (ct.ccm[r][c] as f32) as f64;
                }
            }
            Some(ColorTransform::new(gains, ccm, (ct.gamma as f32) as f64)?)
        }
        None => None,
    };
    Ok(AdapterParams {
        luts,
        gamma,
        dct,
        color,
    })
}

/// Measured quantization error per field, with the documented bounds.
#[derive(Debug, Clone, Copy)]
pub struct QuantReport {
    /// Max |ln(gamma) - ln(gamma_quantized)|.
    pub gamma_log_err: f64,
    /// Documented bound: (log-max - log-min)/65535, plus the degenerate-range
    /// collapse allowance.
    pub gamma_log_bound: f64,
    /// Max LUT entry error against the pre-repair lattice.
    pub lut_err: f64,
    /// Documented bound: 1/65535 (before monotonicity repair).
    pub lut_bound: f64,
    /// Max LUT entry error after repair (repair can move near-flat entries).
    pub lut_err_post_repair: f64,
    /// Max DCT scale error (f32 storage).
    pub dct_err: f64,
    /// Max color parameter error (f32 storage).
    pub color_err: f64,
}

impl QuantReport {
    /// True when every measured error respects its documented bound.
    pub fn within_bounds(&self) -> bool {
        self.gamma_log_err <= self.gamma_log_bound && self.lut_err <= self.lut_bound
    }
}

/// Quantize and report per-field round-trip error bounds.
pub fn quantization_roundtrip_bound(params: &AdapterParams<f64>) -> Result<QuantReport, CodecError> {
    let q = quantize(params)?;
    let mut gamma_log_err = 0.0f64;
    for (a, b) in params.gamma.values().iter().zip(q.gamma.values()) {
        gamma_log_err = gamma_log_err.max((a.ln() - b.ln()).abs());
    }
    let gq = quantize_gamma(params.gamma.values())?;
    let gamma_log_bound =
        (gq.log_max as f64 - gq.log_min as f64) / 65535.0 + DEGENERATE_LOG_RANGE;

    let mut lut_err = 0.0f64;
    let mut lut_err_post = 0.0f64;
    for c in 0..3 {
        for (i, (&a, &b)) in params.luts.channel(c).iter().zip(q.luts.channel(c)).enumerate() {
            let pre = (a * 65535.0).round().clamp(0.0, 65535.0) / 65535.0;
            lut_err = lut_err.max((a - pre).abs());
            lut_err_post = lut_err_post.max((a - b).abs());
            let _ = i;
        }
    }

    let mut dct_err = 0.0f64;
    if let (Some(a), Some(b)) = (&params.dct, &q.dct) {
        for (x, y) in a.values().iter().zip(b.values()) {
            dct_err = dct_err.max((x - y).abs());
        }
    }
    let mut color_err = 0.0f64;
    if let (Some(a), Some(b)) = (&params.color, &q.color) {
        for (x, y) in a.gains.iter().zip(&b.gains) {
            color_err = color_err.max((x - y).abs());
        }
        for (ra, rb) in a.ccm.iter().zip(&b.ccm) {
            for (x, y) in ra.iter().zip(rb) {
                color_err = color_err.max((x - y).abs());
            }
        }
        color_err = color_err.max((a.gamma - b.gamma).abs());
    }

    Ok(QuantReport {
        gamma_log_err,
        gamma_log_bound,
        lut_err,
        lut_bound: 1.0 / 65535.0,
        lut_err_post_repair: lut_err_post,
        dct_err,
        color_err,
    })
}
