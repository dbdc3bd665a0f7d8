//! Differentiable baseline-JPEG degradation simulator.
//!
//! The pipeline mirrors a real baseline codec: full-range YCbCr conversion
//! (ITU-T T.871 coefficients, chroma kept centered around zero), optional
//! 4:2:0 chroma subsampling, a `-128/255` level shift on luma, blockwise 8×8
//! DCT, division by quality-scaled quantization tables, rounding, and the
//! inverse chain. In soft mode the rounding operator is replaced by a
//! truncated Fourier series, which keeps the whole simulator differentiable;
//! hard mode rounds half away from zero and is used to validate against a
//! real codec. Entropy coding is out of scope — file sizes come from the real
//! codec.

use crate::dct::{align_up, load_block, pad_crop_adjoint, pad_replicate, store_block, Dct8, BLOCK};
use crate::image::{resample_plane, resample_plane_adjoint, AxisMap, RawImage};
use crate::num::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("quality must be in [1, 100], got {0}")]
    QualityOutOfRange(u8),
    #[error("base quantization table entries must be in [1, 255]")]
    BadBaseTable,
    #[error("fourier term count must be >= 1")]
    BadFourierTerms,
    #[error("4:2:0 subsampling requires even plane dimensions, got {w}x{h}")]
    OddChromaDims { w: usize, h: usize },
}

/// Rounding operator used on quantized coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    /// Truncated-Fourier-series approximation; differentiable everywhere.
    Soft,
    /// Round half away from zero.
    Hard,
}

/// Chroma handling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsampling {
    /// 2×2 mean subsampling of Cb/Cr, bilinear upsampling on decode.
    S420,
    /// Full-resolution chroma.
    None,
}

/// Annex-K luminance base table (row-major).
pub const ANNEX_K_LUMA: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Annex-K chrominance base table (row-major).
pub const ANNEX_K_CHROMA: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Simulator configuration.
#[derive(Debug, Clone)]
pub struct JpegSimConfig {
    pub quality: u8,
    pub fourier_terms: usize,
    pub rounding: Rounding,
    pub subsampling: Subsampling,
    pub luma_table: [u16; 64],
    pub chroma_table: [u16; 64],
}

impl JpegSimConfig {
    /// Soft-rounding 4:2:0 simulator with Annex-K tables and 10 Fourier terms.
    pub fn new(quality: u8) -> Result<JpegSimConfig, SimError> {
        let cfg = JpegSimConfig {
            quality,
            fourier_terms: 10,
            rounding: Rounding::Soft,
            subsampling: Subsampling::S420,
            luma_table: ANNEX_K_LUMA,
            chroma_table: ANNEX_K_CHROMA,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hard(quality: u8) -> Result<JpegSimConfig, SimError> {
        let mut cfg = JpegSimConfig::new(quality)?;
        cfg.rounding = Rounding::Hard;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(1..=100).contains(&self.quality) {
            return Err(SimError::QualityOutOfRange(self.quality));
        }
        if self.fourier_terms == 0 {
            return Err(SimError::BadFourierTerms);
        }
        for t in self.luma_table.iter().chain(&self.chroma_table) {
            if !(1..=255).contains(t) {
                return Err(SimError::BadBaseTable);
            }
        }
        Ok(())
    }
}

/// Quality-dependent table scale: `50/Q` below 50, `(200 - 2Q)/100` above.
pub fn quality_factor<T: Scalar>(quality: u8) -> Result<T, SimError> {
    if !(1..=100).contains(&quality) {
        return Err(SimError::QualityOutOfRange(quality));
    }
    let q = T::from_u8(quality).unwrap();
    Ok(if quality < 50 {
        T::c(50.0) / q
    } else {
        (T::c(200.0) - T::c(2.0) * q) / T::c(100.0)
    })
}

/// Integer quantization table after quality scaling: `clamp(round(T*f(Q)), 1, 255)`.
/// At Q=100 the factor is 0 and every entry clamps to 1 (no coefficient loss).
pub fn scaled_quant_table(base: &[u16; 64], quality: u8) -> Result<[u16; 64], SimError> {
    let f: f64 = quality_factor(quality)?;
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as f64 * f).round() as i64).clamp(1, 255) as u16;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Color transform (ITU-T T.871 full range, centered chroma)
// ---------------------------------------------------------------------------

const KR: f64 = 0.299;
const KB: f64 = 0.114;

fn ycbcr_matrix<T: Scalar>() -> [[T; 3]; 3] {
    let kg = 1.0 - KR - KB;
    [
        [T::c(KR), T::c(kg), T::c(KB)],
        [
            T::c(-KR / (2.0 * (1.0 - KB))),
            T::c(-kg / (2.0 * (1.0 - KB))),
            T::c(0.5),
        ],
        [
            T::c(0.5),
            T::c(-kg / (2.0 * (1.0 - KR))),
            T::c(-KB / (2.0 * (1.0 - KR))),
        ],
    ]
}

fn rgb_matrix<T: Scalar>() -> [[T; 3]; 3] {
    let kg = 1.0 - KR - KB;
    [
        [T::one(), T::zero(), T::c(2.0 * (1.0 - KR))],
        [
            T::one(),
            T::c(-KB * 2.0 * (1.0 - KB) / kg),
            T::c(-KR * 2.0 * (1.0 - KR) / kg),
        ],
        [T::one(), T::c(2.0 * (1.0 - KB)), T::zero()],
    ]
}

fn apply_pixel_matrix<T: Scalar>(img: &RawImage<T>, m: &[[T; 3]; 3], transpose: bool) -> RawImage<T> {
    let mut out = img.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let v = [px[0], px[1], px[2]];
        for r in 0..3 {
            px[r] = if transpose {
                m[0][r] * v[0] + m[1][r] * v[1] + m[2][r] * v[2]
            } else {
                m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2]
            };
        }
    }
    out
}

/// RGB to full-range YCbCr with chroma centered at zero (neutral gray maps to
/// `(Y, 0, 0)`).
pub fn rgb_to_ycbcr<T: Scalar>(img: &RawImage<T>) -> RawImage<T> {
    apply_pixel_matrix(img, &ycbcr_matrix(), false)
}

/// Exact inverse of [`rgb_to_ycbcr`].
pub fn ycbcr_to_rgb<T: Scalar>(img: &RawImage<T>) -> RawImage<T> {
    apply_pixel_matrix(img, &rgb_matrix(), false)
}

// ---------------------------------------------------------------------------
// Chroma subsampling
// ---------------------------------------------------------------------------

/// 2×2 mean subsampling; plane dimensions must be even.
pub fn subsample_420<T: Scalar>(plane: &[T], w: usize, h: usize) -> Result<Vec<T>, SimError> {
    if w % 2 != 0 || h % 2 != 0 {
        return Err(SimError::OddChromaDims { w, h });
    }
    let (hw, hh) = (w / 2, h / 2);
    let quarter = T::c(0.25);
    let mut out = Vec::with_capacity(hw * hh);
    for y in 0..hh {
        for x in 0..hw {
            let base = 2 * y * w + 2 * x;
            out.push((plane[base] + plane[base + 1] + plane[base + w] + plane[base + w + 1]) * quarter);
        }
    }
    Ok(out)
}

/// Bilinear upsampling of a half-resolution plane back to `2w`×`2h`
/// (align-corners grid, constants preserved exactly).
pub fn upsample_420<T: Scalar>(plane: &[T], half_w: usize, half_h: usize) -> Vec<T> {
    let xs = AxisMap::new(half_w, half_w * 2);
    let ys = AxisMap::new(half_h, half_h * 2);
    resample_plane(plane, half_w, &xs, &ys)
}

fn subsample_adjoint<T: Scalar>(d_half: &[T], w: usize, h: usize) -> Vec<T> {
    let (hw, hh) = (w / 2, h / 2);
    let quarter = T::c(0.25);
    let mut out = vec![T::zero(); w * h];
    for y in 0..hh {
        for x in 0..hw {
            let g = d_half[y * hw + x] * quarter;
            let base = 2 * y * w + 2 * x;
            out[base] += g;
            out[base + 1] += g;
            out[base + w] += g;
            out[base + w + 1] += g;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Rounding
// ---------------------------------------------------------------------------

/// Truncated-Fourier-series approximation of `round(z)`:
/// `z - (1/pi) * sum_{n=1..N} ((-1)^{n+1} / n) * sin(2*pi*n*z)`.
/// Exact at integers and differentiable everywhere.
pub fn soft_round<T: Scalar>(z: T, terms: usize) -> T {
    if z == z.round() {
        // All sine terms vanish at integers; bypass accumulated trig error.
        return z;
    }
    let (s1, c1) = (T::c(2.0 * std::f64::consts::PI) * z).sin_cos();
    let (mut s, mut c) = (s1, c1);
    let mut acc = T::zero();
    let mut sign = T::one();
    for n in 1..=terms {
        acc += sign * s / T::from_usize(n).unwrap();
        sign = -sign;
        let next_s = s * c1 + c * s1;
        let next_c = c * c1 - s * s1;
        s = next_s;
        c = next_c;
    }
    z - acc / T::c(std::f64::consts::PI)
}

/// Derivative of [`soft_round`]: `1 - 2 * sum_{n=1..N} (-1)^{n+1} cos(2*pi*n*z)`.
pub fn soft_round_deriv<T: Scalar>(z: T, terms: usize) -> T {
    let (s1, c1) = (T::c(2.0 * std::f64::consts::PI) * z).sin_cos();
    let (mut s, mut c) = (s1, c1);
    let mut acc = T::zero();
    let mut sign = T::one();
    for _ in 1..=terms {
        acc += sign * c;
        sign = -sign;
        let next_s = s * c1 + c * s1;
        let next_c = c * c1 - s * s1;
        s = next_s;
        c = next_c;
    }
    T::one() - T::c(2.0) * acc
}

#[inline]
fn apply_rounding<T: Scalar>(z: T, rounding: Rounding, terms: usize) -> T {
    match rounding {
        Rounding::Hard => z.round(),
        Rounding::Soft => soft_round(z, terms),
    }
}

/// Uniform 8-bit quantization in RGB space: `round(255 x) / 255` (hard) or
/// the soft-rounded variant. The ablation stand-in for the full simulator.
pub fn quantize8<T: Scalar>(img: &RawImage<T>, rounding: Rounding, terms: usize) -> RawImage<T> {
    let full = T::c(255.0);
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = apply_rounding(*v * full, rounding, terms) / full;
    }
    out
}

// ---------------------------------------------------------------------------
// Full simulator
// ---------------------------------------------------------------------------

/// Per-plane state captured by the soft forward pass for reverse mode.
#[derive(Debug)]
pub(crate) struct SimTape<T> {
    z_y: Vec<T>,
    z_cb: Vec<T>,
    z_cr: Vec<T>,
    preclamp: RawImage<T>,
    pw: usize,
    ph: usize,
    cw: usize,
    ch: usize,
}

fn level_shift<T: Scalar>() -> T {
    T::c(128.0) / T::c(255.0)
}

/// Convert an integer quantization table to the `[0, 1]` sample scale.
fn table01<T: Scalar>(table: &[u16; 64]) -> [T; 64] {
    let mut out = [T::zero(); 64];
    for (o, &t) in out.iter_mut().zip(table) {
        *o = T::from_u16(t).unwrap() / T::c(255.0);
    }
    out
}

/// Quantize/dequantize every 8×8 block of a plane in place, optionally
/// recording the pre-rounding coefficients.
fn quantize_plane<T: Scalar>(
    plane: &mut [T],
    pw: usize,
    ph: usize,
    q: &[T; 64],
    dct: &Dct8<T>,
    rounding: Rounding,
    terms: usize,
    mut z_cache: Option<&mut Vec<T>>,
) {
    if let Some(z) = z_cache.as_deref_mut() {
        z.resize(pw * ph, T::zero());
    }
    let mut block = [T::zero(); 64];
    for by in (0..ph).step_by(BLOCK) {
        for bx in (0..pw).step_by(BLOCK) {
            load_block(plane, pw, bx, by, &mut block);
            dct.forward_2d(&mut block);
            for i in 0..64 {
                block[i] /= q[i];
            }
            if let Some(z) = z_cache.as_deref_mut() {
                let mut zb = [T::zero(); 64];
                zb.copy_from_slice(&block);
                store_block(z, pw, bx, by, &zb);
            }
            for i in 0..64 {
                block[i] = apply_rounding(block[i], rounding, terms) * q[i];
            }
            dct.inverse_2d(&mut block);
            store_block(plane, pw, bx, by, &block);
        }
    }
}

/// Reverse-mode companion of [`quantize_plane`] for soft rounding.
fn quantize_plane_backward<T: Scalar>(
    d_plane: &mut [T],
    pw: usize,
    ph: usize,
    dct: &Dct8<T>,
    terms: usize,
    z_cache: &[T],
) {
    let mut block = [T::zero(); 64];
    let mut zb = [T::zero(); 64];
    for by in (0..ph).step_by(BLOCK) {
        for bx in (0..pw).step_by(BLOCK) {
            load_block(d_plane, pw, bx, by, &mut block);
            load_block(z_cache, pw, bx, by, &mut zb);
            // Adjoint of X = D^T C D is G -> D G D^T; the quantization scale
            // cancels against the dequantization scale, leaving only the
            // soft-round slope at the recorded coefficient.
            dct.forward_2d(&mut block);
            for i in 0..64 {
                block[i] *= soft_round_deriv(zb[i], terms);
            }
            dct.inverse_2d(&mut block);
            store_block(d_plane, pw, bx, by, &block);
        }
    }
}

/// Run the degradation simulator.
pub fn simulate_jpeg<T: Scalar>(img: &RawImage<T>, cfg: &JpegSimConfig) -> Result<RawImage<T>, SimError> {
    Ok(sim_forward(img, cfg)?.0)
}

/// Forward pass that also returns the reverse-mode tape (soft mode).
pub(crate) fn simulate_jpeg_with_tape<T: Scalar>(
    img: &RawImage<T>,
    cfg: &JpegSimConfig,
) -> Result<(RawImage<T>, SimTape<T>), SimError> {
    sim_forward(img, cfg)
}

fn sim_forward<T: Scalar>(
    img: &RawImage<T>,
    cfg: &JpegSimConfig,
) -> Result<(RawImage<T>, SimTape<T>), SimError> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let dct = Dct8::new();
    let q_luma = table01::<T>(&scaled_quant_table(&cfg.luma_table, cfg.quality)?);
    let q_chroma = table01::<T>(&scaled_quant_table(&cfg.chroma_table, cfg.quality)?);
    let align = match cfg.subsampling {
        Subsampling::S420 => 2 * BLOCK,
        Subsampling::None => BLOCK,
    };

    let ycbcr = rgb_to_ycbcr(img);
    let (mut y_pad, pw, ph) = pad_replicate(&ycbcr.channel_plane(0), w, h, align);
    let (cb_pad, _, _) = pad_replicate(&ycbcr.channel_plane(1), w, h, align);
    let (cr_pad, _, _) = pad_replicate(&ycbcr.channel_plane(2), w, h, align);

    let mut z_y = Vec::new();
    let mut z_cb = Vec::new();
    let mut z_cr = Vec::new();
    let want_tape = cfg.rounding == Rounding::Soft;

    let shift = level_shift::<T>();
    for v in &mut y_pad {
        *v -= shift;
    }
    quantize_plane(
        &mut y_pad,
        pw,
        ph,
        &q_luma,
        &dct,
        cfg.rounding,
        cfg.fourier_terms,
        want_tape.then_some(&mut z_y),
    );
    for v in &mut y_pad {
        *v += shift;
    }

    let (cw, ch) = match cfg.subsampling {
        Subsampling::S420 => (pw / 2, ph / 2),
        Subsampling::None => (pw, ph),
    };
    let run_chroma = |plane: Vec<T>, z: &mut Vec<T>| -> Result<Vec<T>, SimError> {
        let mut half = match cfg.subsampling {
            Subsampling::S420 => subsample_420(&plane, pw, ph)?,
            Subsampling::None => plane,
        };
        quantize_plane(
            &mut half,
            cw,
            ch,
            &q_chroma,
            &dct,
            cfg.rounding,
            cfg.fourier_terms,
            want_tape.then_some(z),
        );
        Ok(match cfg.subsampling {
            Subsampling::S420 => upsample_420(&half, cw, ch),
            Subsampling::None => half,
        })
    };
    let cb_full = run_chroma(cb_pad, &mut z_cb)?;
    let cr_full = run_chroma(cr_pad, &mut z_cr)?;

    let planes = [
        crate::dct::crop(&y_pad, pw, w, h),
        crate::dct::crop(&cb_full, pw, w, h),
        crate::dct::crop(&cr_full, pw, w, h),
    ];
    let preclamp = ycbcr_to_rgb(&RawImage::from_planes(w, h, &planes));
    let mut out = preclamp.clone();
    out.clamp_unit();
    Ok((
        out,
        SimTape {
            z_y,
            z_cb,
            z_cr,
            preclamp,
            pw,
            ph,
            cw,
            ch,
        },
    ))
}

/// Reverse-mode derivatives of the soft simulator with respect to its input.
pub(crate) fn simulate_jpeg_backward<T: Scalar>(
    tape: &SimTape<T>,
    cfg: &JpegSimConfig,
    d_out: &RawImage<T>,
) -> RawImage<T> {
    let (w, h) = (d_out.width(), d_out.height());
    let (pw, ph) = (tape.pw, tape.ph);
    let dct = Dct8::new();

    // Final clamp: gradients pass only where the pre-clamp value was in range.
    let mut d_rgb = d_out.clone();
    for (g, &v) in d_rgb.data_mut().iter_mut().zip(tape.preclamp.data()) {
        if v < T::zero() || v > T::one() {
            *g = T::zero();
        }
    }
    // Adjoint of the YCbCr->RGB matrix.
    let d_ycbcr = apply_pixel_matrix(&d_rgb, &rgb_matrix(), true);

    let zero_extend = |plane: Vec<T>| -> Vec<T> {
        let mut out = vec![T::zero(); pw * ph];
        for y in 0..h {
            out[y * pw..y * pw + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
        }
        out
    };
    let fold_pad = |d_pad: &[T]| -> Vec<T> {
        let cropped = crate::dct::crop(d_pad, pw, w, h);
        pad_crop_adjoint(&cropped, w, h, pw, ph, Some(d_pad))
    };

    // Luma path (the level shift is a constant offset; gradients pass through).
    let mut d_y = zero_extend(d_ycbcr.channel_plane(0));
    quantize_plane_backward(&mut d_y, pw, ph, &dct, cfg.fourier_terms, &tape.z_y);
    let d_y = fold_pad(&d_y);

    let chroma_back = |d_plane: Vec<T>, z: &[T]| -> Vec<T> {
        let d_pad = zero_extend(d_plane);
        match cfg.subsampling {
            Subsampling::S420 => {
                let xs = AxisMap::new(tape.cw, pw);
                let ys = AxisMap::new(tape.ch, ph);
                let mut d_half = resample_plane_adjoint(&d_pad, tape.cw, tape.ch, &xs, &ys);
                quantize_plane_backward(&mut d_half, tape.cw, tape.ch, &dct, cfg.fourier_terms, z);
                let d_full = subsample_adjoint(&d_half, pw, ph);
                fold_pad(&d_full)
            }
            Subsampling::None => {
                let mut d = d_pad;
                quantize_plane_backward(&mut d, pw, ph, &dct, cfg.fourier_terms, z);
                fold_pad(&d)
            }
        }
    };
    let d_cb = chroma_back(d_ycbcr.channel_plane(1), &tape.z_cb);
    let d_cr = chroma_back(d_ycbcr.channel_plane(2), &tape.z_cr);

    // Adjoint of the RGB->YCbCr matrix back onto the simulator input.
    apply_pixel_matrix(
        &RawImage::from_planes(w, h, &[d_y, d_cb, d_cr]),
        &ycbcr_matrix(),
        true,
    )
}

/// Padded dimensions the simulator will use for a `w`×`h` image.
pub fn padded_dims(w: usize, h: usize, subsampling: Subsampling) -> (usize, usize) {
    let align = match subsampling {
        Subsampling::S420 => 2 * BLOCK,
        Subsampling::None => BLOCK,
    };
    (align_up(w, align), align_up(h, align))
}
