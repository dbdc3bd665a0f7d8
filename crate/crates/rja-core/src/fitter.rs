//! Per-image optimization of the adapter parameters.
//!
//! The fitter minimizes a composite L1 + SSIM + FFT loss of the
//! reconstruction against the original, measured through the differentiable
//! chain pre-encode → JPEG simulator (soft rounding) → post-decode on a
//! power-of-two thumbnail. Unconstrained pre-activations map to valid
//! coefficients (`exp(2 tanh g)` for the gamma grid, `exp(0.7 tanh s)` for
//! the DCT scale, min–max-normalized cumulative softplus for the LUTs), and
//! an Adam-style first-order update runs for a fixed iteration budget from
//! the identity initialization. The returned parameters are the
//! best-of-trace iterate after a serialization round trip, so the encoder
//! applies exactly the coefficients a decoder will read back.

use num_complex::Complex;

use crate::codec;
use crate::dct::ScaleMode;
use crate::fft::{fft2_inplace, fft2_real, is_pow2};
use crate::image::{resize_bilinear, RawImage};
use crate::jpegsim::{
    simulate_jpeg_backward, simulate_jpeg_with_tape, JpegSimConfig, Rounding, SimError, SimTape,
};
use crate::num::Scalar;
use crate::ssim::{ssim_plane, ssim_plane_backward, SsimTape, WINDOW};
use crate::transform::{
    apply_lut, apply_lut_backward, dct_scale_image_backward, invert_lut, invert_lut_backward,
    pow_field, pow_field_backward, scale_dct, unscale_dct, AdapterParams, ChannelLut,
    ColorTransform, DctScale, GammaGrid, TransformError, DCT_LOG_BOUND, GAMMA_LOG_BOUND,
    GRID_SIZE, LUT_SIZE,
};

// Softplus increments get a small floor so extreme pre-activations can never
// underflow to zero and break strict LUT monotonicity.
const LUT_INC_FLOOR: f64 = 1e-6;

const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("invalid fit configuration: {0}")]
    BadConfig(String),
    #[error("image dimensions differ")]
    DimensionMismatch,
    #[error("FFT loss requires power-of-two dimensions, got {w}x{h}")]
    NonPowerOfTwo { w: usize, h: usize },
    #[error("SSIM loss requires dimensions of at least {WINDOW}, got {w}x{h}")]
    ImageTooSmall { w: usize, h: usize },
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("preset gamma {0} has no representable reciprocal in the grid range")]
    PresetGammaOutOfRange(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Codec(#[from] codec::CodecError),
}

/// Unconstrained pre-activations for every fitted coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct RawParamVector<T> {
    /// 100×100 gamma pre-activations.
    pub gamma: Vec<T>,
    /// 8×8 DCT scale pre-activations, when the DCT component is fitted.
    pub dct: Option<Vec<T>>,
    /// 3×128 tone-curve pre-activations.
    pub lut: [Vec<T>; 3],
}

impl<T: Scalar> RawParamVector<T> {
    /// All-zero pre-activations: the identity parameters.
    pub fn zeros(with_dct: bool) -> RawParamVector<T> {
        RawParamVector {
            gamma: vec![T::zero(); GRID_SIZE * GRID_SIZE],
            dct: with_dct.then(|| vec![T::zero(); 64]),
            lut: [
                vec![T::zero(); LUT_SIZE],
                vec![T::zero(); LUT_SIZE],
                vec![T::zero(); LUT_SIZE],
            ],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter_slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Total coordinate count.
    pub fn len(&self) -> usize {
        self.iter_slices().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn iter_slices(&self) -> impl Iterator<Item = &[T]> {
        std::iter::once(self.gamma.as_slice())
            .chain(self.dct.as_deref())
            .chain(self.lut.iter().map(|v| v.as_slice()))
    }

    /// Flat view of one coordinate for probing and finite differences.
    pub fn coord(&self, idx: usize) -> T {
        *self.coord_slot(idx)
    }

    pub fn coord_mut(&mut self, idx: usize) -> &mut T {
        // Mirror of coord_slot with mutable access.
        let mut i = idx;
        if i < self.gamma.len() {
            return &mut self.gamma[i];
        }
        i -= self.gamma.len();
        if let Some(d) = &mut self.dct {
            if i < d.len() {
                return &mut d[i];
            }
            i -= d.len();
        }
        for ch in &mut self.lut {
            if i < ch.len() {
                return &mut ch[i];
            }
            i -= ch.len();
        }
        panic!("coordinate {idx} out of range");
    }

    fn coord_slot(&self, idx: usize) -> &T {
        let mut i = idx;
        if i < self.gamma.len() {
            return &self.gamma[i];
        }
        i -= self.gamma.len();
        if let Some(d) = &self.dct {
            if i < d.len() {
                return &d[i];
            }
            i -= d.len();
        }
        for ch in &self.lut {
            if i < ch.len() {
                return &ch[i];
            }
            i -= ch.len();
        }
        panic!("coordinate {idx} out of range");
    }

    fn zip_apply(&mut self, m: &mut Self, v: &mut Self, g: &Self, mut f: impl FnMut(&mut T, &mut T, &mut T, T)) {
        for (((t, mm), vv), gg) in self
            .gamma
            .iter_mut()
            .zip(&mut m.gamma)
            .zip(&mut v.gamma)
            .zip(&g.gamma)
        {
            f(t, mm, vv, *gg);
        }
        if let (Some(t), Some(mm), Some(vv), Some(gg)) =
            (&mut self.dct, &mut m.dct, &mut v.dct, &g.dct)
        {
            for (((t, mm), vv), gg) in t.iter_mut().zip(mm).zip(vv).zip(gg) {
                f(t, mm, vv, *gg);
            }
        }
        for c in 0..3 {
            let (lt, lm) = (&mut self.lut[c], &mut m.lut[c]);
            for (((t, mm), vv), gg) in lt.iter_mut().zip(lm).zip(&mut v.lut[c]).zip(&g.lut[c]) {
                f(t, mm, vv, *gg);
            }
        }
    }
}

/// Weights of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub fft: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            l1: 1.0,
            ssim: 0.1,
            fft: 0.1,
        }
    }
}

/// Fit settings. Defaults: 256 thumbnail, 200 iterations, Adam-style moments
/// (0.9, 0.999).
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub quality: u8,
    pub iterations: usize,
    pub step_size: f64,
    pub moment_decays: (f64, f64),
    pub thumbnail: usize,
    pub weights: LossWeights,
    pub use_dct: bool,
    pub rng_seed: u64,
    pub fourier_terms: usize,
}

impl FitConfig {
    pub fn new(quality: u8) -> FitConfig {
        FitConfig {
            quality,
            iterations: 200,
            step_size: 0.04,
            moment_decays: (0.9, 0.999),
            thumbnail: 256,
            weights: LossWeights::default(),
            use_dct: true,
            rng_seed: 0,
            fourier_terms: 10,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if !(1..=100).contains(&self.quality) {
            return Err(FitError::BadConfig(format!(
                "quality {} outside [1, 100]",
                self.quality
            )));
        }
        if !(self.step_size > 0.0) {
            return Err(FitError::BadConfig("step_size must be > 0".into()));
        }
        let (b1, b2) = self.moment_decays;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(FitError::BadConfig("moment decays must be in [0, 1)".into()));
        }
        if !is_pow2(self.thumbnail) || self.thumbnail < 16 {
            return Err(FitError::BadConfig(format!(
                "thumbnail {} must be a power of two >= 16",
                self.thumbnail
            )));
        }
        if self.weights.l1 < 0.0 || self.weights.ssim < 0.0 || self.weights.fft < 0.0 {
            return Err(FitError::BadConfig("loss weights must be >= 0".into()));
        }
        if self.fourier_terms == 0 {
            return Err(FitError::BadConfig("fourier_terms must be >= 1".into()));
        }
        Ok(())
    }

    fn sim_config(&self) -> Result<JpegSimConfig, SimError> {
        let mut cfg = JpegSimConfig::new(self.quality)?;
        cfg.fourier_terms = self.fourier_terms;
        cfg.rounding = Rounding::Soft;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Constrain: pre-activations -> valid parameters
// ---------------------------------------------------------------------------

pub(crate) struct ConstrainTape<T> {
    tanh_g: Vec<T>,
    tanh_s: Option<Vec<T>>,
    sig_h: [Vec<T>; 3],
    entries: [Vec<T>; 3],
    range: [T; 3],
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Map unconstrained pre-activations onto valid parameters:
/// `gamma = exp(2 tanh g)`, `S = exp(0.7 tanh s)`, and per-channel LUTs as
/// the min–max normalized cumulative sum of `softplus(h)` increments. The
/// output satisfies every parameter invariant for any finite input.
pub fn constrain<T: Scalar>(raw: &RawParamVector<T>) -> AdapterParams<T> {
    constrain_with_tape(raw).0
}

pub(crate) fn constrain_with_tape<T: Scalar>(
    raw: &RawParamVector<T>,
) -> (AdapterParams<T>, ConstrainTape<T>) {
    let two = T::c(GAMMA_LOG_BOUND);
    let tanh_g: Vec<T> = raw.gamma.iter().map(|&g| g.tanh()).collect();
    let gamma_values: Vec<T> = tanh_g.iter().map(|&t| (two * t).exp()).collect();

    let tanh_s: Option<Vec<T>> = raw
        .dct
        .as_ref()
        .map(|s| s.iter().map(|&v| v.tanh()).collect());
    let dct = tanh_s.as_ref().map(|ts| {
        let bound = T::c(DCT_LOG_BOUND);
        let mut values = [T::zero(); 64];
        for (o, &t) in values.iter_mut().zip(ts) {
            *o = (bound * t).exp();
        }
        DctScale::new(values).expect("tanh-bounded scale is always valid")
    });

    let mut sig_h: [Vec<T>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut entries: [Vec<T>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut range = [T::zero(); 3];
    let floor = T::c(LUT_INC_FLOOR);
    for c in 0..3 {
        sig_h[c] = raw.lut[c].iter().map(|&h| sigmoid(h)).collect();
        let mut cum = T::zero();
        let cums: Vec<T> = raw.lut[c]
            .iter()
            .map(|&h| {
                cum += softplus(h) + floor;
                cum
            })
            .collect();
        let lo = cums[0];
        let r = cums[LUT_SIZE - 1] - lo;
        range[c] = r;
        entries[c] = cums.iter().map(|&v| (v - lo) / r).collect();
        // Pin the endpoints bit-exactly.
        entries[c][0] = T::zero();
        entries[c][LUT_SIZE - 1] = T::one();
    }
    let luts = ChannelLut::new(entries.clone()).expect("normalized cumulative sums are monotone");

    (
        AdapterParams {
            luts,
            gamma: GammaGrid::new(gamma_values).expect("tanh-bounded gamma is always valid"),
            dct,
            color: None,
        },
        ConstrainTape {
            tanh_g,
            tanh_s,
            sig_h,
            entries,
            range,
        },
    )
}

/// Pull gradients on constrained parameters back to the pre-activations.
pub(crate) fn constrain_backward<T: Scalar>(
    params: &AdapterParams<T>,
    tape: &ConstrainTape<T>,
    d_gamma_values: &[T],
    d_s: Option<&[T; 64]>,
    d_entries: &[Vec<T>; 3],
) -> RawParamVector<T> {
    let two = T::c(GAMMA_LOG_BOUND);
    let gamma = params
        .gamma
        .values()
        .iter()
        .zip(&tape.tanh_g)
        .zip(d_gamma_values)
        .map(|((&v, &t), &d)| d * v * two * (T::one() - t * t))
        .collect();

    let dct = match (d_s, params.dct.as_ref(), tape.tanh_s.as_ref()) {
        (Some(ds), Some(s), Some(ts)) => {
            let bound = T::c(DCT_LOG_BOUND);
            Some(
                s.values()
                    .iter()
                    .zip(ts)
                    .zip(ds)
                    .map(|((&v, &t), &d)| d * v * bound * (T::one() - t * t))
                    .collect(),
            )
        }
        _ => None,
    };

    let mut lut: [Vec<T>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for c in 0..3 {
        let e = &tape.entries[c];
        let r = tape.range[c];
        let d_e = &d_entries[c];
        // d(entries)/d(cumsum): interior entries pull on themselves and both
        // normalization anchors; the pinned endpoints are constants.
        let mut d_cum = vec![T::zero(); LUT_SIZE];
        for i in 1..LUT_SIZE - 1 {
            let d = d_e[i];
            if d == T::zero() {
                continue;
            }
            d_cum[i] += d / r;
            d_cum[0] += d * (e[i] - T::one()) / r;
            d_cum[LUT_SIZE - 1] += d * (-e[i]) / r;
        }
        // Adjoint of cumulative sum: reverse suffix sum.
        let mut suffix = T::zero();
        let mut d_inc = vec![T::zero(); LUT_SIZE];
        for i in (0..LUT_SIZE).rev() {
            suffix += d_cum[i];
            d_inc[i] = suffix;
        }
        lut[c] = d_inc
            .iter()
            .zip(&tape.sig_h[c])
            .map(|(&d, &s)| d * s)
            .collect();
    }

    RawParamVector {
        gamma,
        dct,
        lut,
    }
}

// ---------------------------------------------------------------------------
// Composite loss
// ---------------------------------------------------------------------------

/// Individual loss terms (already weighted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub l1: T,
    pub ssim: T,
    pub fft: T,
    pub total: T,
}

pub(crate) struct LossContext<T> {
    weights: LossWeights,
    target: RawImage<T>,
    target_fft: Option<[Vec<Complex<T>>; 3]>,
}

pub(crate) struct LossTape<T> {
    ssim: Option<[SsimTape<T>; 3]>,
    recon_fft: Option<[Vec<Complex<T>>; 3]>,
}

impl<T: Scalar> LossContext<T> {
    pub fn new(target: &RawImage<T>, weights: LossWeights) -> Result<LossContext<T>, FitError> {
        let (w, h) = (target.width(), target.height());
        if weights.ssim > 0.0 && (w < WINDOW || h < WINDOW) {
            return Err(FitError::ImageTooSmall { w, h });
        }
        if weights.fft > 0.0 && !(is_pow2(w) && is_pow2(h)) {
            return Err(FitError::NonPowerOfTwo { w, h });
        }
        let target_fft = (weights.fft > 0.0).then(|| {
            [0, 1, 2].map(|c| fft2_real(&target.channel_plane(c), w, h))
        });
        Ok(LossContext {
            weights,
            target: target.clone(),
            target_fft,
        })
    }

    pub fn eval(&self, recon: &RawImage<T>) -> Result<(LossParts<T>, LossTape<T>), FitError> {
        let (w, h) = (self.target.width(), self.target.height());
        if recon.width() != w || recon.height() != h {
            return Err(FitError::DimensionMismatch);
        }
        let n = T::from_usize(recon.data().len()).unwrap();

        let l1 = if self.weights.l1 > 0.0 {
            let sum = recon
                .data()
                .iter()
                .zip(self.target.data())
                .fold(T::zero(), |acc, (&r, &t)| acc + (r - t).abs());
            T::c(self.weights.l1) * sum / n
        } else {
            T::zero()
        };

        let (ssim_term, ssim_tapes) = if self.weights.ssim > 0.0 {
            let mut mean = T::zero();
            let tapes = [0usize, 1, 2].map(|c| {
                let (s, tape) = ssim_plane(
                    &recon.channel_plane(c),
                    &self.target.channel_plane(c),
                    w,
                    h,
                );
                mean += s / T::c(3.0);
                tape
            });
            (T::c(self.weights.ssim) * (T::one() - mean), Some(tapes))
        } else {
            (T::zero(), None)
        };

        let (fft_term, recon_fft) = if let Some(target_fft) = &self.target_fft {
            let mut acc = T::zero();
            let ffts = [0usize, 1, 2].map(|c| fft2_real(&recon.channel_plane(c), w, h));
            for c in 0..3 {
                for (a, b) in ffts[c].iter().zip(&target_fft[c]) {
                    acc += (a.re - b.re).abs() + (a.im - b.im).abs();
                }
            }
            (T::c(self.weights.fft) * acc / n, Some(ffts))
        } else {
            (T::zero(), None)
        };

        Ok((
            LossParts {
                l1,
                ssim: ssim_term,
                fft: fft_term,
                total: l1 + ssim_term + fft_term,
            },
            LossTape {
                ssim: ssim_tapes,
                recon_fft,
            },
        ))
    }

    /// Gradient of the total loss with respect to the reconstruction.
    pub fn backward(&self, recon: &RawImage<T>, tape: &LossTape<T>) -> RawImage<T> {
        let (w, h) = (self.target.width(), self.target.height());
        let n = T::from_usize(recon.data().len()).unwrap();
        let mut grad = RawImage::zeros(w, h);

        if self.weights.l1 > 0.0 {
            let scale = T::c(self.weights.l1) / n;
            for ((g, &r), &t) in grad
                .data_mut()
                .iter_mut()
                .zip(recon.data())
                .zip(self.target.data())
            {
                *g += scale
                    * if r > t {
                        T::one()
                    } else if r < t {
                        -T::one()
                    } else {
                        T::zero()
                    };
            }
        }

        if let Some(tapes) = &tape.ssim {
            // d/dx of weight*(1 - mean_c SSIM_c) = -(weight/3) * dSSIM_c/dx.
            let per_channel = -T::c(self.weights.ssim) / T::c(3.0);
            for c in 0..3 {
                let d_plane = ssim_plane_backward(
                    &tapes[c],
                    &recon.channel_plane(c),
                    &self.target.channel_plane(c),
                    w,
                    h,
                    per_channel,
                );
                for (i, v) in d_plane.iter().enumerate() {
                    grad.data_mut()[i * 3 + c] += *v;
                }
            }
        }

        if let (Some(target_fft), Some(recon_fft)) = (&self.target_fft, &tape.recon_fft) {
            let scale = T::c(self.weights.fft) / n;
            for c in 0..3 {
                // Adjoint of |Re Δ| + |Im Δ| through the DFT: forward-transform
                // the conjugated sign field and take the real part.
                let mut field: Vec<Complex<T>> = recon_fft[c]
                    .iter()
                    .zip(&target_fft[c])
                    .map(|(a, b)| {
                        let sr = sign(a.re - b.re);
                        let si = sign(a.im - b.im);
                        Complex::new(sr * scale, -si * scale)
                    })
                    .collect();
                fft2_inplace(&mut field, w, h);
                for (i, v) in field.iter().enumerate() {
                    grad.data_mut()[i * 3 + c] += v.re;
                }
            }
        }

        grad
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Composite loss between a reconstruction and its target:
/// `w_l1 * mean|Δ| + w_ssim * (1 - SSIM) + w_fft * (mean|Re ΔF| + mean|Im ΔF|)`.
pub fn loss<T: Scalar>(
    recon: &RawImage<T>,
    target: &RawImage<T>,
    weights: LossWeights,
) -> Result<LossParts<T>, FitError> {
    let ctx = LossContext::new(target, weights)?;
    Ok(ctx.eval(recon)?.0)
}

// ---------------------------------------------------------------------------
// Full-pipeline gradient
// ---------------------------------------------------------------------------

struct ForwardPass<T> {
    params: AdapterParams<T>,
    ctape: ConstrainTape<T>,
    field: Vec<T>,
    x1: RawImage<T>,
    x2: RawImage<T>,
    x3: RawImage<T>,
    x4: RawImage<T>,
    y: RawImage<T>,
    sim_tape: SimTape<T>,
    z1: RawImage<T>,
    z2: RawImage<T>,
    z3: RawImage<T>,
    z4: RawImage<T>,
    parts: LossParts<T>,
    loss_tape: LossTape<T>,
}

fn clamp_image<T: Scalar>(img: &RawImage<T>) -> RawImage<T> {
    let mut out = img.clone();
    out.clamp_unit();
    out
}

fn clamp_backward<T: Scalar>(pre_clamp: &RawImage<T>, d_out: &RawImage<T>) -> RawImage<T> {
    let mut d = d_out.clone();
    for (g, &v) in d.data_mut().iter_mut().zip(pre_clamp.data()) {
        if v < T::zero() || v > T::one() {
            *g = T::zero();
        }
    }
    d
}

fn forward_pass<T: Scalar>(
    raw: &RawParamVector<T>,
    thumb: &RawImage<T>,
    ctx: &LossContext<T>,
    sim_cfg: &JpegSimConfig,
) -> Result<ForwardPass<T>, FitError> {
    let (params, ctape) = constrain_with_tape(raw);
    let field = params.gamma.upsample(thumb.width(), thumb.height());

    let x1 = apply_lut(thumb, &params.luts);
    let x2 = match &params.dct {
        Some(s) => scale_dct(&x1, s),
        None => x1.clone(),
    };
    let x3 = clamp_image(&x2);
    let x4 = pow_field(&x3, &field, false);
    let (y, sim_tape) = simulate_jpeg_with_tape(&x4, sim_cfg)?;
    let z1 = pow_field(&y, &field, true);
    let z2 = match &params.dct {
        Some(s) => unscale_dct(&z1, s),
        None => z1.clone(),
    };
    let z3 = invert_lut(&z2, &params.luts);
    let z4 = clamp_image(&z3);
    let (parts, loss_tape) = ctx.eval(&z4)?;

    Ok(ForwardPass {
        params,
        ctape,
        field,
        x1,
        x2,
        x3,
        x4,
        y,
        sim_tape,
        z1,
        z2,
        z3,
        z4,
        parts,
        loss_tape,
    })
}

fn backward_pass<T: Scalar>(
    fwd: &ForwardPass<T>,
    thumb: &RawImage<T>,
    ctx: &LossContext<T>,
    sim_cfg: &JpegSimConfig,
) -> RawParamVector<T> {
    let params = &fwd.params;
    let mut d_s_total: Option<[T; 64]> = params.dct.as_ref().map(|_| [T::zero(); 64]);

    let d = ctx.backward(&fwd.z4, &fwd.loss_tape);
    let d = clamp_backward(&fwd.z3, &d);
    let (d, lut_dec) = invert_lut_backward(&fwd.z2, &params.luts, &d);
    let d = match params.dct.as_ref() {
        Some(s) => {
            let (d_in, ds) = dct_scale_image_backward(&fwd.z1, s, ScaleMode::Div, &d);
            accumulate_s(&mut d_s_total, &ds);
            d_in
        }
        None => d,
    };
    let (d, field_dec) = pow_field_backward(&fwd.y, &fwd.z1, &fwd.field, true, &d);
    let d = simulate_jpeg_backward(&fwd.sim_tape, sim_cfg, &d);
    let (d, field_enc) = pow_field_backward(&fwd.x3, &fwd.x4, &fwd.field, false, &d);
    let d = clamp_backward(&fwd.x2, &d);
    let d = match params.dct.as_ref() {
        Some(s) => {
            let (d_in, ds) = dct_scale_image_backward(&fwd.x1, s, ScaleMode::Mul, &d);
            accumulate_s(&mut d_s_total, &ds);
            d_in
        }
        None => d,
    };
    let (_, lut_enc) = apply_lut_backward(thumb, &params.luts, &d);

    let d_field: Vec<T> = field_dec
        .iter()
        .zip(&field_enc)
        .map(|(&a, &b)| a + b)
        .collect();
    let d_grid = params
        .gamma
        .upsample_adjoint(&d_field, thumb.width(), thumb.height());

    let mut d_lut: [Vec<T>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for c in 0..3 {
        d_lut[c] = lut_dec[c]
            .iter()
            .zip(&lut_enc[c])
            .map(|(&a, &b)| a + b)
            .collect();
    }

    constrain_backward(
        params,
        &fwd.ctape,
        &d_grid,
        d_s_total.as_ref(),
        &d_lut,
    )
}

fn accumulate_s<T: Scalar>(total: &mut Option<[T; 64]>, ds: &[T; 64]) {
    if let Some(t) = total {
        for (a, b) in t.iter_mut().zip(ds) {
            *a += *b;
        }
    }
}

/// Loss and its exact reverse-mode gradient with respect to every
/// pre-activation, through pre-encode → soft simulator → post-decode → loss.
pub fn gradient<T: Scalar>(
    raw: &RawParamVector<T>,
    thumb: &RawImage<T>,
    cfg: &FitConfig,
) -> Result<(LossParts<T>, RawParamVector<T>), FitError> {
    cfg.validate()?;
    let ctx = LossContext::new(thumb, cfg.weights)?;
    let sim_cfg = cfg.sim_config()?;
    let fwd = forward_pass(raw, thumb, &ctx, &sim_cfg)?;
    let grads = backward_pass(&fwd, thumb, &ctx, &sim_cfg);
    Ok((fwd.parts, grads))
}

// ---------------------------------------------------------------------------
// Fit driver
// ---------------------------------------------------------------------------

/// Loss history of a fit run.
#[derive(Debug, Clone)]
pub struct FitTrace {
    /// Loss at each visited iterate (entry 0 is the identity initialization).
    pub losses: Vec<f64>,
    pub best_iteration: usize,
    pub best_loss: f64,
}

impl FitTrace {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }
}

/// Result of [`fit`]: serialization-round-tripped parameters plus the trace.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: AdapterParams<f64>,
    pub trace: FitTrace,
}

/// Step-size schedule: a short linear warmup (lets the moment estimates
/// settle before full-size moves), then cosine decay to 1% of the base rate.
fn schedule(t: usize, total: usize) -> f64 {
    const WARMUP: usize = 10;
    const FLOOR: f64 = 0.01;
    let warm = ((t + 1) as f64 / WARMUP as f64).min(1.0);
    if total <= 1 {
        return warm;
    }
    let progress = t as f64 / (total - 1) as f64;
    let cos = FLOOR + (1.0 - FLOOR) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    warm * cos
}

/// Fit adapter parameters to one image by first-order moment-based descent
/// on a thumbnail, starting from the identity. Returns the best-of-trace
/// iterate after a serialization round trip, so encode and decode use
/// bit-identical coefficients. Deterministic for fixed inputs.
pub fn fit(img: &RawImage<f64>, cfg: &FitConfig) -> Result<FitOutcome, FitError> {
    cfg.validate()?;
    let thumb = resize_bilinear(img, cfg.thumbnail, cfg.thumbnail);
    let ctx = LossContext::new(&thumb, cfg.weights)?;
    let sim_cfg = cfg.sim_config()?;

    let mut raw = RawParamVector::<f64>::zeros(cfg.use_dct);
    let mut m = RawParamVector::<f64>::zeros(cfg.use_dct);
    let mut v = RawParamVector::<f64>::zeros(cfg.use_dct);
    let (b1, b2) = cfg.moment_decays;

    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    let mut best_raw = raw.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_iteration = 0usize;

    // Adam's effective per-coordinate displacement is roughly the step size
    // regardless of gradient magnitude, so the step must shrink with the
    // loss scale: at high qualities the degradation (and the loss valley
    // around the optimum) is an order of magnitude smaller than at low
    // qualities. Scale by the initial loss, pivoted at the low-quality
    // regime.
    const STEP_LOSS_PIVOT: f64 = 0.2;
    let mut step_base = cfg.step_size;

    for t in 0..=cfg.iterations {
        let last = t == cfg.iterations;
        let fwd = forward_pass(&raw, &thumb, &ctx, &sim_cfg)?;
        let total = fwd.parts.total;
        if !total.is_finite() {
            return Err(FitError::NonFiniteLoss { iteration: t });
        }
        if t == 0 {
            step_base *= (total / STEP_LOSS_PIVOT).clamp(0.05, 1.0);
        }
        losses.push(total);
        if total < best_loss {
            best_loss = total;
            best_raw = raw.clone();
            best_iteration = t;
        }
        if last {
            break;
        }
        let g = backward_pass(&fwd, &thumb, &ctx, &sim_cfg);
        let step = step_base * schedule(t, cfg.iterations);
        let bc1 = 1.0 - b1.powi(t as i32 + 1);
        let bc2 = 1.0 - b2.powi(t as i32 + 1);
        raw.zip_apply(&mut m, &mut v, &g, |theta, mm, vv, gg| {
            *mm = b1 * *mm + (1.0 - b1) * gg;
            *vv = b2 * *vv + (1.0 - b2) * gg * gg;
            let m_hat = *mm / bc1;
            let v_hat = *vv / bc2;
            *theta -= step * m_hat / (v_hat.sqrt() + ADAM_EPS);
        });
    }

    // Decode-what-you-encode: the returned coefficients are exactly the ones
    // a decoder reads back from the payload.
    let params = constrain(&best_raw);
    let payload = codec::serialize(&params)?;
    let (params, _) = codec::deserialize(&payload)?;

    Ok(FitOutcome {
        params,
        trace: FitTrace {
            losses,
            best_iteration,
            best_loss,
        },
    })
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Non-fitted baselines sharing the adapter parameter format.
#[derive(Debug, Clone)]
pub enum Preset {
    /// Neutral parameters: pre-encode is the identity.
    Identity,
    /// Constant gamma grid `1/g`: encode brightens by `x^(1/g)`, decode
    /// raises back by `g`.
    FixedGamma(f64),
    /// Neutral parameters plus a white-balance/CCM/display-gamma wrapper.
    SrgbBaseline(ColorTransform<f64>),
}

pub fn preset(kind: Preset) -> Result<AdapterParams<f64>, FitError> {
    match kind {
        Preset::Identity => Ok(AdapterParams::identity()),
        Preset::FixedGamma(g) => {
            if !(g > 0.0) || (1.0 / g).ln().abs() > GAMMA_LOG_BOUND {
                return Err(FitError::PresetGammaOutOfRange(g));
            }
            let mut p = AdapterParams::identity();
            p.gamma = GammaGrid::constant(1.0 / g)?;
            Ok(p)
        }
        Preset::SrgbBaseline(ct) => {
            let mut p = AdapterParams::identity();
            p.color = Some(ct);
            Ok(p)
        }
    }
}
