//! Structural similarity: windowed SSIM (shared by the metrics module and
//! the fitter's loss term, which needs its reverse-mode derivative) and
//! multi-scale SSIM.
//!
//! Windows are 11×11 Gaussian (sigma 1.5, K1 = 0.01, K2 = 0.03) evaluated
//! over the valid region only (no padding), on unit-range samples.

use crate::num::Scalar;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

/// Standard five-scale MS-SSIM weights.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Minimum image side for 5-scale MS-SSIM: an 11-tap window must survive
/// four 2x downsamplings.
pub const MS_SSIM_MIN_DIM: usize = 176;

pub(crate) fn gaussian_taps<T: Scalar>() -> [T; WINDOW] {
    let mut taps = [T::zero(); WINDOW];
    let mut sum = T::zero();
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - (WINDOW as f64 - 1.0) / 2.0;
        *t = T::c((-d * d / (2.0 * SIGMA * SIGMA)).exp());
        sum += *t;
    }
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable valid convolution; output is `(w - 10) x (h - 10)`.
fn conv_valid<T: Scalar>(plane: &[T], w: usize, h: usize, taps: &[T; WINDOW]) -> Vec<T> {
    let cw = w - (WINDOW - 1);
    let ch = h - (WINDOW - 1);
    let mut horiz = vec![T::zero(); cw * h];
    for y in 0..h {
        for x in 0..cw {
            let mut acc = T::zero();
            for (k, &t) in taps.iter().enumerate() {
                acc += t * plane[y * w + x + k];
            }
            horiz[y * cw + x] = acc;
        }
    }
    let mut out = vec![T::zero(); cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            let mut acc = T::zero();
            for (k, &t) in taps.iter().enumerate() {
                acc += t * horiz[(y + k) * cw + x];
            }
            out[y * cw + x] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: scatter window-space gradients back to plane
/// space with the same taps.
fn conv_valid_adjoint<T: Scalar>(d_conv: &[T], w: usize, h: usize, taps: &[T; WINDOW]) -> Vec<T> {
    let cw = w - (WINDOW - 1);
    let ch = h - (WINDOW - 1);
    let mut horiz = vec![T::zero(); cw * h];
    for y in 0..ch {
        for x in 0..cw {
            let g = d_conv[y * cw + x];
            for (k, &t) in taps.iter().enumerate() {
                horiz[(y + k) * cw + x] += t * g;
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..cw {
            let g = horiz[y * cw + x];
            for (k, &t) in taps.iter().enumerate() {
                out[y * w + x + k] += t * g;
            }
        }
    }
    out
}

/// Forward windowed-statistics fields cached for the backward pass.
pub(crate) struct SsimTape<T> {
    mu_x: Vec<T>,
    mu_y: Vec<T>,
    xx: Vec<T>,
    xy: Vec<T>,
    syy: Vec<T>,
    cw: usize,
    ch: usize,
}

/// Per-window SSIM over one plane; returns the window mean and the tape.
pub(crate) fn ssim_plane<T: Scalar>(
    x: &[T],
    y: &[T],
    w: usize,
    h: usize,
) -> (T, SsimTape<T>) {
    assert!(w >= WINDOW && h >= WINDOW, "plane smaller than SSIM window");
    let taps = gaussian_taps::<T>();
    let mu_x = conv_valid(x, w, h, &taps);
    let mu_y = conv_valid(y, w, h, &taps);
    let xx = conv_valid(&sq(x), w, h, &taps);
    let yy = conv_valid(&sq(y), w, h, &taps);
    let xy = conv_valid(&prod(x, y), w, h, &taps);
    let (cw, ch) = (w - (WINDOW - 1), h - (WINDOW - 1));
    let c1 = T::c(K1 * K1);
    let c2 = T::c(K2 * K2);
    let mut sum = T::zero();
    let mut syy = vec![T::zero(); cw * ch];
    for i in 0..cw * ch {
        let (u, m) = (mu_x[i], mu_y[i]);
        let sxx = xx[i] - u * u;
        let s_yy = yy[i] - m * m;
        let sxy = xy[i] - u * m;
        syy[i] = s_yy;
        let a1 = T::c(2.0) * u * m + c1;
        let a2 = T::c(2.0) * sxy + c2;
        let b1 = u * u + m * m + c1;
        let b2 = sxx + s_yy + c2;
        sum += (a1 * a2) / (b1 * b2);
    }
    let n = T::from_usize(cw * ch).unwrap();
    (
        sum / n,
        SsimTape {
            mu_x,
            mu_y,
            xx,
            xy,
            syy,
            cw,
            ch,
        },
    )
}

/// Gradient of `weight * mean_window_SSIM(x, y)` with respect to `x`.
pub(crate) fn ssim_plane_backward<T: Scalar>(
    tape: &SsimTape<T>,
    x: &[T],
    y: &[T],
    w: usize,
    h: usize,
    weight: T,
) -> Vec<T> {
    let taps = gaussian_taps::<T>();
    let (cw, ch) = (tape.cw, tape.ch);
    let c1 = T::c(K1 * K1);
    let c2 = T::c(K2 * K2);
    let scale = weight / T::from_usize(cw * ch).unwrap();
    let mut w_u = vec![T::zero(); cw * ch];
    let mut w_p = vec![T::zero(); cw * ch];
    let mut w_q = vec![T::zero(); cw * ch];
    for i in 0..cw * ch {
        let (u, m) = (tape.mu_x[i], tape.mu_y[i]);
        let sxx = tape.xx[i] - u * u;
        let sxy = tape.xy[i] - u * m;
        let a1 = T::c(2.0) * u * m + c1;
        let a2 = T::c(2.0) * sxy + c2;
        let b1 = u * u + m * m + c1;
        let b2 = sxx + tape.syy[i] + c2;
        let denom = b1 * b2;
        let s = (a1 * a2) / denom;
        // S as a function of the primitive conv fields u = G*x, p = G*(x^2),
        // q = G*(x*y): sxx and sxy re-expand in terms of u.
        let ds_du = (T::c(2.0) * m * (a2 - a1) - T::c(2.0) * u * s * (b2 - b1)) / denom;
        let ds_dp = -s / b2;
        let ds_dq = T::c(2.0) * a1 / denom;
        w_u[i] = ds_du * scale;
        w_p[i] = ds_dp * scale;
        w_q[i] = ds_dq * scale;
    }
    let g_u = conv_valid_adjoint(&w_u, w, h, &taps);
    let g_p = conv_valid_adjoint(&w_p, w, h, &taps);
    let g_q = conv_valid_adjoint(&w_q, w, h, &taps);
    let mut out = vec![T::zero(); w * h];
    for i in 0..w * h {
        out[i] = g_u[i] + T::c(2.0) * x[i] * g_p[i] + y[i] * g_q[i];
    }
    out
}

/// Mean luminance and contrast-structure terms over windows of one plane.
fn ssim_lcs<T: Scalar>(x: &[T], y: &[T], w: usize, h: usize) -> (T, T) {
    let taps = gaussian_taps::<T>();
    let mu_x = conv_valid(x, w, h, &taps);
    let mu_y = conv_valid(y, w, h, &taps);
    let xx = conv_valid(&sq(x), w, h, &taps);
    let yy = conv_valid(&sq(y), w, h, &taps);
    let xy = conv_valid(&prod(x, y), w, h, &taps);
    let c1 = T::c(K1 * K1);
    let c2 = T::c(K2 * K2);
    let mut l_sum = T::zero();
    let mut cs_sum = T::zero();
    for i in 0..mu_x.len() {
        let (u, m) = (mu_x[i], mu_y[i]);
        let sxx = xx[i] - u * u;
        let s_yy = yy[i] - m * m;
        let sxy = xy[i] - u * m;
        l_sum += (T::c(2.0) * u * m + c1) / (u * u + m * m + c1);
        cs_sum += (T::c(2.0) * sxy + c2) / (sxx + s_yy + c2);
    }
    let n = T::from_usize(mu_x.len()).unwrap();
    (l_sum / n, cs_sum / n)
}

/// Five-scale MS-SSIM of one plane. Negative contrast terms are clamped to
/// zero before exponentiation.
pub(crate) fn ms_ssim_plane<T: Scalar>(x: &[T], y: &[T], w: usize, h: usize) -> T {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    let (mut cw, mut chh) = (w, h);
    let mut acc = T::one();
    for (scale, &wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (l, cs) = ssim_lcs(&xs, &ys, cw, chh);
        if scale == MS_SSIM_WEIGHTS.len() - 1 {
            acc *= l.max(T::zero()).powf(T::c(wt)) * cs.max(T::zero()).powf(T::c(wt));
        } else {
            acc *= cs.max(T::zero()).powf(T::c(wt));
            xs = downsample2(&xs, cw, chh);
            ys = downsample2(&ys, cw, chh);
            cw /= 2;
            chh /= 2;
        }
    }
    acc
}

/// 2×2 mean pooling with stride 2; trailing odd row/column dropped.
fn downsample2<T: Scalar>(plane: &[T], w: usize, h: usize) -> Vec<T> {
    let (hw, hh) = (w / 2, h / 2);
    let quarter = T::c(0.25);
    let mut out = Vec::with_capacity(hw * hh);
    for y in 0..hh {
        for x in 0..hw {
            let base = 2 * y * w + 2 * x;
            out.push(
                (plane[base] + plane[base + 1] + plane[base + w] + plane[base + w + 1]) * quarter,
            );
        }
    }
    out
}

fn sq<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&a| a * a).collect()
}

fn prod<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}
