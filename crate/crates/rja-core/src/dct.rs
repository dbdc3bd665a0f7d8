//! Blockwise discrete cosine transform machinery.
//!
//! The 1D basis of size `B` is `D[k][i] = a(k) * cos(pi/(2B) * (2i+1) * k)`
//! with `a(0) = B^{-1/2}` and `a(k) = (2/B)^{1/2}` otherwise, which makes `D`
//! orthonormal. 2D blocks transform as `Y = D X D^T` and invert as
//! `X = D^T Y D`. Planes that are not multiples of the block size are
//! edge-replicated before blocking and cropped afterwards.

use crate::num::Scalar;

/// Row-major `b`×`b` orthonormal DCT-II basis matrix.
pub fn dct_basis<T: Scalar>(b: usize) -> Vec<T> {
    assert!(b >= 1);
    let bf = T::from_usize(b).unwrap();
    let a0 = T::one() / bf.sqrt();
    let ak = (T::c(2.0) / bf).sqrt();
    let mut m = Vec::with_capacity(b * b);
    for k in 0..b {
        let scale = if k == 0 { a0 } else { ak };
        for i in 0..b {
            let ang = T::c(std::f64::consts::PI) / (T::c(2.0) * bf)
                * T::from_usize(2 * i + 1).unwrap()
                * T::from_usize(k).unwrap();
            m.push(scale * ang.cos());
        }
    }
    m
}

pub const BLOCK: usize = 8;

/// Precomputed 8×8 basis with fast 2D transforms on flat 64-sample blocks.
#[derive(Debug, Clone)]
pub struct Dct8<T> {
    d: [T; 64],
}

impl<T: Scalar> Dct8<T> {
    pub fn new() -> Dct8<T> {
        let v = dct_basis::<T>(BLOCK);
        let mut d = [T::zero(); 64];
        d.copy_from_slice(&v);
        Dct8 { d }
    }

    /// `Y = D X D^T`
    #[inline]
    pub fn forward_2d(&self, block: &mut [T; 64]) {
        self.apply(block, false)
    }

    /// `X = D^T Y D`
    #[inline]
    pub fn inverse_2d(&self, block: &mut [T; 64]) {
        self.apply(block, true)
    }

    fn apply(&self, block: &mut [T; 64], transpose: bool) {
        let mut tmp = [T::zero(); 64];
        // tmp = M * block, with M = D or D^T
        for r in 0..8 {
            for c in 0..8 {
                let mut acc = T::zero();
                for k in 0..8 {
                    let m = if transpose { self.d[k * 8 + r] } else { self.d[r * 8 + k] };
                    acc += m * block[k * 8 + c];
                }
                tmp[r * 8 + c] = acc;
            }
        }
        // block = tmp * M^T
        for r in 0..8 {
            for c in 0..8 {
                let mut acc = T::zero();
                for k in 0..8 {
                    let m = if transpose { self.d[k * 8 + c] } else { self.d[c * 8 + k] };
                    acc += tmp[r * 8 + k] * m;
                }
                block[r * 8 + c] = acc;
            }
        }
    }
}

impl<T: Scalar> Default for Dct8<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Round a dimension up to the next multiple of `align`.
#[inline]
pub(crate) fn align_up(n: usize, align: usize) -> usize {
    n.div_ceil(align) * align
}

/// Edge-replicate a plane so both dimensions are multiples of `align`.
pub(crate) fn pad_replicate<T: Scalar>(
    plane: &[T],
    w: usize,
    h: usize,
    align: usize,
) -> (Vec<T>, usize, usize) {
    let (pw, ph) = (align_up(w, align), align_up(h, align));
    if pw == w && ph == h {
        return (plane.to_vec(), pw, ph);
    }
    let mut out = vec![T::zero(); pw * ph];
    for y in 0..ph {
        let sy = y.min(h - 1);
        for x in 0..pw {
            out[y * pw + x] = plane[sy * w + x.min(w - 1)];
        }
    }
    (out, pw, ph)
}

/// Crop a padded plane back to `w`×`h`.
pub(crate) fn crop<T: Scalar>(padded: &[T], pw: usize, w: usize, h: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend_from_slice(&padded[y * pw..y * pw + w]);
    }
    out
}

/// Adjoint of `crop(pad_replicate(x))` as a function of `x`: zero-extend the
/// cropped gradient, then fold replicated cells onto their source pixels.
pub(crate) fn pad_crop_adjoint<T: Scalar>(
    d_out: &[T],
    w: usize,
    h: usize,
    pw: usize,
    ph: usize,
    d_padded_extra: Option<&[T]>,
) -> Vec<T> {
    let mut d_src = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            d_src[y * w + x] = d_out[y * w + x];
        }
    }
    if let Some(dp) = d_padded_extra {
        // Gradient contributions produced inside the padded margin.
        for y in 0..ph {
            let sy = y.min(h - 1);
            for x in 0..pw {
                if x < w && y < h {
                    continue;
                }
                d_src[sy * w + x.min(w - 1)] += dp[y * pw + x];
            }
        }
    }
    d_src
}

/// Whether blockwise coefficients are multiplied or divided by the scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ScaleMode {
    Mul,
    Div,
}

/// Apply per-block DCT-domain scaling to a plane: for every 8×8 block,
/// `X -> D^T ((D X D^T) op S) D` where `op` multiplies or divides.
pub(crate) fn dct_scale_plane<T: Scalar>(
    dct: &Dct8<T>,
    plane: &[T],
    w: usize,
    h: usize,
    s: &[T; 64],
    mode: ScaleMode,
) -> Vec<T> {
    let (mut padded, pw, ph) = pad_replicate(plane, w, h, BLOCK);
    let mut block = [T::zero(); 64];
    for by in (0..ph).step_by(BLOCK) {
        for bx in (0..pw).step_by(BLOCK) {
            load_block(&padded, pw, bx, by, &mut block);
            dct.forward_2d(&mut block);
            match mode {
                ScaleMode::Mul => {
                    for i in 0..64 {
                        block[i] *= s[i];
                    }
                }
                ScaleMode::Div => {
                    for i in 0..64 {
                        block[i] /= s[i];
                    }
                }
            }
            dct.inverse_2d(&mut block);
            store_block(&mut padded, pw, bx, by, &block);
        }
    }
    crop(&padded, pw, w, h)
}

/// Reverse-mode derivatives of [`dct_scale_plane`].
///
/// Returns the gradient with respect to the input plane and accumulates the
/// gradient with respect to the 64 scale entries into `d_s`.
pub(crate) fn dct_scale_plane_backward<T: Scalar>(
    dct: &Dct8<T>,
    input_plane: &[T],
    w: usize,
    h: usize,
    s: &[T; 64],
    mode: ScaleMode,
    d_out: &[T],
    d_s: &mut [T; 64],
) -> Vec<T> {
    let (in_padded, pw, ph) = pad_replicate(input_plane, w, h, BLOCK);
    // Zero-extend the output gradient into the padded geometry.
    let mut d_padded = vec![T::zero(); pw * ph];
    for y in 0..h {
        for x in 0..w {
            d_padded[y * pw + x] = d_out[y * w + x];
        }
    }
    let mut g = [T::zero(); 64];
    let mut yb = [T::zero(); 64];
    for by in (0..ph).step_by(BLOCK) {
        for bx in (0..pw).step_by(BLOCK) {
            load_block(&d_padded, pw, bx, by, &mut g);
            load_block(&in_padded, pw, bx, by, &mut yb);
            // ghat = D g D^T (adjoint of the final inverse transform)
            dct.forward_2d(&mut g);
            // y = D x D^T (recomputed forward coefficients)
            dct.forward_2d(&mut yb);
            match mode {
                ScaleMode::Mul => {
                    for i in 0..64 {
                        d_s[i] += yb[i] * g[i];
                        g[i] *= s[i];
                    }
                }
                ScaleMode::Div => {
                    for i in 0..64 {
                        d_s[i] -= yb[i] / (s[i] * s[i]) * g[i];
                        g[i] /= s[i];
                    }
                }
            }
            // d_x = D^T (...) D
            dct.inverse_2d(&mut g);
            store_block(&mut d_padded, pw, bx, by, &g);
        }
    }
    let cropped: Vec<T> = crop(&d_padded, pw, w, h);
    pad_crop_adjoint(&cropped, w, h, pw, ph, Some(&d_padded))
}

#[inline]
pub(crate) fn load_block<T: Scalar>(
    plane: &[T],
    pw: usize,
    bx: usize,
    by: usize,
    block: &mut [T; 64],
) {
    for r in 0..BLOCK {
        let off = (by + r) * pw + bx;
        block[r * BLOCK..(r + 1) * BLOCK].copy_from_slice(&plane[off..off + BLOCK]);
    }
}

#[inline]
pub(crate) fn store_block<T: Scalar>(
    plane: &mut [T],
    pw: usize,
    bx: usize,
    by: usize,
    block: &[T; 64],
) {
    for r in 0..BLOCK {
        let off = (by + r) * pw + bx;
        plane[off..off + BLOCK].copy_from_slice(&block[r * BLOCK..(r + 1) * BLOCK]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inf_norm_minus_identity(d: &[f64], b: usize) -> f64 {
        // ||D D^T - I||_inf
        let mut worst = 0.0f64;
        for r in 0..b {
            for c in 0..b {
                let mut acc = 0.0;
                for k in 0..b {
                    acc += d[r * b + k] * d[c * b + k];
                }
                let expect = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((acc - expect).abs());
            }
        }
        worst
    }

    #[test]
    fn basis_is_orthonormal() {
        for &b in &[1usize, 2, 4, 8, 16] {
            let d = dct_basis::<f64>(b);
            assert!(inf_norm_minus_identity(&d, b) <= 1e-12, "B={b}");
        }
    }

    #[test]
    fn basis_b1_is_unit() {
        let d = dct_basis::<f64>(1);
        assert_eq!(d.len(), 1);
        assert!((d[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn basis_b2_matches_closed_form() {
        let d = dct_basis::<f64>(2);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [r, r, r, -r];
        for (a, e) in d.iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn all_ones_block_has_dc_8() {
        let dct = Dct8::<f64>::new();
        let mut block = [1.0f64; 64];
        dct.forward_2d(&mut block);
        assert!((block[0] - 8.0).abs() < 1e-12);
        for &v in &block[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn scale_roundtrip_on_aligned_plane() {
        use rand::prelude::*;
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let dct = Dct8::<f64>::new();
        let (w, h) = (16, 8);
        let plane: Vec<f64> = (0..w * h).map(|_| rng.gen()).collect();
        let mut s = [0.0f64; 64];
        for v in &mut s {
            *v = (0.7f64 * (rng.gen::<f64>() * 2.0 - 1.0)).exp();
        }
        let fwd = dct_scale_plane(&dct, &plane, w, h, &s, ScaleMode::Mul);
        let back = dct_scale_plane(&dct, &fwd, w, h, &s, ScaleMode::Div);
        let worst = plane
            .iter()
            .zip(&back)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1e-10, "roundtrip err {worst}");
    }

    #[test]
    fn scale_backward_matches_finite_differences() {
        use rand::prelude::*;
        let mut rng = rand::rngs::StdRng::seed_from_u64(12);
        let dct = Dct8::<f64>::new();
        let (w, h) = (11, 9);
        let plane: Vec<f64> = (0..w * h).map(|_| rng.gen()).collect();
        let mut s = [0.0f64; 64];
        for v in &mut s {
            *v = 1.0 + 0.3 * (rng.gen::<f64>() - 0.5);
        }
        // Scalar objective: weighted sum of the output plane.
        let weights: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>() - 0.5).collect();
        let objective = |p: &[f64], sc: &[f64; 64]| -> f64 {
            dct_scale_plane(&dct, p, w, h, sc, ScaleMode::Mul)
                .iter()
                .zip(&weights)
                .map(|(a, b)| a * b)
                .sum()
        };
        let mut d_s = [0.0f64; 64];
        let d_in = dct_scale_plane_backward(
            &dct, &plane, w, h, &s, ScaleMode::Mul, &weights, &mut d_s,
        );
        let hstep = 1e-6;
        for &idx in &[0usize, 5, w * h / 2, w * h - 1] {
            let mut p = plane.clone();
            p[idx] += hstep;
            let up = objective(&p, &s);
            p[idx] -= 2.0 * hstep;
            let dn = objective(&p, &s);
            let fd = (up - dn) / (2.0 * hstep);
            assert!((fd - d_in[idx]).abs() < 1e-6, "d_in[{idx}] {fd} vs {}", d_in[idx]);
        }
        for &idx in &[0usize, 1, 9, 63] {
            let mut sc = s;
            sc[idx] += hstep;
            let up = objective(&plane, &sc);
            sc[idx] -= 2.0 * hstep;
            let dn = objective(&plane, &sc);
            let fd = (up - dn) / (2.0 * hstep);
            assert!((fd - d_s[idx]).abs() < 1e-6, "d_s[{idx}] {fd} vs {}", d_s[idx]);
        }
    }
}
