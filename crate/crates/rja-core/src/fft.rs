//! Radix-2 FFT used by the frequency-domain loss term.
//!
//! Only power-of-two lengths are supported; the fitter keeps thumbnails at
//! power-of-two sides so the loss never needs a general-size transform.

use num_complex::Complex;

use crate::num::Scalar;

/// True when `n` is a nonzero power of two.
pub fn is_pow2(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// In-place iterative radix-2 decimation-in-time FFT.
///
/// Forward transform: `X_k = sum_n x_n exp(-2*pi*i*k*n/N)`.
pub fn fft_inplace<T: Scalar>(buf: &mut [Complex<T>]) {
    let n = buf.len();
    assert!(is_pow2(n), "fft length must be a power of two");
    if n == 1 {
        return;
    }
    // Bit-reversal permutation.
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -T::c(2.0) * T::c(std::f64::consts::PI) / T::from_usize(len).unwrap();
        let wlen = Complex::new(ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let mut w = Complex::new(T::one(), T::zero());
            for k in 0..len / 2 {
                let u = buf[start + k];
                let v = buf[start + k + len / 2] * w;
                buf[start + k] = u + v;
                buf[start + k + len / 2] = u - v;
                w = w * wlen;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// 2D forward FFT of a real plane (row-major `h` rows of `w` samples).
pub fn fft2_real<T: Scalar>(plane: &[T], w: usize, h: usize) -> Vec<Complex<T>> {
    assert_eq!(plane.len(), w * h);
    let mut field: Vec<Complex<T>> = plane
        .iter()
        .map(|&v| Complex::new(v, T::zero()))
        .collect();
    fft2_inplace(&mut field, w, h);
    field
}

/// 2D forward FFT of a complex field, rows then columns.
pub fn fft2_inplace<T: Scalar>(field: &mut [Complex<T>], w: usize, h: usize) {
    assert_eq!(field.len(), w * h);
    assert!(is_pow2(w) && is_pow2(h), "fft2 dims must be powers of two");
    for row in field.chunks_exact_mut(w) {
        fft_inplace(row);
    }
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = field[y * w + x];
        }
        fft_inplace(&mut col);
        for y in 0..h {
            field[y * w + x] = col[y];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(N^2) reference DFT.
    fn dft_naive(x: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let n = x.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (i, v) in x.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    acc += v * Complex::new(ang.cos(), ang.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        use rand::prelude::*;
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for &n in &[1usize, 2, 4, 8, 32] {
            let x: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let mut fast = x.clone();
            fft_inplace(&mut fast);
            let slow = dft_naive(&x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn fft2_matches_naive_on_8x8() {
        use rand::prelude::*;
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        let (w, h) = (8, 8);
        let plane: Vec<f64> = (0..w * h).map(|_| rng.gen()).collect();
        let fast = fft2_real(&plane, w, h);
        for ky in 0..h {
            for kx in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ang = -2.0 * std::f64::consts::PI
                            * ((kx * x) as f64 / w as f64 + (ky * y) as f64 / h as f64);
                        acc += plane[y * w + x] * Complex::new(ang.cos(), ang.sin());
                    }
                }
                assert!((fast[ky * w + kx] - acc).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn dc_bin_is_sum() {
        let plane = vec![0.25f64; 16 * 16];
        let f = fft2_real(&plane, 16, 16);
        assert!((f[0].re - 0.25 * 256.0).abs() < 1e-9);
        assert!(f[0].im.abs() < 1e-12);
    }
}
