//! Fidelity and storage metrics: PSNR, SSIM, MS-SSIM, bits per pixel,
//! tonal-diversity-weighted BPP, and compression ratio.

use std::collections::HashSet;

use crate::image::RawImage;
use crate::num::Scalar;
use crate::ssim::{ms_ssim_plane, ssim_plane, MS_SSIM_MIN_DIM, WINDOW};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("image dimensions differ")]
    DimensionMismatch,
    #[error("image {w}x{h} too small for an {min}-pixel window")]
    TooSmall { w: usize, h: usize, min: usize },
    #[error("dimensions must be nonzero")]
    ZeroDimensions,
}

fn check_dims<T: Scalar>(a: &RawImage<T>, b: &RawImage<T>) -> Result<(), MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::DimensionMismatch);
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB against a unit peak; identical images
/// report `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &RawImage<T>, b: &RawImage<T>) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x.as_f64() - y.as_f64();
        acc += d * d;
    }
    let mse = acc / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Mean SSIM over the three channels (11×11 Gaussian window, valid region).
pub fn ssim<T: Scalar>(a: &RawImage<T>, b: &RawImage<T>) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < WINDOW || h < WINDOW {
        return Err(MetricsError::TooSmall {
            w,
            h,
            min: WINDOW,
        });
    }
    let mut acc = 0.0;
    for c in 0..3 {
        let (s, _) = ssim_plane(&a.channel_plane(c), &b.channel_plane(c), w, h);
        acc += s.as_f64();
    }
    Ok(acc / 3.0)
}

/// Mean five-scale MS-SSIM over the three channels (standard scale weights).
pub fn ms_ssim<T: Scalar>(a: &RawImage<T>, b: &RawImage<T>) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < MS_SSIM_MIN_DIM || h < MS_SSIM_MIN_DIM {
        return Err(MetricsError::TooSmall {
            w,
            h,
            min: MS_SSIM_MIN_DIM,
        });
    }
    let mut acc = 0.0;
    for c in 0..3 {
        acc += ms_ssim_plane(&a.channel_plane(c), &b.channel_plane(c), w, h).as_f64();
    }
    Ok(acc / 3.0)
}

/// Bits per pixel of a stored file.
pub fn bpp(file_bytes: usize, width: usize, height: usize) -> Result<f64, MetricsError> {
    if width == 0 || height == 0 {
        return Err(MetricsError::ZeroDimensions);
    }
    Ok(8.0 * file_bytes as f64 / (width * height) as f64)
}

/// Compression ratio relative to a reference encoding of the same image.
pub fn cr(reference_bytes: usize, file_bytes: usize) -> Result<f64, MetricsError> {
    if file_bytes == 0 {
        return Err(MetricsError::ZeroDimensions);
    }
    Ok(reference_bytes as f64 / file_bytes as f64)
}

/// Count distinct RGB triples on the 16-bit lattice of the stored raw.
/// Counting on the quantized lattice (rather than raw floats, where nearly
/// every pixel is unique) makes the tonal-diversity credit meaningful.
pub fn unique_triples<T: Scalar>(img: &RawImage<T>) -> usize {
    let mut set: HashSet<u64> = HashSet::with_capacity(img.pixels());
    for px in img.data().chunks_exact(3) {
        let q = |v: T| -> u64 {
            (v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u64
        };
        set.insert(q(px[0]) << 32 | q(px[1]) << 16 | q(px[2]));
    }
    set.len()
}

/// Weighted BPP: `bpp / log2(1 + N_unique)` credits tonal diversity.
pub fn wbpp<T: Scalar>(bpp_value: f64, reconstruction: &RawImage<T>) -> f64 {
    let n = unique_triples(reconstruction);
    bpp_value / (1.0 + n as f64).log2()
}

/// The full metric set for one stored image.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when the image is too small for five scales.
    pub ms_ssim: Option<f64>,
    pub bpp: f64,
    pub wbpp: f64,
    pub cr: f64,
    pub unique_triples: usize,
    pub file_bytes: usize,
}

impl MetricsReport {
    /// Compute every metric for a reconstruction of `original` stored in
    /// `file_bytes`, with `reference_bytes` the uncompressed 16-bit PNG size.
    pub fn compute<T: Scalar>(
        original: &RawImage<T>,
        reconstruction: &RawImage<T>,
        file_bytes: usize,
        reference_bytes: usize,
    ) -> Result<MetricsReport, MetricsError> {
        check_dims(original, reconstruction)?;
        let bpp_value = bpp(file_bytes, original.width(), original.height())?;
        let ms = match ms_ssim(original, reconstruction) {
            Ok(v) => Some(v),
            Err(MetricsError::TooSmall { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(MetricsReport {
            psnr: psnr(original, reconstruction)?,
            ssim: ssim(original, reconstruction)?,
            ms_ssim: ms,
            bpp: bpp_value,
            wbpp: wbpp(bpp_value, reconstruction),
            cr: cr(reference_bytes, file_bytes)?,
            unique_triples: unique_triples(reconstruction),
            file_bytes,
        })
    }

    pub const CSV_HEADER: &'static str =
        "psnr,ssim,ms_ssim,bpp,wbpp,cr,unique_triples,file_bytes";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.6},{},{:.4},{:.4},{:.2},{},{}",
            self.psnr,
            self.ssim,
            self.ms_ssim
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
            self.bpp,
            self.wbpp,
            self.cr,
            self.unique_triples,
            self.file_bytes
        )
    }
}

/// Render rows as an aligned text table (first row is the header).
pub fn format_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{:<width$}", cell, width = widths[i]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn random_image(seed: u64, w: usize, h: usize) -> RawImage<f64> {
        let mut rng = StdRng::seed_from_u64(seed);
        RawImage::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect())
    }

    #[test]
    fn psnr_identity_is_infinite() {
        let img = random_image(1, 8, 8);
        assert!(psnr(&img, &img).unwrap().is_infinite());
    }

    #[test]
    fn psnr_uniform_offset_is_20db() {
        let img = RawImage::new(4, 4, vec![0.3f64; 48]);
        let mut other = img.clone();
        for v in other.data_mut() {
            *v += 0.1;
        }
        assert!((psnr(&img, &other).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_direct_sum_and_is_symmetric() {
        let a = random_image(2, 9, 7);
        let b = random_image(3, 9, 7);
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.data().len() as f64;
        let expect = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b).unwrap() - expect).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn psnr_dim_mismatch() {
        let a = random_image(4, 4, 4);
        let b = random_image(4, 4, 5);
        assert!(matches!(psnr(&a, &b), Err(MetricsError::DimensionMismatch)));
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = random_image(5, 16, 16);
        let b = random_image(6, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ms_ssim_identity_and_size_guard() {
        let a = random_image(7, 176, 176);
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let small = random_image(8, 64, 64);
        assert!(matches!(
            ms_ssim(&small, &small),
            Err(MetricsError::TooSmall { .. })
        ));
    }

    #[test]
    fn bpp_and_cr_arithmetic() {
        assert!((bpp(1000, 100, 10).unwrap() - 8.0).abs() < 1e-12);
        assert!((cr(1000, 100).unwrap() - 10.0).abs() < 1e-12);
        assert!(bpp(10, 0, 5).is_err());
    }

    #[test]
    fn com_overhead_is_exact_in_bpp() {
        let (w, h, payload) = (100usize, 10usize, 500usize);
        let without = bpp(2000, w, h).unwrap();
        let with = bpp(2000 + payload + 4, w, h).unwrap();
        let expect = 8.0 * (payload + 4) as f64 / (w * h) as f64;
        assert!((with - without - expect).abs() < 1e-12);
    }

    #[test]
    fn wbpp_single_color_equals_bpp() {
        let img = RawImage::new(8, 8, vec![0.25f64; 192]);
        assert_eq!(unique_triples(&img), 1);
        assert!((wbpp(3.0, &img) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn wbpp_divisor_for_four_values() {
        let mut img = RawImage::<f64>::zeros(2, 2);
        for (i, px) in img.data_mut().chunks_exact_mut(3).enumerate() {
            px[0] = i as f64 / 10.0;
        }
        assert_eq!(unique_triples(&img), 4);
        let got = wbpp(1.0, &img);
        assert!((got - 1.0 / 5.0f64.log2()).abs() < 1e-12);
        assert!((5.0f64.log2() - 2.3219).abs() < 1e-4);
    }

    #[test]
    fn wbpp_decreases_as_diversity_doubles() {
        let mut four = RawImage::<f64>::zeros(4, 1);
        let mut eight = RawImage::<f64>::zeros(8, 1);
        for (i, px) in four.data_mut().chunks_exact_mut(3).enumerate() {
            px[1] = i as f64 / 20.0;
        }
        for (i, px) in eight.data_mut().chunks_exact_mut(3).enumerate() {
            px[1] = i as f64 / 20.0;
        }
        assert!(wbpp(2.0, &eight) < wbpp(2.0, &four));
    }

    #[test]
    fn table_alignment() {
        let rows = vec![
            vec!["Method".to_string(), "PSNR".to_string()],
            vec!["JPEG".to_string(), "36.58".to_string()],
        ];
        let t = format_table(&rows);
        assert!(t.contains("Method  PSNR"));
        assert!(t.contains("JPEG    36.58"));
    }
}
