//! Raw image representation and file I/O.
//!
//! Images are interleaved RGB, row-major, with samples in linear light and a
//! nominal `[0, 1]` range. Two exchange formats are supported: 16-bit RGB PNG
//! (samples quantized to the `v/65535` lattice) and 3-channel PFM
//! (little-endian, scale header `-1.0`, bottom-to-top scanlines, verbatim
//! `f32` samples).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::num::Scalar;

/// Errors raised by image loading, saving, and normalization.
#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png error: {0}")]
    Png(#[from] image::ImageError),
    #[error("expected 16-bit RGB PNG, found {0}")]
    NotPng16(&'static str),
    #[error("malformed PFM: {0}")]
    MalformedPfm(String),
    #[error("invalid dimensions {width}x{height} for {len} samples")]
    DimensionMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("normalization requires white_level > black_level >= 0")]
    BadNormalization,
}

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// 16-bit-per-channel RGB PNG.
    Png16,
    /// Portable FloatMap, 3-channel, little-endian.
    Pfm,
}

impl ImageFormat {
    /// Guess the format from a file extension; defaults to PNG.
    pub fn from_path(path: &Path) -> ImageFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("pfm") => ImageFormat::Pfm,
            _ => ImageFormat::Png16,
        }
    }
}

/// An H×W×3 raw image in linear light.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> RawImage<T> {
    /// Wrap interleaved RGB samples. Panics if the length is inconsistent.
    pub fn new(width: usize, height: usize, data: Vec<T>) -> RawImage<T> {
        assert_eq!(
            data.len(),
            width * height * 3,
            "sample count must be width*height*3"
        );
        RawImage {
            width,
            height,
            data,
        }
    }

    /// All-zero image.
    pub fn zeros(width: usize, height: usize) -> RawImage<T> {
        RawImage::new(width, height, vec![T::zero(); width * height * 3])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Sample accessor (no bounds hiding: panics on out-of-range).
    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// True when every sample is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamp every sample into `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = clamp01(*v);
        }
    }

    /// Extract one channel as a contiguous plane.
    pub fn channel_plane(&self, c: usize) -> Vec<T> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// Rebuild an image from three channel planes.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<T>; 3]) -> RawImage<T> {
        let n = width * height;
        assert!(planes.iter().all(|p| p.len() == n));
        let mut data = vec![T::zero(); n * 3];
        for i in 0..n {
            data[i * 3] = planes[0][i];
            data[i * 3 + 1] = planes[1][i];
            data[i * 3 + 2] = planes[2][i];
        }
        RawImage::new(width, height, data)
    }

    /// Maximum absolute sample difference; images must share dimensions.
    pub fn max_abs_diff(&self, other: &RawImage<T>) -> T {
        assert_eq!(self.width, other.width);
        assert_eq!(self.height, other.height);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// Convert samples to another scalar type.
    pub fn cast<U: Scalar>(&self) -> RawImage<U> {
        RawImage::new(
            self.width,
            self.height,
            self.data.iter().map(|v| U::c(v.as_f64())).collect(),
        )
    }
}

#[inline]
pub(crate) fn clamp01<T: Scalar>(v: T) -> T {
    if v < T::zero() {
        T::zero()
    } else if v > T::one() {
        T::one()
    } else {
        v
    }
}

/// Sensor count normalization bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub black_level: f64,
    pub white_level: f64,
}

impl NormalizationSpec {
    pub fn new(black_level: f64, white_level: f64) -> Result<NormalizationSpec, ImageError> {
        if !(black_level >= 0.0 && white_level > black_level) {
            return Err(ImageError::BadNormalization);
        }
        Ok(NormalizationSpec {
            black_level,
            white_level,
        })
    }
}

/// Map count-domain samples to `[0, 1]`: `clamp((v - black) / (white - black), 0, 1)`.
pub fn normalize<T: Scalar>(img_counts: &RawImage<T>, spec: NormalizationSpec) -> RawImage<T> {
    let black = T::c(spec.black_level);
    let scale = T::one() / T::c(spec.white_level - spec.black_level);
    let data = img_counts
        .data()
        .iter()
        .map(|&v| clamp01((v - black) * scale))
        .collect();
    RawImage::new(img_counts.width(), img_counts.height(), data)
}

/// Per-axis bilinear resampling table under the align-corners convention:
/// destination index `i` samples source position `i * (src_n - 1) / (dst_n - 1)`
/// (a single-point axis maps to source index 0). Weights are convex, so
/// resampling can never overshoot the source value range.
#[derive(Debug, Clone)]
pub struct AxisMap<T> {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    /// Weight of the `hi` sample; the `lo` sample gets `1 - w`.
    pub w: Vec<T>,
}

impl<T: Scalar> AxisMap<T> {
    pub fn new(src_n: usize, dst_n: usize) -> AxisMap<T> {
        assert!(src_n >= 1 && dst_n >= 1);
        let mut lo = Vec::with_capacity(dst_n);
        let mut hi = Vec::with_capacity(dst_n);
        let mut w = Vec::with_capacity(dst_n);
        for i in 0..dst_n {
            if src_n == 1 || dst_n == 1 {
                lo.push(0);
                hi.push(0);
                w.push(T::zero());
                continue;
            }
            let pos = T::from_usize(i).unwrap() * T::from_usize(src_n - 1).unwrap()
                / T::from_usize(dst_n - 1).unwrap();
            let mut i0 = pos.floor().to_usize().unwrap_or(0);
            if i0 >= src_n - 1 {
                i0 = src_n - 2;
            }
            lo.push(i0);
            hi.push(i0 + 1);
            w.push(pos - T::from_usize(i0).unwrap());
        }
        AxisMap { lo, hi, w }
    }
}

/// Bilinearly resample a single plane with [`AxisMap`] tables.
pub(crate) fn resample_plane<T: Scalar>(
    src: &[T],
    src_w: usize,
    xs: &AxisMap<T>,
    ys: &AxisMap<T>,
) -> Vec<T> {
    let (dst_w, dst_h) = (xs.lo.len(), ys.lo.len());
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for y in 0..dst_h {
        let (r0, r1, wy) = (ys.lo[y] * src_w, ys.hi[y] * src_w, ys.w[y]);
        for x in 0..dst_w {
            let (x0, x1, wx) = (xs.lo[x], xs.hi[x], xs.w[x]);
            let top = src[r0 + x0] + (src[r0 + x1] - src[r0 + x0]) * wx;
            let bot = src[r1 + x0] + (src[r1 + x1] - src[r1 + x0]) * wx;
            out.push(top + (bot - top) * wy);
        }
    }
    out
}

/// Adjoint of [`resample_plane`]: scatter destination-plane gradients back to
/// the source plane with the same weights.
pub(crate) fn resample_plane_adjoint<T: Scalar>(
    d_dst: &[T],
    src_w: usize,
    src_h: usize,
    xs: &AxisMap<T>,
    ys: &AxisMap<T>,
) -> Vec<T> {
    let (dst_w, dst_h) = (xs.lo.len(), ys.lo.len());
    let mut d_src = vec![T::zero(); src_w * src_h];
    for y in 0..dst_h {
        let (r0, r1, wy) = (ys.lo[y] * src_w, ys.hi[y] * src_w, ys.w[y]);
        for x in 0..dst_w {
            let (x0, x1, wx) = (xs.lo[x], xs.hi[x], xs.w[x]);
            let g = d_dst[y * dst_w + x];
            d_src[r0 + x0] += g * (T::one() - wx) * (T::one() - wy);
            d_src[r0 + x1] += g * wx * (T::one() - wy);
            d_src[r1 + x0] += g * (T::one() - wx) * wy;
            d_src[r1 + x1] += g * wx * wy;
        }
    }
    d_src
}

/// Bilinear resize with edge clamping (align-corners sample grid).
pub fn resize_bilinear<T: Scalar>(img: &RawImage<T>, out_w: usize, out_h: usize) -> RawImage<T> {
    assert!(out_w >= 1 && out_h >= 1);
    let xs = AxisMap::new(img.width(), out_w);
    let ys = AxisMap::new(img.height(), out_h);
    let planes = [
        resample_plane(&img.channel_plane(0), img.width(), &xs, &ys),
        resample_plane(&img.channel_plane(1), img.width(), &xs, &ys),
        resample_plane(&img.channel_plane(2), img.width(), &xs, &ys),
    ];
    RawImage::from_planes(out_w, out_h, &planes)
}

/// Load a raw image from disk.
pub fn load_raw<T: Scalar>(path: &Path, format: ImageFormat) -> Result<RawImage<T>, ImageError> {
    match format {
        ImageFormat::Png16 => load_png16(path),
        ImageFormat::Pfm => load_pfm(path),
    }
}

/// Save a raw image to disk.
pub fn save_raw<T: Scalar>(
    img: &RawImage<T>,
    path: &Path,
    format: ImageFormat,
) -> Result<(), ImageError> {
    match format {
        ImageFormat::Png16 => save_png16(img, path),
        ImageFormat::Pfm => save_pfm(img, path),
    }
}

fn load_png16<T: Scalar>(path: &Path) -> Result<RawImage<T>, ImageError> {
    let dynimg = image::open(path)?;
    let rgb16 = match dynimg {
        image::DynamicImage::ImageRgb16(buf) => buf,
        image::DynamicImage::ImageRgba16(_) => return Err(ImageError::NotPng16("16-bit RGBA")),
        image::DynamicImage::ImageLuma16(_) => {
            return Err(ImageError::NotPng16("16-bit grayscale"))
        }
        image::DynamicImage::ImageLumaA16(_) => {
            return Err(ImageError::NotPng16("16-bit grayscale+alpha"))
        }
        _ => return Err(ImageError::NotPng16("8-bit image")),
    };
    let (w, h) = (rgb16.width() as usize, rgb16.height() as usize);
    let scale = T::one() / T::c(65535.0);
    let data = rgb16
        .as_raw()
        .iter()
        .map(|&v| T::from_u16(v).unwrap() * scale)
        .collect();
    Ok(RawImage::new(w, h, data))
}

fn save_png16<T: Scalar>(img: &RawImage<T>, path: &Path) -> Result<(), ImageError> {
    let full = T::c(65535.0);
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (clamp01(v) * full).round().to_u16().unwrap_or(u16::MAX))
        .collect();
    let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw)
            .ok_or(ImageError::DimensionMismatch {
                width: img.width(),
                height: img.height(),
                len: img.data().len(),
            })?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Encode to an in-memory 16-bit RGB PNG; the reference size for
/// compression-ratio accounting.
pub fn encode_png16_bytes<T: Scalar>(img: &RawImage<T>) -> Result<Vec<u8>, ImageError> {
    let full = T::c(65535.0);
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (clamp01(v) * full).round().to_u16().unwrap_or(u16::MAX))
        .collect();
    let buf: image::ImageBuffer<image::Rgb<u16>, Vec<u16>> =
        image::ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).ok_or(
            ImageError::DimensionMismatch {
                width: img.width(),
                height: img.height(),
                len: img.data().len(),
            },
        )?;
    let mut bytes = Vec::new();
    buf.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )?;
    Ok(bytes)
}

fn load_pfm<T: Scalar>(path: &Path) -> Result<RawImage<T>, ImageError> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_pfm_token(&mut reader)?;
    if magic != "PF" {
        return Err(ImageError::MalformedPfm(format!(
            "expected magic PF, found {magic:?} (grayscale Pf unsupported)"
        )));
    }
    let width: usize = read_pfm_token(&mut reader)?
        .parse()
        .map_err(|_| ImageError::MalformedPfm("bad width".into()))?;
    let height: usize = read_pfm_token(&mut reader)?
        .parse()
        .map_err(|_| ImageError::MalformedPfm("bad height".into()))?;
    let scale: f32 = read_pfm_token(&mut reader)?
        .parse()
        .map_err(|_| ImageError::MalformedPfm("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(ImageError::MalformedPfm(
            "big-endian PFM (scale >= 0) unsupported".into(),
        ));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedPfm("zero dimension".into()));
    }
    let mut bytes = vec![0u8; width * height * 3 * 4];
    reader.read_exact(&mut bytes).map_err(|_| {
        ImageError::MalformedPfm("truncated sample data".into())
    })?;
    let mut data = vec![T::zero(); width * height * 3];
    // PFM scanlines run bottom-to-top.
    for row in 0..height {
        let src_row = height - 1 - row;
        for i in 0..width * 3 {
            let off = (src_row * width * 3 + i) * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            data[row * width * 3 + i] = clamp01(T::c(v as f64));
        }
    }
    Ok(RawImage::new(width, height, data))
}

fn save_pfm<T: Scalar>(img: &RawImage<T>, path: &Path) -> Result<(), ImageError> {
    let mut writer = BufWriter::new(File::create(path)?);
    write!(writer, "PF\n{} {}\n-1.0\n", img.width(), img.height())?;
    let (w, h) = (img.width(), img.height());
    for row in 0..h {
        let src_row = h - 1 - row;
        for i in 0..w * 3 {
            let v = img.data()[src_row * w * 3 + i].as_f64() as f32;
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Read a whitespace-delimited PFM header token.
fn read_pfm_token<R: BufRead>(reader: &mut R) -> Result<String, ImageError> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            if token.is_empty() {
                return Err(ImageError::MalformedPfm("truncated header".into()));
            }
            return Ok(token);
        }
        let ch = byte[0] as char;
        if ch.is_ascii_whitespace() {
            if !token.is_empty() {
                return Ok(token);
            }
        } else {
            token.push(ch);
            if token.len() > 32 {
                return Err(ImageError::MalformedPfm("oversized header token".into()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let spec = NormalizationSpec::new(64.0, 1023.0).unwrap();
        let img = RawImage::new(1, 1, vec![64.0f64, 1023.0, 543.5]);
        let out = normalize(&img, spec);
        assert_eq!(out.data()[0], 0.0);
        assert_eq!(out.data()[1], 1.0);
        assert!((out.data()[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_bad_levels() {
        assert!(NormalizationSpec::new(100.0, 100.0).is_err());
        assert!(NormalizationSpec::new(-1.0, 100.0).is_err());
    }

    #[test]
    fn normalize_is_monotone_and_clamped() {
        let spec = NormalizationSpec::new(10.0, 20.0).unwrap();
        let counts: Vec<f64> = (0..30).map(|v| v as f64).collect();
        let img = RawImage::new(10, 1, counts.clone());
        let out = normalize(&img, spec);
        for w in out.data().windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = RawImage::<f64>::new(5, 3, vec![0.3; 45]);
        let out = resize_bilinear(&img, 17, 9);
        for &v in out.data() {
            assert!((v - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn resize_same_size_is_identity() {
        let data: Vec<f64> = (0..48).map(|i| (i as f64) / 48.0).collect();
        let img = RawImage::new(4, 4, data);
        let out = resize_bilinear(&img, 4, 4);
        assert!(img.max_abs_diff(&out) <= 1e-12);
    }

    #[test]
    fn resize_matches_reference_on_2x1() {
        // Align-corners: dst x of 4 samples source at 0, 1/3, 2/3, 1.
        let img = RawImage::new(2, 1, vec![0.0f64, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let out = resize_bilinear(&img, 4, 1);
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (i, &e) in expect.iter().enumerate() {
            assert!((out.at(i, 0, 0) - e).abs() < 1e-12, "x={i}");
        }
    }

    #[test]
    fn resample_adjoint_matches_forward() {
        // <A x, g> == <x, A^T g> for random x, g.
        use rand::prelude::*;
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let (sw, sh, dw, dh) = (5, 4, 9, 7);
        let xs = AxisMap::<f64>::new(sw, dw);
        let ys = AxisMap::<f64>::new(sh, dh);
        let x: Vec<f64> = (0..sw * sh).map(|_| rng.gen::<f64>()).collect();
        let g: Vec<f64> = (0..dw * dh).map(|_| rng.gen::<f64>()).collect();
        let ax = resample_plane(&x, sw, &xs, &ys);
        let atg = resample_plane_adjoint(&g, sw, sh, &xs, &ys);
        let lhs: f64 = ax.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&atg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pfm_roundtrip_is_bit_identical_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pfm");
        let data: Vec<f64> = (0..2 * 3 * 3)
            .map(|i| (i as f64 * 0.037).fract())
            .map(|v| (v as f32) as f64)
            .collect();
        let img = RawImage::new(3, 2, data);
        save_raw(&img, &path, ImageFormat::Pfm).unwrap();
        let back: RawImage<f64> = load_raw(&path, ImageFormat::Pfm).unwrap();
        assert_eq!(img.width(), back.width());
        assert_eq!(img.height(), back.height());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn png16_quantizes_to_lattice() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = RawImage::new(1, 1, vec![1.0, 0.0, 32768.0 / 65535.0]);
        save_raw(&img, &path, ImageFormat::Png16).unwrap();
        let back: RawImage<f64> = load_raw(&path, ImageFormat::Png16).unwrap();
        assert_eq!(back.data()[0], 1.0);
        assert_eq!(back.data()[1], 0.0);
        assert!((back.data()[2] - 32768.0 / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn png16_rejects_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img8.png");
        let buf: image::ImageBuffer<image::Rgb<u8>, Vec<u8>> =
            image::ImageBuffer::from_raw(2, 2, vec![0u8; 12]).unwrap();
        buf.save(&path).unwrap();
        let res: Result<RawImage<f64>, _> = load_raw(&path, ImageFormat::Png16);
        assert!(matches!(res, Err(ImageError::NotPng16(_))));
    }

    #[test]
    fn zero_image_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        for (fmt, name) in [(ImageFormat::Png16, "z.png"), (ImageFormat::Pfm, "z.pfm")] {
            let path = dir.path().join(name);
            let img = RawImage::<f64>::zeros(2, 2);
            save_raw(&img, &path, fmt).unwrap();
            let back: RawImage<f64> = load_raw(&path, fmt).unwrap();
            assert_eq!(img, back);
        }
    }
}
