//! JPEG file-level operations: marker-segment scanning, COM insertion and
//! extraction, and the bridge to a real baseline codec.
//!
//! Only marker-level manipulation is owned here; entropy coding is delegated
//! to a conforming encoder/decoder pair (baseline sequential, 4:2:0).

use std::io::Cursor;

use crate::codec::{ComPayload, MAX_COM_PAYLOAD, TEXT_PREFIX};
use crate::image::{clamp01, RawImage};
use crate::num::Scalar;

/// JPEG marker codes used by the scanner.
pub mod markers {
    /// Start of image.
    pub const SOI: u8 = 0xD8;
    /// End of image.
    pub const EOI: u8 = 0xD9;
    /// Start of scan (entropy-coded data follows).
    pub const SOS: u8 = 0xDA;
    /// Comment.
    pub const COM: u8 = 0xFE;
    /// First application segment (APP0..APP15 = 0xE0..0xEF).
    pub const APP0: u8 = 0xE0;
    /// Temporary/standalone marker.
    pub const TEM: u8 = 0x01;
    /// First restart marker (RST0..RST7 = 0xD0..0xD7).
    pub const RST0: u8 = 0xD0;
    pub const RST7: u8 = 0xD7;
}

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("missing SOI marker at start of stream")]
    MissingSoi,
    #[error("malformed marker stream at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
    #[error("COM payload of {0} bytes exceeds the segment limit")]
    OversizePayload(usize),
    #[error("quality must be in [1, 100], got {0}")]
    QualityOutOfRange(u8),
    #[error("image of {width}x{height} exceeds the JPEG dimension limit")]
    TooLarge { width: usize, height: usize },
    #[error("jpeg encode error: {0}")]
    Encode(String),
    #[error("jpeg decode error: {0}")]
    Decode(String),
    #[error("decoded JPEG is not 8-bit RGB")]
    WrongPixelFormat,
    #[error("payload error: {0}")]
    Payload(#[from] crate::codec::CodecError),
}

/// One scanned marker segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerSegment {
    /// Marker code (second byte after 0xFF).
    pub marker: u8,
    /// Byte offset of the 0xFF marker prefix.
    pub offset: usize,
    /// Stored big-endian length field (includes its own two bytes);
    /// 0 for standalone markers.
    pub length: u16,
}

impl MarkerSegment {
    /// Payload bytes of this segment within the stream; empty for
    /// standalone markers.
    pub fn payload_range(&self) -> std::ops::Range<usize> {
        if self.length < 2 {
            return self.offset + 2..self.offset + 2;
        }
        self.offset + 4..self.offset + 2 + self.length as usize
    }

    pub fn is_app(&self) -> bool {
        (markers::APP0..=markers::APP0 + 15).contains(&self.marker)
    }

    fn standalone(marker: u8) -> bool {
        matches!(marker, markers::SOI | markers::EOI | markers::TEM)
            || (markers::RST0..=markers::RST7).contains(&marker)
    }
}

/// Scan marker segments from SOI up to (and including) SOS. Fill bytes
/// (extra 0xFF) are tolerated; the scan stops at SOS or EOI.
pub fn scan_markers(bytes: &[u8]) -> Result<Vec<MarkerSegment>, ContainerError> {
    if bytes.len() < 2 || bytes[0] != 0xFF || bytes[1] != markers::SOI {
        return Err(ContainerError::MissingSoi);
    }
    let mut segments = vec![MarkerSegment {
        marker: markers::SOI,
        offset: 0,
        length: 0,
    }];
    let mut pos = 2usize;
    loop {
        if pos >= bytes.len() {
            return Err(ContainerError::Malformed {
                offset: pos,
                reason: "stream ends before SOS or EOI",
            });
        }
        if bytes[pos] != 0xFF {
            return Err(ContainerError::Malformed {
                offset: pos,
                reason: "expected 0xFF marker prefix",
            });
        }
        let marker_at = pos;
        // Fill bytes: any number of 0xFF may precede the marker code.
        while pos < bytes.len() && bytes[pos] == 0xFF {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(ContainerError::Malformed {
                offset: pos,
                reason: "dangling 0xFF at end of stream",
            });
        }
        let marker = bytes[pos];
        pos += 1;
        if marker == markers::EOI {
            return Ok(segments);
        }
        if MarkerSegment::standalone(marker) {
            segments.push(MarkerSegment {
                marker,
                offset: marker_at,
                length: 0,
            });
            continue;
        }
        if pos + 2 > bytes.len() {
            return Err(ContainerError::Malformed {
                offset: pos,
                reason: "truncated length field",
            });
        }
        let length = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]);
        if length < 2 {
            return Err(ContainerError::Malformed {
                offset: pos,
                reason: "length field below 2",
            });
        }
        if pos + length as usize > bytes.len() {
            return Err(ContainerError::Malformed {
                offset: pos,
                reason: "segment extends past end of stream",
            });
        }
        segments.push(MarkerSegment {
            marker,
            offset: marker_at,
            length,
        });
        pos += length as usize;
        if marker == markers::SOS {
            // Entropy-coded data follows; marker-level scanning ends here.
            return Ok(segments);
        }
    }
}

/// Insert the payload as a COM segment immediately after the last APPn
/// segment (after SOI when there is none). All other bytes are unchanged, so
/// decoded pixels are identical before and after insertion.
pub fn insert_com(jpeg: &[u8], payload: &ComPayload) -> Result<Vec<u8>, ContainerError> {
    let text = payload.text().as_bytes();
    if text.len() > MAX_COM_PAYLOAD {
        return Err(ContainerError::OversizePayload(text.len()));
    }
    let segments = scan_markers(jpeg)?;
    let insert_at = segments
        .iter()
        .filter(|s| s.is_app())
        .last()
        .map(|s| s.offset + 2 + s.length as usize)
        .unwrap_or(2);
    let mut out = Vec::with_capacity(jpeg.len() + 4 + text.len());
    out.extend_from_slice(&jpeg[..insert_at]);
    out.push(0xFF);
    out.push(markers::COM);
    out.extend_from_slice(&((text.len() as u16 + 2).to_be_bytes()));
    out.extend_from_slice(text);
    out.extend_from_slice(&jpeg[insert_at..]);
    Ok(out)
}

/// Extract the first COM segment whose payload starts with the `RJA:`
/// prefix; `None` when the file carries no adapter payload.
pub fn extract_com(jpeg: &[u8]) -> Result<Option<ComPayload>, ContainerError> {
    for seg in scan_markers(jpeg)? {
        if seg.marker != markers::COM {
            continue;
        }
        let body = &jpeg[seg.payload_range()];
        if body.starts_with(TEXT_PREFIX.as_bytes()) {
            let text = String::from_utf8(body.to_vec()).map_err(|_| ContainerError::Malformed {
                offset: seg.offset,
                reason: "adapter COM payload is not valid UTF-8",
            })?;
            return Ok(Some(ComPayload::from_text(text)?));
        }
    }
    Ok(None)
}

/// Count COM segments carrying the adapter prefix (duplicates are legal but
/// suspicious; the first one wins on decode).
pub fn count_adapter_payloads(jpeg: &[u8]) -> Result<usize, ContainerError> {
    Ok(scan_markers(jpeg)?
        .iter()
        .filter(|s| {
            s.marker == markers::COM && jpeg[s.payload_range()].starts_with(TEXT_PREFIX.as_bytes())
        })
        .count())
}

/// Encode to baseline sequential JPEG (4:2:0) at the given quality. Samples
/// are converted to 8 bits by round-half-away of `255 x`.
pub fn encode_jpeg<T: Scalar>(img: &RawImage<T>, quality: u8) -> Result<Vec<u8>, ContainerError> {
    if !(1..=100).contains(&quality) {
        return Err(ContainerError::QualityOutOfRange(quality));
    }
    if img.width() > u16::MAX as usize || img.height() > u16::MAX as usize {
        return Err(ContainerError::TooLarge {
            width: img.width(),
            height: img.height(),
        });
    }
    let full = T::c(255.0);
    let rgb: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (clamp01(v) * full).round().to_u8().unwrap_or(255))
        .collect();
    let mut out = Vec::new();
    let mut encoder = jpeg_encoder::Encoder::new(&mut out, quality);
    encoder.set_sampling_factor(jpeg_encoder::SamplingFactor::F_2_2);
    encoder
        .encode(
            &rgb,
            img.width() as u16,
            img.height() as u16,
            jpeg_encoder::ColorType::Rgb,
        )
        .map_err(|e| ContainerError::Encode(e.to_string()))?;
    Ok(out)
}

/// Decode a baseline JPEG to samples in `[0, 1]` (`v / 255`).
pub fn decode_jpeg<T: Scalar>(bytes: &[u8]) -> Result<RawImage<T>, ContainerError> {
    let mut decoder = jpeg_decoder::Decoder::new(Cursor::new(bytes));
    let pixels = decoder
        .decode()
        .map_err(|e| ContainerError::Decode(e.to_string()))?;
    let info = decoder.info().ok_or(ContainerError::WrongPixelFormat)?;
    if info.pixel_format != jpeg_decoder::PixelFormat::RGB24 {
        return Err(ContainerError::WrongPixelFormat);
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let scale = T::one() / T::c(255.0);
    let data = pixels
        .iter()
        .map(|&v| T::from_u8(v).unwrap() * scale)
        .collect();
    Ok(RawImage::new(w, h, data))
}
