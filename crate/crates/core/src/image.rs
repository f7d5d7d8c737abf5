//! 8-bit grayscale images and binary PGM (P5) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// `(1, 1, h, w)` tensor with values `v / 255`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f32 / 255.0).collect();
        Tensor::from_plane(self.height, self.width, data).expect("dims match pixel count")
    }

    /// Clamps to `[0, 1]`, scales by 255 and rounds half away from zero.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::shape(
                "GrayImage::from_tensor",
                format!("expected (1, 1, h, w), got {s}"),
            ));
        }
        let pixels = t.data().iter().map(|&v| quantize(v)).collect();
        GrayImage::new(s.w, s.h, pixels)
    }

    /// Pixel values on the 0–255 scale as `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64).collect()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {width}x{height}+{left}+{top} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for y in top..top + height {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + left..row + left + width]);
        }
        GrayImage::new(width, height, pixels)
    }
}

/// Float in `[0, 1]` to an 8-bit level; NaN maps to 0.
pub fn quantize(v: f32) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Largest centered window whose sides are multiples of `multiple`:
/// `(top, left, height, width)`.
pub fn central_crop_window(height: usize, width: usize, multiple: usize) -> Option<(usize, usize, usize, usize)> {
    let ch = height / multiple * multiple;
    let cw = width / multiple * multiple;
    if ch == 0 || cw == 0 {
        return None;
    }
    Some(((height - ch) / 2, (width - cw) / 2, ch, cw))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn malformed(&self, msg: impl Into<String>) -> Error {
        Error::Malformed {
            what: "PGM image",
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.malformed(format!("expected {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse().map_err(|_| Error::Malformed {
            what: "PGM image",
            offset: start,
            msg: format!("{what} out of range"),
        })
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || bytes[0] != b'P' || !bytes[1].is_ascii_digit() {
        let found = if bytes.starts_with(b"\x89PNG") {
            "PNG".to_string()
        } else if bytes.starts_with(&[0xFF, 0xD8]) {
            "JPEG".to_string()
        } else {
            format!("magic {:?}", String::from_utf8_lossy(&bytes[..bytes.len().min(2)]))
        };
        return Err(Error::UnsupportedFormat { found });
    }
    if bytes[1] != b'5' {
        return Err(Error::UnsupportedFormat {
            found: format!("netpbm P{}", bytes[1] as char),
        });
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    if !r.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(r.malformed("expected whitespace after magic"));
    }
    let width = r.number("width")?;
    let height = r.number("height")?;
    let maxval_at = r.pos;
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat {
            found: format!("P5 with maxval {maxval} (at byte {maxval_at})"),
        });
    }
    if width == 0 || height == 0 {
        return Err(r.malformed("zero image dimension"));
    }
    if !r.bytes.get(r.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(r.malformed("expected single whitespace before raster"));
    }
    r.pos += 1;
    let need = width
        .checked_mul(height)
        .ok_or_else(|| r.malformed("image dimensions overflow"))?;
    let raster = &bytes[r.pos..];
    if raster.len() < need {
        return Err(Error::Malformed {
            what: "PGM image",
            offset: bytes.len(),
            msg: format!("raster truncated: need {need} bytes, found {}", raster.len()),
        });
    }
    GrayImage::new(width, height, raster[..need].to_vec())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(1.5), 255);
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(f32::NAN), 0);
        for v in 0..=255u8 {
            assert_eq!(quantize(v as f32 / 255.0), v);
        }
    }

    #[test]
    fn decode_with_comments() {
        let mut bytes = b"P5\n# made by hand\n3 2\n# max\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 1, 2, 253, 254, 255]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        assert_eq!(img.pixels, vec![0, 1, 2, 253, 254, 255]);
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }

    #[test]
    fn truncated_raster_reports_offset() {
        let bytes = b"P5 4 4 255\n\x00\x01".to_vec();
        match decode_pgm(&bytes).unwrap_err() {
            Error::Malformed { offset, msg, .. } => {
                assert_eq!(offset, bytes.len());
                assert!(msg.contains("truncated"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_header_reports_offset() {
        match decode_pgm(b"P5\nabc 4\n255\n").unwrap_err() {
            Error::Malformed { offset, .. } => assert_eq!(offset, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn other_formats_are_unsupported() {
        for bytes in [
            &b"P6\n1 1\n255\n\0\0\0"[..],
            b"\x89PNG\r\n",
            b"P2\n1 1\n255\n0",
            b"P5 1 1 65535\n\0\0",
        ] {
            let err = decode_pgm(bytes).unwrap_err();
            assert!(matches!(err, Error::UnsupportedFormat { .. }), "{err}");
            assert!(err.to_string().contains("P5"));
        }
    }

    #[test]
    fn crop_window_is_centered() {
        assert_eq!(central_crop_window(70, 64, 32), Some((3, 0, 64, 64)));
        assert_eq!(central_crop_window(100, 97, 32), Some((2, 0, 96, 96)));
        assert_eq!(central_crop_window(20, 64, 32), None);
        let img = GrayImage::new(4, 3, (0..12).collect()).unwrap();
        assert_eq!(img.crop(1, 1, 2, 2).unwrap().pixels, vec![5, 6, 9, 10]);
        assert!(img.crop(2, 0, 2, 4).is_err());
    }
}
