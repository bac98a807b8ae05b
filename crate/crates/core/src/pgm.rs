//! Netpbm grayscale (PGM) reading and writing.
//!
//! Binary `P5` and plain `P2` files with `maxval <= 255` are read; files
//! whose maxval is not 255 are rescaled to the `[0, 255]` range. Output is
//! always binary `P5` with maxval 255. Values are clamped to `[0, 255]` and
//! rounded half away from zero on write, so 8-bit data round-trips exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = fs::read(path.as_ref())?;
    decode_pgm(&bytes)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path.as_ref())?);
    file.write_all(&encode_pgm(img))?;
    file.flush()?;
    Ok(())
}

/// Quantizes one intensity to 8 bits.
#[inline]
pub fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| quantize(v)));
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
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
            return Err(Error::Format(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad {what}")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let binary = match bytes.get(..2) {
        Some(b"P5") => true,
        Some(b"P2") => false,
        _ => return Err(Error::Format("not a P5/P2 PGM file".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Format("image too large".into()))?;
    let scale = 255.0 / maxval as f64;
    let raw: Vec<usize> = if binary {
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(h.pos) {
            Some(b) if b.is_ascii_whitespace() => h.pos += 1,
            _ => return Err(Error::Format("missing raster separator".into())),
        }
        let data = bytes
            .get(h.pos..h.pos + n)
            .ok_or_else(|| Error::Format(format!("truncated raster, expected {n} bytes")))?;
        data.iter().map(|&b| b as usize).collect()
    } else {
        (0..n).map(|_| h.number("sample")).collect::<Result<_>>()?
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(Error::Format(format!("sample {v} exceeds maxval {maxval}")));
    }
    let pixels = raw
        .into_iter()
        .map(|v| {
            if maxval == 255 {
                v as f64
            } else {
                v as f64 * scale
            }
        })
        .collect();
    GrayImage::new(width, height, pixels)
}
