//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.

use std::fs;
use std::path::Path;

use etscl_core::frangi::GrayImage;

use crate::error::{CliError, Result};

/// Samples of a decoded image, scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Pnm {
    Gray { width: usize, height: usize, data: Vec<f64> },
    /// Interleaved RGB.
    Color { width: usize, height: usize, data: Vec<f64> },
}

impl Pnm {
    /// Grayscale view; color images contribute their green channel.
    pub fn to_gray(&self) -> etscl_core::Result<GrayImage> {
        match self {
            Pnm::Gray { width, height, data } => GrayImage::new(*width, *height, data.clone()),
            Pnm::Color { width, height, data } => {
                GrayImage::new(*width, *height, data.chunks_exact(3).map(|px| px[1]).collect())
            }
        }
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while self.bytes.get(self.pos).is_some_and(|c| *c != b'\n') {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).ok()?.parse().ok()
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Pnm, String> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err("not a binary PGM (P5) or PPM (P6) file".into()),
    };
    let mut h = Header { bytes, pos: 2 };
    let (width, height, maxval) = match (h.number(), h.number(), h.number()) {
        (Some(w), Some(hh), Some(m)) => (w, hh, m),
        _ => return Err("malformed header".into()),
    };
    if width == 0 || height == 0 {
        return Err("image has zero size".into());
    }
    if !(1..=255).contains(&maxval) {
        return Err(format!("maxval {maxval} unsupported; only 8-bit samples are read"));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header".into());
    }
    let body = &bytes[h.pos + 1..];
    let n = width * height * channels;
    if body.len() < n {
        return Err(format!("expected {n} samples, found {}", body.len()));
    }
    let scale = maxval as f64;
    let mut data = Vec::with_capacity(n);
    for &v in &body[..n] {
        if v as usize > maxval {
            return Err(format!("sample {v} exceeds maxval {maxval}"));
        }
        data.push(v as f64 / scale);
    }
    Ok(if channels == 1 { Pnm::Gray { width, height, data } } else { Pnm::Color { width, height, data } })
}

pub fn read(path: &Path) -> Result<Pnm> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|m| CliError::format(path, 1, m))
}

/// `round(v·255)` with halves rounded up, after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_pgm(width: usize, height: usize, data: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(data.iter().map(|v| quantize(*v)));
    out
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[f64]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|v| quantize(*v)));
    out
}

pub fn write_gray(path: &Path, image: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(image.width(), image.height(), image.data())).map_err(|e| CliError::io(path, e))
}
