use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::atomic_write;

/// Row-major single-channel image. Shaded images hold values in `[0, 1]`,
/// depth images hold millimetres with 0 as background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Binary PGM with 16-bit big-endian samples. Values are divided by
    /// `full_scale` and clamped to `[0, 1]` before quantization.
    pub fn to_pgm(&self, full_scale: f64) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 2);
        for p in &self.pixels {
            let q = ((p / full_scale).clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        out
    }

    /// Parses 8- or 16-bit binary PGM; samples map to `[0, full_scale]`.
    pub fn from_pgm(bytes: &[u8], full_scale: f64) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("PGM: {m}"));
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("only binary P5 is supported"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("invalid header number"));
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(bad("maxval out of range"));
        }
        pos += 1; // single whitespace after maxval
        let wide = maxval > 255;
        let need = width * height * if wide { 2 } else { 1 };
        let data = bytes.get(pos..pos + need).ok_or_else(|| bad("truncated pixel data"))?;
        let pixels = if wide {
            data.chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64 * full_scale)
                .collect()
        } else {
            data.iter().map(|&b| b as f64 / maxval as f64 * full_scale).collect()
        };
        Ok(Self { width, height, pixels })
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>, full_scale: f64) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_pgm(full_scale))
    }

    pub fn load_pgm(path: impl AsRef<Path>, full_scale: f64) -> Result<Self> {
        Self::from_pgm(&std::fs::read(path)?, full_scale)
    }

    /// Same image quantized to 16 bits, exactly what a PGM round trip yields.
    pub fn quantized(&self, full_scale: f64) -> Self {
        Self::from_pgm(&self.to_pgm(full_scale), full_scale).expect("own encoding parses")
    }
}
