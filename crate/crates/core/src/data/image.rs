//! 8-bit RGB images and binary PPM (P6) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_ppm_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0usize;
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
                return Err("truncated header".into());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII header")?);
        }
        if fields[0] != "P6" {
            return Err(format!("magic `{}` is not P6", fields[0]));
        }
        let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} `{s}`"));
        let width = parse(fields[1], "width")?;
        let height = parse(fields[2], "height")?;
        let maxval = parse(fields[3], "maxval")?;
        if maxval != 255 {
            return Err(format!("maxval {maxval} is not 255"));
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let len = width * height * 3;
        if bytes.len() < pos + len {
            return Err(format!(
                "raster has {} bytes, expected {len}",
                bytes.len().saturating_sub(pos)
            ));
        }
        Ok(Image {
            width,
            height,
            data: bytes[pos..pos + len].to_vec(),
        })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image::from_ppm_bytes(&bytes).map_err(|reason| Error::Format {
            kind: "PPM",
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Draws a one-pixel rectangle outline given normalized center-format coordinates.
    pub fn draw_box(&mut self, cx: f32, cy: f32, w: f32, h: f32, rgb: [u8; 3]) {
        if self.width == 0 || self.height == 0 {
            return;
        }
        let (wf, hf) = (self.width as f32, self.height as f32);
        let clampx = |v: f32| (v * wf).floor().clamp(0.0, wf - 1.0) as usize;
        let clampy = |v: f32| (v * hf).floor().clamp(0.0, hf - 1.0) as usize;
        let (x1, x2) = (clampx(cx - w / 2.0), clampx(cx + w / 2.0));
        let (y1, y2) = (clampy(cy - h / 2.0), clampy(cy + h / 2.0));
        for x in x1..=x2 {
            self.set_pixel(x, y1, rgb);
            self.set_pixel(x, y2, rgb);
        }
        for y in y1..=y2 {
            self.set_pixel(x1, y, rgb);
            self.set_pixel(x2, y, rgb);
        }
    }
}
