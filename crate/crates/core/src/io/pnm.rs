//! Netpbm-family image formats: P6 (binary RGB) frames and Pf (portable
//! float map) depth, the two formats the tracker consumes and the synthetic
//! generator emits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// RGB image with channels in `[0, 1]`, row 0 at the top. Pixel `(x, y)` has
/// its center at continuous coordinates `(x + 0.5, y + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pixels: Vec<Vector3<f64>>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, color: Vector3<f64>) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; (width * height) as usize],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> Vector3<f64> {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, c: Vector3<f64>) {
        self.pixels[(y * self.width + x) as usize] = c;
    }

    pub fn is_finite(&self) -> bool {
        self.pixels.iter().all(|p| p.x.is_finite() && p.y.is_finite() && p.z.is_finite())
    }

    /// Bilinear sample at continuous coordinates, clamped at the border.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Vector3<f64> {
        self.sample_bilinear_with_grad(u, v).0
    }

    /// Bilinear sample plus the image gradient `(∂I/∂u, ∂I/∂v)` of the
    /// interpolant. At clamped borders the gradient in the clamped direction
    /// is zero, matching the piecewise definition being sampled.
    pub fn sample_bilinear_with_grad(&self, u: f64, v: f64) -> (Vector3<f64>, [Vector3<f64>; 2]) {
        let w = self.width as usize;
        let h = self.height as usize;
        // Shift so that integer lattice coordinates sit on pixel centers.
        let x = u - 0.5;
        let y = v - 0.5;
        let max_x = (w - 1) as f64;
        let max_y = (h - 1) as f64;
        let clamped_x = x.clamp(0.0, max_x);
        let clamped_y = y.clamp(0.0, max_y);
        let x0 = (clamped_x.floor() as usize).min(w.saturating_sub(2));
        let y0 = (clamped_y.floor() as usize).min(h.saturating_sub(2));
        let fx = (clamped_x - x0 as f64).clamp(0.0, 1.0);
        let fy = (clamped_y - y0 as f64).clamp(0.0, 1.0);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let p00 = self.pixel(x0 as u32, y0 as u32);
        let p10 = self.pixel(x1 as u32, y0 as u32);
        let p01 = self.pixel(x0 as u32, y1 as u32);
        let p11 = self.pixel(x1 as u32, y1 as u32);
        let value = p00 * (1.0 - fx) * (1.0 - fy)
            + p10 * fx * (1.0 - fy)
            + p01 * (1.0 - fx) * fy
            + p11 * fx * fy;
        let inside_x = x > 0.0 && x < max_x;
        let inside_y = y > 0.0 && y < max_y;
        let du = if inside_x {
            (p10 - p00) * (1.0 - fy) + (p11 - p01) * fy
        } else {
            Vector3::zeros()
        };
        let dv = if inside_y {
            (p01 - p00) * (1.0 - fx) + (p11 - p10) * fx
        } else {
            Vector3::zeros()
        };
        (value, [du, dv])
    }

    /// Writes binary P6 with maxval 255; channels are clamped and quantized.
    pub fn save_p6(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            for c in [p.x, p.y, p.z] {
                bytes.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_p6(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header = [0u8; 2];
        r.read_exact(&mut header)?;
        if &header != b"P6" {
            return Err(Error::format("P6", "bad magic"));
        }
        let width = read_header_number(&mut r)? as u32;
        let height = read_header_number(&mut r)? as u32;
        let maxval = read_header_number(&mut r)?;
        if maxval != 255 {
            return Err(Error::format("P6", format!("unsupported maxval {maxval}")));
        }
        let mut bytes = vec![0u8; (width * height * 3) as usize];
        r.read_exact(&mut bytes)?;
        let pixels = bytes
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0))
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

/// Reads a whitespace-delimited ASCII integer, skipping `#` comments, and
/// consumes exactly one trailing whitespace byte.
fn read_header_number(r: &mut impl Read) -> Result<u64> {
    let mut value: Option<u64> = None;
    let mut in_comment = false;
    loop {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        let c = b[0];
        if in_comment {
            if c == b'\n' {
                in_comment = false;
            }
            continue;
        }
        match c {
            b'#' => in_comment = true,
            b'0'..=b'9' => value = Some(value.unwrap_or(0) * 10 + (c - b'0') as u64),
            c if c.is_ascii_whitespace() => {
                if let Some(v) = value {
                    return Ok(v);
                }
            }
            _ => return Err(Error::format("P6", "unexpected byte in header")),
        }
    }
}

/// Single-channel float map in meters. `0.0` marks a pixel with no depth.
/// Row 0 is the top row in memory; the Pf container stores rows bottom-up
/// with a negative (little-endian) scale, per the portable-float-map layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub const NO_DEPTH: f64 = 0.0;

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    pub fn depth(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize] as f64
    }

    pub fn set_depth(&mut self, x: u32, y: u32, d: f64) {
        self.data[(y * self.width + x) as usize] = d as f32;
    }

    pub fn has_depth(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] > 0.0
    }

    pub fn save_pf(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "Pf\n{} {}\n-1.0\n", self.width, self.height)?;
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                w.write_all(&self.data[(row * self.width + col) as usize].to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_pf(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim() != "Pf" {
            return Err(Error::format("Pf", "bad magic (expected grayscale Pf)"));
        }
        line.clear();
        r.read_line(&mut line)?;
        let mut parts = line.split_whitespace();
        let width: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("Pf", "bad width"))?;
        let height: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("Pf", "bad height"))?;
        line.clear();
        r.read_line(&mut line)?;
        let scale: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::format("Pf", "bad scale"))?;
        if scale >= 0.0 {
            return Err(Error::format("Pf", "big-endian Pf not supported"));
        }
        let mut bytes = vec![0u8; (width * height * 4) as usize];
        r.read_exact(&mut bytes)?;
        let mut data = vec![0f32; (width * height) as usize];
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let col = i as u32 % width;
            let row_from_bottom = i as u32 / width;
            let row = height - 1 - row_from_bottom;
            data[(row * width + col) as usize] =
                f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }
}
