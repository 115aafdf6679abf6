//! Equirectangular RGB rasters.

use crate::error::{Error, Result};

/// A `width` x `height` RGB image with channels in `[0, 1]`, stored row-major.
///
/// Row 0 is the +90 degree latitude (north pole) row.
#[derive(Debug, Clone, PartialEq)]
pub struct ErpImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl ErpImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::domain(format!(
                "pixel buffer has {} entries, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a gray image from a scalar field.
    pub fn from_gray(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        Self::from_pixels(width, height, values.iter().map(|&v| [v; 3]).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.data
    }

    pub fn get(&self, col: usize, row: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, rgb: [f64; 3]) {
        self.data[row * self.width + col] = rgb;
    }

    pub fn same_dims(&self, other: &ErpImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::domain(format!(
                "image dimensions differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B` per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Quantizes to 8-bit RGB, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|p| p.map(quantize))
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::domain("8-bit buffer does not match dimensions"));
        }
        let data = bytes
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]].map(|v| v as f64 / 255.0))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
