//! Dense image tensors and the raw image exchange format.
//!
//! Pixels are stored row-major in height, width, channel order with values in `[0, 1]`.
//! On disk an image is a 12-byte header (height, width, channels as little-endian `u32`)
//! followed by one byte per channel value.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Result};
use crate::wire;

const MAX_SIDE: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return invalid(format!("image dimensions must be positive, got {height}x{width}x{channels}"));
        }
        if values.len() != height * width * channels {
            return invalid(format!(
                "expected {} values for a {height}x{width}x{channels} image, got {}",
                height * width * channels,
                values.len()
            ));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return invalid(format!("pixel value {v} outside [0, 1]"));
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    /// Builds an image from arbitrary reals, clamping each into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(height, width, channels, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    pub fn mse(&self, other: &ImageTensor) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        let sum: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum();
        sum / self.values.len() as f64
    }

    /// Quantizes each value to a byte (`round(v * 255)`).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, channels, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    pub fn write_raw<W: Write>(&self, w: &mut W) -> Result<()> {
        for d in [self.height, self.width, self.channels] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_raw<R: Read>(r: &mut R) -> Result<Self> {
        let h = wire::read_dim(r, "height", MAX_SIDE)?;
        let w = wire::read_dim(r, "width", MAX_SIDE)?;
        let c = wire::read_dim(r, "channels", 4096)?;
        let mut bytes = vec![0u8; h * w * c];
        wire::read_exact(r, &mut bytes)?;
        wire::expect_eof(r)?;
        Self::from_bytes(h, w, c, &bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + self.len());
        self.write_raw(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_raw(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ImageTensor::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImageTensor::new(0, 1, 1, vec![]).is_err());
        assert!(ImageTensor::new(2, 1, 1, vec![0.0]).is_err());
    }

    #[test]
    fn raw_format_layout() {
        let img = ImageTensor::from_bytes(1, 2, 1, &[0, 255]).unwrap();
        let mut buf = Vec::new();
        img.write_raw(&mut buf).unwrap();
        assert_eq!(buf, [1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 0, 255]);
        assert_eq!(ImageTensor::read_raw(&mut buf.as_slice()).unwrap(), img);
        assert!(ImageTensor::read_raw(&mut &buf[..13]).is_err());
    }
}
