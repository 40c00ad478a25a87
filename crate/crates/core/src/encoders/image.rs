use serde::{Deserialize, Serialize};

use crate::error::{FclError, Result};

pub const CLIP_MEAN: [f64; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f64; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

/// An RGB image stored height-major, then width, then channel (HWC).
///
/// Raw images hold values in `[0, 1]`; `standardized` produces a copy with
/// per-channel mean/std normalization and sets the `normalized` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    normalized: bool,
    data: Vec<f64>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FclError::Degenerate("image with zero extent".into()));
        }
        if data.len() != height * width * 3 {
            return Err(FclError::shape("image data", height * width * 3, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FclError::NonFinite("image pixels"));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(FclError::Degenerate("raw pixel outside [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            normalized: false,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Multiplies every pixel by a per-pixel weight (broadcast over channels).
    pub fn weighted(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.num_pixels() {
            return Err(FclError::shape("pixel weights", self.num_pixels(), weights.len()));
        }
        let mut out = self.clone();
        for (px, &w) in out.data.chunks_mut(3).zip(weights) {
            for v in px {
                *v *= w;
            }
        }
        Ok(out)
    }

    /// Sets pixels where `mask` is true to black.
    pub fn occluded(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.num_pixels() {
            return Err(FclError::shape("occlusion mask", self.num_pixels(), mask.len()));
        }
        let mut out = self.clone();
        for (px, &m) in out.data.chunks_mut(3).zip(mask) {
            if m {
                px.fill(0.0);
            }
        }
        Ok(out)
    }

    pub fn standardized(&self, mean: [f64; 3], std: [f64; 3]) -> Self {
        let mut out = self.clone();
        for px in out.data.chunks_mut(3) {
            for c in 0..3 {
                px[c] = (px[c] - mean[c]) / std[c];
            }
        }
        out.normalized = true;
        out
    }

    /// Channel-major (CHW) copy, the layout ONNX vision graphs expect.
    pub fn to_chw(&self) -> Vec<f64> {
        let n = self.num_pixels();
        let mut out = vec![0.0; n * 3];
        for (i, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(ImageTensor::new(0, 2, vec![]).is_err());
        assert!(ImageTensor::new(1, 1, vec![0.0; 2]).is_err());
        assert!(ImageTensor::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(ImageTensor::new(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
        let img = ImageTensor::filled(2, 3, [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(img.pixel(1, 2), [0.1, 0.2, 0.3]);
    }

    #[test]
    fn occlusion_and_weighting() {
        let img = ImageTensor::filled(1, 2, [0.5, 0.5, 0.5]).unwrap();
        let occ = img.occluded(&[true, false]).unwrap();
        assert_eq!(occ.pixel(0, 0), [0.0; 3]);
        assert_eq!(occ.pixel(0, 1), [0.5; 3]);
        let w = img.weighted(&[0.5, 1.0]).unwrap();
        assert_eq!(w.pixel(0, 0), [0.25; 3]);
    }

    #[test]
    fn chw_layout() {
        let img = ImageTensor::new(1, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(img.to_chw(), vec![0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
        let s = img.standardized([0.0; 3], [0.5; 3]);
        assert!(s.is_normalized());
        assert!((s.data()[0] - 0.2).abs() < 1e-15);
    }
}
