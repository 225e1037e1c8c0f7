use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::camera::Intrinsics;
use crate::{Error, Result};

/// Stored value of one normalized-depth unit in the 16-bit depth files.
pub const DEPTH_QUANTUM: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthUnits {
    MetricM,
    Normalized,
}

/// Row-major depth map. Invalid pixels hold the sentinel 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
    pub units: DepthUnits,
    pub intrinsics: Intrinsics,
}

impl DepthImage {
    pub fn empty(intrinsics: Intrinsics, units: DepthUnits) -> Self {
        let n = intrinsics.width * intrinsics.height;
        Self {
            data: vec![0.0; n],
            valid: vec![false; n],
            units,
            intrinsics,
        }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width() + u;
        self.valid[i].then_some(self.data[i])
    }

    pub fn set(&mut self, u: usize, v: usize, depth: f64) {
        let i = v * self.width() + u;
        self.data[i] = depth;
        self.valid[i] = depth > 0.0;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    fn rescaled(&self, factor: f64, units: DepthUnits) -> Self {
        let data = self
            .data
            .iter()
            .zip(&self.valid)
            .map(|(&d, &ok)| if ok { d * factor } else { 0.0 })
            .collect();
        Self {
            data,
            valid: self.valid.clone(),
            units,
            intrinsics: self.intrinsics,
        }
    }

    fn remapped(&self, f: impl Fn(usize, usize) -> usize) -> Self {
        let (w, h) = (self.width(), self.height());
        let mut out = Self::empty(self.intrinsics, self.units);
        for v in 0..h {
            for u in 0..w {
                let src = f(u, v);
                out.data[v * w + u] = self.data[src];
                out.valid[v * w + u] = self.valid[src];
            }
        }
        out
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.width();
        self.remapped(|u, v| v * w + (w - 1 - u))
    }

    /// Mirror top-bottom.
    pub fn flip_vertical(&self) -> Self {
        let (w, h) = (self.width(), self.height());
        self.remapped(|u, v| (h - 1 - v) * w + u)
    }

    /// Writes a 16-bit grayscale PNG storing `round(depth · 10000)`, 0 for
    /// invalid pixels.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let quantized = self.quantize()?;
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width() as u32, self.height() as u32, quantized)
                .expect("buffer size matches intrinsics");
        img.save(path).map_err(|e| Error::image(path, e))
    }

    pub fn quantize(&self) -> Result<Vec<u16>> {
        self.data
            .iter()
            .zip(&self.valid)
            .map(|(&d, &ok)| {
                if !ok {
                    return Ok(0);
                }
                let q = (d * DEPTH_QUANTUM).round();
                if !(1.0..=u16::MAX as f64).contains(&q) {
                    return Err(Error::Domain(format!("depth {d} outside the 16-bit storage range")));
                }
                Ok(q as u16)
            })
            .collect()
    }

    pub fn from_quantized(values: &[u16], intrinsics: Intrinsics, units: DepthUnits) -> Result<Self> {
        if values.len() != intrinsics.width * intrinsics.height {
            return Err(Error::Shape(format!(
                "depth buffer has {} values, intrinsics expect {}x{}",
                values.len(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        Ok(Self {
            data: values.iter().map(|&q| q as f64 / DEPTH_QUANTUM).collect(),
            valid: values.iter().map(|&q| q > 0).collect(),
            units,
            intrinsics,
        })
    }

    pub fn read_png(path: &Path, intrinsics: Intrinsics, units: DepthUnits) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?.into_luma16();
        if img.width() as usize != intrinsics.width || img.height() as usize != intrinsics.height {
            return Err(Error::Shape(format!(
                "{} is {}x{}, intrinsics expect {}x{}",
                path.display(),
                img.width(),
                img.height(),
                intrinsics.width,
                intrinsics.height
            )));
        }
        Self::from_quantized(img.as_raw(), intrinsics, units)
    }
}

/// Width, height and depth values of a stored depth PNG without camera
/// metadata; invalid pixels read as 0.
pub fn read_depth_values(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.as_raw().iter().map(|&q| q as f64 / DEPTH_QUANTUM).collect()))
}

fn check_diagonal(diagonal: f64) -> Result<()> {
    if diagonal > 0.0 && diagonal.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("diagonal must be positive, got {diagonal}")))
    }
}

/// Divides valid depths by the object's bounding-box diagonal.
pub fn normalize_depth(depth: &DepthImage, diagonal: f64) -> Result<DepthImage> {
    check_diagonal(diagonal)?;
    if depth.units != DepthUnits::MetricM {
        return Err(Error::Domain("normalize_depth expects metric depth".into()));
    }
    Ok(depth.rescaled(1.0 / diagonal, DepthUnits::Normalized))
}

/// Multiplies valid normalized depths by the bounding-box diagonal.
pub fn denormalize_depth(depth: &DepthImage, diagonal: f64) -> Result<DepthImage> {
    check_diagonal(diagonal)?;
    if depth.units != DepthUnits::Normalized {
        return Err(Error::Domain("denormalize_depth expects normalized depth".into()));
    }
    Ok(depth.rescaled(diagonal, DepthUnits::MetricM))
}
