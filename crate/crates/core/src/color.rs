//! RGB, HSV (hexcone, hue scaled to [0, 1]) and YUV conversions.

use thiserror::Error;

use crate::raster::{Raster, RasterError};

#[derive(Debug, Error)]
pub enum ColorError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("HSV component {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
}

pub fn rgb_to_hsv_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let s = if max > 0.0 { chroma / max } else { 0.0 };
    let h = if chroma <= 0.0 {
        0.0
    } else if max == r {
        let sector = (g - b) / chroma;
        if sector < 0.0 {
            sector + 6.0
        } else {
            sector
        }
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    let h = h / 6.0;
    [if h >= 1.0 { h - 1.0 } else { h }, s, max]
}

pub fn hsv_to_rgb_pixel([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = (h - h.floor()) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// BT.601 analog YUV (the TensorFlow `rgb_to_yuv` kernel); U and V are signed.
pub fn rgb_to_yuv_pixel([r, g, b]: [f64; 3]) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        -0.14714119 * r - 0.28886916 * g + 0.43601035 * b,
        0.61497538 * r - 0.51496512 * g - 0.10001026 * b,
    ]
}

fn map_pixels(image: &Raster, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Raster, RasterError> {
    image.expect_channels(3)?;
    let data = image
        .pixels()
        .flat_map(|p| f([p[0] as f64, p[1] as f64, p[2] as f64]).map(|v| v as f32))
        .collect();
    Raster::new(image.width(), image.height(), 3, data)
}

/// A 3-channel raster of (hue, saturation, value), every entry finite and in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage(Raster);

impl HsvImage {
    pub fn new(raster: Raster) -> Result<Self, ColorError> {
        raster.expect_channels(3)?;
        if let Some((index, &value)) = raster
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(ColorError::OutOfRange { index, value });
        }
        Ok(HsvImage(raster))
    }

    /// Builds from a flat HWC buffer, clamping into [0, 1]. Non-finite input
    /// is an error.
    pub fn from_clamped(side: usize, data: Vec<f32>) -> Result<Self, ColorError> {
        let data = data.into_iter().map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { v }).collect();
        HsvImage::new(Raster::new(side, side, 3, data)?)
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn side(&self) -> usize {
        self.0.width()
    }

    pub fn flip_horizontal(&self) -> HsvImage {
        HsvImage(self.0.flip_horizontal())
    }

    pub fn to_rgb(&self) -> Raster {
        hsv_to_rgb(self)
    }
}

pub fn rgb_to_hsv(image: &Raster) -> Result<HsvImage, ColorError> {
    let hsv = map_pixels(image, rgb_to_hsv_pixel)?;
    // Inputs are nominally in [0, 1]; clamp guards against resampling overshoot.
    let data = hsv.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    HsvImage::new(Raster::new(image.width(), image.height(), 3, data)?)
}

pub fn hsv_to_rgb(image: &HsvImage) -> Raster {
    map_pixels(image.raster(), hsv_to_rgb_pixel).expect("HsvImage always has 3 channels")
}

pub fn rgb_to_yuv(image: &Raster) -> Result<Raster, RasterError> {
    map_pixels(image, rgb_to_yuv_pixel)
}
