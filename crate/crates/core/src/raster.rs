//! Floating-point rasters and PNG I/O.

use std::path::Path;

use image::{ImageBuffer, Rgb, Rgba};
use thiserror::Error;

/// Side length of every model-facing image.
pub const SIDE: usize = 32;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image has zero width or height")]
    Empty,
    #[error("expected {expected} channels, got {actual}")]
    Channels { expected: usize, actual: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize, usize), (usize, usize, usize)),
    #[error("buffer of {len} values does not fit {width}x{height}x{channels}")]
    Buffer {
        len: usize,
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// Row-major interleaved raster with `f32` channels, nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::Empty);
        }
        if data.len() != width * height * channels {
            return Err(RasterError::Buffer {
                len: data.len(),
                width,
                height,
                channels,
            });
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, pixel: &[f32]) -> Self {
        let data = pixel.iter().copied().cycle().take(width * height * pixel.len()).collect();
        Raster {
            width,
            height,
            channels: pixel.len(),
            data,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Raster {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.channels)
    }

    pub fn expect_channels(&self, expected: usize) -> Result<(), RasterError> {
        if self.channels != expected {
            return Err(RasterError::Channels {
                expected,
                actual: self.channels,
            });
        }
        Ok(())
    }

    pub fn flip_horizontal(&self) -> Raster {
        Raster::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.pixel(self.width - 1 - x, y)[c]
        })
    }

    /// Integer nearest-neighbour enlargement; display only.
    pub fn upscale_nearest(&self, factor: usize) -> Raster {
        let factor = factor.max(1);
        Raster::from_fn(self.width * factor, self.height * factor, self.channels, |x, y, c| {
            self.pixel(x / factor, y / factor)[c]
        })
    }

    /// Drops the alpha channel of an RGBA raster.
    pub fn without_alpha(&self) -> Result<Raster, RasterError> {
        self.expect_channels(4)?;
        let data = self.pixels().flat_map(|p| [p[0], p[1], p[2]]).collect();
        Raster::new(self.width, self.height, 3, data)
    }

    /// Adds an opaque alpha channel to an RGB raster.
    pub fn with_opaque_alpha(&self) -> Result<Raster, RasterError> {
        self.expect_channels(3)?;
        let data = self.pixels().flat_map(|p| [p[0], p[1], p[2], 1.0]).collect();
        Raster::new(self.width, self.height, 4, data)
    }

    pub fn load_rgba(path: &Path) -> Result<Raster, RasterError> {
        let img = image::open(path)?.to_rgba8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Raster::new(w as usize, h as usize, 4, data)
    }

    pub fn load_rgb(path: &Path) -> Result<Raster, RasterError> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Raster::new(w as usize, h as usize, 3, data)
    }

    fn quantized(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Encodes an RGB or RGBA raster as PNG bytes (8 bits per channel).
    pub fn to_png_bytes(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = std::io::Cursor::new(Vec::new());
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, self.quantized())
                .expect("buffer sized by construction")
                .write_to(&mut out, image::ImageFormat::Png)?,
            4 => ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, self.quantized())
                .expect("buffer sized by construction")
                .write_to(&mut out, image::ImageFormat::Png)?,
            actual => return Err(RasterError::Channels { expected: 3, actual }),
        }
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let bytes = self.to_png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| RasterError::Image(image::ImageError::IoError(e)))
    }
}
