//! Separable bicubic resampling with the Catmull-Rom kernel (a = -0.5).
//!
//! When shrinking, the kernel is stretched by the scale factor so every source
//! pixel contributes (area-aware, as in PIL's `BICUBIC`). Weights near the
//! border are renormalised over the pixels that exist. Output is clamped to
//! [0, 1] once, after both passes.

use crate::raster::{Raster, RasterError};

pub const CATMULL_ROM_A: f64 = -0.5;

pub fn cubic_kernel(x: f64) -> f64 {
    let a = CATMULL_ROM_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output-sample (first source index, normalised weights).
fn axis_weights(src: usize, dst: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = src as f64 / dst as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(src);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|j| cubic_kernel((j as f64 + 0.5 - center) / stretch))
                .collect();
            let total: f64 = weights.iter().sum();
            if total != 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            }
            (lo, weights)
        })
        .collect()
}

/// Resamples any raster (every channel, alpha included, treated alike) to
/// `width` x `height`.
pub fn resize_bicubic_to(image: &Raster, width: usize, height: usize) -> Result<Raster, RasterError> {
    if image.width() == 0 || image.height() == 0 || width == 0 || height == 0 {
        return Err(RasterError::Empty);
    }
    let ch = image.channels();
    let (sw, sh) = (image.width(), image.height());
    let src = image.data();

    let xw = axis_weights(sw, width);
    let mut horizontal = vec![0f64; width * sh * ch];
    for y in 0..sh {
        for (x, (lo, weights)) in xw.iter().enumerate() {
            let out = &mut horizontal[(y * width + x) * ch..(y * width + x + 1) * ch];
            for (k, w) in weights.iter().enumerate() {
                let p = ((y * sw) + lo + k) * ch;
                for c in 0..ch {
                    out[c] += w * src[p + c] as f64;
                }
            }
        }
    }

    let yw = axis_weights(sh, height);
    let mut data = vec![0f32; width * height * ch];
    for (y, (lo, weights)) in yw.iter().enumerate() {
        for x in 0..width {
            for c in 0..ch {
                let acc: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * horizontal[((lo + k) * width + x) * ch + c])
                    .sum();
                data[(y * width + x) * ch + c] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Raster::new(width, height, ch, data)
}

pub fn resize_bicubic(image: &Raster, side: usize) -> Result<Raster, RasterError> {
    resize_bicubic_to(image, side, side)
}
