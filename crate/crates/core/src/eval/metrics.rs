use crate::color::rgb_to_yuv;
use crate::raster::Raster;

use super::EvalError;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Raster, b: &Raster) -> Result<(), EvalError> {
    if a.shape() != b.shape() {
        return Err(EvalError::ShapeMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    if a.channels() != 3 {
        return Err(EvalError::Channels(a.channels()));
    }
    Ok(())
}

/// Mean squared difference over every pixel and RGB channel.
pub fn mse_rgb(a: &Raster, b: &Raster) -> Result<f64, EvalError> {
    check_pair(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - centre;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of one `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-channel planes with dynamic range 1, windows
/// restricted to positions fully inside the image.
pub fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let product = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let ab = filter_valid(&product(&|x, y| x * y), w, h, &taps);
    let squares = filter_valid(&product(&|x, y| x * x + y * y), w, h, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let num0 = 2.0 * mu_a[i] * mu_b[i];
        let den0 = mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i];
        let luminance = (num0 + c1) / (den0 + c1);
        let cs = (2.0 * ab[i] - num0 + c2) / (squares[i] - den0 + c2);
        total += luminance * cs;
    }
    total / n as f64
}

/// SSIM of two RGB images after conversion to YUV, averaged over the three
/// channels and all valid window positions.
pub fn ssim_yuv(a: &Raster, b: &Raster) -> Result<f64, EvalError> {
    check_pair(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::TooSmall { width: w, height: h });
    }
    let ya = rgb_to_yuv(a)?;
    let yb = rgb_to_yuv(b)?;
    let plane = |r: &Raster, c: usize| -> Vec<f64> { r.data().iter().skip(c).step_by(3).map(|v| *v as f64).collect() };
    let total: f64 = (0..3).map(|c| ssim_plane(&plane(&ya, c), &plane(&yb, c), w, h)).sum();
    Ok(total / 3.0)
}
