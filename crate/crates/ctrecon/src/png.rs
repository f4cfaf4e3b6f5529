//! 8-bit grayscale PNG export.

use std::path::Path;

use ctrecon_core::Image;
use image::GrayImage;

use crate::error::{CliError, Result};

/// Default display window, in display units where air is 0 and water 1000.
pub const DEFAULT_WINDOW: (f64, f64) = (800.0, 1200.0);

/// Maps `values` linearly from `[lo, hi]` to `[0, 255]`, clipping outside.
pub fn window_to_gray(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let width = hi - lo;
    values
        .iter()
        .map(|&v| {
            let g = ((v - lo) * 255.0 / width).round();
            if g.is_nan() {
                0
            } else {
                g.clamp(0.0, 255.0) as u8
            }
        })
        .collect()
}

pub fn check_window(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(CliError::Config(format!(
            "display window [{lo}, {hi}] must satisfy lo < hi"
        )));
    }
    Ok(())
}

pub fn write_gray(path: &Path, rows: usize, cols: usize, pixels: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(cols as u32, rows as u32, pixels)
        .ok_or_else(|| CliError::format(path, "pixel buffer does not match the image size"))?;
    Ok(img.save_with_format(path, image::ImageFormat::Png)?)
}

/// Writes `image` in display units through the window `[lo, hi]`.
pub fn write_windowed(path: &Path, image: &Image, (lo, hi): (f64, f64)) -> Result<()> {
    check_window(lo, hi)?;
    write_gray(
        path,
        image.rows,
        image.cols,
        window_to_gray(&image.to_display(), lo, hi),
    )
}
