//! Image quality metrics in Hounsfield and display units.

use crate::error::{Error, Result};
use crate::image::Image;

/// Reported PSNR when the two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;
/// Default SSIM dynamic range, the width of the usual soft-tissue window.
pub const DEFAULT_SSIM_RANGE: f64 = 400.0;
pub const SSIM_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl Metrics {
    /// Metrics of `estimate` against `reference` with the default peak and range.
    pub fn evaluate(estimate: &Image, reference: &Image) -> Result<Self> {
        let rmse = rmse(estimate, reference)?;
        Ok(Self {
            rmse,
            psnr: psnr_from_rmse(rmse, default_peak(reference))?,
            ssim: ssim(estimate, reference, DEFAULT_SSIM_RANGE)?,
        })
    }

    /// Componentwise mean.
    pub fn mean(all: &[Metrics]) -> Option<Metrics> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        Some(Metrics {
            rmse: all.iter().map(|m| m.rmse).sum::<f64>() / n,
            psnr: all.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: all.iter().map(|m| m.ssim).sum::<f64>() / n,
        })
    }
}

/// `√(Σ(x̂ − x*)²/N)` in HU.
pub fn rmse(estimate: &Image, reference: &Image) -> Result<f64> {
    estimate.same_shape(reference)?;
    if reference.is_empty() {
        return Err(Error::InvalidParameter("cannot compare empty images".into()));
    }
    let sum: f64 = estimate
        .to_hu()
        .iter()
        .zip(reference.to_hu())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / reference.len() as f64).sqrt())
}

/// Maximum of the reference in display units (air 0, water 1000).
pub fn default_peak(reference: &Image) -> f64 {
    reference.to_display().into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// `20·log₁₀(peak/RMSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(estimate: &Image, reference: &Image, peak: Option<f64>) -> Result<f64> {
    let r = rmse(estimate, reference)?;
    psnr_from_rmse(r, peak.unwrap_or_else(|| default_peak(reference)))
}

pub fn psnr_from_rmse(rmse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::InvalidParameter(format!("PSNR peak {peak} must be positive")));
    }
    if rmse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (peak / rmse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over every 8×8 window (clipped to the image size), computed in
/// display units with `C1 = (0.01·L)²` and `C2 = (0.03·L)²`.
pub fn ssim(estimate: &Image, reference: &Image, range: f64) -> Result<f64> {
    estimate.same_shape(reference)?;
    if reference.is_empty() {
        return Err(Error::InvalidParameter("cannot compare empty images".into()));
    }
    if !(range > 0.0) {
        return Err(Error::InvalidParameter(format!("SSIM range {range} must be positive")));
    }
    let (rows, cols) = (reference.rows, reference.cols);
    let (wr, wc) = (SSIM_WINDOW.min(rows), SSIM_WINDOW.min(cols));
    let x = estimate.to_display();
    let y = reference.to_display();
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let n = (wr * wc) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=rows - wr {
        for c in 0..=cols - wc {
            let (mut sx, mut sy) = (0.0, 0.0);
            for i in r..r + wr {
                for j in c..c + wc {
                    sx += x[i * cols + j];
                    sy += y[i * cols + j];
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in r..r + wr {
                for j in c..c + wc {
                    let (a, b) = (x[i * cols + j] - mx, y[i * cols + j] - my);
                    vx += a * a;
                    vy += b * b;
                    cov += a * b;
                }
            }
            let denom = if n > 1.0 { n - 1.0 } else { 1.0 };
            let (vx, vy, cov) = (vx / denom, vy / denom, cov / denom);
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
