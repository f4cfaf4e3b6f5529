//! Filtered back-projection for parallel and equiangular fan-arc data.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::{Geometry, GeometryKind};
use crate::image::{Image, Sinogram, SinogramKind};

/// Apodisation applied on top of the ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    RamLak,
    Hann,
}

/// Below this many views the reconstruction is flagged as unreliable.
pub const MIN_RELIABLE_VIEWS: usize = 8;

#[derive(Debug, Clone)]
pub struct FbpResult {
    pub image: Image,
    /// Set when `n_views < 8`.
    pub few_views: bool,
}

pub fn fbp_reconstruct(sino: &Sinogram, geom: &Geometry, window: Window) -> Result<FbpResult> {
    sino.check_geometry(geom)?;
    if sino.kind != SinogramKind::LineIntegral {
        return Err(Error::InvalidParameter("FBP needs a line-integral sinogram".into()));
    }
    let filtered = filter_views(sino, geom, window);
    let data = match geom.kind {
        GeometryKind::Parallel => backproject_parallel(&filtered, geom),
        GeometryKind::FanArc { source_to_iso, .. } => backproject_fan(&filtered, geom, source_to_iso),
    };
    Ok(FbpResult {
        image: Image::from_vec(geom.rows, geom.cols, data)?,
        few_views: geom.n_views < MIN_RELIABLE_VIEWS,
    })
}

/// Frequency response of the band-limited ramp (discrete spatial kernel
/// transformed to the padded grid), including the convolution step.
fn ramp_response(geom: &Geometry, n_fft: usize, window: Window) -> Vec<f64> {
    let step = geom.bin_spacing;
    let mut kernel = vec![Complex::new(0.0, 0.0); n_fft];
    let half = (n_fft / 2) as i64;
    for n in -half..half {
        let value = match geom.kind {
            GeometryKind::Parallel => {
                if n == 0 {
                    1.0 / (4.0 * step * step)
                } else if n % 2 != 0 {
                    -1.0 / ((n * n) as f64 * PI * PI * step * step)
                } else {
                    0.0
                }
            }
            GeometryKind::FanArc { .. } => {
                if n == 0 {
                    1.0 / (8.0 * step * step)
                } else if n % 2 != 0 {
                    let s = (n as f64 * step).sin();
                    -1.0 / (2.0 * PI * PI * s * s)
                } else {
                    0.0
                }
            }
        };
        kernel[n.rem_euclid(n_fft as i64) as usize] = Complex::new(value * step, 0.0);
    }
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut kernel);
    kernel
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let f = if k < n_fft / 2 {
                k as f64
            } else {
                k as f64 - n_fft as f64
            } / n_fft as f64;
            let w = match window {
                Window::RamLak => 1.0,
                Window::Hann => 0.5 * (1.0 + (2.0 * PI * f).cos()),
            };
            h.re * w
        })
        .collect()
}

fn filter_views(sino: &Sinogram, geom: &Geometry, window: Window) -> Vec<f64> {
    let bins = geom.n_bins;
    let n_fft = (2 * bins).next_power_of_two();
    let response = ramp_response(geom, n_fft, window);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let pre_weight: Vec<f64> = match geom.kind {
        GeometryKind::Parallel => vec![1.0; bins],
        GeometryKind::FanArc { source_to_iso, .. } => {
            (0..bins).map(|b| source_to_iso * geom.bin_offset(b).cos()).collect()
        }
    };
    let mut out = vec![0.0; sino.len()];
    out.par_chunks_mut(bins).enumerate().for_each(|(v, dst)| {
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for (b, (&p, &w)) in sino.view(v).iter().zip(&pre_weight).enumerate() {
            buf[b] = Complex::new(p * w, 0.0);
        }
        fwd.process(&mut buf);
        for (z, &h) in buf.iter_mut().zip(&response) {
            *z *= h;
        }
        inv.process(&mut buf);
        for (d, z) in dst.iter_mut().zip(&buf) {
            *d = z.re / n_fft as f64;
        }
    });
    out
}

#[inline]
fn interp(view: &[f64], u: f64) -> f64 {
    if !(u >= 0.0) || u > (view.len() - 1) as f64 {
        return 0.0;
    }
    let i = u.floor() as usize;
    if i + 1 >= view.len() {
        return view[view.len() - 1];
    }
    let f = u - i as f64;
    view[i] * (1.0 - f) + view[i + 1] * f
}

fn backproject_parallel(filtered: &[f64], geom: &Geometry) -> Vec<f64> {
    let bins = geom.n_bins;
    let trig: Vec<(f64, f64)> = geom.view_angles.iter().map(|a| a.sin_cos()).collect();
    let centre = 0.5 * (bins as f64 - 1.0);
    let scale = PI / geom.n_views as f64;
    let mut out = vec![0.0; geom.n_pixels()];
    out.par_chunks_mut(geom.cols).enumerate().for_each(|(r, row)| {
        for (c, o) in row.iter_mut().enumerate() {
            let [x, y] = geom.pixel_center(r, c);
            let mut acc = 0.0;
            for (v, &(sin, cos)) in trig.iter().enumerate() {
                let s = x * cos + y * sin;
                acc += interp(&filtered[v * bins..(v + 1) * bins], s / geom.bin_spacing + centre);
            }
            *o = acc * scale;
        }
    });
    out
}

fn backproject_fan(filtered: &[f64], geom: &Geometry, source_to_iso: f64) -> Vec<f64> {
    let bins = geom.n_bins;
    let trig: Vec<(f64, f64)> = geom.view_angles.iter().map(|a| a.sin_cos()).collect();
    let centre = 0.5 * (bins as f64 - 1.0);
    let scale = 2.0 * PI / geom.n_views as f64;
    let mut out = vec![0.0; geom.n_pixels()];
    out.par_chunks_mut(geom.cols).enumerate().for_each(|(r, row)| {
        for (c, o) in row.iter_mut().enumerate() {
            let [x, y] = geom.pixel_center(r, c);
            let mut acc = 0.0;
            for (v, &(sin, cos)) in trig.iter().enumerate() {
                // source at D·(sinβ, −cosβ), central direction (−sinβ, cosβ)
                let vx = x - source_to_iso * sin;
                let vy = y + source_to_iso * cos;
                let (cx, cy) = (-sin, cos);
                let along = vx * cx + vy * cy;
                let across = vx * cy - vy * cx;
                let gamma = across.atan2(along);
                let l2 = vx * vx + vy * vy;
                acc += interp(&filtered[v * bins..(v + 1) * bins], gamma / geom.bin_spacing + centre) / l2;
            }
            *o = acc * scale;
        }
    });
    out
}
