//! 2D scan geometries.
//!
//! The image grid is centred on the isocentre. Column `c` spans
//! `x ∈ [x_min + c·Δ, x_min + (c+1)·Δ]` and row `r` spans
//! `y ∈ [y_max − (r+1)·Δ, y_max − r·Δ]`, so row 0 is the top of the image.
//!
//! A parallel ray at view angle θ and detector coordinate `s` is the line
//! `{ s·(cosθ, sinθ) + t·(−sinθ, cosθ) }`. A fan-arc ray at source angle β and
//! fan angle γ starts at the source `D_so·(sinβ, −cosβ)` and is equivalent to
//! the parallel ray with `θ = β − γ`, `s = D_so·sinγ`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Detector arrangement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryKind {
    Parallel,
    /// Equiangular fan; `bin_spacing` is then an angle in radians.
    FanArc {
        source_to_iso: f64,
        source_to_detector: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub kind: GeometryKind,
    pub n_views: usize,
    pub n_bins: usize,
    pub rows: usize,
    pub cols: usize,
    /// Pixel side in mm.
    pub pixel_size: f64,
    /// mm for parallel beams, radians for fan-arc.
    pub bin_spacing: f64,
    pub view_angles: Vec<f64>,
}

/// A ray as a half-open parametric segment `origin + t·dir`, `t ∈ [t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 2],
    pub dir: [f64; 2],
    pub t_min: f64,
    pub t_max: f64,
}

impl Geometry {
    /// Parallel beam with views spread uniformly over `[0, π)`.
    pub fn parallel(
        rows: usize,
        cols: usize,
        pixel_size: f64,
        n_views: usize,
        n_bins: usize,
        bin_spacing: f64,
    ) -> Result<Self> {
        let g = Self {
            kind: GeometryKind::Parallel,
            n_views,
            n_bins,
            rows,
            cols,
            pixel_size,
            bin_spacing,
            view_angles: uniform_angles(n_views, PI),
        };
        g.validate()?;
        Ok(g)
    }

    /// Parallel beam whose detector covers the image diagonal with bins of one pixel.
    pub fn parallel_covering(rows: usize, cols: usize, pixel_size: f64, n_views: usize) -> Result<Self> {
        let diag = ((rows * rows + cols * cols) as f64).sqrt();
        let n_bins = diag.ceil() as usize + 2;
        Self::parallel(rows, cols, pixel_size, n_views, n_bins, pixel_size)
    }

    /// Equiangular fan beam with source angles spread uniformly over `[0, 2π)`.
    #[allow(clippy::too_many_arguments)]
    pub fn fan_arc(
        rows: usize,
        cols: usize,
        pixel_size: f64,
        n_views: usize,
        n_bins: usize,
        bin_angle: f64,
        source_to_iso: f64,
        source_to_detector: f64,
    ) -> Result<Self> {
        let g = Self {
            kind: GeometryKind::FanArc {
                source_to_iso,
                source_to_detector,
            },
            n_views,
            n_bins,
            rows,
            cols,
            pixel_size,
            bin_spacing: bin_angle,
            view_angles: uniform_angles(n_views, 2.0 * PI),
        };
        g.validate()?;
        Ok(g)
    }

    /// Fan-arc geometry with LightSpeed-like distances whose fan covers the
    /// whole image diagonal.
    pub fn fan_arc_covering(rows: usize, cols: usize, pixel_size: f64, n_views: usize, n_bins: usize) -> Result<Self> {
        let source_to_iso: f64 = 541.0;
        let source_to_detector: f64 = 949.075;
        let half_diag = 0.5 * pixel_size * ((rows * rows + cols * cols) as f64).sqrt();
        let src = source_to_iso.max(1.25 * half_diag);
        let det = source_to_detector.max(src * 949.075 / 541.0);
        let half_fan = (half_diag / src).asin() * 1.02;
        let bin_angle = 2.0 * half_fan / n_bins as f64;
        Self::fan_arc(rows, cols, pixel_size, n_views, n_bins, bin_angle, src, det)
    }

    /// Desk-scale default: 128², 0.9766·4 mm pixels, 246 views, 128 bins, fan-arc.
    pub fn desk_default() -> Self {
        Self::fan_arc_covering(128, 128, 0.9766 * 4.0, 246, 128).expect("default geometry is valid")
    }

    pub fn with_view_angles(mut self, angles: Vec<f64>) -> Result<Self> {
        self.n_views = angles.len();
        self.view_angles = angles;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGeometry(msg));
        if self.n_views == 0 || self.n_bins == 0 {
            return bad(format!("n_views={} n_bins={} must be >= 1", self.n_views, self.n_bins));
        }
        if self.rows == 0 || self.cols == 0 {
            return bad("image must have at least one pixel".into());
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return bad(format!("pixel_size {} must be positive", self.pixel_size));
        }
        if !(self.bin_spacing > 0.0 && self.bin_spacing.is_finite()) {
            return bad(format!("bin_spacing {} must be positive", self.bin_spacing));
        }
        if self.view_angles.len() != self.n_views {
            return bad(format!(
                "{} view angles for {} views",
                self.view_angles.len(),
                self.n_views
            ));
        }
        for w in self.view_angles.windows(2) {
            if w[1] <= w[0] {
                return bad("view angles must be strictly increasing".into());
            }
        }
        if let (Some(&first), Some(&last)) = (self.view_angles.first(), self.view_angles.last()) {
            if first < 0.0 || last >= 2.0 * PI {
                return bad("view angles must lie in [0, 2π)".into());
            }
        }
        if let GeometryKind::FanArc {
            source_to_iso,
            source_to_detector,
        } = self.kind
        {
            let half_diag = 0.5 * self.pixel_size * ((self.rows.pow(2) + self.cols.pow(2)) as f64).sqrt();
            if !(source_to_iso > half_diag) {
                return bad(format!(
                    "source_to_iso {source_to_iso} must exceed the image half-diagonal {half_diag}"
                ));
            }
            if !(source_to_detector > source_to_iso) {
                return bad(format!(
                    "source_to_detector {source_to_detector} must exceed source_to_iso {source_to_iso}"
                ));
            }
            if self.bin_spacing * self.n_bins as f64 >= PI {
                return bad("fan angle must be below π".into());
            }
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_bins
    }

    /// Signed detector offset of bin `b` (mm or radians) relative to the centre.
    pub fn bin_offset(&self, bin: usize) -> f64 {
        (bin as f64 - 0.5 * (self.n_bins as f64 - 1.0)) * self.bin_spacing
    }

    /// Half extents `(x_half, y_half)` of the image support in mm.
    pub fn half_extent(&self) -> (f64, f64) {
        (
            0.5 * self.cols as f64 * self.pixel_size,
            0.5 * self.rows as f64 * self.pixel_size,
        )
    }

    pub fn ray(&self, view: usize, bin: usize) -> Ray {
        let angle = self.view_angles[view];
        let offset = self.bin_offset(bin);
        match self.kind {
            GeometryKind::Parallel => {
                let (sin, cos) = angle.sin_cos();
                Ray {
                    origin: [offset * cos, offset * sin],
                    dir: [-sin, cos],
                    t_min: f64::NEG_INFINITY,
                    t_max: f64::INFINITY,
                }
            }
            GeometryKind::FanArc {
                source_to_iso,
                source_to_detector,
            } => {
                let (sin_b, cos_b) = angle.sin_cos();
                let theta = angle - offset;
                let (sin_t, cos_t) = theta.sin_cos();
                Ray {
                    origin: [source_to_iso * sin_b, -source_to_iso * cos_b],
                    dir: [-sin_t, cos_t],
                    t_min: 0.0,
                    t_max: source_to_detector,
                }
            }
        }
    }

    /// Centre of pixel `(row, col)` in mm.
    pub fn pixel_center(&self, row: usize, col: usize) -> [f64; 2] {
        let (xh, yh) = self.half_extent();
        [
            -xh + (col as f64 + 0.5) * self.pixel_size,
            yh - (row as f64 + 0.5) * self.pixel_size,
        ]
    }

    /// Views `m, m+M, m+2M, …` for each of the `M` ordered subsets.
    pub fn interleaved_subsets(n_views: usize, n_subsets: usize) -> Vec<Vec<usize>> {
        (0..n_subsets)
            .map(|m| (m..n_views).step_by(n_subsets).collect())
            .collect()
    }
}

fn uniform_angles(n: usize, span: f64) -> Vec<f64> {
    (0..n).map(|i| span * i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate() {
        assert!(Geometry::parallel(8, 8, 1.0, 0, 8, 1.0).is_err());
        assert!(Geometry::parallel(8, 8, 0.0, 4, 8, 1.0).is_err());
        assert!(Geometry::fan_arc(64, 64, 1.0, 10, 32, 0.02, 30.0, 60.0).is_err());
        assert!(Geometry::fan_arc(64, 64, 1.0, 10, 32, 0.02, 100.0, 90.0).is_err());
    }

    #[test]
    fn angles_increasing() {
        let g = Geometry::parallel(8, 8, 1.0, 4, 8, 1.0).unwrap();
        assert!(g.clone().with_view_angles(vec![0.0, 0.5, 0.5]).is_err());
        assert!(g.with_view_angles(vec![0.0, 7.0]).is_err());
    }

    #[test]
    fn fan_ray_matches_parallel_equivalent() {
        let g = Geometry::fan_arc(16, 16, 1.0, 8, 9, 0.05, 40.0, 80.0).unwrap();
        let ray = g.ray(3, 7);
        let beta = g.view_angles[3];
        let gamma = g.bin_offset(7);
        let theta = beta - gamma;
        // Signed distance of the line from the isocentre along (cosθ, sinθ).
        let s = ray.origin[0] * theta.cos() + ray.origin[1] * theta.sin();
        assert!((s - 40.0 * gamma.sin()).abs() < 1e-12);
    }

    #[test]
    fn desk_default_is_valid() {
        let g = Geometry::desk_default();
        assert_eq!((g.rows, g.n_views, g.n_bins), (128, 246, 128));
        g.validate().unwrap();
    }

    #[test]
    fn subsets_interleave() {
        let s = Geometry::interleaved_subsets(10, 4);
        assert_eq!(s[0], vec![0, 4, 8]);
        assert_eq!(s[3], vec![3, 7]);
    }
}
