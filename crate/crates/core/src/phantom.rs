//! Synthetic attenuation phantoms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::image::Image;

/// An ellipse in normalised coordinates `[-1, 1]²` (x right, y up).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub centre: [f64; 2],
    pub axes: [f64; 2],
    /// Counter-clockwise rotation in degrees.
    pub angle_deg: f64,
    /// Additive intensity, in units of water.
    pub value: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.centre[0], y - self.centre[1]);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.axes[0]).powi(2) + (v / self.axes[1]).powi(2) <= 1.0
    }
}

/// The original ten-ellipse Shepp-Logan table.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse {
        centre: [0.0, 0.0],
        axes: [0.69, 0.92],
        angle_deg: 0.0,
        value: 2.0,
    },
    Ellipse {
        centre: [0.0, -0.0184],
        axes: [0.6624, 0.874],
        angle_deg: 0.0,
        value: -0.98,
    },
    Ellipse {
        centre: [0.22, 0.0],
        axes: [0.11, 0.31],
        angle_deg: -18.0,
        value: -0.02,
    },
    Ellipse {
        centre: [-0.22, 0.0],
        axes: [0.16, 0.41],
        angle_deg: 18.0,
        value: -0.02,
    },
    Ellipse {
        centre: [0.0, 0.35],
        axes: [0.21, 0.25],
        angle_deg: 0.0,
        value: 0.01,
    },
    Ellipse {
        centre: [0.0, 0.1],
        axes: [0.046, 0.046],
        angle_deg: 0.0,
        value: 0.01,
    },
    Ellipse {
        centre: [0.0, -0.1],
        axes: [0.046, 0.046],
        angle_deg: 0.0,
        value: 0.01,
    },
    Ellipse {
        centre: [-0.08, -0.605],
        axes: [0.046, 0.023],
        angle_deg: 0.0,
        value: 0.01,
    },
    Ellipse {
        centre: [0.0, -0.606],
        axes: [0.023, 0.023],
        angle_deg: 0.0,
        value: 0.01,
    },
    Ellipse {
        centre: [0.06, -0.605],
        axes: [0.023, 0.046],
        angle_deg: 0.0,
        value: 0.01,
    },
];

/// Normalised coordinates of the centre of pixel `(r, c)`.
pub fn normalized_coords(rows: usize, cols: usize, r: usize, c: usize) -> (f64, f64) {
    (
        (c as f64 + 0.5) / cols as f64 * 2.0 - 1.0,
        1.0 - (r as f64 + 0.5) / rows as f64 * 2.0,
    )
}

/// Rasterises a list of ellipses, one intensity unit mapping to `mu_water`.
pub fn rasterize(rows: usize, cols: usize, mu_water: f64, ellipses: &[Ellipse]) -> Image {
    let mut img = Image::zeros(rows, cols).with_mu_water(mu_water);
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = normalized_coords(rows, cols, r, c);
            let v: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.value).sum();
            img.set(r, c, v.max(0.0) * mu_water);
        }
    }
    img
}

/// Ten-ellipse Shepp-Logan phantom; unit intensity is water.
pub fn shepp_logan(rows: usize, cols: usize, mu_water: f64) -> Result<Image> {
    if rows < 16 || cols < 16 {
        return Err(Error::InvalidParameter(format!(
            "Shepp-Logan needs at least 16×16 pixels, got {rows}×{cols}"
        )));
    }
    Ok(rasterize(rows, cols, mu_water, &SHEPP_LOGAN))
}

/// Randomly perturbed Shepp-Logan variant for building training sets.
///
/// Ellipse centres, axes, angles and the small-feature contrasts are
/// jittered, and up to three extra lesions are inserted inside the brain.
pub fn random_phantom(rows: usize, cols: usize, mu_water: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ellipses: Vec<Ellipse> = SHEPP_LOGAN.to_vec();
    let stretch = [rng.random_range(0.9..1.05), rng.random_range(0.9..1.05)];
    for (i, e) in ellipses.iter_mut().enumerate() {
        e.centre[0] *= stretch[0];
        e.centre[1] *= stretch[1];
        e.axes[0] *= stretch[0];
        e.axes[1] *= stretch[1];
        if i >= 2 {
            e.centre[0] += rng.random_range(-0.04..0.04);
            e.centre[1] += rng.random_range(-0.04..0.04);
            e.axes[0] *= rng.random_range(0.8..1.25);
            e.axes[1] *= rng.random_range(0.8..1.25);
            e.angle_deg += rng.random_range(-10.0..10.0);
            e.value *= rng.random_range(0.5..3.0);
        }
    }
    let extra = rng.random_range(0..=3);
    for _ in 0..extra {
        let radius = rng.random_range(0.03..0.09);
        ellipses.push(Ellipse {
            centre: [
                rng.random_range(-0.35..0.35) * stretch[0],
                rng.random_range(-0.5..0.5) * stretch[1],
            ],
            axes: [radius, radius * rng.random_range(0.6..1.4)],
            angle_deg: rng.random_range(0.0..180.0),
            value: rng.random_range(-0.04..0.06),
        });
    }
    rasterize(rows, cols, mu_water, &ellipses)
}

/// Centred uniform disk of `radius` mm, with 4×4 sub-pixel area sampling.
pub fn disk(geom: &Geometry, radius: f64, value: f64) -> Image {
    const SUB: usize = 4;
    let mut img = Image::zeros(geom.rows, geom.cols);
    let ps = geom.pixel_size;
    for r in 0..geom.rows {
        for c in 0..geom.cols {
            let [xc, yc] = geom.pixel_center(r, c);
            let mut inside = 0;
            for i in 0..SUB {
                for j in 0..SUB {
                    let x = xc + ((i as f64 + 0.5) / SUB as f64 - 0.5) * ps;
                    let y = yc + ((j as f64 + 0.5) / SUB as f64 - 0.5) * ps;
                    if x * x + y * y <= radius * radius {
                        inside += 1;
                    }
                }
            }
            img.set(r, c, value * inside as f64 / (SUB * SUB) as f64);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::MU_WATER;

    #[test]
    fn too_small() {
        assert!(shepp_logan(8, 32, MU_WATER).is_err());
    }

    #[test]
    fn corner_is_background() {
        let p = shepp_logan(64, 64, MU_WATER).unwrap();
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(63, 63), 0.0);
    }

    #[test]
    fn range_is_zero_to_two_water() {
        let p = shepp_logan(128, 128, MU_WATER).unwrap();
        let max = p.data.iter().cloned().fold(f64::MIN, f64::max);
        let min = p.data.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min >= 0.0);
        assert!(max <= 2.0 * MU_WATER + 1e-15);
        assert!((max - 2.0 * MU_WATER).abs() < 1e-15);
    }

    #[test]
    fn mirror_symmetric_outside_asymmetric_ellipses() {
        let (rows, cols) = (96, 96);
        let p = shepp_logan(rows, cols, MU_WATER).unwrap();
        // Ellipses without an exact left-right twin.
        let asym = [2usize, 3, 7, 9];
        let touched = |x: f64, y: f64| asym.iter().any(|&i| SHEPP_LOGAN[i].contains(x, y));
        let mut sq = 0.0;
        let mut n = 0;
        for r in 0..rows {
            for c in 0..cols {
                let (x, y) = normalized_coords(rows, cols, r, c);
                if touched(x, y) || touched(-x, y) {
                    continue;
                }
                sq += (p.get(r, c) - p.get(r, cols - 1 - c)).powi(2);
                n += 1;
            }
        }
        assert!(n > rows * cols / 2);
        assert_eq!((sq / n as f64).sqrt(), 0.0);
    }

    #[test]
    fn random_phantoms_differ_by_seed() {
        let a = random_phantom(32, 32, MU_WATER, 1);
        let b = random_phantom(32, 32, MU_WATER, 2);
        assert_ne!(a.data, b.data);
        assert_eq!(a.data, random_phantom(32, 32, MU_WATER, 1).data);
        assert!(a.data.iter().all(|&v| (0.0..=3.0 * MU_WATER).contains(&v)));
    }
}
