use crate::error::{check_len, Error, Result};
use crate::geometry::Geometry;

/// Default water attenuation in mm⁻¹.
pub const MU_WATER: f64 = 0.0192;

/// Pixel grid of linear attenuation coefficients (mm⁻¹), row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub mu_water: f64,
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            mu_water: MU_WATER,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            data: vec![value; rows * cols],
            ..Self::zeros(rows, cols)
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("image data", rows * cols, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("image values must be finite".into()));
        }
        Ok(Self {
            rows,
            cols,
            data,
            mu_water: MU_WATER,
        })
    }

    pub fn with_mu_water(mut self, mu_water: f64) -> Self {
        self.mu_water = mu_water;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn check_geometry(&self, geom: &Geometry) -> Result<()> {
        check_len("image rows", geom.rows, self.rows)?;
        check_len("image cols", geom.cols, self.cols)
    }

    pub fn same_shape(&self, other: &Image) -> Result<()> {
        check_len("image rows", self.rows, other.rows)?;
        check_len("image cols", self.cols, other.cols)
    }

    /// Hounsfield units, `1000·(μ − μ_w)/μ_w`.
    pub fn to_hu(&self) -> Vec<f64> {
        self.data.iter().map(|&m| mu_to_hu(m, self.mu_water)).collect()
    }

    /// Shifted display units where air is 0 and water is 1000.
    pub fn to_display(&self) -> Vec<f64> {
        self.data.iter().map(|&m| 1000.0 * m / self.mu_water).collect()
    }

    pub fn from_hu(rows: usize, cols: usize, hu: &[f64], mu_water: f64) -> Result<Self> {
        let data = hu.iter().map(|&h| hu_to_mu(h, mu_water)).collect();
        Ok(Self::from_vec(rows, cols, data)?.with_mu_water(mu_water))
    }

    /// Copies out a `size×size` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Image {
        let mut data = Vec::with_capacity(height * width);
        for r in row..row + height {
            data.extend_from_slice(&self.data[r * self.cols + col..r * self.cols + col + width]);
        }
        Image {
            rows: height,
            cols: width,
            data,
            mu_water: self.mu_water,
        }
    }
}

pub fn mu_to_hu(mu: f64, mu_water: f64) -> f64 {
    1000.0 * (mu - mu_water) / mu_water
}

pub fn hu_to_mu(hu: f64, mu_water: f64) -> f64 {
    mu_water * (1.0 + hu / 1000.0)
}

/// What the values of a [`Sinogram`] represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinogramKind {
    /// Line integrals, mm⁻¹·mm.
    LineIntegral,
    /// Detected photon counts.
    Counts,
    /// Statistical weights `W_ii`.
    Weights,
}

/// Per-(view, bin) data, view-major: index `view·n_bins + bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub n_views: usize,
    pub n_bins: usize,
    pub kind: SinogramKind,
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(geom: &Geometry, kind: SinogramKind) -> Self {
        Self {
            n_views: geom.n_views,
            n_bins: geom.n_bins,
            kind,
            data: vec![0.0; geom.n_rays()],
        }
    }

    pub fn from_vec(geom: &Geometry, kind: SinogramKind, data: Vec<f64>) -> Result<Self> {
        check_len("sinogram data", geom.n_rays(), data.len())?;
        Ok(Self {
            n_views: geom.n_views,
            n_bins: geom.n_bins,
            kind,
            data,
        })
    }

    pub fn check_geometry(&self, geom: &Geometry) -> Result<()> {
        check_len("sinogram views", geom.n_views, self.n_views)?;
        check_len("sinogram bins", geom.n_bins, self.n_bins)
    }

    pub fn view(&self, v: usize) -> &[f64] {
        &self.data[v * self.n_bins..(v + 1) * self.n_bins]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
