//! Binary raster files for images and sinograms.
//!
//! Layout: an 8-byte magic, `u32` version and `u32` kind tag (16 bytes),
//! then `u32` rows and columns and a row-major `f32` payload, all little
//! endian. Geometry and acquisition details live in a TOML sidecar next to
//! the file, named by appending `.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use ctrecon_core::sim::MeasurementSet;
use ctrecon_core::{Geometry, Image, Sinogram, SinogramKind};
use serde::{Deserialize, Serialize};

use crate::config::{GeometrySpec, ProtocolSpec};
use crate::error::{CliError, Result};

pub const RASTER_MAGIC: [u8; 8] = *b"CTRRASTR";
pub const RASTER_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RasterKind {
    Image,
    LineIntegral,
    Counts,
    Weights,
    /// Pixel class labels; uncovered pixels hold −1.
    LabelMap,
    /// 0/1 membership of one class.
    Mask,
}

impl RasterKind {
    fn tag(self) -> u32 {
        match self {
            Self::Image => 0,
            Self::LineIntegral => 1,
            Self::Counts => 2,
            Self::Weights => 3,
            Self::LabelMap => 4,
            Self::Mask => 5,
        }
    }

    fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => Self::Image,
            1 => Self::LineIntegral,
            2 => Self::Counts,
            3 => Self::Weights,
            4 => Self::LabelMap,
            5 => Self::Mask,
            _ => return None,
        })
    }

    pub fn of_sinogram(kind: SinogramKind) -> Self {
        match kind {
            SinogramKind::LineIntegral => Self::LineIntegral,
            SinogramKind::Counts => Self::Counts,
            SinogramKind::Weights => Self::Weights,
        }
    }

    fn is_sinogram(self) -> bool {
        matches!(self, Self::LineIntegral | Self::Counts | Self::Weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub kind: RasterKind,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_water: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolSpec>,
    /// Rays whose count was floored before the log.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<usize>,
}

impl Sidecar {
    pub fn new(kind: RasterKind, rows: usize, cols: usize) -> Self {
        Self {
            kind,
            rows,
            cols,
            mu_water: None,
            geometry: None,
            protocol: None,
            flagged: Vec::new(),
        }
    }

    pub fn geometry(&self) -> Result<Option<Geometry>> {
        self.geometry.as_ref().map(GeometrySpec::to_geometry).transpose()
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

/// A raster read back from disk, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub sidecar: Sidecar,
    pub data: Vec<f64>,
}

pub fn encode_raster(kind: RasterKind, rows: usize, cols: usize, data: &[f64]) -> Vec<u8> {
    assert_eq!(rows * cols, data.len(), "raster payload does not match its dimensions");
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    out.extend_from_slice(&RASTER_MAGIC);
    out.extend_from_slice(&RASTER_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.tag().to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses a raster file body into `(kind, rows, cols, values)`.
pub fn decode_raster(bytes: &[u8]) -> std::result::Result<(RasterKind, usize, usize, Vec<f64>), String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("file is {} bytes, shorter than the header", bytes.len()));
    }
    if bytes[..8] != RASTER_MAGIC {
        return Err("not a raster file (bad magic)".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
    let version = word(8);
    if version != RASTER_VERSION {
        return Err(format!("unsupported raster version {version}"));
    }
    let kind = RasterKind::from_tag(word(12)).ok_or_else(|| format!("unknown kind tag {}", word(12)))?;
    let (rows, cols) = (word(16) as usize, word(20) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or("dimensions overflow")?;
    if bytes.len() - HEADER_LEN != expected {
        return Err(format!(
            "payload is {} bytes, expected {expected} for {rows}×{cols}",
            bytes.len() - HEADER_LEN
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect();
    Ok((kind, rows, cols, data))
}

pub fn write_raster(path: &Path, sidecar: &Sidecar, data: &[f64]) -> Result<()> {
    if sidecar.rows * sidecar.cols != data.len() {
        return Err(CliError::format(
            path,
            "payload length does not match the sidecar dimensions",
        ));
    }
    fs::write(path, encode_raster(sidecar.kind, sidecar.rows, sidecar.cols, data))
        .map_err(|e| CliError::io(path, e))?;
    let text = toml::to_string(sidecar).map_err(|e| CliError::format(path, e.to_string()))?;
    let side = sidecar_path(path);
    fs::write(&side, text).map_err(|e| CliError::io(side, e))
}

pub fn read_raster(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (kind, rows, cols, data) = decode_raster(&bytes).map_err(|m| CliError::format(path, m))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    let sidecar: Sidecar = toml::from_str(&text).map_err(|e| CliError::format(&side, e.to_string()))?;
    if (sidecar.kind, sidecar.rows, sidecar.cols) != (kind, rows, cols) {
        return Err(CliError::format(&side, "sidecar disagrees with the raster header"));
    }
    Ok(Raster { sidecar, data })
}

pub fn write_image(path: &Path, image: &Image, geom: Option<&Geometry>) -> Result<()> {
    write_image_as(path, image, geom, RasterKind::Image)
}

pub fn write_image_as(path: &Path, image: &Image, geom: Option<&Geometry>, kind: RasterKind) -> Result<()> {
    let mut sidecar = Sidecar::new(kind, image.rows, image.cols);
    sidecar.mu_water = Some(image.mu_water);
    sidecar.geometry = geom.map(GeometrySpec::from_geometry);
    write_raster(path, &sidecar, &image.data)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let r = read_raster(path)?;
    if r.sidecar.kind.is_sinogram() {
        return Err(CliError::format(
            path,
            format!("expected an image, found {:?}", r.sidecar.kind),
        ));
    }
    let mu_water = r
        .sidecar
        .mu_water
        .ok_or_else(|| CliError::format(sidecar_path(path), "image sidecar lacks mu_water"))?;
    Ok(Image::from_vec(r.sidecar.rows, r.sidecar.cols, r.data)?.with_mu_water(mu_water))
}

pub fn write_sinogram(path: &Path, sino: &Sinogram, geom: &Geometry) -> Result<()> {
    let mut sidecar = Sidecar::new(RasterKind::of_sinogram(sino.kind), sino.n_views, sino.n_bins);
    sidecar.geometry = Some(GeometrySpec::from_geometry(geom));
    write_raster(path, &sidecar, &sino.data)
}

/// A measurement and the geometry it was acquired with.
#[derive(Debug, Clone)]
pub struct StoredMeasurement {
    pub meas: MeasurementSet,
    pub geometry: Geometry,
    /// Water attenuation of the scanned object, when known.
    pub mu_water: Option<f64>,
}

/// Stores the counts; post-log data and weights are derived again on load.
pub fn write_measurement(path: &Path, meas: &MeasurementSet, geom: &Geometry, mu_water: Option<f64>) -> Result<()> {
    let mut sidecar = Sidecar::new(RasterKind::Counts, meas.n_views, meas.n_bins);
    sidecar.geometry = Some(GeometrySpec::from_geometry(geom));
    sidecar.protocol = Some(meas.protocol.into());
    sidecar.flagged = meas.flagged.clone();
    sidecar.mu_water = mu_water;
    write_raster(path, &sidecar, &meas.counts)
}

pub fn read_measurement(path: &Path) -> Result<StoredMeasurement> {
    let r = read_raster(path)?;
    let side = sidecar_path(path);
    if r.sidecar.kind != RasterKind::Counts {
        return Err(CliError::format(
            path,
            format!("expected counts, found {:?}", r.sidecar.kind),
        ));
    }
    let geometry = r
        .sidecar
        .geometry()?
        .ok_or_else(|| CliError::format(&side, "measurement sidecar lacks a geometry"))?;
    if (geometry.n_views, geometry.n_bins) != (r.sidecar.rows, r.sidecar.cols) {
        return Err(CliError::format(
            &side,
            "sinogram dimensions disagree with the geometry",
        ));
    }
    let protocol = r
        .sidecar
        .protocol
        .as_ref()
        .ok_or_else(|| CliError::format(&side, "measurement sidecar lacks a protocol"))?
        .to_protocol()?;
    let (rows, cols, flagged) = (r.sidecar.rows, r.sidecar.cols, r.sidecar.flagged.clone());
    Ok(StoredMeasurement {
        meas: MeasurementSet::from_counts(rows, cols, r.data, protocol, flagged),
        geometry,
        mu_water: r.sidecar.mu_water,
    })
}

/// Rounds `values` to the stored precision.
pub fn quantized(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v as f32 as f64).collect()
}
