//! Evaluation reports and iteration logs, written as CSV and TOML.

use std::fs;
use std::path::Path;

use ctrecon_core::metrics::Metrics;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageScore {
    pub image: String,
    pub rmse_hu: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl ImageScore {
    pub fn new(image: impl Into<String>, m: Metrics) -> Self {
        Self {
            image: image.into(),
            rmse_hu: m.rmse,
            psnr_db: m.psnr,
            ssim: m.ssim,
        }
    }

    fn metrics(&self) -> Metrics {
        Metrics {
            rmse: self.rmse_hu,
            psnr: self.psnr_db,
            ssim: self.ssim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregate {
    pub rmse_hu: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub reference: String,
    pub aggregate: Aggregate,
    pub images: Vec<ImageScore>,
}

impl EvalReport {
    pub fn new(reference: impl Into<String>, images: Vec<ImageScore>) -> Result<Self> {
        let all: Vec<Metrics> = images.iter().map(ImageScore::metrics).collect();
        let mean = Metrics::mean(&all).ok_or_else(|| CliError::Config("nothing to evaluate".into()))?;
        Ok(Self {
            reference: reference.into(),
            aggregate: Aggregate {
                rmse_hu: mean.rmse,
                psnr_db: mean.psnr,
                ssim: mean.ssim,
            },
            images,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("reports hold only finite numbers and strings")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// One row per image; the reference is not part of the CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.images {
            w.serialize(s)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
    }

    pub fn from_csv(reference: &str, text: &str) -> Result<Self> {
        let images = csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<Vec<ImageScore>, _>>()?;
        Self::new(reference, images)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv_path = dir.join("report.csv");
        fs::write(&csv_path, self.to_csv()?).map_err(|e| CliError::io(&csv_path, e))?;
        let toml_path = dir.join("report.toml");
        fs::write(&toml_path, self.to_toml()).map_err(|e| CliError::io(&toml_path, e))
    }
}

/// One row of a solver iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub rmse_hu: Option<f64>,
}

pub fn write_iteration_log(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_iteration_log(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}
