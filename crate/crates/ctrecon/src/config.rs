//! Experiment configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use ctrecon_core::denoiser::TrainConfig;
use ctrecon_core::fbp::Window;
use ctrecon_core::image::hu_to_mu;
use ctrecon_core::learn::LearnConfig;
use ctrecon_core::sim::ScanProtocol;
use ctrecon_core::solvers::{OsLalmConfig, UltraParams};
use ctrecon_core::sparsity::{PatchConfig, TransformUnion};
use ctrecon_core::super_model::{EpSettings, IterativeModule, SuperConfig};
use ctrecon_core::{Geometry, GeometryKind, MU_WATER};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKindSpec {
    Parallel,
    FanArc,
}

/// Scan geometry as written in configs and sidecars. Optional fields fall
/// back to a detector that covers the image diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub kind: GeometryKindSpec,
    pub rows: usize,
    pub cols: usize,
    pub pixel_size: f64,
    pub n_views: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_spacing: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_to_iso: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_to_detector: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view_angles: Option<Vec<f64>>,
}

impl GeometrySpec {
    /// Fully explicit description of `geom`.
    pub fn from_geometry(geom: &Geometry) -> Self {
        let (kind, source_to_iso, source_to_detector) = match geom.kind {
            GeometryKind::Parallel => (GeometryKindSpec::Parallel, None, None),
            GeometryKind::FanArc {
                source_to_iso,
                source_to_detector,
            } => (GeometryKindSpec::FanArc, Some(source_to_iso), Some(source_to_detector)),
        };
        Self {
            kind,
            rows: geom.rows,
            cols: geom.cols,
            pixel_size: geom.pixel_size,
            n_views: geom.n_views,
            n_bins: Some(geom.n_bins),
            bin_spacing: Some(geom.bin_spacing),
            source_to_iso,
            source_to_detector,
            view_angles: Some(geom.view_angles.clone()),
        }
    }

    pub fn to_geometry(&self) -> Result<Geometry> {
        let (rows, cols, px, views) = (self.rows, self.cols, self.pixel_size, self.n_views);
        let geom = match self.kind {
            GeometryKindSpec::Parallel => {
                if self.source_to_iso.is_some() || self.source_to_detector.is_some() {
                    return Err(CliError::Config("parallel geometry takes no source distances".into()));
                }
                match (self.n_bins, self.bin_spacing) {
                    (Some(bins), Some(spacing)) => Geometry::parallel(rows, cols, px, views, bins, spacing)?,
                    (None, None) => Geometry::parallel_covering(rows, cols, px, views)?,
                    _ => return Err(CliError::Config("give both n_bins and bin_spacing, or neither".into())),
                }
            }
            GeometryKindSpec::FanArc => match (self.bin_spacing, self.source_to_iso, self.source_to_detector) {
                (Some(spacing), Some(src), Some(det)) => {
                    let bins = self.n_bins.ok_or_else(|| {
                        CliError::Config("fan-arc geometry with explicit spacing needs n_bins".into())
                    })?;
                    Geometry::fan_arc(rows, cols, px, views, bins, spacing, src, det)?
                }
                (None, None, None) => {
                    let bins = self.n_bins.unwrap_or_else(|| rows.max(cols));
                    Geometry::fan_arc_covering(rows, cols, px, views, bins)?
                }
                _ => {
                    return Err(CliError::Config(
                        "fan-arc geometry needs bin_spacing, source_to_iso and source_to_detector together".into(),
                    ))
                }
            },
        };
        match &self.view_angles {
            Some(angles) => {
                if angles.len() != self.n_views {
                    return Err(CliError::Config(format!(
                        "{} view angles given for n_views = {}",
                        angles.len(),
                        self.n_views
                    )));
                }
                Ok(geom.with_view_angles(angles.clone())?)
            }
            None => Ok(geom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowSpec {
    RamLak,
    Hann,
}

impl From<WindowSpec> for Window {
    fn from(w: WindowSpec) -> Self {
        match w {
            WindowSpec::RamLak => Window::RamLak,
            WindowSpec::Hann => Window::Hann,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PwlsEp,
    PwlsUltra,
    Spultra,
}

impl Method {
    pub fn id(self) -> &'static str {
        match self {
            Self::PwlsEp => "pwls-ep",
            Self::PwlsUltra => "pwls-ultra",
            Self::Spultra => "spultra",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModuleId {
    None,
    PwlsEp,
    PwlsUltra,
    Spultra,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    SheppLogan,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub i0: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ProtocolSpec {
    pub fn to_protocol(&self) -> Result<ScanProtocol> {
        Ok(ScanProtocol::new(self.i0, self.sigma, self.seed)?)
    }
}

impl From<ScanProtocol> for ProtocolSpec {
    fn from(p: ScanProtocol) -> Self {
        Self {
            i0: p.i0,
            sigma: p.sigma,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbpSpec {
    pub window: WindowSpec,
}

impl Default for FbpSpec {
    fn default() -> Self {
        Self {
            window: WindowSpec::RamLak,
        }
    }
}

/// OS-LALM settings; the box bound is given in HU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub alpha: f64,
    pub n_subsets: usize,
    pub n_iters: usize,
    pub x_max_hu: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = OsLalmConfig::default();
        Self {
            alpha: d.alpha,
            n_subsets: d.n_subsets,
            n_iters: d.n_iters,
            x_max_hu: 3000.0,
        }
    }
}

impl SolverSpec {
    pub fn to_config(&self, mu_water: f64) -> OsLalmConfig {
        OsLalmConfig {
            alpha: self.alpha,
            n_subsets: self.n_subsets,
            n_iters: self.n_iters,
            x_max: hu_to_mu(self.x_max_hu, mu_water),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpSpec {
    pub beta: f64,
    pub delta_hu: f64,
    pub unit_kappa: bool,
}

impl Default for EpSpec {
    fn default() -> Self {
        let d = EpSettings::default();
        Self {
            beta: d.beta,
            delta_hu: d.delta_hu,
            unit_kappa: d.unit_kappa,
        }
    }
}

impl EpSpec {
    pub fn to_settings(&self, solver: OsLalmConfig) -> EpSettings {
        EpSettings {
            beta: self.beta,
            delta_hu: self.delta_hu,
            unit_kappa: self.unit_kappa,
            solver,
        }
    }
}

/// ULTRA regulariser settings. `gamma_hu` is the threshold expressed in HU,
/// so that the attenuation threshold is `gamma_hu·μ_water/1000`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UltraSpec {
    pub beta: f64,
    pub gamma_hu: f64,
    pub stride: usize,
    pub outer_iters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
}

impl Default for UltraSpec {
    fn default() -> Self {
        Self {
            beta: 1e4,
            gamma_hu: 25.0,
            stride: 1,
            outer_iters: 20,
            tau: None,
        }
    }
}

impl UltraSpec {
    pub fn gamma(&self, mu_water: f64) -> f64 {
        self.gamma_hu * mu_water / 1000.0
    }

    pub fn to_params(&self, union: TransformUnion, inner: OsLalmConfig, mu_water: f64) -> UltraParams {
        UltraParams {
            beta: self.beta,
            gamma: self.gamma(mu_water),
            tau: self.tau.clone(),
            union,
            stride: self.stride,
            outer_iters: self.outer_iters,
            inner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpultraSpec {
    pub n_outer: usize,
}

impl Default for SpultraSpec {
    fn default() -> Self {
        Self { n_outer: 20 }
    }
}

/// Transform-learning settings. Without `eta` the default
/// `(0.1·patch dynamic range)²` is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnSpec {
    pub k: usize,
    pub patch_side: usize,
    pub stride: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub lambda0: f64,
    pub n_iters: usize,
    pub seed: u64,
}

impl Default for LearnSpec {
    fn default() -> Self {
        let d = LearnConfig::with_dynamic_range(1.0);
        Self {
            k: d.k,
            patch_side: d.patch.side,
            stride: d.patch.stride,
            eta: None,
            lambda0: d.lambda0,
            n_iters: d.n_iters,
            seed: d.seed,
        }
    }
}

impl LearnSpec {
    pub fn to_config(&self, dynamic_range: f64) -> LearnConfig {
        let mut cfg = LearnConfig::with_dynamic_range(dynamic_range);
        cfg.k = self.k;
        cfg.patch = PatchConfig::new(self.patch_side, self.stride);
        if let Some(eta) = self.eta {
            cfg.eta = eta;
        }
        cfg.lambda0 = self.lambda0;
        cfg.n_iters = self.n_iters;
        cfg.seed = self.seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSpec {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub init_variance: f64,
    pub crop: usize,
    pub crops_per_pair: usize,
    pub loss_scale: f64,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            lr_start: d.lr_start,
            lr_end: d.lr_end,
            momentum: d.momentum,
            init_variance: d.init_variance,
            crop: d.crop,
            crops_per_pair: d.crops_per_pair,
            loss_scale: d.loss_scale,
        }
    }
}

impl DenoiserSpec {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            momentum: self.momentum,
            init_variance: self.init_variance,
            crop: self.crop,
            crops_per_pair: self.crops_per_pair,
            loss_scale: self.loss_scale,
            seed,
        }
    }
}

/// SUPER training. The iterative module takes its regulariser from the
/// `[ep]` or `[ultra]` table and its solver budget from `solver` here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperSpec {
    pub n_layers: usize,
    pub module: ModuleId,
    pub seed: u64,
    pub window: WindowSpec,
    pub solver: SolverSpec,
    pub ultra_outer_iters: usize,
    pub spultra_outer: usize,
}

impl Default for SuperSpec {
    fn default() -> Self {
        Self {
            n_layers: 3,
            module: ModuleId::PwlsEp,
            seed: 0,
            window: WindowSpec::RamLak,
            solver: SolverSpec::default(),
            ultra_outer_iters: 1,
            spultra_outer: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSpec {
    pub union: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default = "default_mu_water")]
    pub mu_water: f64,
    #[serde(default)]
    pub geometry: Option<GeometrySpec>,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub protocol: Option<ProtocolSpec>,
    #[serde(default)]
    pub fbp: FbpSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub ep: EpSpec,
    #[serde(default)]
    pub ultra: UltraSpec,
    #[serde(default)]
    pub spultra: SpultraSpec,
    #[serde(default)]
    pub learn: LearnSpec,
    #[serde(default)]
    pub denoiser: DenoiserSpec,
    #[serde(default, rename = "super")]
    pub super_: SuperSpec,
    #[serde(default)]
    pub paths: PathsSpec,
}

fn default_mu_water() -> f64 {
    MU_WATER
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("every section has defaults")
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; returns the parsed config and the raw bytes it was
    /// parsed from.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| CliError::Config(format!("{}: not valid UTF-8", path.display())))?;
        let cfg = Self::parse(text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok((cfg, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_water > 0.0 && self.mu_water.is_finite()) {
            return Err(CliError::Config(format!(
                "mu_water = {} must be positive",
                self.mu_water
            )));
        }
        if let Some(g) = &self.geometry {
            g.to_geometry()?;
        }
        if let Some(p) = &self.protocol {
            p.to_protocol()?;
        }
        self.solver.to_config(self.mu_water).validate(usize::MAX)?;
        self.super_.solver.to_config(self.mu_water).validate(usize::MAX)?;
        self.denoiser.to_config(0).validate()?;
        if !(self.ultra.gamma_hu >= 0.0) || !(self.ultra.beta >= 0.0) {
            return Err(CliError::Config(
                "ultra.beta and ultra.gamma_hu must be nonnegative".into(),
            ));
        }
        if self.ultra.stride == 0 || self.learn.stride == 0 || self.learn.patch_side == 0 || self.learn.k == 0 {
            return Err(CliError::Config("strides, patch_side and k must be positive".into()));
        }
        if !(self.ep.beta >= 0.0) || !(self.ep.delta_hu > 0.0) {
            return Err(CliError::Config("ep.beta must be >= 0 and ep.delta_hu > 0".into()));
        }
        if self.super_.n_layers == 0 {
            return Err(CliError::Config("super.n_layers must be positive".into()));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        self.geometry
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [geometry] table".into()))?
            .to_geometry()
    }

    pub fn protocol(&self) -> Result<ScanProtocol> {
        self.protocol
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [protocol] table".into()))?
            .to_protocol()
    }

    /// The iterative module of every SUPER layer. ULTRA-based modules need
    /// the transform union.
    pub fn super_module(&self, union: Option<&TransformUnion>) -> Result<IterativeModule> {
        let solver = self.super_.solver.to_config(self.mu_water);
        let ultra = |outer| -> Result<UltraParams> {
            let union = union
                .ok_or_else(|| CliError::Config("an ULTRA super module needs a transform union".into()))?
                .clone();
            let mut p = self.ultra.to_params(union, solver, self.mu_water);
            p.outer_iters = outer;
            Ok(p)
        };
        Ok(match self.super_.module {
            ModuleId::None => IterativeModule::None,
            ModuleId::PwlsEp => IterativeModule::PwlsEp(self.ep.to_settings(solver)),
            ModuleId::PwlsUltra => IterativeModule::PwlsUltra(ultra(self.super_.ultra_outer_iters)?),
            ModuleId::Spultra => IterativeModule::Spultra {
                params: ultra(1)?,
                n_outer: self.super_.spultra_outer,
            },
        })
    }

    pub fn super_config(&self, union: Option<&TransformUnion>) -> Result<SuperConfig> {
        Ok(SuperConfig {
            n_layers: self.super_.n_layers,
            module: self.super_module(union)?,
            train: self.denoiser.to_config(self.super_.seed),
            window: self.super_.window.into(),
            seed: self.super_.seed,
        })
    }
}
