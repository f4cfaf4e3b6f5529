//! Supervised–unsupervised (SUPER) layers: each layer denoises with a
//! trained network, then refines with a fixed budget of an iterative
//! reconstruction warm-started from the denoised image.

use rayon::prelude::*;

use crate::denoiser::{ConvDenoiser, SupervisedModule, TrainConfig};
use crate::error::{check_len, Error, Result};
use crate::fbp::{fbp_reconstruct, Window};
use crate::geometry::Geometry;
use crate::image::{Image, SinogramKind};
use crate::metrics::rmse;
use crate::projector::Projector;
use crate::sim::MeasurementSet;
use crate::solvers::{
    kappa_weights, pwls_ep_reconstruct, pwls_ultra_reconstruct, EpParams, OsLalmConfig, QuadraticProblem, UltraParams,
};
use crate::spultra::spultra_reconstruct;

#[derive(Debug, Clone, PartialEq)]
pub struct EpSettings {
    pub beta: f64,
    pub delta_hu: f64,
    /// Use `κ ≡ 1` instead of the data-dependent weights.
    pub unit_kappa: bool,
    pub solver: OsLalmConfig,
}

impl Default for EpSettings {
    fn default() -> Self {
        Self {
            beta: 32768.0,
            delta_hu: 20.0,
            unit_kappa: false,
            solver: OsLalmConfig::default(),
        }
    }
}

/// The unsupervised half of a super layer.
#[derive(Debug, Clone, PartialEq)]
pub enum IterativeModule {
    None,
    PwlsEp(EpSettings),
    PwlsUltra(UltraParams),
    Spultra { params: UltraParams, n_outer: usize },
}

impl IterativeModule {
    pub fn id(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::PwlsEp(_) => "pwls-ep",
            Self::PwlsUltra(_) => "pwls-ultra",
            Self::Spultra { .. } => "spultra",
        }
    }

    fn x_max(&self) -> f64 {
        match self {
            Self::None => f64::INFINITY,
            Self::PwlsEp(s) => s.solver.x_max,
            Self::PwlsUltra(p) | Self::Spultra { params: p, .. } => p.inner.x_max,
        }
    }

    /// Runs the module on one measurement, starting from `x`.
    pub fn run<P: Projector + ?Sized>(&self, proj: &P, meas: &MeasurementSet, x: &Image) -> Result<Image> {
        check_len("image", proj.image_len(), x.len())?;
        check_len("measurements", proj.n_rays(), meas.len())?;
        let mut init = x.clone();
        let x_max = self.x_max();
        init.data.iter_mut().for_each(|v| *v = v.clamp(0.0, x_max));
        let problem = || QuadraticProblem::new(proj, meas.weights.clone(), meas.post_log.clone());
        let out = match self {
            Self::None => return Ok(x.clone()),
            Self::PwlsEp(s) => {
                let kappa = if s.unit_kappa {
                    vec![1.0; x.len()]
                } else {
                    kappa_weights(proj, &meas.weights)?
                };
                let ep = EpParams {
                    beta: s.beta,
                    delta_hu: s.delta_hu,
                    mu_water: x.mu_water,
                    kappa,
                };
                pwls_ep_reconstruct(proj, &problem()?, &init, &ep, &s.solver)?
            }
            Self::PwlsUltra(p) => pwls_ultra_reconstruct(proj, &problem()?, &init, p)?.image,
            Self::Spultra { params, n_outer } => {
                let outcome = spultra_reconstruct(proj, meas, &init, params, *n_outer)?;
                if let Some(e) = outcome.error {
                    return Err(e);
                }
                outcome.image
            }
        };
        Ok(out.with_mu_water(x.mu_water))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperLayer {
    pub denoiser: ConvDenoiser,
    /// Seed the denoiser was trained from.
    pub seed: u64,
    pub module: IterativeModule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperModel {
    pub layers: Vec<SuperLayer>,
}

impl SuperModel {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperConfig {
    pub n_layers: usize,
    pub module: IterativeModule,
    pub train: TrainConfig,
    pub window: Window,
    pub seed: u64,
}

impl SuperConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::InvalidParameter("a SUPER model needs at least one layer".into()));
        }
        self.train.validate()
    }

    /// Denoiser seed of layer `layer` (zero-based).
    pub fn layer_seed(&self, layer: usize) -> u64 {
        self.seed
            .wrapping_add((layer as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

/// FBP from the post-log data, carrying `mu_water` over for HU conversions.
pub fn fbp_initial(geom: &Geometry, meas: &MeasurementSet, window: Window, mu_water: f64) -> Result<Image> {
    let sino = meas.sinogram(SinogramKind::LineIntegral);
    Ok(fbp_reconstruct(&sino, geom, window)?.image.with_mu_water(mu_water))
}

#[derive(Debug, Clone)]
pub struct SuperTraining {
    /// Layers trained so far; complete unless `error` is set.
    pub model: SuperModel,
    /// Mean training RMSE (HU) of the FBP inputs, then after every layer.
    pub train_rmse: Vec<f64>,
    pub error: Option<Error>,
}

/// Greedy layer-by-layer training. Layer `ℓ` is fitted on the outputs of
/// layers `< ℓ`, which stay frozen.
pub fn train_super<P: Projector + Sync + ?Sized>(
    geom: &Geometry,
    proj: &P,
    pairs: &[(MeasurementSet, Image)],
    cfg: &SuperConfig,
) -> Result<SuperTraining> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("SUPER training needs at least one pair".into()));
    }
    for (m, r) in pairs {
        check_len("measurements", proj.n_rays(), m.len())?;
        r.check_geometry(geom)?;
    }
    let mut current = pairs
        .par_iter()
        .map(|(m, r)| fbp_initial(geom, m, cfg.window, r.mu_water))
        .collect::<Result<Vec<_>>>()?;
    let mean_rmse = |images: &[Image]| -> Result<f64> {
        let errs = images
            .iter()
            .zip(pairs)
            .map(|(x, (_, r))| rmse(x, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(errs.iter().sum::<f64>() / errs.len() as f64)
    };
    let mut out = SuperTraining {
        model: SuperModel { layers: Vec::new() },
        train_rmse: vec![mean_rmse(&current)?],
        error: None,
    };
    for layer in 0..cfg.n_layers {
        let step = || -> Result<(SuperLayer, Vec<Image>)> {
            let seed = cfg.layer_seed(layer);
            let training: Vec<(Image, Image)> = current
                .iter()
                .cloned()
                .zip(pairs.iter().map(|(_, r)| r.clone()))
                .collect();
            let mut denoiser = ConvDenoiser::zeros();
            denoiser.train(
                &training,
                &TrainConfig {
                    seed,
                    ..cfg.train.clone()
                },
            )?;
            let next = current
                .par_iter()
                .zip(pairs)
                .map(|(x, (m, _))| cfg.module.run(proj, m, &denoiser.apply(x)?))
                .collect::<Result<Vec<_>>>()?;
            let layer = SuperLayer {
                denoiser,
                seed,
                module: cfg.module.clone(),
            };
            Ok((layer, next))
        };
        match step().and_then(|(l, next)| Ok((l, mean_rmse(&next)?, next))) {
            Ok((l, r, next)) => {
                out.model.layers.push(l);
                out.train_rmse.push(r);
                current = next;
            }
            Err(e) => {
                out.error = Some(Error::Layer {
                    layer,
                    source: Box::new(e),
                });
                break;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SuperApplication {
    pub image: Image,
    /// Output of every layer; the last equals `image`.
    pub snapshots: Vec<Image>,
}

/// Passes `init` through every layer of `model`.
pub fn apply_super<P: Projector + ?Sized>(
    model: &SuperModel,
    proj: &P,
    meas: &MeasurementSet,
    init: &Image,
) -> Result<SuperApplication> {
    if model.layers.is_empty() {
        return Err(Error::InvalidParameter("SUPER model has no layers".into()));
    }
    check_len("initial image", proj.image_len(), init.len())?;
    check_len("measurements", proj.n_rays(), meas.len())?;
    let mut x = init.clone();
    let mut snapshots = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let wrap = |e| Error::Layer {
            layer: i,
            source: Box::new(e),
        };
        let denoised = layer.denoiser.apply(&x).map_err(wrap)?;
        x = layer.module.run(proj, meas, &denoised).map_err(wrap)?;
        snapshots.push(x.clone());
    }
    Ok(SuperApplication { image: x, snapshots })
}
