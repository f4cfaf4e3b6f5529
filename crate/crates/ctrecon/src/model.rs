//! SUPER model directories.
//!
//! A model directory holds `model.toml` (layer count, module ids, seeds,
//! training settings), and per layer `layer_NN.weights` with the network
//! tensors, `layer_NN.toml` with the iterative module snapshot and, for
//! ULTRA modules, `layer_NN.union`.
//!
//! Weight files start with an 8-byte magic and `u32` version and tensor
//! count. Each tensor follows as a `u32` name length, UTF-8 name, `u32` rank,
//! `u32` dimensions and an `f32` payload, all little endian.

use std::fs;
use std::path::Path;

use ctrecon_core::denoiser::{ConvDenoiser, SupervisedModule, Tensor};
use ctrecon_core::solvers::{OsLalmConfig, UltraParams};
use ctrecon_core::super_model::{EpSettings, IterativeModule, SuperLayer, SuperModel};
use serde::{Deserialize, Serialize};

use crate::config::{DenoiserSpec, ModuleId, WindowSpec};
use crate::error::{CliError, Result};
use crate::union::{read_union, write_union};

pub const WEIGHTS_MAGIC: [u8; 8] = *b"CTRWGHTS";
pub const WEIGHTS_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const MODEL_MANIFEST: &str = "model.toml";

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("unexpected end of file at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4-byte slice")) as usize)
    }
}

pub fn decode_tensors(bytes: &[u8]) -> std::result::Result<Vec<Tensor>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != WEIGHTS_MAGIC {
        return Err("not a weights file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION as usize {
        return Err(format!("unsupported weights version {version}"));
    }
    let count = r.u32()?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| "tensor name is not UTF-8".to_string())?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or("tensor size overflows")?;
        let data = r
            .take(n.checked_mul(4).ok_or("tensor size overflows")?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(tensors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSnapshot {
    pub alpha: f64,
    pub n_subsets: usize,
    pub n_iters: usize,
    /// Upper box bound in mm⁻¹.
    pub x_max: f64,
}

impl From<OsLalmConfig> for SolverSnapshot {
    fn from(c: OsLalmConfig) -> Self {
        Self {
            alpha: c.alpha,
            n_subsets: c.n_subsets,
            n_iters: c.n_iters,
            x_max: c.x_max,
        }
    }
}

impl From<&SolverSnapshot> for OsLalmConfig {
    fn from(s: &SolverSnapshot) -> Self {
        Self {
            alpha: s.alpha,
            n_subsets: s.n_subsets,
            n_iters: s.n_iters,
            x_max: s.x_max,
        }
    }
}

/// Iterative module of one layer, with every value in library units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSnapshot {
    pub module: ModuleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_hu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_kappa: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_outer: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub union: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSnapshot>,
}

impl LayerSnapshot {
    fn empty(module: ModuleId) -> Self {
        Self {
            module,
            beta: None,
            delta_hu: None,
            unit_kappa: None,
            gamma: None,
            stride: None,
            outer_iters: None,
            n_outer: None,
            tau: None,
            union: None,
            solver: None,
        }
    }

    fn ultra(module: ModuleId, p: &UltraParams, union_file: &str) -> Self {
        Self {
            beta: Some(p.beta),
            gamma: Some(p.gamma),
            stride: Some(p.stride),
            outer_iters: Some(p.outer_iters),
            tau: p.tau.clone(),
            union: Some(union_file.to_string()),
            solver: Some(p.inner.into()),
            ..Self::empty(module)
        }
    }

    fn of(module: &IterativeModule, union_file: &str) -> Self {
        match module {
            IterativeModule::None => Self::empty(ModuleId::None),
            IterativeModule::PwlsEp(s) => Self {
                beta: Some(s.beta),
                delta_hu: Some(s.delta_hu),
                unit_kappa: Some(s.unit_kappa),
                solver: Some(s.solver.into()),
                ..Self::empty(ModuleId::PwlsEp)
            },
            IterativeModule::PwlsUltra(p) => Self::ultra(ModuleId::PwlsUltra, p, union_file),
            IterativeModule::Spultra { params, n_outer } => Self {
                n_outer: Some(*n_outer),
                ..Self::ultra(ModuleId::Spultra, params, union_file)
            },
        }
    }

    fn to_module(&self, dir: &Path, file: &str) -> Result<IterativeModule> {
        let missing = |field: &str| CliError::format(dir.join(file), format!("missing field `{field}`"));
        let solver = || -> Result<OsLalmConfig> { Ok(self.solver.as_ref().ok_or_else(|| missing("solver"))?.into()) };
        let ultra = || -> Result<UltraParams> {
            let union_file = self.union.as_ref().ok_or_else(|| missing("union"))?;
            Ok(UltraParams {
                beta: self.beta.ok_or_else(|| missing("beta"))?,
                gamma: self.gamma.ok_or_else(|| missing("gamma"))?,
                tau: self.tau.clone(),
                union: read_union(&dir.join(union_file))?,
                stride: self.stride.ok_or_else(|| missing("stride"))?,
                outer_iters: self.outer_iters.ok_or_else(|| missing("outer_iters"))?,
                inner: solver()?,
            })
        };
        Ok(match self.module {
            ModuleId::None => IterativeModule::None,
            ModuleId::PwlsEp => IterativeModule::PwlsEp(EpSettings {
                beta: self.beta.ok_or_else(|| missing("beta"))?,
                delta_hu: self.delta_hu.ok_or_else(|| missing("delta_hu"))?,
                unit_kappa: self.unit_kappa.unwrap_or(false),
                solver: solver()?,
            }),
            ModuleId::PwlsUltra => IterativeModule::PwlsUltra(ultra()?),
            ModuleId::Spultra => IterativeModule::Spultra {
                params: ultra()?,
                n_outer: self.n_outer.ok_or_else(|| missing("n_outer"))?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub index: usize,
    pub module: ModuleId,
    pub seed: u64,
    pub weights: String,
    pub config: String,
}

/// Contents of `model.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub n_layers: usize,
    pub seed: u64,
    pub window: WindowSpec,
    /// Mean training RMSE in HU: FBP, then after every layer.
    #[serde(default)]
    pub train_rmse: Vec<f64>,
    pub train: DenoiserSpec,
    pub layers: Vec<LayerEntry>,
}

/// Settings recorded alongside the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInfo {
    pub seed: u64,
    pub window: WindowSpec,
    pub train_rmse: Vec<f64>,
    pub train: DenoiserSpec,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_model(dir: &Path, model: &SuperModel, info: &ModelInfo) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut layers = Vec::with_capacity(model.n_layers());
    for (i, layer) in model.layers.iter().enumerate() {
        let entry = LayerEntry {
            index: i,
            module: LayerSnapshot::of(&layer.module, "").module,
            seed: layer.seed,
            weights: format!("layer_{i:02}.weights"),
            config: format!("layer_{i:02}.toml"),
        };
        write_file(&dir.join(&entry.weights), encode_tensors(&layer.denoiser.tensors()))?;
        let union_file = format!("layer_{i:02}.union");
        let snapshot = LayerSnapshot::of(&layer.module, &union_file);
        if let IterativeModule::PwlsUltra(p) | IterativeModule::Spultra { params: p, .. } = &layer.module {
            write_union(&dir.join(&union_file), &p.union)?;
        }
        let text = toml::to_string(&snapshot).map_err(|e| CliError::format(dir, e.to_string()))?;
        write_file(&dir.join(&entry.config), text)?;
        layers.push(entry);
    }
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        n_layers: model.n_layers(),
        seed: info.seed,
        window: info.window,
        train_rmse: info.train_rmse.clone(),
        train: info.train.clone(),
        layers,
    };
    let text = toml::to_string(&manifest).map_err(|e| CliError::format(dir, e.to_string()))?;
    write_file(&dir.join(MODEL_MANIFEST), text)
}

pub fn read_model(dir: &Path) -> Result<(SuperModel, ModelInfo)> {
    let path = dir.join(MODEL_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest: ModelManifest = toml::from_str(&text).map_err(|e| CliError::format(&path, e.to_string()))?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(CliError::format(
            &path,
            format!("unsupported model version {}", manifest.format_version),
        ));
    }
    if manifest.layers.len() != manifest.n_layers || manifest.n_layers == 0 {
        return Err(CliError::format(&path, "layer list does not match n_layers"));
    }
    let mut layers = Vec::with_capacity(manifest.n_layers);
    for (i, entry) in manifest.layers.iter().enumerate() {
        if entry.index != i {
            return Err(CliError::format(
                &path,
                format!("layer {i} is listed with index {}", entry.index),
            ));
        }
        let wpath = dir.join(&entry.weights);
        let bytes = fs::read(&wpath).map_err(|e| CliError::io(&wpath, e))?;
        let tensors = decode_tensors(&bytes).map_err(|m| CliError::format(&wpath, m))?;
        let denoiser = ConvDenoiser::from_tensors(&tensors).map_err(|e| CliError::format(&wpath, e.to_string()))?;
        let cpath = dir.join(&entry.config);
        let text = fs::read_to_string(&cpath).map_err(|e| CliError::io(&cpath, e))?;
        let snapshot: LayerSnapshot = toml::from_str(&text).map_err(|e| CliError::format(&cpath, e.to_string()))?;
        if snapshot.module != entry.module {
            return Err(CliError::format(&cpath, "module id disagrees with the model manifest"));
        }
        layers.push(SuperLayer {
            denoiser,
            seed: entry.seed,
            module: snapshot.to_module(dir, &entry.config)?,
        });
    }
    let info = ModelInfo {
        seed: manifest.seed,
        window: manifest.window,
        train_rmse: manifest.train_rmse,
        train: manifest.train,
    };
    Ok((SuperModel { layers }, info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctrecon_core::sparsity::TransformUnion;

    #[test]
    fn tensors_round_trip() {
        let mut net = ConvDenoiser::random(0.01, 3);
        net.quantize();
        let back = decode_tensors(&encode_tensors(&net.tensors())).unwrap();
        assert_eq!(ConvDenoiser::from_tensors(&back).unwrap(), net);
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let bytes = encode_tensors(&ConvDenoiser::zeros().tensors());
        assert!(decode_tensors(&bytes[..bytes.len() - 2]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_tensors(&extra).is_err());
    }

    #[test]
    fn model_directory_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut net = ConvDenoiser::random(0.01, 9);
        net.quantize();
        let ultra = UltraParams {
            beta: 1e4,
            gamma: 0.002,
            tau: None,
            union: TransformUnion::dct(4, 2),
            stride: 2,
            outer_iters: 1,
            inner: OsLalmConfig::default(),
        };
        let model = SuperModel {
            layers: vec![
                SuperLayer {
                    denoiser: net.clone(),
                    seed: 1,
                    module: IterativeModule::PwlsEp(EpSettings::default()),
                },
                SuperLayer {
                    denoiser: net.clone(),
                    seed: 2,
                    module: IterativeModule::PwlsUltra(ultra.clone()),
                },
                SuperLayer {
                    denoiser: net,
                    seed: 3,
                    module: IterativeModule::Spultra {
                        params: ultra,
                        n_outer: 2,
                    },
                },
            ],
        };
        let info = ModelInfo {
            seed: 7,
            window: WindowSpec::RamLak,
            train_rmse: vec![100.0, 50.0, 40.0, 30.0],
            train: DenoiserSpec::default(),
        };
        write_model(dir.path(), &model, &info).unwrap();
        let (back, back_info) = read_model(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_info, info);
        assert!(dir.path().join("layer_01.union").exists());
        assert!(!dir.path().join("layer_00.union").exists());
    }
}
