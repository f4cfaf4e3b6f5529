//! The `ctrecon` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ctrecon_core::fbp::fbp_reconstruct;
use ctrecon_core::learn::{learn_union, training_patches};
use ctrecon_core::metrics::{rmse, Metrics};
use ctrecon_core::phantom::{random_phantom, shepp_logan};
use ctrecon_core::sim::MeasurementSet;
use ctrecon_core::solvers::{
    ep_penalty, kappa_weights, pwls_ep_reconstruct_observed, pwls_ultra_reconstruct_observed, EpParams,
    QuadraticProblem,
};
use ctrecon_core::sparsity::{code_patches, extract_patches, pixel_cluster_map, PatchConfig, TransformUnion};
use ctrecon_core::spultra::spultra_reconstruct_observed;
use ctrecon_core::super_model::{apply_super, fbp_initial, train_super, SuperModel};
use ctrecon_core::{Geometry, Image, Projector, SiddonProjector, Sinogram, SinogramKind};

use crate::config::{ExperimentConfig, Method, ModuleId, PhantomKind};
use crate::error::{CliError, Result, EXIT_CONFIG, EXIT_OK};
use crate::format::{
    read_image, read_measurement, write_image, write_image_as, write_measurement, write_sinogram, RasterKind,
    StoredMeasurement,
};
use crate::manifest::{digest_tree, file_sha256, sha256_hex, FileDigest, RunManifest};
use crate::model::{read_model, write_model, ModelInfo};
use crate::png::{check_window, window_to_gray, write_gray, write_windowed, DEFAULT_WINDOW};
use crate::report::{write_iteration_log, EvalReport, ImageScore, IterationRecord};
use crate::union::{read_union, write_union};

#[derive(Debug, Parser)]
#[command(
    name = "ctrecon",
    version,
    about = "Low-dose CT simulation, reconstruction and SUPER training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// PNG display window in HU + 1000 units.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub window: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a low-dose measurement of an image or configured phantom.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Ground-truth image; defaults to the configured phantom.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Filtered back-projection of a measurement.
    Fbp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        meas: PathBuf,
    },
    /// Learn a union of sparsifying transforms from images.
    LearnUltra {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        images: Vec<PathBuf>,
    },
    /// Model-based reconstruction of one measurement.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        meas: PathBuf,
        /// Initial image; defaults to FBP.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        union: Option<PathBuf>,
        /// Ground truth for the RMSE column of the iteration log.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Greedy layer-wise SUPER training.
    TrainSuper {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        meas: Vec<PathBuf>,
        /// Ground truths, in the same order as the measurements.
        #[arg(long, num_args = 1.., required = true)]
        reference: Vec<PathBuf>,
        #[arg(long)]
        union: Option<PathBuf>,
    },
    /// Run a trained SUPER model on one measurement.
    ApplySuper {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        meas: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// RMSE, PSNR and SSIM of estimates against a reference.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        estimate: Vec<PathBuf>,
    },
    /// Pixel-level majority-vote cluster maps of an image under a union.
    ExportClusters {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        union: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Self::Simulate { common, .. }
            | Self::Fbp { common, .. }
            | Self::LearnUltra { common, .. }
            | Self::Reconstruct { common, .. }
            | Self::TrainSuper { common, .. }
            | Self::ApplySuper { common, .. }
            | Self::Eval { common, .. }
            | Self::ExportClusters { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Self::Simulate { .. } => "simulate",
            Self::Fbp { .. } => "fbp",
            Self::LearnUltra { .. } => "learn-ultra",
            Self::Reconstruct { .. } => "reconstruct",
            Self::TrainSuper { .. } => "train-super",
            Self::ApplySuper { .. } => "apply-super",
            Self::Eval { .. } => "eval",
            Self::ExportClusters { .. } => "export-clusters",
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let args = recorded_args(&argv[1.min(argv.len())..]);
    match execute(&cli.command, args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Arguments with the output directory removed, so a run can be repeated
/// into a fresh directory.
fn recorded_args(args: &[OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args {
        let a = a.to_string_lossy().into_owned();
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a);
        }
    }
    out
}

struct Run {
    cfg: ExperimentConfig,
    config_sha256: String,
    out: PathBuf,
    window: (f64, f64),
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
}

impl Run {
    fn start(common: &Common) -> Result<Self> {
        let (cfg, bytes) = match &common.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => (ExperimentConfig::default(), Vec::new()),
        };
        let window = match common.window.as_deref() {
            Some(&[lo, hi]) => (lo, hi),
            Some(_) => return Err(CliError::Config("--window takes two values".into())),
            None => DEFAULT_WINDOW,
        };
        check_window(window.0, window.1)?;
        fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
        let mut run = Self {
            cfg,
            config_sha256: sha256_hex(&bytes),
            out: common.out.clone(),
            window,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
        };
        if let Some(p) = &common.config {
            run.input(p)?;
        }
        Ok(run)
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn finish(self, subcommand: &str, args: Vec<String>) -> Result<()> {
        RunManifest {
            tool: "ctrecon".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: ctrecon_core::VERSION.into(),
            subcommand: subcommand.into(),
            args,
            config_sha256: self.config_sha256,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: digest_tree(&self.out)?,
        }
        .write(&self.out)
    }

    fn measurement(&mut self, path: &Path) -> Result<StoredMeasurement> {
        self.input(path)?;
        let stored = read_measurement(path)?;
        self.seeds.insert("protocol".into(), stored.meas.protocol.seed);
        Ok(stored)
    }

    fn image(&mut self, path: &Path) -> Result<Image> {
        self.input(path)?;
        read_image(path)
    }

    fn union(&mut self, flag: Option<&Path>) -> Result<TransformUnion> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| self.cfg.paths.union.clone())
            .ok_or_else(|| CliError::Config("a transform union is required (--union or paths.union)".into()))?;
        self.input(&path)?;
        read_union(&path)
    }

    fn mu_water(&self, stored: &StoredMeasurement) -> f64 {
        stored.mu_water.unwrap_or(self.cfg.mu_water)
    }

    fn fbp(&self, stored: &StoredMeasurement, window: ctrecon_core::fbp::Window) -> Result<Image> {
        Ok(fbp_initial(
            &stored.geometry,
            &stored.meas,
            window,
            self.mu_water(stored),
        )?)
    }
}

fn execute(command: &Command, args: Vec<String>) -> Result<()> {
    let mut run = Run::start(command.common())?;
    match command {
        Command::Simulate { image, .. } => simulate(&mut run, image.as_deref())?,
        Command::Fbp { meas, .. } => fbp(&mut run, meas)?,
        Command::LearnUltra { images, .. } => learn(&mut run, images)?,
        Command::Reconstruct {
            method,
            meas,
            init,
            union,
            reference,
            ..
        } => reconstruct(
            &mut run,
            *method,
            meas,
            init.as_deref(),
            union.as_deref(),
            reference.as_deref(),
        )?,
        Command::TrainSuper {
            meas, reference, union, ..
        } => train(&mut run, meas, reference, union.as_deref())?,
        Command::ApplySuper {
            model,
            meas,
            init,
            reference,
            ..
        } => apply(&mut run, model.as_deref(), meas, init.as_deref(), reference.as_deref())?,
        Command::Eval {
            reference, estimate, ..
        } => eval(&mut run, reference.as_deref(), estimate)?,
        Command::ExportClusters { image, union, .. } => clusters(&mut run, image, union.as_deref())?,
    }
    run.finish(command.name(), args)
}

fn check_image_geometry(image: &Image, geom: &Geometry) -> Result<()> {
    image.check_geometry(geom).map_err(|_| {
        CliError::Config(format!(
            "image is {}×{}, geometry expects {}×{}",
            image.rows, image.cols, geom.rows, geom.cols
        ))
    })
}

fn simulate(run: &mut Run, image: Option<&Path>) -> Result<()> {
    let geom = run.cfg.geometry()?;
    let protocol = run.cfg.protocol()?;
    run.seeds.insert("protocol".into(), protocol.seed);
    let mut truth = match image {
        Some(p) => run.image(p)?,
        None => {
            let spec = run
                .cfg
                .phantom
                .clone()
                .ok_or_else(|| CliError::Config("simulate needs --image or a [phantom] table".into()))?;
            let mu = run.cfg.mu_water;
            match spec.kind {
                PhantomKind::SheppLogan => shepp_logan(geom.rows, geom.cols, mu)?,
                PhantomKind::Random => {
                    run.seeds.insert("phantom".into(), spec.seed);
                    random_phantom(geom.rows, geom.cols, mu, spec.seed)
                }
            }
        }
    };
    check_image_geometry(&truth, &geom)?;
    truth.data = crate::format::quantized(&truth.data);
    let proj = SiddonProjector::new(&geom);
    let li = Sinogram::from_vec(&geom, SinogramKind::LineIntegral, proj.forward(&truth.data))?;
    let meas = MeasurementSet::simulate(&li, protocol)?;
    if !meas.flagged.is_empty() {
        eprintln!(
            "warning: {} rays had their counts floored before the log",
            meas.flagged.len()
        );
    }
    write_image(&run.path("truth.ctr"), &truth, Some(&geom))?;
    write_windowed(&run.path("truth.png"), &truth, run.window)?;
    write_sinogram(&run.path("line_integrals.ctr"), &li, &geom)?;
    write_measurement(&run.path("measurement.ctr"), &meas, &geom, Some(truth.mu_water))
}

fn fbp(run: &mut Run, meas: &Path) -> Result<()> {
    let stored = run.measurement(meas)?;
    let sino = stored.meas.sinogram(SinogramKind::LineIntegral);
    let result = fbp_reconstruct(&sino, &stored.geometry, run.cfg.fbp.window.into())?;
    if result.few_views {
        eprintln!("warning: only {} views; FBP is unreliable", stored.geometry.n_views);
    }
    let image = result.image.with_mu_water(run.mu_water(&stored));
    write_image(&run.path("fbp.ctr"), &image, Some(&stored.geometry))?;
    write_windowed(&run.path("fbp.png"), &image, run.window)
}

fn learn(run: &mut Run, paths: &[PathBuf]) -> Result<()> {
    let images = paths.iter().map(|p| run.image(p)).collect::<Result<Vec<_>>>()?;
    let (lo, hi) = images
        .iter()
        .flat_map(|i| i.data.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let cfg = run.cfg.learn.to_config(hi - lo);
    run.seeds.insert("learn".into(), cfg.seed);
    let patches = training_patches(&images, &cfg.patch)?;
    let state = learn_union(&patches, &cfg)?;
    write_union(&run.path("union.ctu"), &state.union)?;
    let log: Vec<IterationRecord> = state
        .objective
        .iter()
        .enumerate()
        .map(|(i, &objective)| IterationRecord {
            iteration: i,
            objective,
            rmse_hu: None,
        })
        .collect();
    write_iteration_log(&run.path("learn_objective.csv"), &log)
}

fn reconstruct(
    run: &mut Run,
    method: Option<Method>,
    meas: &Path,
    init: Option<&Path>,
    union: Option<&Path>,
    reference: Option<&Path>,
) -> Result<()> {
    let method = method
        .or(run.cfg.method)
        .ok_or_else(|| CliError::Config("no method given (--method or top-level `method`)".into()))?;
    let stored = run.measurement(meas)?;
    let geom = &stored.geometry;
    let mu_water = run.mu_water(&stored);
    let solver = run.cfg.solver.to_config(mu_water);
    let mut x0 = match init {
        Some(p) => run.image(p)?.with_mu_water(mu_water),
        None => run.fbp(&stored, run.cfg.fbp.window.into())?,
    };
    check_image_geometry(&x0, geom)?;
    x0.data.iter_mut().for_each(|v| *v = v.clamp(0.0, solver.x_max));
    let reference = reference
        .map(Path::to_path_buf)
        .or_else(|| run.cfg.paths.reference.clone())
        .map(|p| run.image(&p))
        .transpose()?;
    if let Some(r) = &reference {
        x0.same_shape(r)?;
    }
    let score = |x: &Image| reference.as_ref().map(|r| rmse(x, r)).transpose();
    let proj = SiddonProjector::new(geom);
    let problem = || QuadraticProblem::new(&proj, stored.meas.weights.clone(), stored.meas.post_log.clone());
    let mut log = Vec::new();
    let image = match method {
        Method::PwlsEp => {
            let problem = problem()?;
            let kappa = if run.cfg.ep.unit_kappa {
                vec![1.0; x0.len()]
            } else {
                kappa_weights(&proj, &stored.meas.weights)?
            };
            let ep = EpParams {
                beta: run.cfg.ep.beta,
                delta_hu: run.cfg.ep.delta_hu,
                mu_water,
                kappa,
            };
            let objective = |x: &Image| problem.data_term(&proj, &x.data) + ep_penalty(x, &ep);
            log.push((objective(&x0), score(&x0)?));
            let mut failure = None;
            let image = pwls_ep_reconstruct_observed(&proj, &problem, &x0, &ep, &solver, |_, x| match score(x) {
                Ok(r) => log.push((objective(x), r)),
                Err(e) => {
                    failure.get_or_insert(e);
                }
            })?;
            if let Some(e) = failure {
                return Err(e.into());
            }
            image
        }
        Method::PwlsUltra => {
            let union = run.union(union)?;
            let params = run.cfg.ultra.to_params(union, solver, mu_water);
            let mut scores = vec![score(&x0)?];
            let outcome = pwls_ultra_reconstruct_observed(&proj, &problem()?, &x0, &params, |_, x| {
                scores.push(score(x).ok().flatten())
            })?;
            log.push((outcome.objective[0], scores[0]));
            for (n, s) in scores.iter().skip(1).enumerate() {
                log.push((outcome.objective[2 * n + 1], *s));
            }
            outcome.image
        }
        Method::Spultra => {
            let union = run.union(union)?;
            let params = run.cfg.ultra.to_params(union, solver, mu_water);
            let mut scores = vec![score(&x0)?];
            let outcome =
                spultra_reconstruct_observed(&proj, &stored.meas, &x0, &params, run.cfg.spultra.n_outer, |_, x, _| {
                    scores.push(score(x).ok().flatten())
                })?;
            if let Some(e) = outcome.error {
                return Err(e.into());
            }
            log.extend(outcome.objective.iter().zip(&scores).map(|(&g, &s)| (g, s)));
            outcome.image
        }
    };
    let records: Vec<IterationRecord> = log
        .into_iter()
        .enumerate()
        .map(|(iteration, (objective, rmse_hu))| IterationRecord {
            iteration,
            objective,
            rmse_hu,
        })
        .collect();
    write_iteration_log(&run.path("iterations.csv"), &records)?;
    let image = image.with_mu_water(mu_water);
    write_image(&run.path("recon.ctr"), &image, Some(geom))?;
    write_windowed(&run.path("recon.png"), &image, run.window)
}

fn needs_union(module: ModuleId) -> bool {
    matches!(module, ModuleId::PwlsUltra | ModuleId::Spultra)
}

fn train(run: &mut Run, meas: &[PathBuf], references: &[PathBuf], union: Option<&Path>) -> Result<()> {
    if meas.len() != references.len() {
        return Err(CliError::Config(format!(
            "{} measurements but {} references",
            meas.len(),
            references.len()
        )));
    }
    let union = if needs_union(run.cfg.super_.module) {
        Some(run.union(union)?)
    } else {
        None
    };
    let scfg = run.cfg.super_config(union.as_ref())?;
    let mut pairs = Vec::with_capacity(meas.len());
    let mut geom: Option<Geometry> = None;
    for (m, r) in meas.iter().zip(references) {
        let stored = run.measurement(m)?;
        let reference = run.image(r)?;
        match &geom {
            Some(g) if *g != stored.geometry => {
                return Err(CliError::Config(format!(
                    "{} was acquired with a different geometry",
                    m.display()
                )))
            }
            Some(_) => {}
            None => geom = Some(stored.geometry.clone()),
        }
        check_image_geometry(&reference, &stored.geometry)?;
        pairs.push((stored.meas, reference));
    }
    let geom = geom.expect("at least one pair");
    run.seeds.remove("protocol");
    run.seeds.insert("super".into(), scfg.seed);
    for l in 0..scfg.n_layers {
        run.seeds.insert(format!("layer_{l:02}"), scfg.layer_seed(l));
    }
    let proj = SiddonProjector::new(&geom);
    let trained = train_super(&geom, &proj, &pairs, &scfg)?;
    let info = ModelInfo {
        seed: scfg.seed,
        window: run.cfg.super_.window,
        train_rmse: trained.train_rmse.clone(),
        train: run.cfg.denoiser.clone(),
    };
    if !trained.model.layers.is_empty() {
        write_model(&run.path("model"), &trained.model, &info)?;
    }
    let mut w = csv::Writer::from_path(run.path("train_rmse.csv"))?;
    w.write_record(["layer", "rmse_hu"])?;
    for (l, r) in trained.train_rmse.iter().enumerate() {
        w.write_record([l.to_string(), r.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(run.path("train_rmse.csv"), e))?;
    match trained.error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn apply(
    run: &mut Run,
    model: Option<&Path>,
    meas: &Path,
    init: Option<&Path>,
    reference: Option<&Path>,
) -> Result<()> {
    let dir = model
        .map(Path::to_path_buf)
        .or_else(|| run.cfg.paths.model.clone())
        .ok_or_else(|| CliError::Config("a model directory is required (--model or paths.model)".into()))?;
    let model_manifest = dir.join(crate::model::MODEL_MANIFEST);
    run.input(&model_manifest)?;
    let (model, info): (SuperModel, ModelInfo) = read_model(&dir)?;
    for (i, layer) in model.layers.iter().enumerate() {
        run.seeds.insert(format!("layer_{i:02}"), layer.seed);
    }
    let stored = run.measurement(meas)?;
    let mu_water = run.mu_water(&stored);
    let x0 = match init {
        Some(p) => run.image(p)?.with_mu_water(mu_water),
        None => run.fbp(&stored, info.window.into())?,
    };
    check_image_geometry(&x0, &stored.geometry)?;
    let proj = SiddonProjector::new(&stored.geometry);
    let out = apply_super(&model, &proj, &stored.meas, &x0)?;
    for (i, snap) in out.snapshots.iter().enumerate() {
        write_image(&run.path(&format!("layer_{i:02}.ctr")), snap, Some(&stored.geometry))?;
    }
    write_image(&run.path("super.ctr"), &out.image, Some(&stored.geometry))?;
    write_windowed(&run.path("super.png"), &out.image, run.window)?;
    let reference = reference
        .map(Path::to_path_buf)
        .or_else(|| run.cfg.paths.reference.clone())
        .map(|p| run.image(&p))
        .transpose()?;
    if let Some(r) = reference {
        let mut w = csv::Writer::from_path(run.path("layers.csv"))?;
        w.write_record(["layer", "rmse_hu"])?;
        w.write_record(["0".to_string(), rmse(&x0, &r)?.to_string()])?;
        for (i, snap) in out.snapshots.iter().enumerate() {
            w.write_record([(i + 1).to_string(), rmse(snap, &r)?.to_string()])?;
        }
        w.flush().map_err(|e| CliError::io(run.path("layers.csv"), e))?;
    }
    Ok(())
}

fn eval(run: &mut Run, reference: Option<&Path>, estimates: &[PathBuf]) -> Result<()> {
    let ref_path = reference
        .map(Path::to_path_buf)
        .or_else(|| run.cfg.paths.reference.clone())
        .ok_or_else(|| CliError::Config("a reference image is required (--reference or paths.reference)".into()))?;
    let reference = run.image(&ref_path)?;
    let mut scores = Vec::with_capacity(estimates.len());
    for p in estimates {
        let est = run.image(p)?;
        scores.push(ImageScore::new(
            p.display().to_string(),
            Metrics::evaluate(&est, &reference)?,
        ));
    }
    EvalReport::new(ref_path.display().to_string(), scores)?.write(&run.out)
}

fn clusters(run: &mut Run, image: &Path, union: Option<&Path>) -> Result<()> {
    let image = run.image(image)?;
    let union = run.union(union)?;
    let cfg = PatchConfig::new(union.side, run.cfg.ultra.stride);
    let gamma = run.cfg.ultra.gamma(image.mu_water);
    let assignment = code_patches(&extract_patches(&image, &cfg)?, &union, gamma)?;
    let k = union.k();
    let map = pixel_cluster_map(&assignment.labels, k, &cfg, image.rows, image.cols)?;
    let (rows, cols) = (image.rows, image.cols);
    let labels = Image::from_vec(rows, cols, map.iter().map(|l| l.map_or(-1.0, |c| c as f64)).collect())?;
    write_image_as(
        &run.path("labels.ctr"),
        &labels.with_mu_water(image.mu_water),
        None,
        RasterKind::LabelMap,
    )?;
    let gray: Vec<u8> = map.iter().map(|l| l.map_or(0, |c| (255 * (c + 1) / k) as u8)).collect();
    write_gray(&run.path("labels.png"), rows, cols, gray)?;
    for class in 0..k {
        let mask: Vec<f64> = map.iter().map(|&l| if l == Some(class) { 1.0 } else { 0.0 }).collect();
        let png = window_to_gray(&mask, 0.0, 1.0);
        let img = Image::from_vec(rows, cols, mask)?.with_mu_water(image.mu_water);
        write_image_as(&run.path(&format!("mask_{class:02}.ctr")), &img, None, RasterKind::Mask)?;
        write_gray(&run.path(&format!("mask_{class:02}.png")), rows, cols, png)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_is_dropped_from_recorded_args() {
        let args: Vec<OsString> = [
            "fbp", "--meas", "m.ctr", "--out", "dir", "--out=x", "--window", "0", "1",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        assert_eq!(recorded_args(&args), ["fbp", "--meas", "m.ctr", "--window", "0", "1"]);
    }

    #[test]
    fn window_needs_two_numbers() {
        assert!(Cli::try_parse_from(["ctrecon", "fbp", "--meas", "m", "--out", "o", "--window", "1"]).is_err());
        let cli =
            Cli::try_parse_from(["ctrecon", "fbp", "--meas", "m", "--out", "o", "--window", "-100", "300"]).unwrap();
        assert_eq!(cli.command.common().window.as_deref(), Some(&[-100.0, 300.0][..]));
    }

    #[test]
    fn unknown_method_is_a_usage_error() {
        assert!(
            Cli::try_parse_from(["ctrecon", "reconstruct", "--method", "art", "--meas", "m", "--out", "o"]).is_err()
        );
        let ok = Cli::try_parse_from([
            "ctrecon",
            "reconstruct",
            "--method",
            "spultra",
            "--meas",
            "m",
            "--out",
            "o",
        ]);
        assert!(ok.is_ok());
    }
}
