//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per check; exits nonzero if any check fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ctrecon::manifest::{digest_tree, RunManifest};
use ctrecon_core::denoiser::{ConvDenoiser, SupervisedModule, TrainConfig};
use ctrecon_core::fbp::{fbp_reconstruct, Window};
use ctrecon_core::learn::{learn_union, log_abs_det, training_patches, LearnConfig};
use ctrecon_core::metrics::rmse;
use ctrecon_core::phantom::{random_phantom, shepp_logan};
use ctrecon_core::projector::forward_project;
use ctrecon_core::sim::{MeasurementSet, ScanProtocol};
use ctrecon_core::solvers::{
    kappa_weights, os_lalm_update, pwls_ep_reconstruct, pwls_ultra_reconstruct, ultra_coding, ultra_gradient,
    ultra_penalty, EpParams, OsLalmConfig, QuadraticProblem, UltraParams,
};
use ctrecon_core::sparsity::{code_and_cluster, PatchConfig, Transform, TransformUnion};
use ctrecon_core::spultra::{neg_log_likelihood, spultra_reconstruct, Likelihood, SurrogateState};
use ctrecon_core::super_model::{apply_super, fbp_initial, train_super, EpSettings, IterativeModule, SuperConfig};
use ctrecon_core::{Geometry, Image, MatrixProjector, Projector, SiddonProjector, MU_WATER};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{s, write_config, SMALL_CONFIG};

type Outcome = Result<String, String>;

struct Check {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn hu(mu: f64) -> f64 {
    mu * MU_WATER / 1000.0
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn adjoint_identity() -> Outcome {
    let parallel = Geometry::parallel(32, 32, 1.0, 60, 48, 1.0).map_err(|e| e.to_string())?;
    let fan = Geometry::fan_arc_covering(32, 32, 1.0, 60, 48).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (g, geom) in [parallel, fan].iter().enumerate() {
        let proj = SiddonProjector::new(geom);
        for pair in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * g as u64 + pair);
            let x = random_vec(&mut rng, proj.image_len(), -1.0, 1.0);
            let y = random_vec(&mut rng, proj.n_rays(), -1.0, 1.0);
            let ax = proj.forward(&x);
            let lhs = dot(&ax, &y);
            let rhs = dot(&x, &proj.back(&y));
            worst = worst.max((lhs - rhs).abs() / (dot(&ax, &ax) * dot(&y, &y)).sqrt());
        }
    }
    ensure(worst < 1e-10, || format!("worst relative error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.1e} over 2×100 pairs"))
}

fn fbp_sanity() -> Outcome {
    let truth = shepp_logan(256, 256, MU_WATER).map_err(|e| e.to_string())?;
    let geom = Geometry::parallel(256, 256, 1.0, 360, 726, 0.5).map_err(|e| e.to_string())?;
    let sino = forward_project(&truth, &geom).map_err(|e| e.to_string())?;
    let recon = fbp_reconstruct(&sino, &geom, Window::RamLak)
        .map_err(|e| e.to_string())?
        .image;
    let err = (truth
        .data
        .iter()
        .zip(&recon.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / truth.len() as f64)
        .sqrt();
    let (lo, hi) = truth
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let frac = err / (hi - lo);
    ensure(frac < 0.03, || {
        format!("RMSE is {:.2}% of the dynamic range", 100.0 * frac)
    })?;
    Ok(format!("RMSE {:.2}% of the dynamic range", 100.0 * frac))
}

/// Every support pattern of every class, costs summed in index order.
#[allow(clippy::needless_range_loop)]
fn exhaustive_coding(u: &[f64], union: &TransformUnion, gamma: f64) -> (usize, f64) {
    let d = union.dim();
    let mut best = (0, f64::INFINITY);
    for (k, t) in union.transforms.iter().enumerate() {
        let mut v = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                v[i] += t.data[i * d + j] * u[j];
            }
        }
        let mut class_best = f64::INFINITY;
        for support in 0u32..(1 << d) {
            let mut cost = 0.0;
            for (i, vi) in v.iter().enumerate() {
                cost += if support >> i & 1 == 1 { gamma * gamma } else { vi * vi };
            }
            class_best = class_best.min(cost);
        }
        if class_best < best.1 {
            best = (k, class_best);
        }
    }
    best
}

fn coding_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut checked = 0;
    for d in [4usize, 6, 8] {
        let transforms = (0..3)
            .map(|_| {
                let mut m = DMatrix::<f64>::identity(d, d);
                m.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
                Transform::from_matrix(&m)
            })
            .collect();
        let union = TransformUnion::from_transforms(transforms).map_err(|e| e.to_string())?;
        let n = if d == 8 { 334 } else { 333 };
        for _ in 0..n {
            let u = random_vec(&mut rng, d, -1.0, 1.0);
            let gamma = rng.random_range(0.05..0.8);
            let got = code_and_cluster(&u, &union, gamma).map_err(|e| e.to_string())?;
            let (class, cost) = exhaustive_coding(&u, &union, gamma);
            ensure(got.class == class && got.cost == cost, || {
                format!(
                    "d = {d}: got class {} cost {:e}, oracle class {class} cost {cost:e}",
                    got.class, got.cost
                )
            })?;
            let mut v = vec![0.0; d];
            union.transforms[class].apply(&u, &mut v);
            ensure(
                got.code
                    .iter()
                    .zip(&v)
                    .all(|(c, x)| if x.abs() >= gamma { c == x } else { *c == 0.0 }),
                || format!("d = {d}: code is not the hard threshold of Ω u"),
            )?;
            checked += 1;
        }
    }
    Ok(format!("{checked} patches, exact class and cost"))
}

fn learning_monotone() -> Outcome {
    let phantom = shepp_logan(64, 64, MU_WATER).map_err(|e| e.to_string())?;
    let (lo, hi) = phantom
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let cfg = LearnConfig {
        k: 5,
        n_iters: 50,
        seed: 1,
        patch: PatchConfig::new(8, 1),
        ..LearnConfig::with_dynamic_range(hi - lo)
    };
    let patches = training_patches(&[phantom], &cfg.patch).map_err(|e| e.to_string())?;
    let state = learn_union(&patches, &cfg).map_err(|e| e.to_string())?;
    ensure(state.objective.len() == 51, || {
        format!("{} objective values", state.objective.len())
    })?;
    let mut worst_rise = f64::NEG_INFINITY;
    for w in state.objective.windows(2) {
        worst_rise = worst_rise.max(w[1] - w[0]);
        ensure(w[1] <= w[0] + 1e-9, || format!("objective rose {} -> {}", w[0], w[1]))?;
    }
    for (k, t) in state.union.transforms.iter().enumerate() {
        let ld = log_abs_det(&t.to_matrix());
        let sv = t.to_matrix().svd(false, false).singular_values;
        let cond = sv.max() / sv.min();
        ensure(ld.is_finite() && cond.is_finite() && cond < 1e8, || {
            format!("Ω_{k}: log|det| {ld}, condition {cond:e}")
        })?;
    }
    Ok(format!(
        "{} patches, objective {:.4e} -> {:.4e}, largest step change {worst_rise:.1e}",
        patches.len(),
        state.objective[0],
        state.objective[50]
    ))
}

fn os_lalm_matches_wls() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (r, c) = (20, 10);
    let data = random_vec(&mut rng, r * c, 0.0, 1.0);
    let a = DMatrix::from_row_slice(r, c, &data);
    let w = random_vec(&mut rng, r, 0.5, 2.0);
    let x_true = random_vec(&mut rng, c, 0.2, 0.8);
    let y: Vec<f64> = (&a * DVector::from_column_slice(&x_true)).as_slice().to_vec();
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(&w));
    let x_ls = (a.transpose() * &wm * &a)
        .lu()
        .solve(&(a.transpose() * &wm * DVector::from_column_slice(&y)))
        .ok_or("normal equations are singular")?;
    let proj = MatrixProjector::new(r, c, data).map_err(|e| e.to_string())?;
    let problem = QuadraticProblem::new(&proj, w, y).map_err(|e| e.to_string())?;
    let cfg = OsLalmConfig {
        n_subsets: 1,
        n_iters: 200_000,
        x_max: 10.0,
        ..OsLalmConfig::default()
    };
    let x = os_lalm_update(&proj, &vec![0.0; c], &problem, |_, g| g.fill(0.0), &[0.0; 10], &cfg)
        .map_err(|e| e.to_string())?;
    let err = (DVector::from_column_slice(&x) - &x_ls).norm() / x_ls.norm();
    ensure(err < 1e-6, || format!("relative error {err:e}"))?;
    Ok(format!("relative error {err:.1e} after {} iterations", cfg.n_iters))
}

fn surrogate_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst_major: f64 = f64::NEG_INFINITY;
    let mut worst_fd: f64 = 0.0;
    for _ in 0..10_000 {
        let lik = Likelihood {
            i0: rng.random_range(1e3..1e5),
            sigma2: rng.random_range(0.0..50.0),
        };
        let ln = rng.random_range(0.0..12.0);
        let l = rng.random_range(0.0..12.0);
        let truth: f64 = rng.random_range(0.0..12.0);
        let y = (lik.i0 * (-truth).exp() + lik.sigma2 + rng.random_range(-3.0..3.0) * lik.sigma2.sqrt()).round();
        let (h, hd, hdd) = lik.derivatives(ln, y);
        let c = lik.optimum_curvature(ln, y);
        let q = |t: f64| h + hd * (t - ln) + 0.5 * c * (t - ln) * (t - ln);
        let hl = lik.h(l, y);
        worst_major = worst_major.max((hl - q(l)) / hl.abs().max(f64::MIN_POSITIVE));
        ensure(q(l) >= hl - 1e-9 * hl.abs(), || {
            format!("l^n = {ln}, l = {l}, y = {y}: q = {} < h = {hl}", q(l))
        })?;
        let hn = lik.h(ln, y);
        ensure((q(ln) - hn).abs() < 1e-9 * hn.abs(), || {
            format!("not tangent at l^n = {ln}")
        })?;
        ensure((h - hn).abs() <= 1e-12 * hn.abs(), || {
            format!("h mismatch at l^n = {ln}")
        })?;

        let e = 1e-4;
        let fd1 = (lik.h(ln + e, y) - lik.h(ln - e, y)) / (2.0 * e);
        let fd2 = (lik.derivatives(ln + e, y).1 - lik.derivatives(ln - e, y).1) / (2.0 * e);
        let scale = lik.i0 * (-ln).exp();
        let r1 = (fd1 - hd).abs() / scale.max(hd.abs());
        let r2 = (fd2 - hdd).abs() / scale.max(hdd.abs());
        worst_fd = worst_fd.max(r1).max(r2);
        ensure(r1 <= 1e-6 && r2 <= 1e-6, || {
            format!("derivative mismatch at l = {ln}: {r1:e}, {r2:e}")
        })?;
    }

    let geom = Geometry::parallel_covering(16, 16, 16.0, 30).map_err(|e| e.to_string())?;
    let proj = SiddonProjector::new(&geom);
    let truth = shepp_logan(16, 16, MU_WATER).map_err(|e| e.to_string())?;
    let sino = forward_project(&truth, &geom).map_err(|e| e.to_string())?;
    let meas = MeasurementSet::simulate(&sino, ScanProtocol::new(1e4, 5.0, 3).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let lik = Likelihood::from_measurements(&meas);
    let counts = lik.shifted_counts(&meas.counts);
    let x: Vec<f64> = truth.data.iter().map(|v| 0.9 * v + 0.001).collect();
    let state = SurrogateState::build(&proj, &x, &counts, &lik).map_err(|e| e.to_string())?;
    let nll = neg_log_likelihood(&proj, &x, &counts, &lik);
    let gap = (state.value(&state.line) - nll).abs() / nll.abs();
    ensure(gap < 1e-9, || format!("sinogram surrogate not tangent: {gap:e}"))?;
    Ok(format!(
        "10^4 samples, max (h - q)/|h| {worst_major:.1e}, derivative error {worst_fd:.1e}, sinogram tangency {gap:.1e}"
    ))
}

fn perturbed_union(side: usize, k: usize, spread: f64, seed: u64) -> TransformUnion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transforms = (0..k)
        .map(|_| {
            let mut m = Transform::dct2(side).to_matrix();
            m.iter_mut().for_each(|v| *v += rng.random_range(-spread..spread));
            Transform::from_matrix(&m)
        })
        .collect();
    TransformUnion::new(side, transforms).expect("small perturbations of the DCT are invertible")
}

fn spultra_descent() -> Outcome {
    let n = 64;
    let geom = Geometry::parallel_covering(n, n, 4.0, 90).map_err(|e| e.to_string())?;
    let proj = SiddonProjector::new(&geom);
    let truth = shepp_logan(n, n, MU_WATER).map_err(|e| e.to_string())?;
    let sino = forward_project(&truth, &geom).map_err(|e| e.to_string())?;
    let meas = MeasurementSet::simulate(&sino, ScanProtocol::new(1e4, 5.0, 7).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut init = fbp_initial(&geom, &meas, Window::RamLak, MU_WATER).map_err(|e| e.to_string())?;
    init.data.iter_mut().for_each(|v| *v = v.max(0.0));
    let params = UltraParams {
        beta: 1e4,
        gamma: hu(100.0),
        tau: None,
        union: perturbed_union(8, 3, 0.05, 17),
        stride: 1,
        outer_iters: 20,
        inner: OsLalmConfig {
            n_subsets: 1,
            n_iters: 2,
            ..OsLalmConfig::default()
        },
    };
    let out = spultra_reconstruct(&proj, &meas, &init, &params, 20).map_err(|e| e.to_string())?;
    if let Some(e) = out.error {
        return Err(e.to_string());
    }
    ensure(out.objective.len() == 21, || {
        format!("{} objective values", out.objective.len())
    })?;
    let mut worst = f64::NEG_INFINITY;
    for (i, w) in out.objective.windows(2).enumerate() {
        let rise = (w[1] - w[0]) / w[0].abs();
        worst = worst.max(rise);
        ensure(rise <= 1e-6, || {
            format!("G rose at outer iteration {}: {} -> {}", i + 1, w[0], w[1])
        })?;
    }
    Ok(format!(
        "G {:.6e} -> {:.6e}, largest relative step {worst:.1e}",
        out.objective[0], out.objective[20]
    ))
}

#[allow(clippy::needless_range_loop)]
fn penalty_gradient() -> Outcome {
    let (rows, cols) = (32, 32);
    let params = UltraParams {
        beta: 2.0,
        gamma: 0.002,
        tau: None,
        union: perturbed_union(4, 3, 0.1, 17),
        stride: 1,
        outer_iters: 1,
        inner: OsLalmConfig::default(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Image::from_vec(rows, cols, random_vec(&mut rng, rows * cols, 0.0, 0.04)).map_err(|e| e.to_string())?;
    let a = ultra_coding(&x, &params).map_err(|e| e.to_string())?;
    let g = ultra_gradient(&x, &params, &a).map_err(|e| e.to_string())?;
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst: f64 = 0.0;
    for j in 0..rows * cols {
        let h = 1e-6;
        let mut xp = x.clone();
        xp.data[j] += h;
        let mut xm = x.clone();
        xm.data[j] -= h;
        let fd = (ultra_penalty(&xp, &params, &a).map_err(|e| e.to_string())?
            - ultra_penalty(&xm, &params, &a).map_err(|e| e.to_string())?)
            / (2.0 * h);
        let rel = (fd - g[j]).abs() / g[j].abs().max(1e-3 * scale);
        worst = worst.max(rel);
    }
    ensure(worst < 1e-5, || format!("worst relative error {worst:e}"))?;
    Ok(format!("all {} pixels, worst relative error {worst:.1e}", rows * cols))
}

fn low_dose_trend() -> Outcome {
    let n = 64;
    let geom = Geometry::parallel_covering(n, n, 4.0, 90).map_err(|e| e.to_string())?;
    let proj = SiddonProjector::new(&geom);
    let training: Vec<Image> = (0..3).map(|i| random_phantom(n, n, MU_WATER, 77 + i)).collect();
    let mut lc = LearnConfig::with_dynamic_range(2.0 * MU_WATER);
    lc.patch = PatchConfig::new(8, 2);
    let patches = training_patches(&training, &lc.patch).map_err(|e| e.to_string())?;
    let union = learn_union(&patches, &lc).map_err(|e| e.to_string())?.union;

    let truth = shepp_logan(n, n, MU_WATER).map_err(|e| e.to_string())?;
    let sino = forward_project(&truth, &geom).map_err(|e| e.to_string())?;
    let meas = MeasurementSet::simulate(&sino, ScanProtocol::new(3e3, 5.0, 42).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut init = fbp_initial(&geom, &meas, Window::RamLak, MU_WATER).map_err(|e| e.to_string())?;
    init.data.iter_mut().for_each(|v| *v = v.max(0.0));
    let outer = 20;
    let params = UltraParams {
        beta: 1e4,
        gamma: hu(100.0),
        tau: None,
        union,
        stride: 1,
        outer_iters: outer,
        inner: OsLalmConfig {
            n_subsets: 4,
            n_iters: 5,
            ..OsLalmConfig::default()
        },
    };
    let problem =
        QuadraticProblem::new(&proj, meas.weights.clone(), meas.post_log.clone()).map_err(|e| e.to_string())?;
    let ultra = pwls_ultra_reconstruct(&proj, &problem, &init, &params).map_err(|e| e.to_string())?;
    let sp = spultra_reconstruct(&proj, &meas, &init, &params, outer).map_err(|e| e.to_string())?;
    if let Some(e) = sp.error {
        return Err(e.to_string());
    }
    let ru = rmse(&ultra.image, &truth).map_err(|e| e.to_string())?;
    let rs = rmse(&sp.image, &truth).map_err(|e| e.to_string())?;
    let ratio = rs / ru;
    let detail = format!("SPULTRA {rs:.2} HU, PWLS-ULTRA {ru:.2} HU, ratio {ratio:.3}");
    ensure(ratio <= 1.05, || detail.clone())?;
    Ok(detail)
}

fn super_trend() -> Outcome {
    let n = 64;
    let geom = Geometry::parallel_covering(n, n, 4.0, 90).map_err(|e| e.to_string())?;
    let proj = SiddonProjector::new(&geom);
    let all = (0..22u64)
        .into_par_iter()
        .map(|i| {
            let truth = random_phantom(n, n, MU_WATER, 1000 + i);
            let sino = forward_project(&truth, &geom)?;
            Ok((
                MeasurementSet::simulate(&sino, ScanProtocol::new(1e4, 5.0, 5000 + i)?)?,
                truth,
            ))
        })
        .collect::<ctrecon_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let (train, test) = all.split_at(20);
    let window = Window::RamLak;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fbp = |m: &MeasurementSet| fbp_initial(&geom, m, window, MU_WATER);

    let ep_rmse = |beta: f64| -> ctrecon_core::Result<f64> {
        let cfg = OsLalmConfig {
            n_subsets: 4,
            n_iters: 100,
            ..OsLalmConfig::default()
        };
        let errs = test
            .iter()
            .map(|(m, t)| {
                let problem = QuadraticProblem::new(&proj, m.weights.clone(), m.post_log.clone())?;
                let ep = EpParams {
                    beta,
                    delta_hu: 20.0,
                    mu_water: MU_WATER,
                    kappa: kappa_weights(&proj, &m.weights)?,
                };
                rmse(&pwls_ep_reconstruct(&proj, &problem, &fbp(m)?, &ep, &cfg)?, t)
            })
            .collect::<ctrecon_core::Result<Vec<_>>>()?;
        Ok(mean(&errs))
    };
    let grid: Vec<(f64, f64)> = (14..=24)
        .into_par_iter()
        .map(|k| {
            let beta = 2f64.powf(k as f64 / 2.0);
            ep_rmse(beta).map(|r| (beta, r))
        })
        .collect::<ctrecon_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let (best_beta, best_ep) = grid
        .iter()
        .cloned()
        .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });

    let pairs: Vec<(Image, Image)> = train
        .iter()
        .map(|(m, t)| Ok((fbp(m)?, t.clone())))
        .collect::<ctrecon_core::Result<_>>()
        .map_err(|e| e.to_string())?;
    let mut denoiser = ConvDenoiser::zeros();
    denoiser
        .train(
            &pairs,
            &TrainConfig {
                seed: 3,
                ..TrainConfig::default()
            },
        )
        .map_err(|e| e.to_string())?;
    let den = mean(
        &test
            .iter()
            .map(|(m, t)| rmse(&denoiser.apply(&fbp(m)?)?, t))
            .collect::<ctrecon_core::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?,
    );

    let cfg = SuperConfig {
        n_layers: 3,
        module: IterativeModule::PwlsEp(EpSettings {
            beta: 2f64.powi(10),
            solver: OsLalmConfig {
                n_subsets: 4,
                n_iters: 4,
                ..OsLalmConfig::default()
            },
            ..EpSettings::default()
        }),
        train: TrainConfig::default(),
        window,
        seed: 7,
    };
    let trained = train_super(&geom, &proj, train, &cfg).map_err(|e| e.to_string())?;
    if let Some(e) = trained.error {
        return Err(e.to_string());
    }
    let sup = mean(
        &test
            .iter()
            .map(|(m, t)| rmse(&apply_super(&trained.model, &proj, m, &fbp(m)?)?.image, t))
            .collect::<ctrecon_core::Result<Vec<_>>>()
            .map_err(|e| e.to_string())?,
    );

    let steps = trained.train_rmse.windows(2).count();
    let down = trained.train_rmse.windows(2).filter(|w| w[1] <= w[0]).count();
    let ratio = sup / best_ep.min(den);
    let detail = format!(
        "training RMSE {:.1?} ({down}/{steps} nonincreasing); held-out SUPER-EP {sup:.2} HU, PWLS-EP {best_ep:.2} HU (β = 2^{:.1}), denoiser {den:.2} HU, ratio {ratio:.3}",
        trained.train_rmse,
        best_beta.log2()
    );
    ensure(down * 10 >= steps * 9 && ratio < 0.95, || detail.clone())?;
    Ok(detail)
}

fn denoiser_gradient() -> Outcome {
    let net = ConvDenoiser::random(0.05, 7);
    let data: Vec<(Image, Image)> = (0..1u64)
        .map(|i| {
            let clean = random_phantom(16, 16, MU_WATER, 40 + i);
            let mut rng = ChaCha8Rng::seed_from_u64(1040 + i);
            let mut noisy = clean.clone();
            noisy
                .data
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.15..0.15) * MU_WATER);
            (noisy, clean)
        })
        .collect();
    let (_, grad) = net.loss_and_gradient(&data).map_err(|e| e.to_string())?;
    let p = net.params();
    let base = net.activation_pattern(&data);
    let results: Vec<Option<f64>> = (0..p.len())
        .into_par_iter()
        .map(|i| {
            let mut probe = net.clone();
            let mut q = p.clone();
            let mut at = |t: f64| {
                q[i] = p[i] + t;
                probe.set_params(&q).expect("same parameter count");
                let (loss, pattern) = probe.loss_and_pattern(&data).expect("finite loss");
                (loss, pattern == base)
            };
            let mut h = 1e-4;
            while h > 1e-9 {
                let (f2, a) = at(2.0 * h);
                let (f1, b) = at(h);
                let (m1, c) = at(-h);
                let (m2, d) = at(-2.0 * h);
                if a && b && c && d {
                    let fd = (8.0 * (f1 - m1) - (f2 - m2)) / (12.0 * h);
                    return Some((fd - grad[i]).abs() / grad[i].abs().max(1e-6));
                }
                h *= 0.25;
            }
            None
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let worst = results.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    ensure(skipped * 100 < p.len(), || {
        format!("{skipped} of {} parameters sit on a rectifier kink", p.len())
    })?;
    ensure(worst < 1e-4, || format!("worst relative error {worst:e}"))?;
    Ok(format!(
        "{} parameters ({skipped} on a kink), worst relative error {worst:.1e}",
        p.len()
    ))
}

fn run_cli(args: &[String]) -> Result<(), String> {
    let out = common::ctrecon(args);
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`ctrecon {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|a| a.to_string()).collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = tmp.path();
    let cfg = write_config(t, "exp.toml", SMALL_CONFIG);
    let c = s(&cfg);
    let d = |name: &str| -> PathBuf { t.join(name) };
    let mut runs: Vec<PathBuf> = Vec::new();
    let mut step = |mut a: Vec<String>, out: &Path| -> Result<(), String> {
        a.extend(["--out".to_string(), s(out).to_string()]);
        run_cli(&a)?;
        runs.push(out.to_path_buf());
        Ok(())
    };

    let mut meas = Vec::new();
    let mut refs = Vec::new();
    for i in 0..3 {
        let text = SMALL_CONFIG
            .replace(
                "kind = \"shepp-logan\"",
                &format!("kind = \"random\"\nseed = {}", 40 + i),
            )
            .replace("seed = 11", &format!("seed = {}", 60 + i));
        let sim_cfg = write_config(t, &format!("train{i}.toml"), &text);
        let dir = d(&format!("train{i}"));
        step(args(&["simulate", "--config", s(&sim_cfg)]), &dir)?;
        meas.push(dir.join("measurement.ctr"));
        refs.push(dir.join("truth.ctr"));
    }
    let sim = d("simulate");
    step(args(&["simulate", "--config", c]), &sim)?;
    let m = sim.join("measurement.ctr");
    let truth = sim.join("truth.ctr");
    step(args(&["fbp", "--config", c, "--meas", s(&m)]), &d("fbp"))?;
    let mut learn = args(&["learn-ultra", "--config", c, "--images"]);
    learn.extend(refs.iter().map(|p| s(p).to_string()));
    step(learn, &d("learn"))?;
    let union = d("learn").join("union.ctu");
    for method in ["pwls-ep", "pwls-ultra", "spultra"] {
        step(
            args(&[
                "reconstruct",
                "--config",
                c,
                "--method",
                method,
                "--meas",
                s(&m),
                "--union",
                s(&union),
                "--reference",
                s(&truth),
            ]),
            &d(method),
        )?;
    }
    let mut train = args(&["train-super", "--config", c, "--meas"]);
    train.extend(meas.iter().map(|p| s(p).to_string()));
    train.push("--reference".into());
    train.extend(refs.iter().map(|p| s(p).to_string()));
    step(train, &d("train-super"))?;
    let model = d("train-super").join("model");
    step(
        args(&[
            "apply-super",
            "--config",
            c,
            "--model",
            s(&model),
            "--meas",
            s(&m),
            "--reference",
            s(&truth),
        ]),
        &d("apply-super"),
    )?;
    let mut eval = args(&["eval", "--config", c, "--reference", s(&truth), "--estimate"]);
    eval.extend(
        [
            "fbp/fbp.ctr",
            "pwls-ep/recon.ctr",
            "pwls-ultra/recon.ctr",
            "spultra/recon.ctr",
            "apply-super/super.ctr",
        ]
        .iter()
        .map(|p| s(&d(p)).to_string()),
    );
    step(eval, &d("eval"))?;
    step(
        args(&[
            "export-clusters",
            "--config",
            c,
            "--image",
            s(&d("pwls-ultra/recon.ctr")),
            "--union",
            s(&union),
        ]),
        &d("clusters"),
    )?;

    let mut files = 0;
    for first in &runs {
        let manifest = RunManifest::read(first).map_err(|e| e.to_string())?;
        ensure(
            digest_tree(first).map_err(|e| e.to_string())? == manifest.outputs,
            || format!("{}: outputs differ from the manifest", first.display()),
        )?;
        let rerun = first.with_file_name(format!("{}-rerun", first.file_name().unwrap().to_string_lossy()));
        let mut a = manifest.args.clone();
        a.extend(["--out".to_string(), s(&rerun).to_string()]);
        run_cli(&a)?;
        let again = RunManifest::read(&rerun).map_err(|e| e.to_string())?;
        ensure(
            digest_tree(&rerun).map_err(|e| e.to_string())? == manifest.outputs,
            || format!("{}: re-run from the manifest is not bit-identical", manifest.subcommand),
        )?;
        ensure(
            again.inputs == manifest.inputs
                && again.config_sha256 == manifest.config_sha256
                && again.seeds == manifest.seeds,
            || format!("{}: re-run manifest records different inputs", manifest.subcommand),
        )?;
        files += manifest.outputs.len();
    }
    let _ = fs::remove_dir_all(t);
    Ok(format!(
        "{} runs, {files} output files reproduced bit for bit",
        runs.len()
    ))
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks = [
        Check {
            id: 1,
            name: "projector adjoint identity",
            budget: Duration::from_secs(10),
            run: adjoint_identity,
        },
        Check {
            id: 2,
            name: "FBP of noiseless Shepp-Logan",
            budget: Duration::from_secs(30),
            run: fbp_sanity,
        },
        Check {
            id: 3,
            name: "sparse coding matches exhaustive search",
            budget: Duration::from_secs(10),
            run: coding_oracle,
        },
        Check {
            id: 4,
            name: "transform learning is monotone",
            budget: Duration::from_secs(120),
            run: learning_monotone,
        },
        Check {
            id: 5,
            name: "OS-LALM reaches weighted least squares",
            budget: Duration::from_secs(5),
            run: os_lalm_matches_wls,
        },
        Check {
            id: 6,
            name: "likelihood surrogate majorizes and is tangent",
            budget: Duration::from_secs(10),
            run: surrogate_checks,
        },
        Check {
            id: 7,
            name: "SPULTRA decreases the penalized likelihood",
            budget: Duration::from_secs(300),
            run: spultra_descent,
        },
        Check {
            id: 8,
            name: "ULTRA penalty gradient",
            budget: Duration::from_secs(30),
            run: penalty_gradient,
        },
        Check {
            id: 9,
            name: "SPULTRA vs PWLS-ULTRA at low dose",
            budget: Duration::from_secs(600),
            run: low_dose_trend,
        },
        Check {
            id: 10,
            name: "SUPER-EP beats its components",
            budget: Duration::from_secs(1800),
            run: super_trend,
        },
        Check {
            id: 11,
            name: "denoiser backpropagation",
            budget: Duration::from_secs(30),
            run: denoiser_gradient,
        },
        Check {
            id: 12,
            name: "CLI runs reproduce from their manifests",
            budget: Duration::from_secs(600),
            run: determinism,
        },
    ];
    let mut failed = 0;
    let mut ran = 0;
    for check in &checks {
        let label = format!("[{:02}] {}", check.id, check.name);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let clock = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check.run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = clock.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > check.budget => Err(format!("{detail}; over the {:?} budget", check.budget)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {label} ({:.1} s): {detail}", elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {label} ({:.1} s): {detail}", elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
