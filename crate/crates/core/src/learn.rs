//! Learning a union of sparsifying transforms by alternating minimisation of
//!
//! ```text
//! Σ_k Σ_{i∈C_k} ‖Ω_k X_i − Z_i‖² + η‖Z_i‖₀  +  Σ_k λ_k Q(Ω_k),
//! Q(Ω) = ‖Ω‖_F² − log|det Ω|,   λ_k = λ₀ Σ_{i∈C_k} ‖X_i‖².
//! ```
//!
//! Because `λ_k` depends on membership, `Σ_k λ_k Q(Ω_k)` splits into a
//! per-patch share `λ₀‖X_i‖² Q(Ω_{k_i})`, which the clustering step includes.
//! Both half-steps are then exact minimisers and the objective never
//! increases.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparsity::{
    code_and_cluster_with, hard_threshold, threshold_cost, PatchConfig, PatchSet, Transform, TransformUnion,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    /// Number of classes (transforms).
    pub k: usize,
    /// Sparsity weight; the coding threshold is `√η`.
    pub eta: f64,
    pub lambda0: f64,
    pub n_iters: usize,
    pub seed: u64,
    pub patch: PatchConfig,
}

impl LearnConfig {
    /// Defaults: `K = 5`, `λ₀ = 31`, `η = (0.1·range)²` for the given patch
    /// dynamic range.
    pub fn with_dynamic_range(range: f64) -> Self {
        Self {
            k: 5,
            eta: (0.1 * range).powi(2),
            lambda0: 31.0,
            n_iters: 50,
            seed: 0,
            patch: PatchConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be >= 1".into()));
        }
        if !(self.eta > 0.0) || !(self.lambda0 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta ({}) and lambda0 ({}) must be positive",
                self.eta, self.lambda0
            )));
        }
        Ok(())
    }
}

/// State of the alternation after the last completed iteration.
#[derive(Debug, Clone)]
pub struct LearnState {
    pub union: TransformUnion,
    /// Zero-based class of every training patch.
    pub labels: Vec<usize>,
    pub codes: PatchSet,
    /// Objective at initialisation followed by one entry per iteration.
    pub objective: Vec<f64>,
    /// Iterations in which an empty class was re-seeded and the re-seed kept.
    pub reseeds: usize,
}

/// `log|det Ω|` from the LU factors; `-∞` for a singular matrix.
pub fn log_abs_det(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut acc = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        if d == 0.0 || !d.is_finite() {
            return f64::NEG_INFINITY;
        }
        acc += d.ln();
    }
    acc
}

/// `‖Ω‖_F² − log|det Ω|`, or `+∞` when `Ω` is singular.
pub fn q_penalty(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidParameter(format!(
            "Q needs a square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let lad = log_abs_det(m);
    if lad == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok(m.norm_squared() - lad)
}

pub fn transform_q(t: &Transform) -> f64 {
    q_penalty(&t.to_matrix()).expect("transforms are square")
}

/// Exact minimiser of `‖Ω X − Z‖_F² + λ(‖Ω‖_F² − log|det Ω|)` given the
/// Gram matrices `XXᵀ` and `XZᵀ`.
///
/// With `XXᵀ + λI = LLᵀ` and `L⁻¹XZᵀ = UΣVᵀ`:
/// `Ω = ½ V (Σ + (Σ² + 2λI)^½) Uᵀ L⁻¹`.
pub fn transform_update_from_gram(
    xxt: &DMatrix<f64>,
    xzt: &DMatrix<f64>,
    lambda: f64,
    class: usize,
) -> Result<DMatrix<f64>> {
    let d = xxt.nrows();
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be positive")));
    }
    let a = xxt + DMatrix::<f64>::identity(d, d) * lambda;
    let chol = a.clone().cholesky().ok_or_else(|| Error::Factorization {
        class,
        condition: condition_estimate(&a),
    })?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::Factorization {
        class,
        condition: condition_estimate(&a),
    })?;
    let b = &l_inv * xzt;
    let svd = b.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::Factorization {
                class,
                condition: condition_estimate(&a),
            })
        }
    };
    let mid = DVector::from_iterator(
        d,
        svd.singular_values.iter().map(|&s| s + (s * s + 2.0 * lambda).sqrt()),
    );
    let omega = v_t.transpose() * DMatrix::from_diagonal(&mid) * u.transpose() * l_inv * 0.5;
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization {
            class,
            condition: condition_estimate(&a),
        });
    }
    Ok(omega)
}

/// Per-class transform update from the class patch matrix `X_k` and codes
/// `Z_k` (one column per patch).
pub fn transform_update(x: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x.ncols() == 0 {
        return Err(Error::InvalidParameter(
            "transform update needs at least one patch".into(),
        ));
    }
    transform_update_from_gram(&(x * x.transpose()), &(x * z.transpose()), lambda, 0)
}

fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Full learning objective for a given assignment.
pub fn learning_objective(
    patches: &PatchSet,
    union: &TransformUnion,
    labels: &[usize],
    codes: &PatchSet,
    eta: f64,
    lambda0: f64,
) -> f64 {
    let d = patches.dim;
    let mut v = vec![0.0; d];
    let mut fit = 0.0;
    let mut energy = vec![0.0; union.k()];
    for (i, (x, z)) in patches.iter().zip(codes.iter()).enumerate() {
        let k = labels[i];
        union.transforms[k].apply(x, &mut v);
        fit += v.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        fit += eta * z.iter().filter(|&&c| c != 0.0).count() as f64;
        energy[k] += x.iter().map(|a| a * a).sum::<f64>();
    }
    let penalty: f64 = energy
        .iter()
        .zip(&union.transforms)
        .filter(|(e, _)| **e > 0.0)
        .map(|(e, t)| lambda0 * e * transform_q(t))
        .sum();
    fit + penalty
}

struct Learner<'a> {
    patches: &'a PatchSet,
    cfg: &'a LearnConfig,
    norms: Vec<f64>,
    gamma: f64,
}

impl Learner<'_> {
    fn code(&self, union: &TransformUnion, labels: &[usize]) -> PatchSet {
        let d = self.patches.dim;
        let mut codes = vec![0.0; self.patches.data.len()];
        codes
            .par_chunks_exact_mut(d)
            .zip(self.patches.data.par_chunks_exact(d))
            .zip(labels.par_iter())
            .for_each(|((z, x), &k)| {
                union.transforms[k].apply(x, z);
                let h = hard_threshold(z, self.gamma);
                z.copy_from_slice(&h);
            });
        PatchSet { dim: d, data: codes }
    }

    /// Optimal class and code for every patch, including each patch's share
    /// of the `λ_k Q(Ω_k)` terms.
    fn cluster(&self, union: &TransformUnion) -> (Vec<usize>, PatchSet) {
        let q: Vec<f64> = union.transforms.iter().map(transform_q).collect();
        let d = self.patches.dim;
        let labels: Vec<usize> = self
            .patches
            .data
            .par_chunks_exact(d)
            .zip(self.norms.par_iter())
            .map_init(Vec::new, |scratch, (x, &nrm)| {
                code_and_cluster_with(x, union, self.gamma, |k| self.cfg.lambda0 * nrm * q[k], scratch).0
            })
            .collect();
        let codes = self.code(union, &labels);
        (labels, codes)
    }

    fn update_transforms(&self, union: &TransformUnion, labels: &[usize], codes: &PatchSet) -> Result<TransformUnion> {
        let d = self.patches.dim;
        let k = union.k();
        let updated: Vec<Result<Transform>> = (0..k)
            .into_par_iter()
            .map(|class| {
                let mut xxt = DMatrix::<f64>::zeros(d, d);
                let mut xzt = DMatrix::<f64>::zeros(d, d);
                let mut energy = 0.0;
                let mut members = 0usize;
                for (i, (x, z)) in self.patches.iter().zip(codes.iter()).enumerate() {
                    if labels[i] != class {
                        continue;
                    }
                    members += 1;
                    energy += self.norms[i];
                    let xv = DVector::from_column_slice(x);
                    let zv = DVector::from_column_slice(z);
                    xxt.ger(1.0, &xv, &xv, 1.0);
                    xzt.ger(1.0, &xv, &zv, 1.0);
                }
                if members == 0 || energy == 0.0 {
                    return Ok(union.transforms[class].clone());
                }
                let omega = transform_update_from_gram(&xxt, &xzt, self.cfg.lambda0 * energy, class)?;
                Ok(Transform::from_matrix(&omega))
            })
            .collect();
        Ok(TransformUnion {
            side: union.side,
            transforms: updated.into_iter().collect::<Result<_>>()?,
        })
    }

    fn objective(&self, union: &TransformUnion, labels: &[usize], codes: &PatchSet) -> f64 {
        learning_objective(self.patches, union, labels, codes, self.cfg.eta, self.cfg.lambda0)
    }

    /// Moves the worst-fitting 1% of patches into each empty class.
    fn reseed(&self, union: &TransformUnion, labels: &mut [usize]) -> bool {
        let k = union.k();
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if empty.is_empty() {
            return false;
        }
        let q: Vec<f64> = union.transforms.iter().map(transform_q).collect();
        let d = self.patches.dim;
        let mut v = vec![0.0; d];
        let mut cost: Vec<(f64, usize)> = self
            .patches
            .iter()
            .enumerate()
            .map(|(i, x)| {
                union.transforms[labels[i]].apply(x, &mut v);
                (
                    threshold_cost(&v, self.gamma) + self.cfg.lambda0 * self.norms[i] * q[labels[i]],
                    i,
                )
            })
            .collect();
        cost.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let take = (labels.len() / 100).max(1);
        let mut worst = cost.into_iter().map(|(_, i)| i);
        for class in empty {
            for i in worst.by_ref().take(take) {
                labels[i] = class;
            }
        }
        true
    }
}

/// Learns `K` transforms from training patches.
///
/// Transforms start as the 2D DCT and classes are assigned uniformly at
/// random from `cfg.seed`. Each iteration updates every non-empty class's
/// transform in closed form and then re-clusters and re-codes all patches.
/// A class left empty is re-seeded with the worst 1% of patches before the
/// next transform update; the re-seed is discarded if it would raise the
/// objective.
pub fn learn_union(patches: &PatchSet, cfg: &LearnConfig) -> Result<LearnState> {
    cfg.validate()?;
    let d = cfg.patch.dim();
    if patches.dim != d {
        return Err(Error::DimensionMismatch {
            what: "patch dimension",
            expected: d,
            found: patches.dim,
        });
    }
    let needed = cfg.k * d;
    if patches.len() < needed {
        return Err(Error::TooFewPatches {
            needed,
            found: patches.len(),
        });
    }
    if patches.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("training patches must be finite".into()));
    }
    let learner = Learner {
        patches,
        cfg,
        norms: patches.iter().map(|x| x.iter().map(|a| a * a).sum()).collect(),
        gamma: cfg.eta.sqrt(),
    };

    let mut union = TransformUnion::dct(cfg.patch.side, cfg.k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut labels: Vec<usize> = (0..patches.len()).map(|_| rng.random_range(0..cfg.k)).collect();
    let mut codes = learner.code(&union, &labels);
    let mut objective = vec![learner.objective(&union, &labels, &codes)];
    let mut reseeds = 0;

    for _ in 0..cfg.n_iters {
        let current = *objective.last().unwrap();
        let mut next = learner.update_transforms(&union, &labels, &codes)?;

        let mut trial_labels = labels.clone();
        if learner.reseed(&union, &mut trial_labels) {
            let trial_codes = learner.code(&union, &trial_labels);
            let trial = learner.update_transforms(&union, &trial_labels, &trial_codes)?;
            let trial_obj = learner.objective(&trial, &trial_labels, &trial_codes);
            if trial_obj <= learner.objective(&next, &labels, &codes).min(current) {
                next = trial;
                reseeds += 1;
            }
        }

        union = next;
        let (l, c) = learner.cluster(&union);
        labels = l;
        codes = c;
        objective.push(learner.objective(&union, &labels, &codes));
    }

    for (k, t) in union.transforms.iter().enumerate() {
        if log_abs_det(&t.to_matrix()) == f64::NEG_INFINITY {
            return Err(Error::SingularTransform { index: k });
        }
    }
    Ok(LearnState {
        union,
        labels,
        codes,
        objective,
        reseeds,
    })
}

/// Patches from several images, concatenated.
pub fn training_patches(images: &[crate::Image], cfg: &PatchConfig) -> Result<PatchSet> {
    let sets = images
        .iter()
        .map(|img| crate::sparsity::extract_patches(img, cfg))
        .collect::<Result<Vec<_>>>()?;
    PatchSet::concat(&sets)
}
