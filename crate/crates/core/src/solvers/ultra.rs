//! PWLS with the union-of-learned-transforms regulariser
//! `β Σ_j τ_j (‖Ω_{k_j} P_j x − z_j‖² + γ²‖z_j‖₀)`.

use rayon::prelude::*;

use super::{os_lalm_update, OsLalmConfig, QuadraticProblem};
use crate::error::{check_len, Error, Result};
use crate::image::Image;
use crate::projector::Projector;
use crate::sparsity::{
    assemble_weighted, code_patches, extract_patches, patch_coverage, CodeAssignment, PatchConfig, PatchSet,
    TransformUnion,
};

#[derive(Debug, Clone, PartialEq)]
pub struct UltraParams {
    pub beta: f64,
    /// Coding threshold; the sparsity weight is `γ²`.
    pub gamma: f64,
    /// Per-patch weights `τ_j`; `None` means all ones.
    pub tau: Option<Vec<f64>>,
    pub union: TransformUnion,
    pub stride: usize,
    /// Alternations between coding and image update.
    pub outer_iters: usize,
    pub inner: OsLalmConfig,
}

impl UltraParams {
    pub fn patch_config(&self) -> PatchConfig {
        self.union.patch_config(self.stride)
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ULTRA needs beta >= 0 and gamma > 0 (beta = {}, gamma = {})",
                self.beta, self.gamma
            )));
        }
        if self.union.side == 0 {
            return Err(Error::InvalidParameter(
                "transform union has no square patch side".into(),
            ));
        }
        let cfg = self.patch_config();
        cfg.validate(rows, cols)?;
        if let Some(t) = &self.tau {
            check_len("tau", cfg.count(rows, cols), t.len())?;
            if t.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter("tau must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Sparse coding and clustering of every patch of `x`.
pub fn ultra_coding(x: &Image, params: &UltraParams) -> Result<CodeAssignment> {
    let patches = extract_patches(x, &params.patch_config())?;
    code_patches(&patches, &params.union, params.gamma)
}

fn residuals(x: &Image, params: &UltraParams, assignment: &CodeAssignment) -> Result<PatchSet> {
    let patches = extract_patches(x, &params.patch_config())?;
    check_len("code assignment", patches.len(), assignment.len())?;
    let d = patches.dim;
    let mut out = vec![0.0; patches.data.len()];
    out.par_chunks_exact_mut(d)
        .zip(patches.data.par_chunks_exact(d))
        .zip(assignment.codes.data.par_chunks_exact(d))
        .zip(assignment.labels.par_iter())
        .for_each(|(((o, p), z), &k)| {
            params.union.transforms[k].apply(p, o);
            o.iter_mut().zip(z).for_each(|(a, b)| *a -= b);
        });
    PatchSet::new(d, out)
}

/// Regulariser value for fixed codes and classes.
pub fn ultra_penalty(x: &Image, params: &UltraParams, assignment: &CodeAssignment) -> Result<f64> {
    let res = residuals(x, params, assignment)?;
    let g2 = params.gamma * params.gamma;
    let per: Vec<f64> = res
        .iter()
        .zip(assignment.codes.iter())
        .map(|(r, z)| r.iter().map(|a| a * a).sum::<f64>() + g2 * z.iter().filter(|&&v| v != 0.0).count() as f64)
        .collect();
    let total: f64 = per
        .iter()
        .enumerate()
        .map(|(j, v)| params.tau.as_ref().map_or(1.0, |t| t[j]) * v)
        .sum();
    Ok(params.beta * total)
}

/// `2β Σ_j τ_j P_jᵀ Ω_{k_j}ᵀ (Ω_{k_j} P_j x − z_j)`.
pub fn ultra_gradient(x: &Image, params: &UltraParams, assignment: &CodeAssignment) -> Result<Vec<f64>> {
    let mut res = residuals(x, params, assignment)?;
    let d = res.dim;
    res.data
        .par_chunks_exact_mut(d)
        .zip(assignment.labels.par_iter())
        .for_each_init(
            || vec![0.0; d],
            |tmp, (r, &k)| {
                params.union.transforms[k].apply_transpose(r, tmp);
                r.copy_from_slice(tmp);
            },
        );
    let mut g = assemble_weighted(&res, &params.patch_config(), x.rows, x.cols, params.tau.as_deref())?.data;
    g.iter_mut().for_each(|v| *v *= 2.0 * params.beta);
    Ok(g)
}

/// `2β · max_k ‖Ω_kᵀΩ_k‖₂ · Σ_j τ_j P_jᵀP_j`.
pub fn ultra_diag_majorizer(rows: usize, cols: usize, params: &UltraParams) -> Result<Vec<f64>> {
    let mut d = patch_coverage(&params.patch_config(), rows, cols, params.tau.as_deref())?;
    let s = 2.0 * params.beta * params.union.max_gram_norm();
    d.iter_mut().for_each(|v| *v *= s);
    Ok(d)
}

/// Image update for fixed codes: `cfg.n_iters` OS-LALM iterations.
pub(crate) fn ultra_image_update<P: Projector + ?Sized>(
    proj: &P,
    problem: &QuadraticProblem,
    x: &Image,
    params: &UltraParams,
    assignment: &CodeAssignment,
    d_r: &[f64],
) -> Result<Image> {
    let (rows, cols, mu_water) = (x.rows, x.cols, x.mu_water);
    let mut grad_err = None;
    let data = os_lalm_update(
        proj,
        &x.data,
        problem,
        |v, g| {
            let img = Image {
                rows,
                cols,
                data: v.to_vec(),
                mu_water,
            };
            match ultra_gradient(&img, params, assignment) {
                Ok(gr) => g.copy_from_slice(&gr),
                Err(e) => {
                    g.fill(0.0);
                    grad_err.get_or_insert(e);
                }
            }
        },
        d_r,
        &params.inner,
    )?;
    if let Some(e) = grad_err {
        return Err(e);
    }
    Ok(Image {
        rows,
        cols,
        data,
        mu_water,
    })
}

#[derive(Debug, Clone)]
pub struct UltraOutcome {
    pub image: Image,
    /// Codes and classes of the returned image.
    pub assignment: CodeAssignment,
    /// Penalised objective after every half-step: entry `2n` follows the
    /// `n`-th coding step and entry `2n + 1` the `n`-th image update, both
    /// evaluated with the codes of that coding step.
    pub objective: Vec<f64>,
}

/// Alternates sparse coding/clustering with `params.inner` OS-LALM image
/// updates, `params.outer_iters` times, then codes the final image.
pub fn pwls_ultra_reconstruct<P: Projector + ?Sized>(
    proj: &P,
    problem: &QuadraticProblem,
    init: &Image,
    params: &UltraParams,
) -> Result<UltraOutcome> {
    pwls_ultra_reconstruct_observed(proj, problem, init, params, |_, _| {})
}

/// [`pwls_ultra_reconstruct`] reporting the image after every outer
/// iteration.
pub fn pwls_ultra_reconstruct_observed<P: Projector + ?Sized>(
    proj: &P,
    problem: &QuadraticProblem,
    init: &Image,
    params: &UltraParams,
    mut observe: impl FnMut(usize, &Image),
) -> Result<UltraOutcome> {
    check_len("initial image", proj.image_len(), init.len())?;
    params.validate(init.rows, init.cols)?;
    let d_r = ultra_diag_majorizer(init.rows, init.cols, params)?;
    let objective_at = |x: &Image, a: &CodeAssignment| -> Result<f64> {
        Ok(problem.data_term(proj, &x.data) + ultra_penalty(x, params, a)?)
    };
    let mut x = init.clone();
    let mut objective = Vec::with_capacity(2 * params.outer_iters);
    for n in 0..params.outer_iters {
        let assignment = ultra_coding(&x, params)?;
        objective.push(objective_at(&x, &assignment)?);
        x = ultra_image_update(proj, problem, &x, params, &assignment, &d_r)?;
        objective.push(objective_at(&x, &assignment)?);
        observe(n, &x);
    }
    let assignment = ultra_coding(&x, params)?;
    Ok(UltraOutcome {
        image: x,
        assignment,
        objective,
    })
}
