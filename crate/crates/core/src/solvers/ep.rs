//! Edge-preserving hyperbola-like penalty over 8-neighbourhoods.

use rayon::prelude::*;

use super::{os_lalm_update_observed, OsLalmConfig, QuadraticProblem};
use crate::error::{check_len, Error, Result};
use crate::image::Image;
use crate::projector::Projector;

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

#[derive(Debug, Clone, PartialEq)]
pub struct EpParams {
    pub beta: f64,
    /// Edge scale in HU.
    pub delta_hu: f64,
    /// Converts `delta_hu` to attenuation.
    pub mu_water: f64,
    /// Per-pixel weights `κ_j`.
    pub kappa: Vec<f64>,
}

impl EpParams {
    pub fn delta(&self) -> f64 {
        self.delta_hu * self.mu_water / 1000.0
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        check_len("kappa", n, self.kappa.len())?;
        if !(self.beta >= 0.0) || !(self.delta_hu > 0.0) || !(self.mu_water > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "EP needs beta >= 0 and delta > 0 (beta = {}, delta = {} HU)",
                self.beta, self.delta_hu
            )));
        }
        if self.kappa.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
            return Err(Error::InvalidParameter("kappa must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// `φ(t) = δ²(|t/δ| − ln(1 + |t/δ|))`.
pub fn ep_potential(t: f64, delta: f64) -> f64 {
    let a = (t / delta).abs();
    delta * delta * (a - a.ln_1p())
}

/// `φ'(t) = t / (1 + |t/δ|)`.
pub fn ep_derivative(t: f64, delta: f64) -> f64 {
    t / (1.0 + (t / delta).abs())
}

/// `κ_j = √([AᵀW1]_j / [Aᵀ1]_j)`, zero where no ray crosses pixel `j`.
pub fn kappa_weights<P: Projector + ?Sized>(proj: &P, weights: &[f64]) -> Result<Vec<f64>> {
    check_len("weights", proj.n_rays(), weights.len())?;
    let num = proj.back(weights);
    let den = proj.back(&vec![1.0; proj.n_rays()]);
    Ok(num
        .iter()
        .zip(&den)
        .map(|(&a, &b)| if b > 0.0 { (a.max(0.0) / b).sqrt() } else { 0.0 })
        .collect())
}

fn for_each_neighbour(r: usize, c: usize, rows: usize, cols: usize, mut f: impl FnMut(usize)) {
    for (dr, dc) in NEIGHBOURS {
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols {
            f(nr as usize * cols + nc as usize);
        }
    }
}

/// `β Σ_j Σ_{k∈N_j} κ_jκ_k φ(x_j − x_k)`.
pub fn ep_penalty(x: &Image, ep: &EpParams) -> f64 {
    let delta = ep.delta();
    let (rows, cols) = (x.rows, x.cols);
    let sum: f64 = (0..rows)
        .into_par_iter()
        .map(|r| {
            let mut acc = 0.0;
            for c in 0..cols {
                let j = r * cols + c;
                for_each_neighbour(r, c, rows, cols, |k| {
                    acc += ep.kappa[j] * ep.kappa[k] * ep_potential(x.data[j] - x.data[k], delta);
                });
            }
            acc
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    ep.beta * sum
}

/// `∇_j = 2β Σ_{k∈N_j} κ_jκ_k φ'(x_j − x_k)`.
pub fn ep_gradient(x: &[f64], rows: usize, cols: usize, ep: &EpParams, out: &mut [f64]) {
    let delta = ep.delta();
    out.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
        for (c, o) in row.iter_mut().enumerate() {
            let j = r * cols + c;
            let mut acc = 0.0;
            for_each_neighbour(r, c, rows, cols, |k| {
                acc += ep.kappa[k] * ep_derivative(x[j] - x[k], delta);
            });
            *o = 2.0 * ep.beta * ep.kappa[j] * acc;
        }
    });
}

/// `4β Σ_{k∈N_j} κ_jκ_k`, using `φ'' ≤ 1`.
pub fn ep_diag_majorizer(rows: usize, cols: usize, ep: &EpParams) -> Vec<f64> {
    let mut d = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let j = r * cols + c;
            let mut acc = 0.0;
            for_each_neighbour(r, c, rows, cols, |k| acc += ep.kappa[k]);
            d[j] = 4.0 * ep.beta * ep.kappa[j] * acc;
        }
    }
    d
}

/// PWLS with the edge-preserving penalty, `cfg.n_iters` OS-LALM iterations
/// from `init`.
pub fn pwls_ep_reconstruct<P: Projector + ?Sized>(
    proj: &P,
    problem: &QuadraticProblem,
    init: &Image,
    ep: &EpParams,
    cfg: &OsLalmConfig,
) -> Result<Image> {
    pwls_ep_reconstruct_observed(proj, problem, init, ep, cfg, |_, _| {})
}

/// [`pwls_ep_reconstruct`] reporting the iterate after every iteration.
pub fn pwls_ep_reconstruct_observed<P: Projector + ?Sized>(
    proj: &P,
    problem: &QuadraticProblem,
    init: &Image,
    ep: &EpParams,
    cfg: &OsLalmConfig,
    mut observe: impl FnMut(usize, &Image),
) -> Result<Image> {
    check_len("initial image", proj.image_len(), init.len())?;
    ep.validate(init.len())?;
    let (rows, cols) = (init.rows, init.cols);
    let d_r = ep_diag_majorizer(rows, cols, ep);
    let mu_water = init.mu_water;
    let x = os_lalm_update_observed(
        proj,
        &init.data,
        problem,
        |x, g| ep_gradient(x, rows, cols, ep, g),
        &d_r,
        cfg,
        |p, x| {
            observe(
                p,
                &Image {
                    rows,
                    cols,
                    data: x.to_vec(),
                    mu_water,
                },
            )
        },
    )?;
    Ok(Image {
        rows,
        cols,
        data: x,
        mu_water: init.mu_water,
    })
}
