//! Relaxed OS-LALM image updates and the PWLS outer loops built on them.
//!
//! Every solver minimises `½‖ỹ − Ax‖²_W + R(x)` over the box `[0, x_max]`.

mod ep;
mod ultra;

pub use ep::{
    ep_derivative, ep_diag_majorizer, ep_gradient, ep_penalty, ep_potential, kappa_weights, pwls_ep_reconstruct,
    pwls_ep_reconstruct_observed, EpParams,
};
pub use ultra::{
    pwls_ultra_reconstruct, pwls_ultra_reconstruct_observed, ultra_coding, ultra_diag_majorizer, ultra_gradient,
    ultra_penalty, UltraOutcome, UltraParams,
};

pub(crate) use ultra::ultra_image_update;

use std::f64::consts::PI;

use crate::error::{check_len, Error, Result};
use crate::geometry::Geometry;
use crate::image::{hu_to_mu, MU_WATER};
use crate::projector::Projector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OsLalmConfig {
    /// Relaxation `α ∈ [1, 2)`.
    pub alpha: f64,
    /// Number of ordered subsets `M`.
    pub n_subsets: usize,
    /// Iterations `P` (full passes over all subsets).
    pub n_iters: usize,
    /// Upper box bound in mm⁻¹.
    pub x_max: f64,
}

impl Default for OsLalmConfig {
    fn default() -> Self {
        Self {
            alpha: 1.999,
            n_subsets: 4,
            n_iters: 4,
            x_max: hu_to_mu(3000.0, MU_WATER),
        }
    }
}

impl OsLalmConfig {
    pub fn validate(&self, n_views: usize) -> Result<()> {
        if !(1.0..2.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {} must lie in [1, 2)",
                self.alpha
            )));
        }
        if self.n_subsets == 0 || self.n_subsets > n_views {
            return Err(Error::InvalidParameter(format!(
                "{} subsets for {} views",
                self.n_subsets, n_views
            )));
        }
        if self.n_iters == 0 {
            return Err(Error::InvalidParameter("at least one iteration is required".into()));
        }
        if !(self.x_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "x_max = {} must be positive",
                self.x_max
            )));
        }
        Ok(())
    }
}

/// `ρ_0 = 1`, `ρ_t = π/(α(t+1)) · √(1 − (π/(2α(t+1)))²)`.
pub fn rho_schedule(t: usize, alpha: f64) -> f64 {
    if t == 0 {
        return 1.0;
    }
    let a = PI / (alpha * (t as f64 + 1.0));
    a * (1.0 - (0.5 * a).powi(2)).sqrt()
}

/// `diag{AᵀWA·1}`, with zero entries floored at `1e−12·max` (or `1e−12`
/// when every entry is zero).
pub fn compute_da<P: Projector + ?Sized>(proj: &P, weights: &[f64]) -> Result<Vec<f64>> {
    check_len("weights", proj.n_rays(), weights.len())?;
    let mut a1 = proj.forward(&vec![1.0; proj.image_len()]);
    a1.iter_mut().zip(weights).for_each(|(v, &w)| *v *= w);
    let mut d = proj.back(&a1);
    let max = d.iter().cloned().fold(0.0, f64::max);
    let floor = if max > 0.0 { 1e-12 * max } else { 1e-12 };
    d.iter_mut().for_each(|v| {
        if !(*v > floor) {
            *v = floor
        }
    });
    Ok(d)
}

/// Weighted least-squares data term `½‖ỹ − Ax‖²_W` with its majoriser.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub weights: Vec<f64>,
    pub target: Vec<f64>,
    pub d_a: Vec<f64>,
}

impl QuadraticProblem {
    pub fn new<P: Projector + ?Sized>(proj: &P, weights: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        check_len("target", proj.n_rays(), target.len())?;
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("target must be finite".into()));
        }
        let d_a = compute_da(proj, &weights)?;
        Ok(Self { weights, target, d_a })
    }

    pub fn data_term<P: Projector + ?Sized>(&self, proj: &P, x: &[f64]) -> f64 {
        proj.forward(x)
            .iter()
            .zip(&self.target)
            .zip(&self.weights)
            .map(|((ax, y), w)| 0.5 * w * (ax - y).powi(2))
            .sum()
    }

    /// `M · A_Sᵀ W_S (A_S x − ỹ_S)`.
    fn subset_gradient<P: Projector + ?Sized>(
        &self,
        proj: &P,
        x: &[f64],
        views: &[usize],
        scale: f64,
        buf: &mut Vec<f64>,
        out: &mut [f64],
    ) {
        let bins = proj.bins_per_view();
        buf.resize(views.len() * bins, 0.0);
        proj.forward_views(x, views, buf);
        for (i, &v) in views.iter().enumerate() {
            for b in 0..bins {
                let r = v * bins + b;
                let k = i * bins + b;
                buf[k] = scale * self.weights[r] * (buf[k] - self.target[r]);
            }
        }
        proj.back_views(buf, views, out);
    }
}

/// Runs `P` relaxed OS-LALM iterations from `x0`.
///
/// `reg_grad(x, out)` must overwrite `out` with `∇R(x)`, and `d_r` is a
/// diagonal majoriser of the Hessian of `R`. Duals are initialised from the
/// last subset at `x0`.
pub fn os_lalm_update<P, G>(
    proj: &P,
    x0: &[f64],
    problem: &QuadraticProblem,
    reg_grad: G,
    d_r: &[f64],
    cfg: &OsLalmConfig,
) -> Result<Vec<f64>>
where
    P: Projector + ?Sized,
    G: FnMut(&[f64], &mut [f64]),
{
    os_lalm_update_observed(proj, x0, problem, reg_grad, d_r, cfg, |_, _| {})
}

/// [`os_lalm_update`] that hands the iterate to `observe(p, x)` after every
/// full pass `p` over the subsets.
pub fn os_lalm_update_observed<P, G, O>(
    proj: &P,
    x0: &[f64],
    problem: &QuadraticProblem,
    mut reg_grad: G,
    d_r: &[f64],
    cfg: &OsLalmConfig,
    mut observe: O,
) -> Result<Vec<f64>>
where
    P: Projector + ?Sized,
    G: FnMut(&[f64], &mut [f64]),
    O: FnMut(usize, &[f64]),
{
    let n = proj.image_len();
    check_len("initial image", n, x0.len())?;
    check_len("regulariser majoriser", n, d_r.len())?;
    check_len("weights", proj.n_rays(), problem.weights.len())?;
    cfg.validate(proj.n_views())?;
    let m_count = cfg.n_subsets;
    let subsets = Geometry::interleaved_subsets(proj.n_views(), m_count);
    let scale = m_count as f64;
    let alpha = cfg.alpha;
    let d_a = &problem.d_a;

    let mut x = x0.to_vec();
    let mut buf = Vec::new();
    let mut zeta = vec![0.0; n];
    problem.subset_gradient(proj, &x, &subsets[m_count - 1], scale, &mut buf, &mut zeta);
    let mut g = zeta.clone();
    let mut eta: Vec<f64> = (0..n).map(|j| d_a[j] * x[j] - zeta[j]).collect();
    let mut grad_r = vec![0.0; n];

    for p in 0..cfg.n_iters {
        for (m, views) in subsets.iter().enumerate() {
            let t = p * m_count + m;
            let rho = rho_schedule(t, alpha);
            reg_grad(&x, &mut grad_r);
            for j in 0..n {
                let s = rho * (d_a[j] * x[j] - eta[j]) + (1.0 - rho) * g[j];
                let step = (s + grad_r[j]) / (rho * d_a[j] + d_r[j]);
                x[j] = (x[j] - step).clamp(0.0, cfg.x_max);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { iteration: t });
            }
            problem.subset_gradient(proj, &x, views, scale, &mut buf, &mut zeta);
            for j in 0..n {
                g[j] = (rho * (alpha * zeta[j] + (1.0 - alpha) * g[j]) + g[j]) / (rho + 1.0);
                eta[j] = alpha * (d_a[j] * x[j] - zeta[j]) + (1.0 - alpha) * eta[j];
            }
        }
        observe(p, &x);
    }
    Ok(x)
}
