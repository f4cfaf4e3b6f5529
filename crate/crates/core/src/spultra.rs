//! Reconstruction under the shifted Poisson + Gaussian likelihood by
//! repeated quadratic majorisation, each surrogate followed by one image
//! update and one sparse coding and clustering step.
//!
//! Per ray, with `ȳ(l) = I0·e^{−l} + σ²`:
//! `h(l) = ȳ(l) − Y·ln ȳ(l)`, `ḣ(l) = I0e^{−l}(Y/ȳ − 1)`,
//! `ḧ(l) = I0e^{−l}(1 − Yσ²/ȳ²)`, where `Y = [y + σ²]₊` is the shifted
//! measurement whose mean is `ȳ`.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::image::Image;
use crate::projector::Projector;
use crate::sim::{MeasurementSet, EXP_CLAMP};
use crate::solvers::{ultra_coding, ultra_diag_majorizer, ultra_penalty, QuadraticProblem, UltraParams};
use crate::sparsity::CodeAssignment;

/// Below this line integral the optimum curvature is replaced by its cap.
const SMALL_L: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Likelihood {
    pub i0: f64,
    pub sigma2: f64,
}

impl Likelihood {
    pub fn from_measurements(meas: &MeasurementSet) -> Self {
        Self {
            i0: meas.protocol.i0,
            sigma2: meas.protocol.sigma2(),
        }
    }

    /// `[y + σ²]₊` for every recorded count `y`.
    pub fn shifted_counts(&self, counts: &[f64]) -> Vec<f64> {
        counts.iter().map(|&y| (y + self.sigma2).max(0.0)).collect()
    }

    fn incident(&self, l: f64) -> f64 {
        self.i0 * (-l).clamp(-EXP_CLAMP, EXP_CLAMP).exp()
    }

    pub fn h(&self, l: f64, y: f64) -> f64 {
        let ybar = self.incident(l) + self.sigma2;
        ybar - y * ybar.ln()
    }

    /// `(h, ḣ, ḧ)` at `l`.
    pub fn derivatives(&self, l: f64, y: f64) -> (f64, f64, f64) {
        let u = self.incident(l);
        let ybar = u + self.sigma2;
        (
            ybar - y * ybar.ln(),
            u * (y / ybar - 1.0),
            u * (1.0 - y * self.sigma2 / (ybar * ybar)),
        )
    }

    /// Optimum curvature at `l`: the smallest parabola tangent at `l` that
    /// stays above `h` on `[0, ∞)`, capped by `[ḧ(0)]₊` and floored at a
    /// tiny positive value.
    pub fn optimum_curvature(&self, l: f64, y: f64) -> f64 {
        let cap = self.derivatives(0.0, y).2.max(0.0);
        let floor = 1e-12 * cap + 1e-30;
        let c = if l < SMALL_L {
            cap
        } else {
            let a = -(-l).exp_m1();
            let u = self.incident(l);
            let ybar = u + self.sigma2;
            let drop = self.i0 * a - y * (self.i0 * a / ybar).ln_1p();
            let hdot = u * (y / ybar - 1.0);
            (2.0 * (drop + l * hdot) / (l * l)).min(cap)
        };
        if c > 0.0 {
            c
        } else {
            floor
        }
    }
}

/// `(h, ḣ, ḧ)` at line integral `l` for counts `y`.
pub fn h_derivatives(l: f64, y: f64, i0: f64, sigma2: f64) -> (f64, f64, f64) {
    Likelihood { i0, sigma2 }.derivatives(l, y)
}

pub fn optimum_curvature(l: f64, y: f64, i0: f64, sigma2: f64) -> f64 {
    Likelihood { i0, sigma2 }.optimum_curvature(l, y)
}

/// Quadratic surrogate of the negative log-likelihood around `l^n = A x^n`.
#[derive(Debug, Clone)]
pub struct SurrogateState {
    pub line: Vec<f64>,
    pub h: Vec<f64>,
    pub grad: Vec<f64>,
    pub curvature: Vec<f64>,
    /// `ỹ = l^n − ḣ / c`.
    pub target: Vec<f64>,
}

impl SurrogateState {
    pub fn build<P: Projector + ?Sized>(proj: &P, x: &[f64], counts: &[f64], lik: &Likelihood) -> Result<Self> {
        check_len("image", proj.image_len(), x.len())?;
        check_len("counts", proj.n_rays(), counts.len())?;
        let line = proj.forward(x);
        let per: Vec<(f64, f64, f64)> = line
            .par_iter()
            .zip(counts.par_iter())
            .map(|(&l, &y)| {
                let (h, hd, _) = lik.derivatives(l, y);
                (h, hd, lik.optimum_curvature(l, y))
            })
            .collect();
        let h = per.iter().map(|p| p.0).collect();
        let grad: Vec<f64> = per.iter().map(|p| p.1).collect();
        let curvature: Vec<f64> = per.iter().map(|p| p.2).collect();
        let target: Vec<f64> = line
            .iter()
            .zip(grad.iter().zip(&curvature))
            .map(|(l, (g, c))| l - g / c)
            .collect();
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("surrogate target is not finite".into()));
        }
        Ok(Self {
            line,
            h,
            grad,
            curvature,
            target,
        })
    }

    /// `Σ h_i(l^n_i) + ḣ_i(l_i − l^n_i) + c_i/2 (l_i − l^n_i)²`.
    pub fn value(&self, l: &[f64]) -> f64 {
        l.iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = v - self.line[i];
                self.h[i] + self.grad[i] * d + 0.5 * self.curvature[i] * d * d
            })
            .sum()
    }

    /// The surrogate equals `½‖ỹ − l‖²_W` plus this constant.
    pub fn constant(&self) -> f64 {
        self.h
            .iter()
            .zip(self.grad.iter().zip(&self.curvature))
            .map(|(h, (g, c))| h - 0.5 * g * g / c)
            .sum()
    }
}

/// `Σ_i h_i([Ax]_i)`.
pub fn neg_log_likelihood<P: Projector + ?Sized>(proj: &P, x: &[f64], counts: &[f64], lik: &Likelihood) -> f64 {
    proj.forward(x).iter().zip(counts).map(|(&l, &y)| lik.h(l, y)).sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpultraTiming {
    /// Curvatures, surrogate targets and the data-term majoriser.
    pub surrogate: Duration,
    pub image_update: Duration,
    pub coding: Duration,
}

impl SpultraTiming {
    pub fn total(&self) -> Duration {
        self.surrogate + self.image_update + self.coding
    }

    pub fn surrogate_fraction(&self) -> f64 {
        let t = self.total().as_secs_f64();
        if t > 0.0 {
            self.surrogate.as_secs_f64() / t
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpultraOutcome {
    pub image: Image,
    pub assignment: CodeAssignment,
    /// Penalised negative log-likelihood `G(x^n)` for `n = 0…N`, each with
    /// the codes of `x^n`.
    pub objective: Vec<f64>,
    pub timing: SpultraTiming,
    /// Set when an image update diverged; `image` then holds the last
    /// finite iterate.
    pub error: Option<Error>,
}

/// Runs `n_outer` surrogate / image-update / coding rounds from `init`.
pub fn spultra_reconstruct<P: Projector + ?Sized>(
    proj: &P,
    meas: &MeasurementSet,
    init: &Image,
    params: &UltraParams,
    n_outer: usize,
) -> Result<SpultraOutcome> {
    spultra_reconstruct_observed(proj, meas, init, params, n_outer, |_, _, _| {})
}

/// [`spultra_reconstruct`] reporting `(n, x^{n+1}, G(x^{n+1}))` after every
/// outer iteration.
pub fn spultra_reconstruct_observed<P: Projector + ?Sized>(
    proj: &P,
    meas: &MeasurementSet,
    init: &Image,
    params: &UltraParams,
    n_outer: usize,
    mut observe: impl FnMut(usize, &Image, f64),
) -> Result<SpultraOutcome> {
    check_len("initial image", proj.image_len(), init.len())?;
    check_len("counts", proj.n_rays(), meas.counts.len())?;
    params.validate(init.rows, init.cols)?;
    if init.data.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidParameter("initial image must be nonnegative".into()));
    }
    let lik = Likelihood::from_measurements(meas);
    let shifted = lik.shifted_counts(&meas.counts);
    let d_r = ultra_diag_majorizer(init.rows, init.cols, params)?;
    let mut timing = SpultraTiming::default();

    let clock = Instant::now();
    let mut assignment = ultra_coding(init, params)?;
    timing.coding += clock.elapsed();
    let penalised = |x: &Image, a: &CodeAssignment| -> Result<f64> {
        Ok(neg_log_likelihood(proj, &x.data, &shifted, &lik) + ultra_penalty(x, params, a)?)
    };
    let mut objective = vec![penalised(init, &assignment)?];
    let mut x = init.clone();
    let mut error = None;

    for n in 0..n_outer {
        let clock = Instant::now();
        let surrogate = SurrogateState::build(proj, &x.data, &shifted, &lik)?;
        let problem = QuadraticProblem::new(proj, surrogate.curvature, surrogate.target)?;
        timing.surrogate += clock.elapsed();

        let clock = Instant::now();
        let updated = crate::solvers::ultra_image_update(proj, &problem, &x, params, &assignment, &d_r);
        timing.image_update += clock.elapsed();
        match updated {
            Ok(next) => x = next,
            Err(e @ Error::Divergence { .. }) => {
                error = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }

        let clock = Instant::now();
        assignment = ultra_coding(&x, params)?;
        timing.coding += clock.elapsed();
        let g = penalised(&x, &assignment)?;
        objective.push(g);
        observe(n, &x, g);
    }
    Ok(SpultraOutcome {
        image: x,
        assignment,
        objective,
        timing,
        error,
    })
}
