//! Low-dose measurement simulation and statistical weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Sinogram, SinogramKind};

/// Counts below this are clamped before taking logs or forming weights.
pub const COUNT_FLOOR: f64 = 0.1;
/// Bound on the exponent of `I0·e^{−l}`.
pub const EXP_CLAMP: f64 = 700.0;
/// Poisson means above this are drawn from the matching Gaussian.
const POISSON_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanProtocol {
    /// Incident photons per ray.
    pub i0: f64,
    /// Electronic noise standard deviation, in counts.
    pub sigma: f64,
    pub seed: u64,
}

impl ScanProtocol {
    pub fn new(i0: f64, sigma: f64, seed: u64) -> Result<Self> {
        let p = Self { i0, sigma, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.i0 > 0.0 && self.i0.is_finite()) {
            return Err(Error::InvalidParameter(format!("I0 = {} must be positive", self.i0)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma = {} must be >= 0", self.sigma)));
        }
        Ok(())
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Noisy counts together with the derived post-log data and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub n_views: usize,
    pub n_bins: usize,
    pub counts: Vec<f64>,
    pub post_log: Vec<f64>,
    pub weights: Vec<f64>,
    pub protocol: ScanProtocol,
    /// Rays whose exponent or Poisson mean had to be clamped.
    pub flagged: Vec<usize>,
}

impl MeasurementSet {
    /// Simulates `Y ~ Poisson(I0·e^{−l}) + N(0, σ²)` and derives post-log data
    /// and weights.
    pub fn simulate(line_integrals: &Sinogram, protocol: ScanProtocol) -> Result<Self> {
        let (counts, flagged) = simulate_counts(line_integrals, &protocol)?;
        Ok(Self::from_counts(
            line_integrals.n_views,
            line_integrals.n_bins,
            counts,
            protocol,
            flagged,
        ))
    }

    pub fn from_counts(
        n_views: usize,
        n_bins: usize,
        counts: Vec<f64>,
        protocol: ScanProtocol,
        flagged: Vec<usize>,
    ) -> Self {
        let post_log = post_log(&counts, protocol.i0);
        let weights = statistical_weights(&counts, protocol.sigma);
        Self {
            n_views,
            n_bins,
            counts,
            post_log,
            weights,
            protocol,
            flagged,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn sinogram(&self, kind: SinogramKind) -> Sinogram {
        let data = match kind {
            SinogramKind::LineIntegral => self.post_log.clone(),
            SinogramKind::Counts => self.counts.clone(),
            SinogramKind::Weights => self.weights.clone(),
        };
        Sinogram {
            n_views: self.n_views,
            n_bins: self.n_bins,
            kind,
            data,
        }
    }
}

/// Per-ray RNG stream, independent of evaluation order.
fn ray_rng(seed: u64, ray: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ray as u64);
    rng
}

/// Draws noisy counts; returns the counts and the indices of clamped rays.
pub fn simulate_counts(line_integrals: &Sinogram, protocol: &ScanProtocol) -> Result<(Vec<f64>, Vec<usize>)> {
    protocol.validate()?;
    if line_integrals.kind != SinogramKind::LineIntegral {
        return Err(Error::InvalidParameter("simulation needs line integrals".into()));
    }
    let noise = if protocol.sigma > 0.0 {
        Some(Normal::new(0.0, protocol.sigma).expect("sigma validated"))
    } else {
        None
    };
    let draws: Vec<(f64, bool)> = line_integrals
        .data
        .par_iter()
        .enumerate()
        .map(|(i, &l)| {
            let mut rng = ray_rng(protocol.seed, i);
            let arg = -l;
            let mut flagged = !(-EXP_CLAMP..=EXP_CLAMP).contains(&arg) || !arg.is_finite();
            let arg = if arg.is_nan() {
                EXP_CLAMP
            } else {
                arg.clamp(-EXP_CLAMP, EXP_CLAMP)
            };
            let mean = protocol.i0 * arg.exp();
            let photons = if !(mean > 0.0) {
                0.0
            } else if mean > POISSON_LIMIT || !mean.is_finite() {
                flagged = true;
                let m = mean.min(f64::MAX.sqrt());
                Normal::new(m, m.sqrt()).expect("finite mean").sample(&mut rng)
            } else {
                Poisson::new(mean).expect("positive finite mean").sample(&mut rng)
            };
            let electronic = noise.map_or(0.0, |n| n.sample(&mut rng));
            (photons + electronic, flagged)
        })
        .collect();
    let flagged = draws.iter().enumerate().filter(|(_, d)| d.1).map(|(i, _)| i).collect();
    Ok((draws.into_iter().map(|d| d.0).collect(), flagged))
}

/// `l̂ = ln(I0 / max(Y, 0.1))`.
pub fn post_log(counts: &[f64], i0: f64) -> Vec<f64> {
    counts.iter().map(|&y| (i0 / y.max(COUNT_FLOOR)).ln()).collect()
}

/// `W = Ỹ²/(Ỹ + σ²)` with `Ỹ = max(Y, 0.1)`.
pub fn statistical_weights(counts: &[f64], sigma: f64) -> Vec<f64> {
    let s2 = sigma * sigma;
    counts
        .iter()
        .map(|&y| {
            let y = y.max(COUNT_FLOOR);
            y * y / (y + s2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Geometry;
    use proptest::prelude::*;

    fn flat_sino(n: usize, l: f64) -> Sinogram {
        Sinogram {
            n_views: n,
            n_bins: 1,
            kind: SinogramKind::LineIntegral,
            data: vec![l; n],
        }
    }

    #[test]
    fn poisson_mean_at_zero_attenuation() {
        let n = 100_000;
        let i0 = 1e4;
        let (y, flagged) = simulate_counts(&flat_sino(n, 0.0), &ScanProtocol::new(i0, 0.0, 7).unwrap()).unwrap();
        assert!(flagged.is_empty());
        let mean = y.iter().sum::<f64>() / n as f64;
        assert!((mean - i0).abs() < 3.0 * (i0 / n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn poisson_dispersion() {
        let n = 100_000;
        let i0 = 1e6;
        let (y, _) = simulate_counts(&flat_sino(n, 0.0), &ScanProtocol::new(i0, 0.0, 11).unwrap()).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / mean - 1.0).abs() < 0.05, "ratio {}", var / mean);
    }

    #[test]
    fn seeded_determinism() {
        let g = Geometry::parallel_covering(8, 8, 1.0, 10).unwrap();
        let s = Sinogram::from_vec(&g, SinogramKind::LineIntegral, vec![1.5; g.n_rays()]).unwrap();
        let p = ScanProtocol::new(1e4, 5.0, 99).unwrap();
        let a = MeasurementSet::simulate(&s, p).unwrap();
        let b = MeasurementSet::simulate(&s, p).unwrap();
        assert_eq!(a, b);
        let c = MeasurementSet::simulate(&s, ScanProtocol { seed: 100, ..p }).unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn exponent_clamp_flags_ray() {
        let mut s = flat_sino(3, 1.0);
        s.data[1] = -800.0;
        let (y, flagged) = simulate_counts(&s, &ScanProtocol::new(1e3, 0.0, 1).unwrap()).unwrap();
        assert_eq!(flagged, vec![1]);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_protocol() {
        assert!(ScanProtocol::new(0.0, 1.0, 0).is_err());
        assert!(ScanProtocol::new(1.0, -1.0, 0).is_err());
    }

    #[test]
    fn post_log_values() {
        let i0 = 1e5;
        let l = post_log(&[i0, i0 / std::f64::consts::E, -3.0], i0);
        assert_eq!(l[0], 0.0);
        assert!((l[1] - 1.0).abs() < 1e-14);
        assert_eq!(l[2], (i0 / 0.1).ln());
    }

    #[test]
    fn weight_values() {
        assert_eq!(statistical_weights(&[100.0], 5.0)[0], 80.0);
        assert_eq!(statistical_weights(&[50.0], 0.0)[0], 50.0);
        let w0 = statistical_weights(&[0.0], 2.0)[0];
        assert!((w0 - 0.01 / (0.1 + 4.0)).abs() < 1e-18);
    }

    #[test]
    fn noiseless_post_log_inverts() {
        let i0 = 1e5;
        let l: Vec<f64> = (0..50).map(|i| i as f64 * 0.17).collect();
        let y: Vec<f64> = l.iter().map(|&l| i0 * (-l).exp()).collect();
        for (a, b) in post_log(&y, i0).iter().zip(&l) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn weights_monotone(a in -10.0f64..1e6, b in -10.0f64..1e6, sigma in 0.0f64..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let w = statistical_weights(&[lo, hi], sigma);
            prop_assert!(w[0] <= w[1]);
            prop_assert!(w[0] >= 0.0 && w[0].is_finite());
        }
    }
}
