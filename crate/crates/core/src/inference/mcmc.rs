//! Adaptive Metropolis sampler.
//!
//! During warm-up the proposal is `lambda^2 C0` with a scalar `lambda` tuned
//! towards a 0.3 acceptance rate; afterwards it is `s_d Sigma_t + s_d eps I`
//! with `s_d = 2.38^2 / dim` and `Sigma_t` the running covariance of the chain.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmConfig {
    pub steps: usize,
    pub warmup: usize,
    pub burn_in_fraction: f64,
    /// Regularization added to the adapted covariance.
    pub epsilon: f64,
    /// Initial proposal standard deviation per coordinate.
    pub initial_scale: f64,
}

impl Default for AmConfig {
    fn default() -> Self {
        Self {
            steps: 200_000,
            warmup: 2_000,
            burn_in_fraction: 0.2,
            epsilon: 1e-10,
            initial_scale: 0.02,
        }
    }
}

impl AmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 10 {
            return Err(Error::invalid("steps", format!("must be >= 10, got {}", self.steps)));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::invalid("burn_in_fraction", "must lie in [0, 1)"));
        }
        if !(self.initial_scale > 0.0) || !(self.epsilon >= 0.0) {
            return Err(Error::invalid("initial_scale", "scales must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub log_target: Vec<f64>,
    pub acceptance: f64,
}

struct Welford {
    n: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self {
            n: 0.0,
            mean: DVector::zeros(d),
            m2: DMatrix::zeros(d, d),
        }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.n += 1.0;
        let delta = x - &self.mean;
        self.mean += &delta / self.n;
        let delta2 = x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn covariance(&self) -> DMatrix<f64> {
        let c = &self.m2 / (self.n - 1.0).max(1.0);
        (&c + c.transpose()) * 0.5
    }
}

pub fn run_adaptive_metropolis<F>(target: F, init: &[f64], seed: u64, cfg: &AmConfig) -> Result<Chain>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    let d = init.len();
    let mut x = DVector::from_column_slice(init);
    let mut lx = target(init);
    if !lx.is_finite() {
        return Err(Error::Sampler(format!("log target not finite at initial point {init:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unif = Uniform::new(0.0, 1.0).expect("unit interval");
    let sd = 2.38 * 2.38 / d as f64;
    let mut lambda = 1.0f64;
    let mut stats = Welford::new(d);
    let mut chol = DMatrix::identity(d, d) * cfg.initial_scale;
    let keep_from = (cfg.steps as f64 * cfg.burn_in_fraction).floor() as usize;
    let mut samples = Vec::with_capacity(cfg.steps - keep_from);
    let mut values = Vec::with_capacity(cfg.steps - keep_from);
    let (mut accepted, mut accepted_kept) = (0usize, 0usize);
    for t in 0..cfg.steps {
        if t >= cfg.warmup && stats.n > d as f64 {
            let cov = stats.covariance() * sd + DMatrix::identity(d, d) * (sd * cfg.epsilon);
            if let Some(c) = cov.cholesky() {
                chol = c.l();
            }
        } else if t < cfg.warmup {
            chol = DMatrix::identity(d, d) * (cfg.initial_scale * lambda);
        }
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let y = &x + &chol * z;
        let ly = target(y.as_slice());
        let u: f64 = unif.sample(&mut rng);
        let accept = ly.is_finite() && u.ln() < ly - lx;
        if accept {
            x = y;
            lx = ly;
            accepted += 1;
            if t >= keep_from {
                accepted_kept += 1;
            }
        }
        if t < cfg.warmup {
            let a = if accept { 1.0 } else { 0.0 };
            lambda *= ((a - 0.3) / ((t + 1) as f64).sqrt()).exp();
            lambda = lambda.clamp(1e-4, 1e4);
        }
        stats.push(&x);
        if t >= keep_from {
            samples.push(x.as_slice().to_vec());
            values.push(lx);
        }
    }
    if accepted == 0 {
        return Err(Error::Sampler(
            "no proposal accepted; rescale the initial proposal covariance".into(),
        ));
    }
    let kept = cfg.steps - keep_from;
    Ok(Chain {
        samples,
        log_target: values,
        acceptance: accepted_kept as f64 / kept as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_start() {
        let r = run_adaptive_metropolis(|_| f64::NEG_INFINITY, &[0.0], 1, &AmConfig::default());
        assert!(matches!(r, Err(Error::Sampler(_))));
    }

    #[test]
    fn zero_acceptance_is_an_error() {
        let cfg = AmConfig {
            steps: 100,
            warmup: 10,
            ..Default::default()
        };
        let r = run_adaptive_metropolis(|x| if x[0] == 0.5 { 0.0 } else { f64::NEG_INFINITY }, &[0.5], 1, &cfg);
        assert!(matches!(r, Err(Error::Sampler(_))));
    }
}
