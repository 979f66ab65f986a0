//! Gaussian kernel density estimation with Scott's bandwidth rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdeMode {
    /// Full-covariance kernel over all coordinates.
    Joint,
    /// Product of one-dimensional marginal estimates.
    Marginals,
}

#[derive(Debug, Clone)]
struct Component {
    /// Samples whitened by the bandwidth Cholesky factor.
    whitened: Vec<DVector<f64>>,
    chol_inv: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    fn fit(samples: &[Vec<f64>], dims: &[usize]) -> Result<Self> {
        let n = samples.len();
        let d = dims.len();
        let nf = n as f64;
        let mean: Vec<f64> = dims.iter().map(|&j| samples.iter().map(|s| s[j]).sum::<f64>() / nf).collect();
        let mut cov = DMatrix::zeros(d, d);
        for s in samples {
            for (a, &i) in dims.iter().enumerate() {
                for (b, &j) in dims.iter().enumerate() {
                    cov[(a, b)] += (s[i] - mean[a]) * (s[j] - mean[b]);
                }
            }
        }
        cov /= nf - 1.0;
        for (a, &j) in dims.iter().enumerate() {
            if !(cov[(a, a)] > 0.0) {
                return Err(Error::InsufficientData(format!("KDE samples have zero variance in dimension {j}")));
            }
        }
        let factor = nf.powf(-1.0 / (d as f64 + 4.0));
        let bw = cov * (factor * factor);
        let chol = bw
            .cholesky()
            .ok_or_else(|| Error::InsufficientData("KDE sample covariance is singular".into()))?;
        let l = chol.l();
        let chol_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InsufficientData("KDE bandwidth not invertible".into()))?;
        let log_det_l: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
        let whitened = samples
            .iter()
            .map(|s| &chol_inv * DVector::from_iterator(d, dims.iter().map(|&j| s[j])))
            .collect();
        Ok(Self {
            whitened,
            chol_inv,
            log_norm: -nf.ln() - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - log_det_l,
        })
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        let w = &self.chol_inv * x;
        let mut terms: Vec<f64> = self.whitened.iter().map(|s| -0.5 * (&w - s).norm_squared()).collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        let mut acc = 0.0;
        for t in terms.iter_mut() {
            acc += (*t - m).exp();
        }
        m + acc.ln() + self.log_norm
    }
}

#[derive(Debug, Clone)]
pub struct Kde {
    mode: KdeMode,
    dim: usize,
    parts: Vec<(Vec<usize>, Component)>,
}

impl Kde {
    pub fn fit(samples: &[Vec<f64>], mode: KdeMode) -> Result<Self> {
        if samples.len() < MIN_SAMPLES {
            return Err(Error::InsufficientData(format!(
                "KDE needs at least {MIN_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        let dim = samples[0].len();
        if dim == 0 || samples.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid("samples", "inconsistent sample dimension"));
        }
        let groups: Vec<Vec<usize>> = match mode {
            KdeMode::Joint => vec![(0..dim).collect()],
            KdeMode::Marginals => (0..dim).map(|j| vec![j]).collect(),
        };
        let parts = groups
            .into_iter()
            .map(|g| Component::fit(samples, &g).map(|c| (g, c)))
            .collect::<Result<_>>()?;
        Ok(Self { mode, dim, parts })
    }

    pub fn mode(&self) -> KdeMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.parts
            .iter()
            .map(|(g, c)| c.log_density(&DVector::from_iterator(g.len(), g.iter().map(|&j| x[j]))))
            .sum()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }
}
