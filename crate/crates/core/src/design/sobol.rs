//! First-order Sobol indices by pick-freeze sampling and the derived
//! input weights for the matching loss.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::ObservationSet;
use crate::space::ParamBox;

pub const MIN_SOBOL_SAMPLES: usize = 1 << 14;

/// First-order indices `s[(j, i)]` of output `i` with respect to input `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolIndices {
    pub first_order: DMatrix<f64>,
    pub variance: Vec<f64>,
    pub samples: usize,
}

/// Saltelli pick-freeze estimator with `n` base samples drawn uniformly over
/// the box; costs `n (p + 2)` evaluations of `f`.
pub fn sobol_indices<F>(f: F, design: &ParamBox, n: usize, seed: u64) -> Result<SobolIndices>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    design.validate()?;
    if n < 2 {
        return Err(Error::invalid("samples", "need at least 2 base samples"));
    }
    let p = design.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> {
        (0..p)
            .map(|j| design.lower[j] + rng.random::<f64>() * design.width(j))
            .collect()
    };
    let a: Vec<Vec<f64>> = (0..n).map(|_| draw()).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| draw()).collect();
    let fa: Vec<Vec<f64>> = a.iter().map(|x| f(x)).collect::<Result<_>>()?;
    let fb: Vec<Vec<f64>> = b.iter().map(|x| f(x)).collect::<Result<_>>()?;
    let d = fa[0].len();
    let nf = n as f64;
    let variance: Vec<f64> = (0..d)
        .map(|i| {
            let m = fa.iter().chain(&fb).map(|y| y[i]).sum::<f64>() / (2.0 * nf);
            fa.iter().chain(&fb).map(|y| (y[i] - m).powi(2)).sum::<f64>() / (2.0 * nf - 1.0)
        })
        .collect();
    let mut s = DMatrix::zeros(p, d);
    for j in 0..p {
        let mut acc = vec![0.0; d];
        for k in 0..n {
            let mut x = a[k].clone();
            x[j] = b[k][j];
            let fab = f(&x)?;
            for i in 0..d {
                acc[i] += fb[k][i] * (fab[i] - fa[k][i]);
            }
        }
        for i in 0..d {
            s[(j, i)] = if variance[i] > 0.0 { acc[i] / nf / variance[i] } else { 0.0 };
        }
    }
    Ok(SobolIndices {
        first_order: s,
        variance,
        samples: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
}

/// `w_j ∝ Σ_i max(s_ji, 0) ȳ_i² / σ_i²`, normalized to sum to one.
pub fn weights_from_indices(indices: &DMatrix<f64>, mean: &[f64], variance: &[f64]) -> Result<WeightVector> {
    let (p, d) = indices.shape();
    if mean.len() != d || variance.len() != d {
        return Err(Error::invalid("observations", "output count differs from the Sobol matrix"));
    }
    if let Some(i) = variance.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::invalid("observations", format!("output {i} has zero observational variance")));
    }
    let raw: Vec<f64> = (0..p)
        .map(|j| (0..d).map(|i| indices[(j, i)].max(0.0) * mean[i] * mean[i] / variance[i]).sum())
        .collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::InsufficientData("all Sobol weights vanish".into()));
    }
    Ok(WeightVector {
        weights: raw.iter().map(|w| w / total).collect(),
    })
}

/// Input weights from the surrogate mean map and joint observations.
pub fn sobol_weights<F>(f: F, design: &ParamBox, obs: &ObservationSet, n: usize, seed: u64) -> Result<(WeightVector, SobolIndices)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let var: Vec<f64> = (0..obs.outputs.len()).map(|i| obs.cov[(i, i)]).collect();
    if let Some(i) = var.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::invalid(obs.outputs[i].name(), "zero observational variance"));
    }
    let s = sobol_indices(f, design, n, seed)?;
    Ok((weights_from_indices(&s.first_order, &obs.mean, &var)?, s))
}
