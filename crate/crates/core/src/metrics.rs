//! Surrogate validation metrics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataset::TrainingDataset;
use crate::error::{Error, Result};
use crate::surrogate::GpSurrogate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputMetrics {
    pub nmae: f64,
    pub nrmse: f64,
    pub q2: f64,
}

/// NMAE, NRMSE (both normalized by the absolute test-output mean) and Q²
/// for every output column.
pub fn regression_metrics_raw(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Vec<OutputMetrics>> {
    let n = truth.len();
    if n < 2 || pred.len() != n {
        return Err(Error::InsufficientData(format!("need >= 2 paired test rows, got {n}")));
    }
    let d = truth[0].len();
    (0..d)
        .map(|j| {
            let nf = n as f64;
            let mean = truth.iter().map(|z| z[j]).sum::<f64>() / nf;
            if mean == 0.0 {
                return Err(Error::invalid("test set", format!("output {j} has zero mean")));
            }
            let mae = pred.iter().zip(truth).map(|(m, z)| (m[j] - z[j]).abs()).sum::<f64>() / nf;
            let sse = pred.iter().zip(truth).map(|(m, z)| (m[j] - z[j]).powi(2)).sum::<f64>();
            let sst = truth.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>();
            Ok(OutputMetrics {
                nmae: mae / mean.abs(),
                nrmse: (sse / nf).sqrt() / mean.abs(),
                q2: 1.0 - sse / sst,
            })
        })
        .collect()
}

pub fn chi2_quantile(level: f64, dof: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("alpha", format!("level must lie in (0, 1), got {level}")));
    }
    let chi = ChiSquared::new(dof as f64).map_err(|e| Error::invalid("dof", e.to_string()))?;
    Ok(chi.inverse_cdf(level))
}

/// Squared Mahalanobis distance `r^T C^-1 r`, with jitter escalation on
/// Cholesky failure.
pub fn mahalanobis2(r: &[f64], c: &DMatrix<f64>) -> Result<f64> {
    let d = r.len();
    let scale = (c.trace() / d as f64).abs().max(f64::MIN_POSITIVE);
    for jitter in [0.0, 1e-12, 1e-10, 1e-8, 1e-6] {
        let cj = c + DMatrix::identity(d, d) * (jitter * scale);
        if let Some(ch) = cj.cholesky() {
            let v = ch.solve(&DVector::from_column_slice(r));
            return Ok(r.iter().zip(v.iter()).map(|(a, b)| a * b).sum());
        }
    }
    Err(Error::NotPositiveDefinite {
        jitter: 1e-6,
        context: "predictive covariance in coverage".into(),
    })
}

/// Fraction of test points inside the `alpha` credible ellipsoid, for each level.
pub fn coverage_raw(distances2: &[f64], dof: usize, levels: &[f64]) -> Result<Vec<f64>> {
    levels
        .iter()
        .map(|&a| {
            let q = chi2_quantile(a, dof)?;
            Ok(distances2.iter().filter(|&&m| m <= q).count() as f64 / distances2.len() as f64)
        })
        .collect()
}

pub fn regression_metrics(gp: &GpSurrogate, test: &TrainingDataset) -> Result<Vec<OutputMetrics>> {
    let pred: Vec<Vec<f64>> = (0..test.n())
        .map(|i| gp.predict(&test.input_row(i)).map(|p| p.0))
        .collect::<Result<_>>()?;
    let truth: Vec<Vec<f64>> = (0..test.n()).map(|i| test.output_row(i)).collect();
    regression_metrics_raw(&pred, &truth)
}

/// Squared Mahalanobis distances of the test targets under the predictive
/// distribution of a new noisy target.
pub fn test_distances(gp: &GpSurrogate, test: &TrainingDataset) -> Result<Vec<f64>> {
    (0..test.n())
        .map(|i| {
            let known = test.noise.as_ref().map(|c| &c[i]);
            let (m, c) = gp.predict_observed(&test.input_row(i), known)?;
            let r: Vec<f64> = m.iter().zip(test.output_row(i)).map(|(a, b)| b - a).collect();
            mahalanobis2(&r, &c)
        })
        .collect()
}

pub fn coverage_curve(gp: &GpSurrogate, test: &TrainingDataset, levels: &[f64]) -> Result<Vec<f64>> {
    coverage_raw(&test_distances(gp, test)?, gp.output_dim(), levels)
}

/// Mean over the test inputs of `det C(x)`, with `C(x)` the predictive
/// covariance including the fitted nugget (the latent part alone is rank
/// deficient when there are fewer latent processes than outputs).
pub fn mcd(gp: &GpSurrogate, inputs: &[Vec<f64>]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::InsufficientData("MCD needs at least one input".into()));
    }
    let mut s = 0.0;
    for x in inputs {
        s += gp.predict_observed(x, None)?.1.determinant();
    }
    Ok(s / inputs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub outputs: Vec<String>,
    pub metrics: Vec<OutputMetrics>,
    pub levels: Vec<f64>,
    pub coverage: Vec<f64>,
    pub mcd: f64,
    pub n_test: usize,
}

pub const DEFAULT_LEVELS: [f64; 19] = [
    0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95,
];

pub fn validate(gp: &GpSurrogate, test: &TrainingDataset, levels: &[f64]) -> Result<ValidationReport> {
    let inputs: Vec<Vec<f64>> = (0..test.n()).map(|i| test.input_row(i)).collect();
    Ok(ValidationReport {
        outputs: gp.outputs().iter().map(|o| o.name().to_string()).collect(),
        metrics: regression_metrics(gp, test)?,
        levels: levels.to_vec(),
        coverage: coverage_curve(gp, test, levels)?,
        mcd: mcd(gp, &inputs)?,
        n_test: test.n(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let m = regression_metrics_raw(&[vec![1.0], vec![1.0]], &[vec![1.0], vec![3.0]]).unwrap();
        assert!((m[0].nmae - 0.5).abs() < 1e-15);
        assert!((m[0].q2 + 1.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let truth = vec![vec![1.0], vec![2.0], vec![4.0]];
        let m = regression_metrics_raw(&truth, &truth).unwrap();
        assert_eq!((m[0].nmae, m[0].nrmse, m[0].q2), (0.0, 0.0, 1.0));
        let mean = vec![vec![7.0 / 3.0]; 3];
        let m = regression_metrics_raw(&mean, &truth).unwrap();
        assert!(m[0].q2.abs() < 1e-14);
    }

    #[test]
    fn zero_mean_output_rejected() {
        assert!(regression_metrics_raw(&[vec![1.0], vec![1.0]], &[vec![-1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn chi2_table_value() {
        assert!((chi2_quantile(0.95, 3).unwrap() - 7.815).abs() < 1e-3);
    }
}
