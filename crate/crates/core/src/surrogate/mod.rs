//! Multi-output Gaussian-process surrogate (linear model of
//! coregionalization) with exact inference.
//!
//! Outputs are optionally log-transformed, a prior mean is subtracted, and
//! the residuals are divided by their root-mean-square. The prior mean is the
//! point model for neutron outputs (when all neutron inputs are present) and
//! the training average otherwise. Predictions are mapped back to physical
//! units; log-modelled outputs use the first-order delta method.

pub mod kernel;
pub mod lml;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingDataset;
use crate::error::{Error, Result};
use crate::optim::{minimize_box, LbfgsSettings};
use crate::pointmodel::{neutron_prior_mean, NuclearData};
use crate::space::{Output, ParamBox, Parameter};
use kernel::{inverse_squares, matern52};
pub use lml::Hyper;
use lml::Problem;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMean {
    /// Point model for neutron outputs, training average for the rest.
    PointModel,
    Average,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub latents: usize,
    pub prior: PriorMean,
    /// Outputs modelled on the log scale.
    pub log_outputs: Vec<Output>,
    /// Include the per-row estimation covariance of the dataset, if present.
    pub known_noise: bool,
    pub restarts: usize,
    pub max_iter: usize,
    /// Max iterations for the warm-started refit in `add_points`.
    pub refit_max_iter: usize,
    pub lengthscale_bounds: [f64; 2],
    pub mixing_bound: f64,
    pub noise_bounds: [f64; 2],
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            latents: 3,
            prior: PriorMean::PointModel,
            log_outputs: Output::GAMMA.to_vec(),
            known_noise: true,
            restarts: 3,
            max_iter: 150,
            refit_max_iter: 40,
            lengthscale_bounds: [0.03, 20.0],
            mixing_bound: 10.0,
            noise_bounds: [1e-8, 1.0],
            seed: 0,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latents == 0 {
            return Err(Error::invalid("latents", "must be >= 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts", "must be >= 1"));
        }
        let [a, b] = self.lengthscale_bounds;
        if !(a > 0.0 && a < b) {
            return Err(Error::invalid("lengthscale_bounds", "need 0 < lower < upper"));
        }
        let [a, b] = self.noise_bounds;
        if !(a > 0.0 && a < b) {
            return Err(Error::invalid("noise_bounds", "need 0 < lower < upper"));
        }
        if !(self.mixing_bound > 0.0) {
            return Err(Error::invalid("mixing_bound", "must be > 0"));
        }
        Ok(())
    }
}

/// Serialized form; the training data is referenced by content hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Stored {
    version: u32,
    config: SurrogateConfig,
    params: Vec<Parameter>,
    outputs: Vec<Output>,
    design: ParamBox,
    nuclear_data: Option<NuclearData>,
    lengthscales: Vec<Vec<f64>>,
    mixing: Vec<Vec<f64>>,
    noise: Vec<f64>,
    offsets: Vec<f64>,
    scales: Vec<f64>,
    log_marginal_likelihood: f64,
    training_hash: String,
}

#[derive(Debug, Clone)]
struct Cache {
    /// `M_qp = sum_jk a_jq a_kp (K^-1)_jk`, `Qn x Qn`.
    m: DMatrix<f64>,
    /// `beta_q = sum_j a_jq alpha_j`, `Q` vectors of length `n`.
    beta: Vec<DVector<f64>>,
    inv_l2: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    config: SurrogateConfig,
    training: TrainingDataset,
    nuclear_data: Option<NuclearData>,
    hyper: Hyper,
    /// Per-output constant part of the prior mean (transformed scale).
    offsets: Vec<f64>,
    scales: Vec<f64>,
    lml: f64,
    unit: Vec<Vec<f64>>,
    cache: Cache,
}

/// Canonical row order (lexicographic in normalized inputs) so that fits do
/// not depend on the order rows were supplied in.
fn canonical(ds: &TrainingDataset) -> Result<TrainingDataset> {
    let u = ds.unit_inputs();
    let mut idx: Vec<usize> = (0..ds.n()).collect();
    idx.sort_by(|&a, &b| {
        u[a].iter()
            .zip(&u[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    ds.rows(&idx)
}

struct Standardized {
    offsets: Vec<f64>,
    scales: Vec<f64>,
    problem: Problem,
}

fn is_log(config: &SurrogateConfig, o: Output) -> bool {
    config.log_outputs.contains(&o)
}

fn point_model_block(params: &[Parameter], outputs: &[Output], prior: PriorMean) -> Option<([usize; 4], [usize; 3])> {
    if prior != PriorMean::PointModel {
        return None;
    }
    let pi = Parameter::NEUTRON.map(|p| params.iter().position(|&q| q == p));
    let oi = Output::NEUTRON.map(|o| outputs.iter().position(|&q| q == o));
    if pi.iter().all(Option::is_some) && oi.iter().any(Option::is_some) {
        Some((pi.map(|v| v.unwrap()), oi.map(|v| v.unwrap_or(usize::MAX))))
    } else {
        None
    }
}

/// Input-dependent part of the prior mean on the transformed scale, or `None`
/// for outputs with a constant prior.
fn varying_prior(
    config: &SurrogateConfig,
    params: &[Parameter],
    outputs: &[Output],
    data: Option<&NuclearData>,
    x: &[f64],
) -> Result<Vec<Option<f64>>> {
    let mut out = vec![None; outputs.len()];
    if let (Some((pi, oi)), Some(data)) = (point_model_block(params, outputs, config.prior), data) {
        let xn = pi.map(|j| x[j]);
        let pm = neutron_prior_mean(&xn, data)?;
        for (k, &j) in oi.iter().enumerate() {
            if j != usize::MAX {
                out[j] = Some(if is_log(config, outputs[j]) { pm[k].ln() } else { pm[k] });
            }
        }
    }
    Ok(out)
}

fn standardize(ds: &TrainingDataset, config: &SurrogateConfig, data: Option<&NuclearData>) -> Result<Standardized> {
    let (n, d) = (ds.n(), ds.outputs.len());
    let mut z = DMatrix::zeros(n, d);
    let mut varying = vec![vec![None; d]; n];
    for i in 0..n {
        varying[i] = varying_prior(config, &ds.params, &ds.outputs, data, &ds.input_row(i))?;
        for j in 0..d {
            let y = ds.y[(i, j)];
            z[(i, j)] = if is_log(config, ds.outputs[j]) {
                if !(y > 0.0) {
                    return Err(Error::invalid(
                        ds.outputs[j].name(),
                        format!("log-modelled output must be > 0, row {i} has {y}"),
                    ));
                }
                y.ln()
            } else {
                y
            };
        }
    }
    let mut offsets = vec![0.0; d];
    let mut scales = vec![1.0; d];
    let mut r = vec![0.0; n * d];
    for j in 0..d {
        let has_varying = varying.iter().all(|v| v[j].is_some());
        offsets[j] = match (has_varying, config.prior) {
            (true, _) | (false, PriorMean::Zero) => 0.0,
            _ => (0..n).map(|i| z[(i, j)]).sum::<f64>() / n as f64,
        };
        for i in 0..n {
            r[j * n + i] = z[(i, j)] - offsets[j] - varying[i][j].unwrap_or(0.0);
        }
        let rms = (r[j * n..(j + 1) * n].iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        scales[j] = if rms > 0.0 { rms } else { 1.0 };
        for v in &mut r[j * n..(j + 1) * n] {
            *v /= scales[j];
        }
    }
    let known = match (&ds.noise, config.known_noise) {
        (Some(cov), true) => Some(
            (0..n)
                .map(|i| {
                    let t: Vec<f64> = (0..d)
                        .map(|j| {
                            let dz = if is_log(config, ds.outputs[j]) { 1.0 / ds.y[(i, j)] } else { 1.0 };
                            dz / scales[j]
                        })
                        .collect();
                    let mut m = vec![0.0; d * d];
                    for j in 0..d {
                        for k in 0..d {
                            m[j * d + k] = t[j] * cov[i][(j, k)] * t[k];
                        }
                    }
                    m
                })
                .collect(),
        ),
        _ => None,
    };
    Ok(Standardized {
        offsets,
        scales,
        problem: Problem {
            u: ds.unit_inputs(),
            r,
            known,
            d,
        },
    })
}

struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn bounds(config: &SurrogateConfig, q: usize, p: usize, d: usize) -> Bounds {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let [l0, l1] = config.lengthscale_bounds;
    lower.extend(std::iter::repeat_n(l0.ln(), q * p));
    upper.extend(std::iter::repeat_n(l1.ln(), q * p));
    lower.extend(std::iter::repeat_n(-config.mixing_bound, d * q));
    upper.extend(std::iter::repeat_n(config.mixing_bound, d * q));
    let [s0, s1] = config.noise_bounds;
    lower.extend(std::iter::repeat_n(s0.ln(), d));
    upper.extend(std::iter::repeat_n(s1.ln(), d));
    Bounds { lower, upper }
}

fn initial_hyper(config: &SurrogateConfig, start: usize, p: usize, d: usize, rng: &mut ChaCha8Rng) -> Hyper {
    let q = config.latents;
    let clamp_l = |v: f64| v.clamp(config.lengthscale_bounds[0], config.lengthscale_bounds[1]);
    let clamp_s = |v: f64| v.clamp(config.noise_bounds[0], config.noise_bounds[1]);
    if start == 0 {
        return Hyper {
            lengthscales: vec![vec![clamp_l(0.5); p]; q],
            mixing: (0..d)
                .map(|j| (0..q).map(|qq| if j % q == qq { 0.9 } else { 0.2 }).collect())
                .collect(),
            noise: vec![clamp_s(1e-2); d],
        };
    }
    let lo = 0.1f64.ln();
    let hi = 2.0f64.ln();
    Hyper {
        lengthscales: (0..q)
            .map(|_| (0..p).map(|_| clamp_l(rng.random_range(lo..hi).exp())).collect())
            .collect(),
        mixing: (0..d)
            .map(|_| (0..q).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
        noise: (0..d)
            .map(|_| clamp_s(rng.random_range(1e-4f64.ln()..1e-1f64.ln()).exp()))
            .collect(),
    }
}

fn optimize(problem: &Problem, config: &SurrogateConfig, starts: &[Hyper], max_iter: usize) -> Result<(Hyper, f64)> {
    let (p, d, q) = (problem.p(), problem.d, config.latents);
    let b = bounds(config, q, p, d);
    let settings = LbfgsSettings {
        max_iter,
        ..Default::default()
    };
    let mut best: Option<(Hyper, f64)> = None;
    let mut last_err = None;
    for (s, h0) in starts.iter().enumerate() {
        let objective = |theta: &[f64]| {
            let h = Hyper::from_theta(theta, q, p, d);
            problem
                .evaluate(&h)
                .ok()
                .map(|e| (-e.lml, e.grad.iter().map(|g| -g).collect()))
        };
        match minimize_box(objective, &h0.to_theta(), &b.lower, &b.upper, &settings) {
            Ok(m) => {
                log::info!(
                    "start {s}: log marginal likelihood {} after {} iterations (converged: {})",
                    -m.f,
                    m.iterations,
                    m.converged
                );
                if best.as_ref().is_none_or(|(_, v)| -m.f > *v) {
                    best = Some((Hyper::from_theta(&m.x, q, p, d), -m.f));
                }
            }
            Err(e) => {
                log::warn!("start {s} failed: {e}");
                last_err = Some(e);
            }
        }
    }
    best.ok_or_else(|| {
        Error::Optimization(format!(
            "all {} starts failed; last error: {}",
            starts.len(),
            last_err.map(|e| e.to_string()).unwrap_or_default()
        ))
    })
}

impl GpSurrogate {
    pub fn train(ds: &TrainingDataset, config: &SurrogateConfig, data: Option<&NuclearData>) -> Result<Self> {
        config.validate()?;
        let ds = canonical(ds)?;
        let data = Self::needs_data(&ds, config, data)?;
        let st = standardize(&ds, config, data.as_ref())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let starts: Vec<Hyper> = (0..config.restarts)
            .map(|s| initial_hyper(config, s, ds.params.len(), ds.outputs.len(), &mut rng))
            .collect();
        let (hyper, lml) = optimize(&st.problem, config, &starts, config.max_iter)?;
        Self::assemble(config.clone(), ds, data, hyper, st, lml)
    }

    fn needs_data(ds: &TrainingDataset, config: &SurrogateConfig, data: Option<&NuclearData>) -> Result<Option<NuclearData>> {
        if point_model_block(&ds.params, &ds.outputs, config.prior).is_some() {
            Ok(Some(data.cloned().ok_or_else(|| {
                Error::invalid("nuclear_data", "point-model prior mean requires nuclear data")
            })?))
        } else {
            Ok(None)
        }
    }

    fn assemble(
        config: SurrogateConfig,
        training: TrainingDataset,
        nuclear_data: Option<NuclearData>,
        hyper: Hyper,
        st: Standardized,
        lml: f64,
    ) -> Result<Self> {
        let f = st.problem.factor(&hyper)?;
        let (n, d, q) = (training.n(), training.outputs.len(), hyper.latents());
        let mut m = DMatrix::zeros(q * n, q * n);
        let a = &hyper.mixing;
        for k in 0..d {
            for l in 0..n {
                let col = f.kinv.col_as_slice(k * n + l);
                for j in 0..d {
                    let block = &col[j * n..(j + 1) * n];
                    for qq in 0..q {
                        for pp in 0..q {
                            let c = a[j][qq] * a[k][pp];
                            if c == 0.0 {
                                continue;
                            }
                            let mut dst = m.column_mut(pp * n + l);
                            let dst = &mut dst.as_mut_slice()[qq * n..(qq + 1) * n];
                            for (t, v) in dst.iter_mut().zip(block) {
                                *t += c * v;
                            }
                        }
                    }
                }
            }
        }
        let beta = (0..q)
            .map(|qq| DVector::from_fn(n, |i, _| (0..d).map(|j| a[j][qq] * f.alpha[j * n + i]).sum()))
            .collect();
        let inv_l2 = hyper.lengthscales.iter().map(|l| inverse_squares(l)).collect();
        Ok(Self {
            config,
            unit: st.problem.u,
            training,
            nuclear_data,
            hyper,
            offsets: st.offsets,
            scales: st.scales,
            lml,
            cache: Cache { m, beta, inv_l2 },
        })
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn training(&self) -> &TrainingDataset {
        &self.training
    }

    pub fn params(&self) -> &[Parameter] {
        &self.training.params
    }

    pub fn outputs(&self) -> &[Output] {
        &self.training.outputs
    }

    pub fn design(&self) -> &ParamBox {
        &self.training.design
    }

    pub fn input_dim(&self) -> usize {
        self.training.params.len()
    }

    pub fn output_dim(&self) -> usize {
        self.training.outputs.len()
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// Standardized mean and latent covariance at `x`, both on the
    /// transformed scale before de-standardization.
    fn predict_standardized(&self, x: &[f64], with_cov: bool) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid("x", format!("expected {} components, got {}", self.input_dim(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("x", "non-finite input"));
        }
        let u = self.training.design.to_unit(x);
        if u.iter().any(|v| !(-1e-9..=1.0 + 1e-9).contains(v)) {
            log::debug!("prediction outside the design box at {x:?}");
        }
        let (n, q, d) = (self.training.n(), self.hyper.latents(), self.output_dim());
        let kv: Vec<DVector<f64>> = (0..q)
            .map(|qq| DVector::from_fn(n, |i, _| matern52(&u, &self.unit[i], &self.cache.inv_l2[qq])))
            .collect();
        let a = &self.hyper.mixing;
        let lat_mean: Vec<f64> = (0..q).map(|qq| kv[qq].dot(&self.cache.beta[qq])).collect();
        let mean: Vec<f64> = (0..d).map(|j| (0..q).map(|qq| a[j][qq] * lat_mean[qq]).sum()).collect();
        if !with_cov {
            return Ok((mean, DMatrix::zeros(d, d)));
        }
        let mut v = DMatrix::zeros(q, q);
        for pp in 0..q {
            let w = self.cache.m.columns(pp * n, n) * &kv[pp];
            for qq in 0..q {
                v[(qq, pp)] = kv[qq].dot(&w.rows(qq * n, n));
            }
        }
        let lat = DMatrix::identity(q, q) - v;
        let lat = psd_part((&lat + lat.transpose()) * 0.5);
        let am = DMatrix::from_fn(d, q, |j, qq| a[j][qq]);
        let cov = &am * lat * am.transpose();
        Ok((mean, (&cov + cov.transpose()) * 0.5))
    }

    fn prior_offsets(&self, x: &[f64]) -> Result<Vec<f64>> {
        let varying = varying_prior(
            &self.config,
            &self.training.params,
            &self.training.outputs,
            self.nuclear_data.as_ref(),
            x,
        )?;
        Ok(self.offsets.iter().zip(varying).map(|(o, v)| o + v.unwrap_or(0.0)).collect())
    }

    /// Predictive mean `m(x)` and latent covariance `C(x)` in physical units.
    pub fn predict(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (ms, cs) = self.predict_standardized(x, true)?;
        self.to_physical(x, &ms, cs)
    }

    /// Predictive mean only; skips the covariance computation.
    pub fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (ms, cs) = self.predict_standardized(x, false)?;
        Ok(self.to_physical(x, &ms, cs)?.0)
    }

    /// Prior mean in physical units.
    pub fn prior_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.prior_offsets(x)?;
        Ok(z.iter()
            .zip(&self.training.outputs)
            .map(|(v, &o)| if is_log(&self.config, o) { v.exp() } else { *v })
            .collect())
    }

    fn to_physical(&self, x: &[f64], ms: &[f64], cs: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let base = self.prior_offsets(x)?;
        let d = self.output_dim();
        let mut mean = vec![0.0; d];
        let mut jac = vec![0.0; d];
        for j in 0..d {
            let z = base[j] + self.scales[j] * ms[j];
            if is_log(&self.config, self.training.outputs[j]) {
                mean[j] = z.exp();
                jac[j] = mean[j] * self.scales[j];
            } else {
                mean[j] = z;
                jac[j] = self.scales[j];
            }
        }
        let cov = DMatrix::from_fn(d, d, |j, k| jac[j] * cs[(j, k)] * jac[k]);
        Ok((mean, cov))
    }

    /// Nugget covariance at `x` in physical units (delta method for log outputs).
    pub fn nugget(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let (mean, _) = self.predict(x)?;
        let d = self.output_dim();
        Ok(DMatrix::from_fn(d, d, |j, k| {
            if j != k {
                return 0.0;
            }
            let s = self.scales[j] * if is_log(&self.config, self.training.outputs[j]) { mean[j] } else { 1.0 };
            s * s * self.hyper.noise[j]
        }))
    }

    /// Covariance of a new noisy target at `x`: latent covariance plus the
    /// fitted nugget plus an optional known estimation covariance.
    pub fn predict_observed(&self, x: &[f64], known: Option<&DMatrix<f64>>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let (mean, mut cov) = self.predict(x)?;
        cov += self.nugget(x)?;
        if let Some(k) = known.filter(|_| self.config.known_noise) {
            cov += k;
        }
        Ok((mean, cov))
    }

    /// Refits on the union with `new`, warm-started from the current
    /// hyperparameters. Duplicated inputs are rejected with their index in `new`.
    pub fn add_points(&self, new: &TrainingDataset) -> Result<Self> {
        if new.n() == 0 {
            return Ok(self.clone());
        }
        let union = canonical(&self.training.append(new)?)?;
        let st = standardize(&union, &self.config, self.nuclear_data.as_ref())?;
        let (hyper, lml) = optimize(
            &st.problem,
            &self.config,
            std::slice::from_ref(&self.hyper),
            self.config.refit_max_iter,
        )?;
        Self::assemble(self.config.clone(), union, self.nuclear_data.clone(), hyper, st, lml)
    }

    /// Conditions on the union with `new` keeping the current hyperparameters.
    pub fn condition_on(&self, new: &TrainingDataset) -> Result<Self> {
        if new.n() == 0 {
            return Ok(self.clone());
        }
        let union = self.training.append(new)?;
        Self::with_hyper(&union, &self.config, self.nuclear_data.as_ref(), self.hyper.clone())
    }

    /// Rebuilds a surrogate with fixed hyperparameters (no optimization).
    pub fn with_hyper(
        ds: &TrainingDataset,
        config: &SurrogateConfig,
        data: Option<&NuclearData>,
        hyper: Hyper,
    ) -> Result<Self> {
        config.validate()?;
        let ds = canonical(ds)?;
        let data = Self::needs_data(&ds, config, data)?;
        let st = standardize(&ds, config, data.as_ref())?;
        let lml = st.problem.evaluate(&hyper)?.lml;
        Self::assemble(config.clone(), ds, data, hyper, st, lml)
    }

    /// Standardized training problem, exposed for likelihood checks.
    pub fn problem(ds: &TrainingDataset, config: &SurrogateConfig, data: Option<&NuclearData>) -> Result<Problem> {
        let ds = canonical(ds)?;
        let data = Self::needs_data(&ds, config, data)?;
        Ok(standardize(&ds, config, data.as_ref())?.problem)
    }

    pub fn training_hash(&self) -> String {
        self.training.content_hash()
    }

    pub fn to_json(&self) -> Result<String> {
        let stored = Stored {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            params: self.training.params.clone(),
            outputs: self.training.outputs.clone(),
            design: self.training.design.clone(),
            nuclear_data: self.nuclear_data.clone(),
            lengthscales: self.hyper.lengthscales.clone(),
            mixing: self.hyper.mixing.clone(),
            noise: self.hyper.noise.clone(),
            offsets: self.offsets.clone(),
            scales: self.scales.clone(),
            log_marginal_likelihood: self.lml,
            training_hash: self.training_hash(),
        };
        Ok(serde_json::to_string_pretty(&stored)?)
    }

    /// Restores a surrogate from `to_json` output and the training data it
    /// was fitted on (verified by content hash).
    pub fn from_json(text: &str, training: &TrainingDataset) -> Result<Self> {
        let s: Stored = serde_json::from_str(text)?;
        if s.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported surrogate format version {}", s.version)));
        }
        let ds = canonical(training)?;
        if ds.content_hash() != s.training_hash {
            return Err(Error::Format("training data does not match the surrogate's content hash".into()));
        }
        if ds.params != s.params || ds.outputs != s.outputs {
            return Err(Error::Format("training data columns differ from the surrogate".into()));
        }
        let hyper = Hyper {
            lengthscales: s.lengthscales,
            mixing: s.mixing,
            noise: s.noise,
        };
        let st = standardize(&ds, &s.config, s.nuclear_data.as_ref())?;
        Self::assemble(s.config, ds, s.nuclear_data, hyper, st, s.log_marginal_likelihood)
    }
}

/// Drops negative eigenvalues left by cancellation in `I - k^T K^-1 k`.
fn psd_part(m: DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return m.map(|v| v.max(0.0));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&e| e >= 0.0) {
        return m;
    }
    let clamped = eig.eigenvalues.map(|e| e.max(0.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}
