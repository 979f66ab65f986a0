//! Bayesian inverse problems on GP surrogates: the surrogate-aware Gaussian
//! likelihood, priors (uniform box or KDE-chained), Adaptive Metropolis
//! sampling and the neutron-only, sequential and joint pipelines.

pub mod kde;
pub mod mcmc;

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::moments::{empirical_covariance, observation_mean, observe_joint, BinningSettings};
use crate::optim::{nelder_mead, NelderMeadSettings};
use crate::pointmodel::NuclearData;
use crate::seed;
use crate::simulator::{simulate_timelist, MaterialInput};
use crate::space::{Output, ParamBox, Parameter};
use crate::surrogate::GpSurrogate;
pub use kde::{Kde, KdeMode};
pub use mcmc::{run_adaptive_metropolis, AmConfig, Chain};

/// Replicated observations of a set of outputs: their mean, the covariance
/// of a single replicate and the replicate count `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub outputs: Vec<Output>,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl ObservationSet {
    pub fn from_replicates(outputs: Vec<Output>, replicates: &[Vec<f64>]) -> Result<Self> {
        if replicates.iter().any(|r| r.len() != outputs.len()) {
            return Err(Error::invalid("observations", "replicate length differs from output count"));
        }
        let cov = empirical_covariance(replicates)?;
        Ok(Self {
            outputs,
            mean: observation_mean(replicates)?,
            cov,
            count: replicates.len(),
        })
    }

    /// Observations with a user-supplied single-replicate covariance.
    pub fn with_covariance(outputs: Vec<Output>, mean: Vec<f64>, cov: DMatrix<f64>, count: usize) -> Result<Self> {
        let d = outputs.len();
        if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
            return Err(Error::invalid("observations", "dimension mismatch"));
        }
        if count == 0 {
            return Err(Error::invalid("observations", "count must be >= 1"));
        }
        Ok(Self {
            outputs,
            mean,
            cov,
            count,
        })
    }

    pub fn select(&self, outputs: &[Output]) -> Result<Self> {
        let idx: Vec<usize> = outputs
            .iter()
            .map(|o| {
                self.outputs
                    .iter()
                    .position(|q| q == o)
                    .ok_or_else(|| Error::invalid(o.name(), "not among the observed outputs"))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            outputs: outputs.to_vec(),
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            cov: self.cov.select_rows(&idx).select_columns(&idx),
            count: self.count,
        })
    }

    /// Covariance of the replicate mean, `C_obs / N`.
    pub fn mean_covariance(&self) -> DMatrix<f64> {
        &self.cov / self.count as f64
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for o in &self.outputs {
            h.update(o.name().as_bytes());
        }
        for v in self.mean.iter().chain(self.cov.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((self.count as u64).to_le_bytes());
        hex::encode(h.finalize())
    }
}

/// Simulates `replicates` independent measurements at `truth` and reduces
/// each with sequential binning to a joint observation vector.
pub fn synthetic_observations(
    truth: &MaterialInput,
    data: &NuclearData,
    duration: f64,
    replicates: usize,
    binning: &BinningSettings,
    seed: u64,
) -> Result<ObservationSet> {
    let obs = (0..replicates)
        .map(|r| {
            let list = simulate_timelist(truth, data, duration, seed::derive(seed, &format!("replicate-{r}")))?;
            Ok(observe_joint(&list, data.alpha, binning)?.values)
        })
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::from_replicates(Output::ALL.to_vec(), &obs)
}

/// Gaussian log-density of `y` with mean `m` and covariance `c`, with jitter
/// escalation on Cholesky failure.
pub fn gaussian_log_likelihood(y: &[f64], m: &[f64], c: &DMatrix<f64>) -> Result<f64> {
    let d = y.len();
    let r = DVector::from_iterator(d, y.iter().zip(m).map(|(a, b)| a - b));
    let scale = (c.trace() / d as f64).abs().max(f64::MIN_POSITIVE);
    for jitter in [0.0, 1e-12, 1e-10, 1e-8, 1e-6] {
        let cj = if jitter == 0.0 {
            c.clone()
        } else {
            c + DMatrix::identity(d, d) * (jitter * scale)
        };
        if let Some(ch) = cj.cholesky() {
            let l = ch.l();
            let logdet = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
            let quad = r.dot(&ch.solve(&r));
            return Ok(-0.5 * logdet - 0.5 * quad - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln());
        }
    }
    Err(Error::NotPositiveDefinite {
        jitter: 1e-6,
        context: "combined surrogate and observation covariance".into(),
    })
}

/// Likelihood of replicate-averaged observations given the surrogate
/// prediction `(m, C)`: Gaussian with covariance `C + C_obs / N`.
pub fn surrogate_log_likelihood(obs: &ObservationSet, m: &[f64], c: &DMatrix<f64>) -> Result<f64> {
    gaussian_log_likelihood(&obs.mean, m, &(c + obs.mean_covariance()))
}

#[derive(Debug, Clone)]
pub enum Prior {
    Uniform {
        design: ParamBox,
    },
    /// KDE over a subset of coordinates times a uniform density over the
    /// rest, restricted to the box.
    Kde {
        design: ParamBox,
        positions: Vec<usize>,
        kde: Kde,
        samples: Vec<Vec<f64>>,
    },
}

impl Prior {
    pub fn uniform(design: ParamBox) -> Result<Self> {
        design.validate()?;
        Ok(Prior::Uniform { design })
    }

    /// `samples` are rows over `kde_params`, each of which must be in `design`.
    pub fn kde(design: ParamBox, kde_params: &[Parameter], samples: Vec<Vec<f64>>, mode: KdeMode) -> Result<Self> {
        design.validate()?;
        let positions = kde_params
            .iter()
            .map(|&p| {
                design
                    .position(p)
                    .ok_or_else(|| Error::invalid(p.name(), "KDE coordinate not in the prior box"))
            })
            .collect::<Result<_>>()?;
        let kde = Kde::fit(&samples, mode)?;
        Ok(Prior::Kde {
            design,
            positions,
            kde,
            samples,
        })
    }

    pub fn design(&self) -> &ParamBox {
        match self {
            Prior::Uniform { design } | Prior::Kde { design, .. } => design,
        }
    }

    /// Log prior density up to a constant; `-inf` outside the box.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let design = self.design();
        if !design.contains(x) {
            return f64::NEG_INFINITY;
        }
        match self {
            Prior::Uniform { design } => -design.volume().ln(),
            Prior::Kde {
                design,
                positions,
                kde,
                ..
            } => {
                let sub: Vec<f64> = positions.iter().map(|&j| x[j]).collect();
                let rest: f64 = (0..design.dim())
                    .filter(|j| !positions.contains(j))
                    .map(|j| design.width(j).ln())
                    .sum();
                kde.log_density(&sub) - rest
            }
        }
    }

    /// Random point in the support, used to seed chains.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let design = self.design();
        let mut x: Vec<f64> = (0..design.dim())
            .map(|j| design.lower[j] + rng.random::<f64>() * design.width(j))
            .collect();
        if let Prior::Kde { positions, samples, .. } = self {
            let s = &samples[rng.random_range(0..samples.len())];
            for (k, &j) in positions.iter().enumerate() {
                x[j] = s[k];
            }
            design.clamp(&mut x);
        }
        x
    }
}

/// Log posterior of Eq. (surrogate likelihood times prior) over the inputs
/// of one surrogate.
pub struct Posterior<'a> {
    pub gp: &'a GpSurrogate,
    pub obs: ObservationSet,
    pub prior: Prior,
    /// Drop the likelihood term (prior-only target).
    pub prior_only: bool,
}

impl<'a> Posterior<'a> {
    pub fn new(gp: &'a GpSurrogate, obs: &ObservationSet, prior: Prior) -> Result<Self> {
        if prior.design().params != gp.params() {
            return Err(Error::invalid("prior", "prior box parameters differ from the surrogate inputs"));
        }
        Ok(Self {
            gp,
            obs: obs.select(gp.outputs())?,
            prior,
            prior_only: false,
        })
    }

    pub fn params(&self) -> &[Parameter] {
        self.gp.params()
    }

    pub fn design(&self) -> &ParamBox {
        self.prior.design()
    }

    pub fn try_log_posterior(&self, x: &[f64]) -> Result<f64> {
        let lp = self.prior.log_density(x);
        if lp == f64::NEG_INFINITY || self.prior_only {
            return Ok(lp);
        }
        let (m, c) = self.gp.predict_observed(x, None)?;
        Ok(lp + surrogate_log_likelihood(&self.obs, &m, &c)?)
    }

    /// `-inf` outside the support or where the likelihood cannot be evaluated.
    pub fn log_posterior(&self, x: &[f64]) -> f64 {
        self.try_log_posterior(x).unwrap_or(f64::NEG_INFINITY)
    }

    fn unit_target(&self) -> impl Fn(&[f64]) -> f64 + '_ {
        move |u: &[f64]| {
            if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return f64::NEG_INFINITY;
            }
            self.log_posterior(&self.design().from_unit(u))
        }
    }
}

/// Coordinates the sampler moves in. `Log` uses `ln x` for positive scale
/// inputs and `ln(1 - k_p)` for the multiplication factor, which straightens
/// the product-shaped ridges of the Feynman-moment likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Axis {
    Affine,
    Log,
    LogComplement,
}

/// Bijection between a box and the unit cube used by the sampler.
#[derive(Debug, Clone)]
pub struct SamplingMap {
    axes: Vec<(Axis, f64, f64)>,
}

impl SamplingMap {
    pub fn new(design: &ParamBox, coordinates: Coordinates) -> Self {
        let axes = (0..design.dim())
            .map(|j| {
                let (lo, hi) = (design.lower[j], design.upper[j]);
                let axis = match (coordinates, design.params[j]) {
                    (Coordinates::Linear, _) | (_, Parameter::Xs) => Axis::Affine,
                    (_, Parameter::Kp) if hi < 1.0 => Axis::LogComplement,
                    (_, Parameter::Kp) => Axis::Affine,
                    _ if lo > 0.0 => Axis::Log,
                    _ => Axis::Affine,
                };
                match axis {
                    Axis::Affine => (axis, lo, hi),
                    Axis::Log => (axis, lo.ln(), hi.ln()),
                    Axis::LogComplement => (axis, (1.0 - lo).ln(), (1.0 - hi).ln()),
                }
            })
            .collect();
        Self { axes }
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .zip(x)
            .map(|(&(axis, a, b), &v)| {
                let z = match axis {
                    Axis::Affine => v,
                    Axis::Log => v.ln(),
                    Axis::LogComplement => (1.0 - v).ln(),
                };
                ((z - a) / (b - a)).clamp(0.0, 1.0)
            })
            .collect()
    }

    /// Physical point and `ln |dx/du|`.
    pub fn from_unit(&self, u: &[f64]) -> (Vec<f64>, f64) {
        let mut log_jac = 0.0;
        let x = self
            .axes
            .iter()
            .zip(u)
            .map(|(&(axis, a, b), &v)| {
                let z = a + v * (b - a);
                let (x, d) = match axis {
                    Axis::Affine => (z, b - a),
                    Axis::Log => (z.exp(), z.exp() * (b - a)),
                    Axis::LogComplement => (1.0 - z.exp(), z.exp() * (a - b)),
                };
                log_jac += d.abs().ln();
                x
            })
            .collect();
        (x, log_jac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub am: AmConfig,
    /// Prior draws screened for the chain's starting point.
    pub init_draws: usize,
    pub map_restarts: usize,
    pub kde_mode: KdeMode,
    /// Stage-one samples retained (by thinning) for the stage-two KDE.
    pub kde_max_samples: usize,
    pub coordinates: Coordinates,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            am: AmConfig::default(),
            init_draws: 256,
            map_restarts: 4,
            kde_mode: KdeMode::Joint,
            kde_max_samples: 2000,
            coordinates: Coordinates::Log,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub params: Vec<Parameter>,
    pub chain: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub acceptance: f64,
    pub map: Vec<f64>,
    pub map_log_posterior: f64,
    pub seed: u64,
    pub observations_hash: String,
    pub surrogate_hash: String,
}

impl PosteriorSamples {
    pub fn column(&self, p: Parameter) -> Option<Vec<f64>> {
        let j = self.params.iter().position(|&q| q == p)?;
        Some(self.chain.iter().map(|s| s[j]).collect())
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.chain.len() as f64;
        (0..self.params.len())
            .map(|j| self.chain.iter().map(|s| s[j]).sum::<f64>() / n)
            .collect()
    }

    pub fn std(&self, p: Parameter) -> Option<f64> {
        let c = self.column(p)?;
        let n = c.len() as f64;
        let m = c.iter().sum::<f64>() / n;
        Some((c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        empirical_covariance(&self.chain)
    }

    /// Every `k`-th sample so that at most `max` remain.
    pub fn thinned(&self, max: usize) -> Vec<Vec<f64>> {
        let step = self.chain.len().div_ceil(max.max(1)).max(1);
        self.chain.iter().step_by(step).cloned().collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# seed={} observations_hash={} surrogate_hash={} acceptance={}",
            self.seed, self.observations_hash, self.surrogate_hash, self.acceptance
        )?;
        writeln!(w, "# map={:?} map_log_posterior={}", self.map, self.map_log_posterior)?;
        let mut names: Vec<&str> = self.params.iter().map(|p| p.name()).collect();
        names.push("log_posterior");
        writeln!(w, "{}", names.join(","))?;
        for (s, lp) in self.chain.iter().zip(&self.log_posterior) {
            let row: Vec<String> = s.iter().chain(std::iter::once(lp)).map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv<R: std::io::BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("posterior file: {m}"));
        let mut lines = r.lines();
        let mut next = || -> Result<String> { lines.next().ok_or_else(|| bad("truncated"))?.map_err(Error::from) };
        let head = next()?;
        let field = |line: &str, key: &str| -> Result<String> {
            let start = line.find(&format!("{key}=")).ok_or_else(|| bad(key))? + key.len() + 1;
            let rest = &line[start..];
            let end = if rest.starts_with('[') { rest.find(']').map(|i| i + 1) } else { rest.find(' ') };
            Ok(rest[..end.unwrap_or(rest.len())].to_string())
        };
        let seed = field(&head, "seed")?.parse().map_err(|_| bad("seed"))?;
        let observations_hash = field(&head, "observations_hash")?;
        let surrogate_hash = field(&head, "surrogate_hash")?;
        let acceptance = field(&head, "acceptance")?.parse().map_err(|_| bad("acceptance"))?;
        let second = next()?;
        let map: Vec<f64> = serde_json::from_str(&field(&second, "map")?)?;
        let map_log_posterior = field(&second, "map_log_posterior")?.parse().map_err(|_| bad("map_log_posterior"))?;
        let header = next()?;
        let names: Vec<&str> = header.split(',').collect();
        let params = names[..names.len().saturating_sub(1)]
            .iter()
            .map(|n| Parameter::from_name(n).ok_or_else(|| bad(&format!("unknown column {n}"))))
            .collect::<Result<Vec<_>>>()?;
        let (mut chain, mut log_posterior) = (Vec::new(), Vec::new());
        for line in lines {
            let line = line?;
            let v = line
                .split(',')
                .map(|t| t.parse::<f64>().map_err(|_| bad("non-numeric entry")))
                .collect::<Result<Vec<_>>>()?;
            if v.len() != params.len() + 1 {
                return Err(bad("row length"));
            }
            log_posterior.push(v[params.len()]);
            chain.push(v[..params.len()].to_vec());
        }
        Ok(Self {
            params,
            chain,
            log_posterior,
            acceptance,
            map,
            map_log_posterior,
            seed,
            observations_hash,
            surrogate_hash,
        })
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Multi-start Nelder-Mead ascent from the highest chain samples. Falls back
/// to the best chain sample when no local search improves on it.
pub fn find_map<F>(target: F, chain: &[Vec<f64>], log_values: &[f64], restarts: usize, lower: &[f64], upper: &[f64]) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let mut order: Vec<usize> = (0..chain.len()).collect();
    order.sort_by(|&a, &b| log_values[b].total_cmp(&log_values[a]).then(a.cmp(&b)));
    let mut starts: Vec<usize> = Vec::new();
    for &i in &order {
        if starts.len() >= restarts.max(1) {
            break;
        }
        if !starts.iter().any(|&j| chain[j] == chain[i]) {
            starts.push(i);
        }
    }
    let Some(&top) = order.first() else {
        return (Vec::new(), f64::NEG_INFINITY);
    };
    let mut best = (chain[top].clone(), log_values[top]);
    let settings = NelderMeadSettings {
        max_evals: 600,
        initial_step: 0.01,
        f_tol: 1e-12,
    };
    for &i in &starts {
        let m = nelder_mead(|x| -target(x), &chain[i], lower, upper, &settings);
        let v = target(&m.x);
        if v > best.1 {
            best = (m.x, v);
        }
    }
    if best.1 == log_values[top] && starts.is_empty() {
        log::warn!("MAP search produced no improvement; using the best chain sample");
    }
    best
}

/// MAP estimate without sampling: the best of `draws` prior draws refined by
/// Nelder-Mead from the `restarts` highest ones. Returns physical coordinates.
pub fn map_search(post: &Posterior, draws: usize, restarts: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    let design = post.design();
    let target = post.unit_target();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "map-search"));
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(draws);
    let mut vals = Vec::with_capacity(draws);
    for _ in 0..draws.max(1) {
        let u = design.to_unit(&post.prior.draw(&mut rng));
        let v = target(&u);
        if v.is_finite() {
            pts.push(u);
            vals.push(v);
        }
    }
    if pts.is_empty() {
        return Err(Error::Sampler("no prior draw has a finite log posterior".into()));
    }
    let p = design.dim();
    let (u, v) = find_map(&target, &pts, &vals, restarts, &vec![0.0; p], &vec![1.0; p]);
    Ok((design.from_unit(&u), v))
}

/// Samples a posterior in the unit cube of `cfg.coordinates` and returns
/// physical samples. Stored log-posterior values exclude the Jacobian.
pub fn sample_posterior(post: &Posterior, cfg: &InferenceConfig, seed: u64) -> Result<PosteriorSamples> {
    let design = post.design().clone();
    let p = design.dim();
    let map = SamplingMap::new(&design, cfg.coordinates);
    let in_cube = |u: &[f64]| u.iter().all(|v| (0.0..=1.0).contains(v));
    let density = |u: &[f64]| {
        if !in_cube(u) {
            return f64::NEG_INFINITY;
        }
        post.log_posterior(&map.from_unit(u).0)
    };
    let target = |u: &[f64]| {
        if !in_cube(u) {
            return f64::NEG_INFINITY;
        }
        let (x, log_jac) = map.from_unit(u);
        post.log_posterior(&x) + log_jac
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "init"));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..cfg.init_draws.max(1) {
        let u = map.to_unit(&post.prior.draw(&mut rng));
        let v = density(&u);
        if v.is_finite() && best.as_ref().is_none_or(|b| v > b.1) {
            best = Some((u, v));
        }
    }
    let (u0, _) = best.ok_or_else(|| Error::Sampler("no prior draw has a finite log posterior".into()))?;
    let zeros = vec![0.0; p];
    let ones = vec![1.0; p];
    let refined = nelder_mead(
        |u| -density(u),
        &u0,
        &zeros,
        &ones,
        &NelderMeadSettings {
            max_evals: 400,
            initial_step: 0.05,
            f_tol: 1e-8,
        },
    );
    let start = if refined.f.is_finite() { refined.x } else { u0 };
    let chain = run_adaptive_metropolis(&target, &start, seed::derive(seed, "chain"), &cfg.am)?;
    let (physical, log_jac): (Vec<Vec<f64>>, Vec<f64>) = chain.samples.iter().map(|u| map.from_unit(u)).unzip();
    let log_posterior: Vec<f64> = chain.log_target.iter().zip(&log_jac).map(|(t, j)| t - j).collect();
    let (map_u, map_lp) = find_map(&density, &chain.samples, &log_posterior, cfg.map_restarts, &zeros, &ones);
    Ok(PosteriorSamples {
        params: post.params().to_vec(),
        chain: physical,
        log_posterior,
        acceptance: chain.acceptance,
        map: map.from_unit(&map_u).0,
        map_log_posterior: map_lp,
        seed,
        observations_hash: post.obs.content_hash(),
        surrogate_hash: post.gp.training_hash(),
    })
}

/// Inverse problem with a uniform prior over `design` projected on the
/// surrogate inputs.
pub fn single_pipeline(obs: &ObservationSet, gp: &GpSurrogate, design: &ParamBox, cfg: &InferenceConfig, seed: u64) -> Result<PosteriorSamples> {
    let prior = Prior::uniform(design.project(gp.params())?)?;
    sample_posterior(&Posterior::new(gp, obs, prior)?, cfg, seed)
}

pub fn neutron_pipeline(obs: &ObservationSet, gp: &GpSurrogate, design: &ParamBox, cfg: &InferenceConfig, seed: u64) -> Result<PosteriorSamples> {
    single_pipeline(obs, gp, design, cfg, seed)
}

pub fn joint_pipeline(obs: &ObservationSet, gp: &GpSurrogate, design: &ParamBox, cfg: &InferenceConfig, seed: u64) -> Result<PosteriorSamples> {
    if obs.count < 2 && obs.cov.iter().all(|&v| v == 0.0) {
        return Err(Error::InsufficientData("joint inversion needs an observation covariance".into()));
    }
    single_pipeline(obs, gp, design, cfg, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialResult {
    pub first: PosteriorSamples,
    pub second: PosteriorSamples,
    /// Coordinates carried from the first stage into the second-stage prior.
    pub shared: Vec<Parameter>,
}

/// Two-stage inversion: the first posterior (uniform prior) is reduced to
/// the coordinates shared with the second surrogate, turned into a KDE and
/// used as the second-stage prior together with a uniform density over the
/// remaining coordinates.
pub fn sequential_pipeline(
    first: (&ObservationSet, &GpSurrogate),
    second: (&ObservationSet, &GpSurrogate),
    design: &ParamBox,
    cfg: &InferenceConfig,
    seed: u64,
) -> Result<SequentialResult> {
    let stage1 = single_pipeline(first.0, first.1, design, cfg, seed::derive(seed, "stage-1"))
        .map_err(|e| e.in_stage("sequential stage 1"))?;
    let run2 = || -> Result<(PosteriorSamples, Vec<Parameter>)> {
        let second_params = second.1.params();
        let shared: Vec<Parameter> = second_params.iter().copied().filter(|p| stage1.params.contains(p)).collect();
        if shared.is_empty() {
            return Err(Error::invalid("surrogates", "stages share no input coordinates"));
        }
        let cols: Vec<usize> = shared
            .iter()
            .map(|p| stage1.params.iter().position(|q| q == p).unwrap())
            .collect();
        let samples: Vec<Vec<f64>> = stage1
            .thinned(cfg.kde_max_samples)
            .iter()
            .map(|s| cols.iter().map(|&j| s[j]).collect())
            .collect();
        let prior = Prior::kde(design.project(second_params)?, &shared, samples, cfg.kde_mode)?;
        let post = Posterior::new(second.1, second.0, prior)?;
        Ok((sample_posterior(&post, cfg, seed::derive(seed, "stage-2"))?, shared))
    };
    let (stage2, shared) = run2().map_err(|e| e.in_stage("sequential stage 2"))?;
    Ok(SequentialResult {
        first: stage1,
        second: stage2,
        shared,
    })
}

/// Normalized 2-D histogram density of samples over the box, as
/// `(x_center, y_center, density)` rows.
pub fn marginal_grid(samples: &PosteriorSamples, a: Parameter, b: Parameter, design: &ParamBox, bins: usize) -> Result<Vec<[f64; 3]>> {
    let ia = samples.params.iter().position(|&p| p == a).ok_or_else(|| Error::invalid(a.name(), "not sampled"))?;
    let ib = samples.params.iter().position(|&p| p == b).ok_or_else(|| Error::invalid(b.name(), "not sampled"))?;
    let ja = design.position(a).ok_or_else(|| Error::invalid(a.name(), "not in box"))?;
    let jb = design.position(b).ok_or_else(|| Error::invalid(b.name(), "not in box"))?;
    let bins = bins.max(1);
    let mut h = vec![0usize; bins * bins];
    for s in &samples.chain {
        let ua = (s[ia] - design.lower[ja]) / design.width(ja);
        let ub = (s[ib] - design.lower[jb]) / design.width(jb);
        let ka = ((ua * bins as f64) as usize).min(bins - 1);
        let kb = ((ub * bins as f64) as usize).min(bins - 1);
        h[ka * bins + kb] += 1;
    }
    let cell = design.width(ja) * design.width(jb) / (bins * bins) as f64;
    let n = samples.chain.len() as f64;
    let mut out = Vec::with_capacity(bins * bins);
    for ka in 0..bins {
        for kb in 0..bins {
            out.push([
                design.lower[ja] + (ka as f64 + 0.5) * design.width(ja) / bins as f64,
                design.lower[jb] + (kb as f64 + 0.5) * design.width(jb) / bins as f64,
                h[ka * bins + kb] as f64 / (n * cell),
            ]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_surrogate_error_reduces_to_plain_gaussian() {
        let y = [1.0, 2.0];
        let m = [0.5, 2.5];
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let det: f64 = 2.0 * 1.0 - 0.09;
        let inv = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 2.0]) / det;
        let r = DVector::from_row_slice(&[0.5, -0.5]);
        let direct = -0.5 * det.ln() - 0.5 * (r.transpose() * inv * &r)[(0, 0)] - (2.0 * std::f64::consts::PI).ln();
        let got = gaussian_log_likelihood(&y, &m, &c).unwrap();
        assert!((got - direct).abs() < 1e-12);
    }

    #[test]
    fn uniform_prior_support() {
        let b = ParamBox::new(vec![Parameter::Kp], vec![0.0], vec![2.0]).unwrap();
        let p = Prior::uniform(b).unwrap();
        assert_eq!(p.log_density(&[1.0]), -(2.0f64.ln()));
        assert_eq!(p.log_density(&[2.5]), f64::NEG_INFINITY);
    }
}
