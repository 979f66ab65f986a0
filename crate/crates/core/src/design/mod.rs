//! Sequential design: the Constraint Set Query acquisition, Sobol-based
//! input weights, facility input matching and the loop tying them together.

pub mod matching;
pub mod sobol;

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Provenance, TrainingDataset};
use crate::error::{Error, Result};
use crate::inference::{map_search, ObservationSet, Posterior, Prior};
use crate::pointmodel::NuclearData;
use crate::seed;
use crate::simulator::{simulate_targets, FacilityModel};
use crate::space::ParamBox;
use crate::surrogate::GpSurrogate;
pub use matching::{match_inputs, matching_loss, MatchConfig, MatchResult};
pub use sobol::{sobol_indices, sobol_weights, weights_from_indices, SobolIndices, WeightVector, MIN_SOBOL_SAMPLES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsqConfig {
    /// Log-posterior slack defining the admissible set around the MAP.
    pub h: f64,
    pub restarts: usize,
    /// Annealing steps per restart.
    pub steps: usize,
    pub initial_temperature: f64,
    pub final_temperature: f64,
    /// Proposal standard deviation in unit-box coordinates at the start and end.
    pub initial_step: f64,
    pub final_step: f64,
}

impl Default for CsqConfig {
    fn default() -> Self {
        Self {
            h: 2.0,
            restarts: 8,
            steps: 400,
            initial_temperature: 1.0,
            final_temperature: 1e-3,
            initial_step: 0.1,
            final_step: 0.002,
        }
    }
}

impl CsqConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h >= 0.0) {
            return Err(Error::invalid("h", format!("slack must be >= 0, got {}", self.h)));
        }
        if self.restarts == 0 || self.steps == 0 {
            return Err(Error::invalid("restarts", "restarts and steps must be >= 1"));
        }
        if !(self.initial_temperature > 0.0 && self.final_temperature > 0.0) {
            return Err(Error::invalid("temperature", "temperatures must be positive"));
        }
        if !(self.initial_step > 0.0 && self.final_step > 0.0) {
            return Err(Error::invalid("step", "proposal steps must be positive"));
        }
        Ok(())
    }
}

/// Whether `x` lies in `B_h = {x : log p(x_m) - log p(x) <= h}`.
pub fn in_constraint_set(log_post: f64, map_log_post: f64, h: f64) -> bool {
    map_log_post - log_post <= h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsqPoint {
    pub x: Vec<f64>,
    pub objective: f64,
    pub log_posterior: f64,
}

/// Maximizes `objective` over `B_h` inside the box by restarted simulated
/// annealing with a geometric temperature schedule; infeasible proposals are
/// rejected. `map` must be the maximizer of `log_post`.
pub fn csq_query<O, T>(objective: O, log_post: T, map: &[f64], design: &ParamBox, cfg: &CsqConfig, seed: u64) -> Result<CsqPoint>
where
    O: Fn(&[f64]) -> f64,
    T: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    let map_lp = log_post(map);
    if !map_lp.is_finite() {
        return Err(Error::invalid("map", "log posterior is not finite at the MAP"));
    }
    let mut min_violation = f64::INFINITY;
    let mut eval = |u: &[f64]| -> Option<(f64, f64)> {
        let x = design.from_unit(u);
        let lp = log_post(&x);
        let violation = if lp.is_finite() { map_lp - cfg.h - lp } else { f64::INFINITY };
        if violation > 0.0 {
            min_violation = min_violation.min(violation);
            return None;
        }
        let v = objective(&x);
        v.is_finite().then_some((v, lp))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cool = (cfg.final_temperature / cfg.initial_temperature).powf(1.0 / cfg.steps.max(2) as f64);
    let shrink = (cfg.final_step / cfg.initial_step).powf(1.0 / cfg.steps.max(2) as f64);
    let map_u = design.to_unit(map);
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for r in 0..cfg.restarts {
        let start = if r == 0 {
            Some(map_u.clone())
        } else {
            let mut found = None;
            for _ in 0..50 {
                let u: Vec<f64> = map_u
                    .iter()
                    .map(|m| (m + cfg.initial_step * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
                    .collect();
                if eval(&u).is_some() {
                    found = Some(u);
                    break;
                }
            }
            found
        };
        let Some(mut u) = start else { continue };
        let Some((mut fu, mut lpu)) = eval(&u) else { continue };
        let (mut temp, mut step) = (cfg.initial_temperature, cfg.initial_step);
        for _ in 0..cfg.steps {
            let v: Vec<f64> = u
                .iter()
                .map(|a| (a + step * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
                .collect();
            if let Some((fv, lpv)) = eval(&v) {
                if fv >= fu || rng.random::<f64>() < ((fv - fu) / temp).exp() {
                    u = v;
                    fu = fv;
                    lpu = lpv;
                }
                if best.as_ref().is_none_or(|b| fu > b.1) {
                    best = Some((u.clone(), fu, lpu));
                }
            }
            temp *= cool;
            step *= shrink;
        }
        if best.as_ref().is_none_or(|b| fu > b.1) {
            best = Some((u.clone(), fu, lpu));
        }
    }
    let (u, objective_value, _) = best.ok_or(Error::Infeasible {
        violation: min_violation,
    })?;
    let x = design.from_unit(&u);
    let lp = log_post(&x);
    if !in_constraint_set(lp, map_lp, cfg.h) {
        return Err(Error::Infeasible {
            violation: map_lp - cfg.h - lp,
        });
    }
    Ok(CsqPoint {
        x,
        objective: objective_value,
        log_posterior: lp,
    })
}

/// `log det C(x)` of the predictive covariance with nugget, `-inf` when singular.
pub fn log_det_covariance(gp: &GpSurrogate, x: &[f64]) -> f64 {
    match gp.predict_observed(x, None) {
        Ok((_, c)) => log_det(&c),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn log_det(c: &DMatrix<f64>) -> f64 {
    match c.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            2.0 * (0..c.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
        }
        None => f64::NEG_INFINITY,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub n_new: usize,
    pub csq: CsqConfig,
    pub matching: MatchConfig,
    pub sobol_samples: usize,
    /// Simulated measurement per new design point (s).
    pub duration: f64,
    pub trigger_window_alpha: f64,
    pub min_detections: usize,
    pub map_draws: usize,
    pub map_restarts: usize,
    /// Re-optimize hyperparameters after each point instead of conditioning
    /// with the current ones.
    pub refit: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            n_new: 20,
            csq: CsqConfig::default(),
            matching: MatchConfig::default(),
            sobol_samples: MIN_SOBOL_SAMPLES,
            duration: 10.0,
            trigger_window_alpha: 50.0,
            min_detections: 200,
            map_draws: 256,
            map_restarts: 4,
            refit: false,
        }
    }
}

/// One audit-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopRecord {
    pub iteration: usize,
    pub map: Vec<f64>,
    pub target: Vec<f64>,
    pub achieved: Vec<f64>,
    pub knobs: [f64; 6],
    pub match_loss: f64,
    pub relative_errors: [f64; 6],
    pub log_det_before: f64,
    pub log_det_after: f64,
    pub seed: u64,
}

#[derive(Debug)]
pub struct LoopOutcome {
    pub surrogate: GpSurrogate,
    pub records: Vec<LoopRecord>,
    pub weights: Option<WeightVector>,
    /// Error that stopped the loop early, with the partial result kept.
    pub error: Option<Error>,
}

pub struct LoopContext<'a> {
    pub facility: &'a FacilityModel,
    pub data: &'a NuclearData,
    pub design: &'a ParamBox,
}

/// Active-learning loop on the joint surrogate. Each iteration writes one
/// JSON line to `audit` when given.
pub fn csq_loop(
    gp: &GpSurrogate,
    obs: &ObservationSet,
    ctx: &LoopContext,
    cfg: &LoopConfig,
    seed: u64,
    mut audit: Option<&mut dyn Write>,
) -> LoopOutcome {
    let mut out = LoopOutcome {
        surrogate: gp.clone(),
        records: Vec::new(),
        weights: None,
        error: None,
    };
    for it in 0..cfg.n_new {
        let s = seed::derive(seed, &format!("csq-iteration-{it}"));
        match csq_step(&out.surrogate, obs, ctx, cfg, &mut out.weights, it, s) {
            Ok((next, rec)) => {
                if let Some(w) = audit.as_deref_mut() {
                    let line = serde_json::to_string(&rec).map_err(Error::from);
                    if let Err(e) = line.and_then(|l| writeln!(w, "{l}").map_err(Error::from)) {
                        out.error = Some(e.in_stage(format!("csq iteration {it}: audit log")));
                        return out;
                    }
                }
                out.surrogate = next;
                out.records.push(rec);
            }
            Err(e) => {
                out.error = Some(e.in_stage(format!("csq iteration {it}")));
                return out;
            }
        }
    }
    out
}

fn csq_step(
    gp: &GpSurrogate,
    obs: &ObservationSet,
    ctx: &LoopContext,
    cfg: &LoopConfig,
    weights: &mut Option<WeightVector>,
    it: usize,
    s: u64,
) -> Result<(GpSurrogate, LoopRecord)> {
    let box_ = ctx.design.project(gp.params())?;
    let post = Posterior::new(gp, obs, Prior::uniform(box_.clone())?)?;
    let (map, _) = map_search(&post, cfg.map_draws, cfg.map_restarts, seed::derive(s, "map"))?;
    let q = csq_query(
        |x| log_det_covariance(gp, x),
        |x| post.log_posterior(x),
        &map,
        &box_,
        &cfg.csq,
        seed::derive(s, "csq"),
    )?;
    if weights.is_none() {
        let (w, _) = sobol_weights(|x| gp.predict_mean(x), &box_, &post.obs, cfg.sobol_samples, seed::derive(s, "sobol"))?;
        *weights = Some(w);
    }
    let w = weights.as_ref().expect("weights set");
    let target = crate::simulator::MaterialInput::from_slice(&q.x)?;
    let m = match_inputs(ctx.facility, &target, &w.weights, &cfg.matching, seed::derive(s, "match"))?;
    let achieved = m.achieved.to_array().to_vec();
    let window = cfg.trigger_window_alpha / ctx.data.alpha;
    let mut sim = None;
    for attempt in 0..10u64 {
        let sim_seed = seed::derive(s, &format!("simulate-{attempt}"));
        if let Some(r) = simulate_targets(&m.achieved, ctx.data, cfg.duration, window, cfg.min_detections, sim_seed)? {
            sim = Some((r, sim_seed));
            break;
        }
    }
    let ((y, cov), sim_seed) = sim.ok_or_else(|| Error::InsufficientData(format!("iteration {it}: too few detections")))?;
    let training = gp.training();
    let row = TrainingDataset::batch(
        training.params.clone(),
        training.outputs.clone(),
        training.design.clone(),
        &[achieved.clone()],
        &[y],
        training.provenance.as_ref().map(|_| {
            vec![Provenance {
                seed: sim_seed,
                histories: cfg.matching.final_histories,
            }]
        }),
        training.noise.as_ref().map(|_| vec![cov]),
    )?;
    let before = log_det_covariance(gp, &achieved);
    let next = if cfg.refit { gp.add_points(&row)? } else { gp.condition_on(&row)? };
    let after = log_det_covariance(&next, &achieved);
    Ok((
        next,
        LoopRecord {
            iteration: it,
            map,
            target: q.x,
            achieved,
            knobs: m.facility.knobs,
            match_loss: m.loss,
            relative_errors: m.relative_errors,
            log_det_before: before,
            log_det_after: after,
            seed: s,
        },
    ))
}
