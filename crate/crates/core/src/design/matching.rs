//! Facility knob search that reaches a requested material input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::simulator::{FacilityModel, FacilityParams, MaterialInput, SENSITIVITY_TABLE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub iterations: usize,
    pub search_histories: u64,
    pub final_histories: u64,
    pub initial_step: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            search_histories: 50_000,
            final_histories: 500_000,
            initial_step: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub facility: FacilityParams,
    pub achieved: MaterialInput,
    pub loss: f64,
    pub relative_errors: [f64; 6],
}

/// Weighted squared distance in box-normalized coordinates.
pub fn matching_loss(facility: &FacilityModel, x: &[f64; 6], target: &[f64; 6], weights: &[f64]) -> f64 {
    let u = facility.design.to_unit(x);
    let v = facility.design.to_unit(target);
    (0..6).map(|j| weights[j] * (u[j] - v[j]).powi(2)).sum()
}

/// Coordinate-wise sign search on the knobs. Each iteration tallies the
/// current knobs at reduced statistics and moves every knob towards its
/// input's target along the sensitivity table, halving its step when the
/// error changes sign. The best knob vector is re-run at full statistics.
pub fn match_inputs(
    facility: &FacilityModel,
    target: &MaterialInput,
    weights: &[f64],
    cfg: &MatchConfig,
    seed: u64,
) -> Result<MatchResult> {
    if weights.len() != 6 {
        return Err(Error::invalid("weights", format!("expected 6 weights, got {}", weights.len())));
    }
    let t = target.to_array();
    if !facility.design.contains(&t) {
        return Err(Error::invalid("target", "outside the facility design box"));
    }
    let tu = facility.design.to_unit(&t);
    let mut knobs = [0.5; 6];
    for (j, &(k, sign)) in SENSITIVITY_TABLE.iter().enumerate() {
        if j == 2 || j == 3 {
            knobs[k] = if sign > 0.0 { tu[j] } else { 1.0 - tu[j] };
        }
    }
    let mut step = [cfg.initial_step; 6];
    let mut last_dir = [0.0f64; 6];
    let mut best: Option<(f64, [f64; 6])> = None;
    for it in 0..cfg.iterations.max(1) {
        let f = FacilityParams::new(knobs)?;
        let x = facility
            .facility_to_inputs(&f, cfg.search_histories, seed::derive(seed, &format!("match-{it}")))?
            .to_array();
        let loss = matching_loss(facility, &x, &t, weights);
        if best.is_none_or(|b| loss < b.0) {
            best = Some((loss, knobs));
        }
        let xu = facility.design.to_unit(&x);
        for (j, &(k, sign)) in SENSITIVITY_TABLE.iter().enumerate() {
            if j == 2 || j == 3 {
                continue;
            }
            let err = tu[j] - xu[j];
            if err == 0.0 {
                continue;
            }
            let dir = err.signum() * sign;
            if last_dir[k] != 0.0 && dir != last_dir[k] {
                step[k] *= 0.5;
            }
            last_dir[k] = dir;
            knobs[k] = (knobs[k] + dir * step[k]).clamp(0.0, 1.0);
        }
    }
    let (_, knobs) = best.expect("at least one iteration");
    let facility_params = FacilityParams::new(knobs)?;
    let achieved = facility.facility_to_inputs(&facility_params, cfg.final_histories, seed::derive(seed, "match-final"))?;
    let a = achieved.to_array();
    let relative_errors = std::array::from_fn(|j| ((a[j] - t[j]) / t[j]).abs());
    let loss = matching_loss(facility, &a, &t, weights);
    if loss > 1e-2 {
        log::warn!("input matching stopped at loss {loss:.3e}; relative errors {relative_errors:?}");
    }
    Ok(MatchResult {
        facility: facility_params,
        achieved,
        loss,
        relative_errors,
    })
}
