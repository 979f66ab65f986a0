//! Experiment configuration: JSON with every field defaulted, strict key
//! checking and exhaustive error reporting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::design::sobol::MIN_SOBOL_SAMPLES;
use crate::design::LoopConfig;
use crate::error::{Error, Result};
use crate::inference::InferenceConfig;
use crate::moments::BinningSettings;
use crate::pointmodel::NuclearData;
use crate::simulator::{DatasetSettings, MaterialInput};
use crate::space::{ParamBox, Parameter};
use crate::surrogate::SurrogateConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
    /// Simulated measurement duration per instance (s).
    pub duration: f64,
    pub histories: u64,
    pub min_detections: usize,
    pub trigger_window_alpha: f64,
    /// Rows held out for validation.
    pub n_test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let d = DatasetSettings::default();
        Self {
            n: d.n,
            duration: 10.0,
            histories: d.histories,
            min_detections: d.min_detections,
            trigger_window_alpha: d.trigger_window_alpha,
            n_test: 42,
        }
    }
}

impl DatasetConfig {
    pub fn settings(&self) -> DatasetSettings {
        DatasetSettings {
            n: self.n,
            duration: self.duration,
            histories: self.histories,
            min_detections: self.min_detections,
            trigger_window_alpha: self.trigger_window_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSet {
    pub nsm: SurrogateConfig,
    pub gsm: SurrogateConfig,
    pub jsm: SurrogateConfig,
}

impl Default for SurrogateSet {
    fn default() -> Self {
        Self {
            nsm: SurrogateConfig::default(),
            gsm: SurrogateConfig::default(),
            jsm: SurrogateConfig {
                latents: 4,
                restarts: 4,
                max_iter: 400,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    /// Synthetic-truth material input keyed by parameter name.
    pub truth: BTreeMap<String, f64>,
    /// Measurement duration per replicate (s).
    pub duration: f64,
    pub neutron_replicates: usize,
    pub joint_replicates: usize,
    pub binning: BinningSettings,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        let x = [0.85, 0.012, 1.2e4, 0.5, 25.0, 0.2];
        Self {
            truth: Parameter::ALL.iter().zip(x).map(|(p, v)| (p.name().to_string(), v)).collect(),
            duration: 10.0,
            neutron_replicates: 80,
            joint_replicates: 16,
            binning: BinningSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Nuclear-data JSON; the built-in reference set when absent.
    pub nuclear_data: Option<PathBuf>,
    /// Joint design box as `name: [lower, upper]`.
    pub design: BTreeMap<String, [f64; 2]>,
    pub dataset: DatasetConfig,
    pub surrogates: SurrogateSet,
    pub observations: ObservationConfig,
    pub inference: InferenceConfig,
    pub csq: LoopConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let b = ParamBox::default_joint();
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            nuclear_data: None,
            design: b
                .params
                .iter()
                .enumerate()
                .map(|(j, p)| (p.name().to_string(), [b.lower[j], b.upper[j]]))
                .collect(),
            dataset: DatasetConfig::default(),
            surrogates: SurrogateSet::default(),
            observations: ObservationConfig::default(),
            inference: InferenceConfig::default(),
            csq: LoopConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn design_box(&self) -> Result<ParamBox> {
        let mut lower = Vec::with_capacity(6);
        let mut upper = Vec::with_capacity(6);
        for p in Parameter::ALL {
            let [lo, hi] = self
                .design
                .get(p.name())
                .ok_or_else(|| Error::invalid(p.name(), "missing from the design box"))?;
            lower.push(*lo);
            upper.push(*hi);
        }
        ParamBox::new(Parameter::ALL.to_vec(), lower, upper)
    }

    pub fn truth(&self) -> Result<MaterialInput> {
        let x: Vec<f64> = Parameter::ALL
            .iter()
            .map(|p| {
                self.observations
                    .truth
                    .get(p.name())
                    .copied()
                    .ok_or_else(|| Error::invalid(p.name(), "missing from the observation truth"))
            })
            .collect::<Result<_>>()?;
        MaterialInput::from_slice(&x)
    }

    pub fn nuclear_data(&self) -> Result<NuclearData> {
        match &self.nuclear_data {
            Some(p) => NuclearData::from_json_file(p),
            None => Ok(NuclearData::reference()),
        }
    }

    /// Canonical JSON (sorted keys) used for hashing and the manifest.
    pub fn canonical_json(&self) -> Result<String> {
        let v = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&v)?)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }

    /// Every semantic problem, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for name in self.design.keys() {
            if Parameter::from_name(name).is_none() {
                out.push(format!("design.{name}: unknown parameter"));
            }
        }
        for p in Parameter::ALL {
            match self.design.get(p.name()) {
                None => out.push(format!("design.{}: missing bounds", p.name())),
                Some([lo, hi]) if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                    out.push(format!("design.{}: bounds must satisfy lower < upper, got [{lo}, {hi}]", p.name()))
                }
                _ => {}
            }
        }
        for name in self.observations.truth.keys() {
            if Parameter::from_name(name).is_none() {
                out.push(format!("observations.truth.{name}: unknown parameter"));
            }
        }
        if let (Ok(b), Ok(t)) = (self.design_box(), self.truth()) {
            if !b.contains(&t.to_array()) {
                out.push("observations.truth: outside the design box".into());
            }
        } else if self.truth().is_err() {
            out.push("observations.truth: must give all six parameters".into());
        }
        if let Some(p) = &self.nuclear_data {
            if !p.exists() {
                out.push(format!("nuclear_data: file {} does not exist", p.display()));
            } else if let Err(e) = NuclearData::from_json_file(p) {
                out.push(format!("nuclear_data: {e}"));
            }
        }
        let d = &self.dataset;
        if d.n < 2 {
            out.push(format!("dataset.n: must be >= 2, got {}", d.n));
        }
        if self.dataset.n_test >= d.n {
            out.push(format!("dataset.n_test: must be < dataset.n ({}), got {}", d.n, self.dataset.n_test));
        }
        if !(d.duration > 0.0) {
            out.push("dataset.duration: must be > 0".into());
        }
        if d.histories < 100 {
            out.push("dataset.histories: must be >= 100".into());
        }
        for (name, s) in [("nsm", &self.surrogates.nsm), ("gsm", &self.surrogates.gsm), ("jsm", &self.surrogates.jsm)] {
            if let Err(e) = s.validate() {
                out.push(format!("surrogates.{name}: {e}"));
            }
        }
        let o = &self.observations;
        if !(o.duration > 0.0) {
            out.push("observations.duration: must be > 0".into());
        }
        if o.neutron_replicates < 2 || o.joint_replicates < 2 {
            out.push("observations: replicate counts must be >= 2".into());
        }
        if let Err(e) = self.inference.am.validate() {
            out.push(format!("inference.am: {e}"));
        }
        if let Err(e) = self.csq.csq.validate() {
            out.push(format!("csq.csq: {e}"));
        }
        if self.csq.sobol_samples < MIN_SOBOL_SAMPLES {
            out.push(format!("csq.sobol_samples: must be >= {MIN_SOBOL_SAMPLES}, got {}", self.csq.sobol_samples));
        }
        out
    }
}

/// Keys of `given` absent from `reference`, recursing into objects that
/// exist on both sides. Map-valued sections are skipped.
fn unknown_keys(given: &Value, reference: &Value, path: &str, skip: &[&str], out: &mut Vec<String>) {
    let (Value::Object(g), Value::Object(r)) = (given, reference) else {
        return;
    };
    for (k, v) in g {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match r.get(k) {
            None => out.push(format!("unknown key `{k}` at `{}`", if path.is_empty() { "<root>" } else { path })),
            Some(rv) if !skip.contains(&here.as_str()) => unknown_keys(v, rv, &here, skip, out),
            _ => {}
        }
    }
}

fn section<T: DeserializeOwned + Default>(root: &serde_json::Map<String, Value>, key: &str, errors: &mut Vec<String>) -> T {
    match root.get(key) {
        None => T::default(),
        Some(v) => serde_json::from_value(v.clone()).unwrap_or_else(|e| {
            errors.push(format!("{key}: {e}"));
            T::default()
        }),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_in(text, None)
}

/// Relative nuclear-data paths resolve against `base` when given.
pub fn parse_config_in(text: &str, base: Option<&Path>) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("not valid JSON: {e}")]))?;
    let Value::Object(root) = &value else {
        return Err(Error::Config(vec!["top level must be a JSON object".into()]));
    };
    let reference = serde_json::to_value(ExperimentConfig::default())?;
    let mut errors = Vec::new();
    unknown_keys(&value, &reference, "", &["design", "observations.truth"], &mut errors);
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = root.get("seed") {
        match v.as_u64() {
            Some(s) => cfg.seed = s,
            None => errors.push(format!("seed: expected an unsigned integer, got {v}")),
        }
    }
    cfg.output_dir = section::<Option<PathBuf>>(root, "output_dir", &mut errors).unwrap_or(cfg.output_dir);
    cfg.nuclear_data = section(root, "nuclear_data", &mut errors);
    if root.contains_key("design") {
        let given: BTreeMap<String, [f64; 2]> = section(root, "design", &mut errors);
        cfg.design.extend(given);
    }
    cfg.dataset = section(root, "dataset", &mut errors);
    cfg.surrogates = section(root, "surrogates", &mut errors);
    let truth_given = root
        .get("observations")
        .and_then(|o| o.get("truth"))
        .is_some();
    let default_truth = cfg.observations.truth.clone();
    cfg.observations = section(root, "observations", &mut errors);
    if truth_given {
        let mut t = default_truth;
        t.extend(cfg.observations.truth.clone());
        cfg.observations.truth = t;
    }
    cfg.inference = section(root, "inference", &mut errors);
    cfg.csq = section(root, "csq", &mut errors);
    if let (Some(p), Some(dir)) = (&cfg.nuclear_data, base) {
        if p.is_relative() {
            cfg.nuclear_data = Some(dir.join(p));
        }
    }
    // Duplicate reports from serde's own unknown-field check are dropped.
    errors.retain(|e| !e.contains("unknown field"));
    errors.extend(cfg.problems());
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errors))
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config_in(&text, path.parent())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(parse_config("{}").unwrap(), ExperimentConfig::default());
    }
}
