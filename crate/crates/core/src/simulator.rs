//! Analog branching-process simulator producing neutron and gamma detection
//! time lists, plus the synthetic facility that turns abstract controls into
//! tallied material inputs.
//!
//! Chain dynamics: every neutron lives for an exponential time with rate
//! `lambda = alpha / (1 - k_p)` and then either induces a fission (probability
//! `k_p / nu_bar`), is detected (probability `eps_F k_p / nu_bar`) or is
//! captured. With these reaction probabilities a chain started by one neutron
//! decays with constant `alpha`, and the mean count rate and Feynman moments
//! follow the point-model relations in [`crate::pointmodel`].
//!
//! Gammas are emitted at each fission. The per-fission count is the reference
//! multiplicity scaled by `r = M_gamma / M_gamma_natural` with stochastic
//! rounding, where `M_gamma_natural` is the gamma yield per source neutron of
//! the unscaled data. Each gamma is detected with probability
//! `eps_gamma / (r mu_bar)` so that induced fissions yield `eps_gamma`
//! detections on average.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Provenance, TrainingDataset};
use crate::error::{Error, Result};
use crate::moments::{triggered_targets, ParticleKind};
use crate::pointmodel::NuclearData;
use crate::space::{Output, ParamBox, Parameter};

/// Joint material input `(k_p, eps_F, S, x_s, M_gamma, eps_gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialInput {
    pub k_p: f64,
    pub eps_f: f64,
    pub s_intensity: f64,
    pub x_s: f64,
    pub m_gamma: f64,
    pub eps_gamma: f64,
}

impl MaterialInput {
    pub fn from_array(x: [f64; 6]) -> Self {
        Self {
            k_p: x[0],
            eps_f: x[1],
            s_intensity: x[2],
            x_s: x[3],
            m_gamma: x[4],
            eps_gamma: x[5],
        }
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        let arr: [f64; 6] = x
            .try_into()
            .map_err(|_| Error::invalid("input", format!("expected 6 components, got {}", x.len())))?;
        Ok(Self::from_array(arr))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.k_p, self.eps_f, self.s_intensity, self.x_s, self.m_gamma, self.eps_gamma]
    }

    pub fn neutron(&self) -> [f64; 4] {
        [self.k_p, self.eps_f, self.s_intensity, self.x_s]
    }

    pub fn gamma(&self) -> [f64; 5] {
        [self.k_p, self.s_intensity, self.x_s, self.m_gamma, self.eps_gamma]
    }

    pub fn get(&self, p: Parameter) -> f64 {
        self.to_array()[p.index()]
    }

    /// Components selected by `params`, in that order.
    pub fn select(&self, params: &[Parameter]) -> Vec<f64> {
        params.iter().map(|&p| self.get(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub time: f64,
    pub kind: ParticleKind,
    pub history: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeList {
    pub duration: f64,
    pub config_hash: String,
    /// Number of source events (histories) simulated.
    pub histories: u64,
    pub events: Vec<Detection>,
}

/// Counters collected while simulating; used to check the tally definitions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationTally {
    pub source_events: u64,
    pub source_neutrons: u64,
    pub induced_fissions: u64,
    pub spontaneous_fissions: u64,
    pub gammas_created: u64,
    pub neutron_detections: u64,
    pub gamma_detections: u64,
    /// Detections of gammas born in induced fissions.
    pub induced_gamma_detections: u64,
}

impl SimulationTally {
    pub fn gamma_detections_per_fission(&self) -> f64 {
        self.induced_gamma_detections as f64 / self.induced_fissions as f64
    }

    pub fn gammas_per_source_neutron(&self) -> f64 {
        self.gammas_created as f64 / self.source_neutrons as f64
    }
}

struct PmfSampler {
    cdf: Vec<f64>,
}

impl PmfSampler {
    fn new(pmf: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1) as u64
    }
}

/// Derived per-particle probabilities and rates for one material input.
#[derive(Debug, Clone, Copy)]
pub struct ChainParameters {
    pub lifetime_rate: f64,
    pub p_fission: f64,
    pub p_detect: f64,
    /// Probability that a source event is a spontaneous fission.
    pub p_spontaneous: f64,
    pub gamma_scale: f64,
    pub p_gamma_detect: f64,
}

impl ChainParameters {
    pub fn derive(x: &MaterialInput, data: &NuclearData) -> Result<Self> {
        if !(x.k_p > 0.0 && x.k_p < 1.0) {
            return Err(Error::invalid("k_p", format!("must satisfy 0 < k_p < 1, got {}", x.k_p)));
        }
        for (name, v) in [
            ("eps_f", x.eps_f),
            ("s_intensity", x.s_intensity),
            ("m_gamma", x.m_gamma),
            ("eps_gamma", x.eps_gamma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&x.x_s) {
            return Err(Error::invalid("x_s", format!("must lie in [0, 1], got {}", x.x_s)));
        }
        let p_fission = x.k_p / data.nu_bar;
        let p_detect = x.eps_f * x.k_p / data.nu_bar;
        if p_fission + p_detect > 1.0 {
            return Err(Error::ProbabilityOverflow {
                name: "p_fission + p_detect",
                value: p_fission + p_detect,
            });
        }
        let nu_s = data.nu_bar_s;
        let p_spontaneous = x.x_s / (x.x_s + nu_s * (1.0 - x.x_s));
        let mu = data.gamma_mean();
        let natural = mu * x.k_p / (data.nu_bar * (1.0 - x.k_p)) + x.x_s * data.gamma_spont_mean() / nu_s;
        let gamma_scale = x.m_gamma / natural;
        let mut p_gamma_detect = x.eps_gamma / (gamma_scale * mu);
        if p_gamma_detect > 1.0 {
            log::warn!("gamma detection probability {p_gamma_detect} truncated to 1");
            p_gamma_detect = 1.0;
        }
        Ok(Self {
            lifetime_rate: data.alpha / (1.0 - x.k_p),
            p_fission,
            p_detect,
            p_spontaneous,
            gamma_scale,
            p_gamma_detect,
        })
    }
}

fn config_hash(x: &MaterialInput, data: &NuclearData, duration: f64, seed: u64) -> String {
    let doc = serde_json::json!({ "input": x, "data": data, "duration": duration, "seed": seed });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    hex::encode(&digest[..8])
}

fn history_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct ChainSampler<'a> {
    params: ChainParameters,
    induced: PmfSampler,
    spont: PmfSampler,
    gamma: PmfSampler,
    gamma_spont: PmfSampler,
    lifetime: Exp<f64>,
    duration: f64,
    data: &'a NuclearData,
}

impl ChainSampler<'_> {
    fn emit_gammas<R: Rng>(
        &self,
        rng: &mut R,
        base: u64,
        time: f64,
        history: u64,
        from_induced: bool,
        out: &mut Vec<Detection>,
        tally: &mut SimulationTally,
    ) {
        let scaled = self.params.gamma_scale * base as f64;
        let floor = scaled.floor();
        let created = floor as u64 + u64::from(rng.random::<f64>() < scaled - floor);
        tally.gammas_created += created;
        if created == 0 || time > self.duration {
            return;
        }
        let detected = Binomial::new(created, self.params.p_gamma_detect)
            .expect("valid binomial")
            .sample(rng);
        tally.gamma_detections += detected;
        if from_induced {
            tally.induced_gamma_detections += detected;
        }
        for _ in 0..detected {
            out.push(Detection {
                time,
                kind: ParticleKind::Gamma,
                history,
            });
        }
    }

    fn run_history<R: Rng>(
        &self,
        rng: &mut R,
        start: f64,
        history: u64,
        out: &mut Vec<Detection>,
        tally: &mut SimulationTally,
        stack: &mut Vec<f64>,
    ) {
        tally.source_events += 1;
        stack.clear();
        if rng.random::<f64>() < self.params.p_spontaneous {
            tally.spontaneous_fissions += 1;
            let nu = self.spont.sample(rng);
            let g = self.gamma_spont.sample(rng);
            self.emit_gammas(rng, g, start, history, false, out, tally);
            tally.source_neutrons += nu;
            stack.extend(std::iter::repeat_n(start, nu as usize));
        } else {
            tally.source_neutrons += 1;
            stack.push(start);
        }
        let p_f = self.params.p_fission;
        let p_fd = p_f + self.params.p_detect;
        while let Some(born) = stack.pop() {
            let t = born + self.lifetime.sample(rng);
            let u: f64 = rng.random();
            if u < p_f {
                tally.induced_fissions += 1;
                let nu = self.induced.sample(rng);
                let g = self.gamma.sample(rng);
                self.emit_gammas(rng, g, t, history, true, out, tally);
                // progeny of a fission after the end of the record never reach the detector list
                if t <= self.duration {
                    stack.extend(std::iter::repeat_n(t, nu as usize));
                }
            } else if u < p_fd {
                if t <= self.duration {
                    tally.neutron_detections += 1;
                    out.push(Detection {
                        time: t,
                        kind: ParticleKind::Neutron,
                        history,
                    });
                }
            }
        }
        let _ = self.data;
    }
}

/// Simulates one measurement of length `duration` and returns the time list
/// together with the tallies.
pub fn simulate_with_tally(
    x: &MaterialInput,
    data: &NuclearData,
    duration: f64,
    seed: u64,
) -> Result<(TimeList, SimulationTally)> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::invalid("duration", format!("must be > 0, got {duration}")));
    }
    let params = ChainParameters::derive(x, data)?;
    let expected = x.s_intensity * duration;
    if expected < 1.0 {
        return Err(Error::invalid(
            "duration",
            format!("expected number of source events {expected} is below one"),
        ));
    }
    let sampler = ChainSampler {
        params,
        induced: PmfSampler::new(&data.induced_pmf),
        spont: PmfSampler::new(&data.spont_pmf),
        gamma: PmfSampler::new(&data.gamma_pmf),
        gamma_spont: PmfSampler::new(&data.gamma_spont_pmf),
        lifetime: Exp::new(params.lifetime_rate).map_err(|e| Error::invalid("alpha", e.to_string()))?,
        duration,
        data,
    };
    let arrivals = Exp::new(x.s_intensity).map_err(|e| Error::invalid("s_intensity", e.to_string()))?;
    let mut arrival_rng = history_rng(seed, 0);
    let mut events = Vec::with_capacity((expected * 0.5) as usize + 16);
    let mut tally = SimulationTally::default();
    let mut stack = Vec::new();
    let mut t = 0.0;
    let mut history = 0u64;
    loop {
        t += arrivals.sample(&mut arrival_rng);
        if t > duration {
            break;
        }
        let mut rng = history_rng(seed, history + 1);
        sampler.run_history(&mut rng, t, history, &mut events, &mut tally, &mut stack);
        history += 1;
    }
    events.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.kind.cmp(&b.kind))
            .then(a.history.cmp(&b.history))
    });
    let list = TimeList {
        duration,
        config_hash: config_hash(x, data, duration, seed),
        histories: history,
        events,
    };
    Ok((list, tally))
}

pub fn simulate_timelist(x: &MaterialInput, data: &NuclearData, duration: f64, seed: u64) -> Result<TimeList> {
    simulate_with_tally(x, data, duration, seed).map(|(t, _)| t)
}

impl TimeList {
    pub fn count(&self, kind: ParticleKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(
            w,
            "# duration_s={}\tconfig_hash={}\thistories={}",
            self.duration, self.config_hash, self.histories
        )?;
        let mut line = String::new();
        for e in &self.events {
            line.clear();
            let _ = writeln!(line, "{}\t{}\t{}", e.time, e.kind.code(), e.history);
            w.write_all(line.as_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty time list".into()))??;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("time list header must start with '#'".into()))?;
        let mut duration = None;
        let mut config_hash = String::new();
        let mut histories = 0;
        for field in header.trim().split('\t') {
            match field.split_once('=') {
                Some(("duration_s", v)) => {
                    duration = Some(v.parse::<f64>().map_err(|e| Error::Format(format!("duration: {e}")))?)
                }
                Some(("config_hash", v)) => config_hash = v.to_string(),
                Some(("histories", v)) => {
                    histories = v.parse().map_err(|e| Error::Format(format!("histories: {e}")))?
                }
                _ => return Err(Error::Format(format!("unknown header field `{field}`"))),
            }
        }
        let duration = duration.ok_or_else(|| Error::Format("missing duration_s in header".into()))?;
        let mut events = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let bad = || Error::Format(format!("malformed event on line {}", lineno + 2));
            let time: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let kind = ParticleKind::from_code(parts.next().ok_or_else(bad)?).ok_or_else(bad)?;
            let history: u64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if !(0.0..=duration).contains(&time) {
                return Err(Error::Format(format!("event time {time} outside [0, {duration}]")));
            }
            if let Some(prev) = events.last().map(|e: &Detection| e.time) {
                if time < prev {
                    return Err(Error::Format(format!("event times not sorted at line {}", lineno + 2)));
                }
            }
            events.push(Detection { time, kind, history });
        }
        Ok(Self {
            duration,
            config_hash,
            histories,
            events,
        })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }
}

/// Abstract facility controls, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacilityParams {
    pub knobs: [f64; 6],
}

impl FacilityParams {
    pub const NAMES: [&'static str; 6] = [
        "enrichment",
        "detector_size",
        "source_rate",
        "source_mix",
        "moderator",
        "gamma_detector",
    ];

    pub fn new(knobs: [f64; 6]) -> Result<Self> {
        let f = Self { knobs };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, name) in self.knobs.iter().zip(Self::NAMES) {
            if !(0.0..=1.0).contains(k) {
                return Err(Error::invalid(name, format!("knob must lie in [0, 1], got {k}")));
            }
        }
        Ok(())
    }
}

/// `(e^{cu} - 1) / (e^c - 1)`: smooth, strictly increasing map of [0, 1] onto itself.
fn convex_ramp(u: f64, c: f64) -> f64 {
    (c * u).exp_m1() / c.exp_m1()
}

/// `1.5u - 0.5u^2`: concave, strictly increasing map of [0, 1] onto itself.
fn concave_ramp(u: f64) -> f64 {
    1.5 * u - 0.5 * u * u
}

/// Synthetic facility: fixed nonlinear map from knobs to latent material
/// inputs, with finite-statistics noise on the tallied components.
///
/// | input      | knob mix (all weights positive unless noted)         |
/// |------------|------------------------------------------------------|
/// | `k_p`      | 0.85 enrichment + 0.15 moderator, convex ramp c=1.2  |
/// | `eps_F`    | 0.8 detector size + 0.2 (1 - enrichment), concave    |
/// | `S`        | source rate, affine pass-through                     |
/// | `x_s`      | source mix, affine pass-through                      |
/// | `M_gamma`  | 0.7 moderator + 0.3 enrichment, convex ramp c=0.8    |
/// | `eps_gamma`| 0.75 gamma detector + 0.25 detector size, concave    |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityModel {
    pub design: ParamBox,
}

/// Dominant knob and sign for each joint input, used by the matching heuristic.
pub const SENSITIVITY_TABLE: [(usize, f64); 6] = [(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0), (4, 1.0), (5, 1.0)];

/// Relative (or, for `k_p`, absolute) standard deviation times sqrt(histories).
const TALLY_NOISE: [f64; 6] = [0.2, 3.0, 0.0, 0.0, 3.0, 3.0];

impl FacilityModel {
    pub fn new(design: ParamBox) -> Result<Self> {
        if design.params != Parameter::ALL {
            return Err(Error::invalid("design", "facility box must cover the six joint inputs in order"));
        }
        design.validate()?;
        Ok(Self { design })
    }

    fn scale(&self, j: usize, t: f64) -> f64 {
        self.design.lower[j] + self.design.width(j) * t
    }

    /// Noise-free material input reached by `f`.
    pub fn latent(&self, f: &FacilityParams) -> Result<MaterialInput> {
        f.validate()?;
        let [e, d, s, m, o, g] = f.knobs;
        Ok(MaterialInput::from_array([
            self.scale(0, convex_ramp(0.85 * e + 0.15 * o, 1.2)),
            self.scale(1, concave_ramp(0.8 * d + 0.2 * (1.0 - e))),
            self.scale(2, s),
            self.scale(3, m),
            self.scale(4, convex_ramp(0.7 * o + 0.3 * e, 0.8)),
            self.scale(5, concave_ramp(0.75 * g + 0.25 * d)),
        ]))
    }

    /// Tallied inputs from a run with `histories` simulated neutrons: the
    /// latent values plus zero-mean noise with standard deviation
    /// proportional to `1/sqrt(histories)`. `S` and `x_s` are exact.
    pub fn facility_to_inputs(&self, f: &FacilityParams, histories: u64, seed: u64) -> Result<MaterialInput> {
        if histories < 100 {
            return Err(Error::invalid("histories", format!("must be >= 100, got {histories}")));
        }
        let latent = self.latent(f)?.to_array();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let root = (histories as f64).sqrt();
        let mut x = latent;
        for j in 0..6 {
            if TALLY_NOISE[j] == 0.0 {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            let sd = if j == 0 { TALLY_NOISE[j] / root } else { TALLY_NOISE[j] * latent[j] / root };
            x[j] += sd * z;
        }
        self.design.clamp(&mut x);
        Ok(MaterialInput::from_array(x))
    }
}

/// Settings for [`generate_dataset`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub n: usize,
    /// Simulated measurement duration per instance (s).
    pub duration: f64,
    /// Facility tally statistics per instance.
    pub histories: u64,
    /// Minimum detections of each kind; instances below are resampled.
    pub min_detections: usize,
    /// Triggered-binning window in units of `1/alpha`.
    pub trigger_window_alpha: f64,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            n: 232,
            duration: 5.0,
            histories: 500_000,
            min_detections: 200,
            trigger_window_alpha: 50.0,
        }
    }
}

/// Simulates one instance and reduces it to the six training targets with
/// triggered binning, together with their estimated covariance. Returns
/// `None` when either particle kind has fewer than `min_detections` counts.
pub fn simulate_targets(
    x: &MaterialInput,
    data: &NuclearData,
    duration: f64,
    trigger_window: f64,
    min_detections: usize,
    seed: u64,
) -> Result<Option<(Vec<f64>, nalgebra::DMatrix<f64>)>> {
    let list = simulate_timelist(x, data, duration, seed)?;
    for kind in [ParticleKind::Neutron, ParticleKind::Gamma] {
        if list.count(kind) < min_detections.max(1) {
            return Ok(None);
        }
    }
    triggered_targets(&list, trigger_window).map(Some)
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Builds a training dataset: stratified knob sampling, tallied inputs, one
/// simulation per instance and triggered-binning targets.
pub fn generate_dataset(
    facility: &FacilityModel,
    data: &NuclearData,
    settings: &DatasetSettings,
    seed: u64,
) -> Result<TrainingDataset> {
    if settings.n < 2 {
        return Err(Error::invalid("n", format!("dataset needs at least 2 rows, got {}", settings.n)));
    }
    let n = settings.n;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX, 0));
    // Latin hypercube over the knobs
    let mut strata: Vec<Vec<f64>> = Vec::with_capacity(6);
    for _ in 0..6 {
        let mut col: Vec<f64> = (0..n).map(|i| (i as f64 + rng.random::<f64>()) / n as f64).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            col.swap(i, j);
        }
        strata.push(col);
    }
    let trigger_window = settings.trigger_window_alpha / data.alpha;
    let mut inputs = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for i in 0..n {
        let mut knobs: [f64; 6] = std::array::from_fn(|j| strata[j][i]);
        let mut attempt = 0u64;
        loop {
            let row_seed = mix_seed(seed, i as u64, attempt);
            let f = FacilityParams::new(knobs)?;
            let x = facility.facility_to_inputs(&f, settings.histories, row_seed)?;
            match simulate_targets(&x, data, settings.duration, trigger_window, settings.min_detections, row_seed)? {
                Some((y, cov)) => {
                    inputs.push(x.to_array().to_vec());
                    outputs.push(y);
                    noise.push(cov);
                    provenance.push(Provenance {
                        seed: row_seed,
                        histories: settings.histories,
                    });
                    break;
                }
                None => {
                    log::warn!("instance {i} attempt {attempt}: too few detections, resampling knobs");
                    attempt += 1;
                    if attempt > 100 {
                        return Err(Error::InsufficientData(format!(
                            "instance {i}: no knob setting produced {} detections",
                            settings.min_detections
                        )));
                    }
                    knobs = std::array::from_fn(|_| rng.random());
                }
            }
        }
    }
    TrainingDataset::from_rows(
        Parameter::ALL.to_vec(),
        Output::ALL.to_vec(),
        facility.design.clone(),
        &inputs,
        &outputs,
        Some(provenance),
        Some(noise),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> MaterialInput {
        MaterialInput::from_array([0.85, 0.01, 1e4, 0.5, 20.0, 0.2])
    }

    #[test]
    fn rejects_reaction_probability_overflow() {
        let mut data = NuclearData::reference();
        data.nu_bar = 0.9;
        data.induced_pmf = vec![0.1, 0.9];
        data.d2 = 0.0;
        data.d3 = 0.0;
        let x = MaterialInput { eps_f: 0.5, ..input() };
        match ChainParameters::derive(&x, &data) {
            Err(Error::ProbabilityOverflow { name, .. }) => assert_eq!(name, "p_fission + p_detect"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_vanishing_duration() {
        let data = NuclearData::reference();
        assert!(simulate_timelist(&input(), &data, 1e-6, 1).is_err());
        assert!(simulate_timelist(&input(), &data, -1.0, 1).is_err());
    }

    #[test]
    fn spontaneous_probability_reproduces_neutron_fraction() {
        let data = NuclearData::reference();
        let p = ChainParameters::derive(&input(), &data).unwrap();
        let q = p.p_spontaneous;
        let frac = q * data.nu_bar_s / (q * data.nu_bar_s + 1.0 - q);
        assert!((frac - 0.5).abs() < 1e-14);
    }

    #[test]
    fn same_seed_same_list() {
        let data = NuclearData::reference();
        let a = simulate_timelist(&input(), &data, 0.2, 42).unwrap();
        let b = simulate_timelist(&input(), &data, 0.2, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_timelist(&input(), &data, 0.2, 43).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn timelist_invariants_hold() {
        let data = NuclearData::reference();
        let t = simulate_timelist(&input(), &data, 0.5, 3).unwrap();
        assert!(t.events.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(t.events.iter().all(|e| e.time >= 0.0 && e.time <= t.duration));
        assert!(t.events.iter().all(|e| e.history < t.histories));
    }

    #[test]
    fn timelist_file_round_trip() {
        let data = NuclearData::reference();
        let t = simulate_timelist(&input(), &data, 0.05, 9).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = TimeList::read_from(buf.as_slice()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn malformed_timelist_rejected() {
        let text = "# duration_s=1\tconfig_hash=x\thistories=1\n0.5\tq\t0\n";
        assert!(TimeList::read_from(text.as_bytes()).is_err());
        let text = "# duration_s=1\tconfig_hash=x\thistories=1\n0.5\tn\t0\n0.2\tn\t0\n";
        assert!(TimeList::read_from(text.as_bytes()).is_err());
    }

    #[test]
    fn knobs_outside_unit_interval_rejected() {
        assert!(FacilityParams::new([0.5, 0.5, 1.2, 0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn pass_through_coordinates_are_exact() {
        let fac = FacilityModel::new(ParamBox::default_joint()).unwrap();
        let f = FacilityParams::new([0.3, 0.6, 0.25, 0.75, 0.4, 0.9]).unwrap();
        let x = fac.facility_to_inputs(&f, 1000, 5).unwrap();
        assert_eq!(x.s_intensity, fac.latent(&f).unwrap().s_intensity);
        assert!((x.s_intensity - 8750.0).abs() < 1e-9);
        assert!((x.x_s - 0.65).abs() < 1e-12);
    }

    #[test]
    fn facility_map_stays_inside_design_box() {
        let fac = FacilityModel::new(ParamBox::default_joint()).unwrap();
        for corner in 0..64u32 {
            let knobs = std::array::from_fn(|j| f64::from((corner >> j) & 1));
            let x = fac.latent(&FacilityParams::new(knobs).unwrap()).unwrap();
            assert!(fac.design.contains(&x.to_array()), "{x:?}");
        }
    }
}
