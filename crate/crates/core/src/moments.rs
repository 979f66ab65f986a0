//! Count-rate and Feynman-moment estimators on detection time lists.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::TimeList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleKind {
    Neutron,
    Gamma,
}

impl ParticleKind {
    pub fn code(self) -> &'static str {
        match self {
            ParticleKind::Neutron => "n",
            ParticleKind::Gamma => "g",
        }
    }

    pub fn from_code(s: &str) -> Option<Self> {
        match s {
            "n" => Some(ParticleKind::Neutron),
            "g" => Some(ParticleKind::Gamma),
            _ => None,
        }
    }
}

/// Below this many windows a level is flagged low-statistics.
pub const LOW_STAT_WINDOWS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeynmanLevel {
    pub window: f64,
    pub windows: usize,
    /// `None` when the level has no counts.
    pub y: Option<f64>,
    pub x: Option<f64>,
    pub low_statistics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeynmanCurve {
    pub base_window: f64,
    pub rate: f64,
    pub levels: Vec<FeynmanLevel>,
}

fn level_from_counts(counts: &[u64], window: f64) -> FeynmanLevel {
    let w = counts.len() as f64;
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    for &c in counts {
        let c = c as f64;
        s1 += c;
        s2 += c * c;
        s3 += c * c * c;
    }
    let (m1, m2, m3) = (s1 / w, s2 / w, s3 / w);
    let (y, x) = if m1 > 0.0 {
        (
            Some(m2 / m1 - m1 - 1.0),
            Some(m3 / m1 + 2.0 * (m1 * m1 + 1.0) - 3.0 * (m2 / m1 + m2 - m1)),
        )
    } else {
        (None, None)
    };
    FeynmanLevel {
        window,
        windows: counts.len(),
        y,
        x,
        low_statistics: counts.len() < LOW_STAT_WINDOWS,
    }
}

/// Sequential binning starting from explicit base-window counts. Each
/// doubling merges windows pairwise and drops a trailing odd window.
pub fn sequential_binning_counts(counts: &[u64], base_window: f64, n_doublings: usize) -> Result<Vec<FeynmanLevel>> {
    if counts.is_empty() {
        return Err(Error::InsufficientData("no complete window fits in the record".into()));
    }
    let mut levels = Vec::with_capacity(n_doublings + 1);
    let mut current = counts.to_vec();
    let mut window = base_window;
    for k in 0..=n_doublings {
        if current.is_empty() {
            log::warn!("sequential binning stopped after {k} doublings: no windows left");
            break;
        }
        levels.push(level_from_counts(&current, window));
        current = current.chunks_exact(2).map(|p| p[0] + p[1]).collect();
        window *= 2.0;
    }
    Ok(levels)
}

pub fn sequential_binning(
    list: &TimeList,
    kind: ParticleKind,
    base_window: f64,
    n_doublings: usize,
) -> Result<FeynmanCurve> {
    if !(base_window > 0.0) {
        return Err(Error::invalid("base_window", format!("must be > 0, got {base_window}")));
    }
    let windows = (list.duration / base_window).floor() as usize;
    if windows == 0 {
        return Err(Error::InsufficientData(format!(
            "base window {base_window} s longer than record {} s",
            list.duration
        )));
    }
    let mut counts = vec![0u64; windows];
    let mut total = 0usize;
    for e in list.events.iter().filter(|e| e.kind == kind) {
        total += 1;
        let w = (e.time / base_window).floor() as usize;
        if w < windows {
            counts[w] += 1;
        }
    }
    if total == 0 {
        return Err(Error::InsufficientData(format!("no {kind:?} detections in time list")));
    }
    Ok(FeynmanCurve {
        base_window,
        rate: total as f64 / list.duration,
        levels: sequential_binning_counts(&counts, base_window, n_doublings)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggeredEstimate {
    pub y: f64,
    pub x: f64,
    pub detections: usize,
}

/// Per-history sums `(detections, follower pairs, follower triples)` of
/// filtered triggered binning. Each detection opens a window of length `T`
/// and counts the detections of the same history that follow it (later in
/// list order, ties included) no later than `t_k + T`.
fn history_sums(list: &TimeList, kind: ParticleKind, window: f64) -> Result<Vec<(u64, [f64; 3])>> {
    if !(window > 0.0) {
        return Err(Error::invalid("window", format!("must be > 0, got {window}")));
    }
    let mut tagged: Vec<(u64, usize, f64)> = list
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == kind)
        .map(|(i, e)| (e.history, i, e.time))
        .collect();
    if tagged.is_empty() {
        return Err(Error::InsufficientData(format!("no {kind:?} detections in time list")));
    }
    tagged.sort_unstable_by_key(|&(h, i, _)| (h, i));
    let mut out = Vec::new();
    for group in tagged.chunk_by(|a, b| a.0 == b.0) {
        let (mut pairs, mut triples) = (0.0, 0.0);
        let mut end = 0;
        for (k, &(_, _, t)) in group.iter().enumerate() {
            end = end.max(k + 1);
            while end < group.len() && group[end].2 - t <= window {
                end += 1;
            }
            let n = (end - k - 1) as f64;
            pairs += n;
            triples += n * (n - 1.0) / 2.0;
        }
        out.push((group[0].0, [group.len() as f64, pairs, triples]));
    }
    Ok(out)
}

pub fn triggered_binning(list: &TimeList, kind: ParticleKind, window: f64) -> Result<TriggeredEstimate> {
    let sums = history_sums(list, kind, window)?;
    let tot = sums.iter().fold([0.0; 3], |a, (_, s)| [a[0] + s[0], a[1] + s[1], a[2] + s[2]]);
    Ok(TriggeredEstimate {
        y: 2.0 * tot[1] / tot[0],
        x: 6.0 * tot[2] / tot[0],
        detections: tot[0] as usize,
    })
}

/// Joint training targets `(R, Y, X)` for neutrons then gammas from
/// triggered binning, with their covariance. Histories are independent, so
/// the per-history sums form compound-Poisson totals whose covariance is
/// estimated by summed products; the ratio estimators are propagated to
/// first order.
pub fn triggered_targets(list: &TimeList, window: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = history_sums(list, ParticleKind::Neutron, window)?;
    let g = history_sums(list, ParticleKind::Gamma, window)?;
    let mut per_history: std::collections::BTreeMap<u64, [f64; 6]> = Default::default();
    for (h, s) in &n {
        per_history.entry(*h).or_default()[..3].copy_from_slice(s);
    }
    for (h, s) in &g {
        per_history.entry(*h).or_default()[3..].copy_from_slice(s);
    }
    let mut a = [0.0; 6];
    let mut m = DMatrix::<f64>::zeros(6, 6);
    for v in per_history.values() {
        for k in 0..6 {
            a[k] += v[k];
            for l in 0..6 {
                m[(k, l)] += v[k] * v[l];
            }
        }
    }
    let dur = list.duration;
    let mut values = vec![0.0; 6];
    let mut jac = DMatrix::<f64>::zeros(6, 6);
    for b in [0, 3] {
        let (c, p, t) = (a[b], a[b + 1], a[b + 2]);
        values[b] = c / dur;
        values[b + 1] = 2.0 * p / c;
        values[b + 2] = 6.0 * t / c;
        jac[(b, b)] = 1.0 / dur;
        jac[(b + 1, b)] = -2.0 * p / (c * c);
        jac[(b + 1, b + 1)] = 2.0 / c;
        jac[(b + 2, b)] = -6.0 * t / (c * c);
        jac[(b + 2, b + 2)] = 6.0 / c;
    }
    let cov = &jac * m * jac.transpose();
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((values, cov))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauRule {
    pub levels: usize,
    pub tolerance: f64,
}

impl Default for PlateauRule {
    fn default() -> Self {
        Self {
            levels: 3,
            tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asymptote {
    pub y: f64,
    pub x: f64,
    pub converged: bool,
}

fn relative_spread(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    (hi - lo) / mean.abs()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Plateau rule on a sequence of level values: scanning from the longest
/// window backwards, the first run of `m` consecutive values with relative
/// spread below `tolerance` gives the asymptote. Without a plateau the mean
/// of the last `m` values is returned and flagged unconverged.
pub fn plateau(values: &[f64], rule: &PlateauRule) -> Result<(f64, bool, usize)> {
    if values.is_empty() {
        return Err(Error::InsufficientData("no usable levels".into()));
    }
    let m = rule.levels.max(1);
    if values.len() >= m {
        for start in (0..=values.len() - m).rev() {
            let run = &values[start..start + m];
            if relative_spread(run) < rule.tolerance {
                return Ok((mean(run), true, start));
            }
        }
    }
    let start = values.len().saturating_sub(m);
    Ok((mean(&values[start..]), false, start))
}

pub fn extract_asymptote(curve: &FeynmanCurve, rule: &PlateauRule) -> Result<Asymptote> {
    if curve.levels.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "asymptote needs at least 3 levels, got {}",
            curve.levels.len()
        )));
    }
    let usable: Vec<(f64, f64)> = curve
        .levels
        .iter()
        .filter(|l| !l.low_statistics)
        .filter_map(|l| Some((l.y?, l.x?)))
        .collect();
    if usable.is_empty() {
        return Err(Error::InsufficientData("all levels are low-statistics or undefined".into()));
    }
    let ys: Vec<f64> = usable.iter().map(|p| p.0).collect();
    let xs: Vec<f64> = usable.iter().map(|p| p.1).collect();
    let (y, converged, start) = plateau(&ys, rule)?;
    let end = (start + rule.levels.max(1)).min(xs.len());
    Ok(Asymptote {
        y,
        x: mean(&xs[start..end]),
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    Neutron,
    Gamma,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationVector {
    pub kind: ObservationKind,
    pub values: Vec<f64>,
}

impl ObservationVector {
    pub fn new(kind: ObservationKind, values: Vec<f64>) -> Result<Self> {
        let expected = if kind == ObservationKind::Joint { 6 } else { 3 };
        if values.len() != expected {
            return Err(Error::invalid("observation", format!("{kind:?} needs {expected} values, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observation", "entries must be finite"));
        }
        let rates_positive = match kind {
            ObservationKind::Joint => values[0] > 0.0 && values[3] > 0.0,
            _ => values[0] > 0.0,
        };
        if !rates_positive {
            return Err(Error::invalid("observation", "count rates must be > 0"));
        }
        Ok(Self { kind, values })
    }

    pub fn joint(neutron: &ObservationVector, gamma: &ObservationVector) -> Result<Self> {
        if neutron.kind != ObservationKind::Neutron || gamma.kind != ObservationKind::Gamma {
            return Err(Error::invalid("observation", "joint form needs one neutron and one gamma vector"));
        }
        let mut v = neutron.values.clone();
        v.extend_from_slice(&gamma.values);
        Self::new(ObservationKind::Joint, v)
    }

    /// Neutron (first three) or gamma (last three) part of a joint vector.
    pub fn part(&self, kind: ObservationKind) -> Result<Self> {
        match (self.kind, kind) {
            (a, b) if a == b => Ok(self.clone()),
            (ObservationKind::Joint, ObservationKind::Neutron) => Self::new(kind, self.values[..3].to_vec()),
            (ObservationKind::Joint, ObservationKind::Gamma) => Self::new(kind, self.values[3..].to_vec()),
            _ => Err(Error::invalid("observation", format!("cannot take {kind:?} part of {:?}", self.kind))),
        }
    }
}

/// Settings for reducing a time list to an observation with sequential binning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningSettings {
    /// Base window in units of `1/alpha`.
    pub base_window_alpha: f64,
    pub doublings: usize,
    pub plateau: PlateauRule,
}

impl Default for BinningSettings {
    fn default() -> Self {
        Self {
            base_window_alpha: 0.5,
            doublings: 9,
            plateau: PlateauRule::default(),
        }
    }
}

pub fn observe(list: &TimeList, kind: ParticleKind, alpha: f64, settings: &BinningSettings) -> Result<ObservationVector> {
    let curve = sequential_binning(list, kind, settings.base_window_alpha / alpha, settings.doublings)?;
    let a = extract_asymptote(&curve, &settings.plateau)?;
    if !a.converged {
        log::warn!("{kind:?} Feynman curve did not reach a plateau");
    }
    let okind = match kind {
        ParticleKind::Neutron => ObservationKind::Neutron,
        ParticleKind::Gamma => ObservationKind::Gamma,
    };
    ObservationVector::new(okind, vec![curve.rate, a.y, a.x])
}

pub fn observe_joint(list: &TimeList, alpha: f64, settings: &BinningSettings) -> Result<ObservationVector> {
    let n = observe(list, ParticleKind::Neutron, alpha, settings)?;
    let g = observe(list, ParticleKind::Gamma, alpha, settings)?;
    ObservationVector::joint(&n, &g)
}

/// Unbiased sample covariance (divisor `N - 1`), symmetric by construction.
pub fn empirical_covariance(obs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if obs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "empirical covariance needs at least 2 observations, got {}",
            obs.len()
        )));
    }
    let d = obs[0].len();
    if obs.iter().any(|o| o.len() != d) {
        return Err(Error::invalid("observations", "dimension mismatch"));
    }
    let n = obs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| obs.iter().map(|o| o[j]).sum::<f64>() / n).collect();
    let mut c = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let s: f64 = obs.iter().map(|o| (o[i] - mean[i]) * (o[j] - mean[j])).sum();
            c[(i, j)] = s / (n - 1.0);
            c[(j, i)] = c[(i, j)];
        }
    }
    Ok(c)
}

pub fn observation_mean(obs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if obs.is_empty() {
        return Err(Error::InsufficientData("no observations".into()));
    }
    let d = obs[0].len();
    let n = obs.len() as f64;
    Ok((0..d).map(|j| obs.iter().map(|o| o[j]).sum::<f64>() / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::Detection;

    fn list(events: &[(f64, u64)], duration: f64) -> TimeList {
        TimeList {
            duration,
            config_hash: String::new(),
            histories: events.iter().map(|e| e.1 + 1).max().unwrap_or(0),
            events: events
                .iter()
                .map(|&(time, history)| Detection {
                    time,
                    kind: ParticleKind::Neutron,
                    history,
                })
                .collect(),
        }
    }

    #[test]
    fn constant_counts_give_minus_one() {
        let levels = sequential_binning_counts(&[4; 64], 1.0, 2).unwrap();
        for l in levels {
            assert_eq!(l.y, Some(-1.0));
        }
    }

    #[test]
    fn hand_cases() {
        let l = sequential_binning_counts(&[0, 2, 1, 1], 1.0, 1).unwrap();
        assert_eq!(l[0].y, Some(-0.5));
        assert_eq!(l[1].y, Some(-1.0));
        let l = sequential_binning_counts(&[0, 2], 1.0, 0).unwrap();
        assert_eq!(l[0].y, Some(0.0));
        assert_eq!(l[0].x, Some(-1.0));
    }

    #[test]
    fn empty_level_is_undefined() {
        let l = sequential_binning_counts(&[0, 0, 0, 0], 1.0, 1).unwrap();
        assert!(l.iter().all(|l| l.y.is_none() && l.x.is_none()));
    }

    #[test]
    fn triggered_hand_enumeration() {
        let t = list(&[(0.1, 0), (0.2, 0), (0.3, 0)], 1.0);
        let est = triggered_binning(&t, ParticleKind::Neutron, 1.0).unwrap();
        assert_eq!(est.y, 2.0);
        assert_eq!(est.x, 2.0);
        let t = list(&[(0.1, 0), (0.2, 1), (0.3, 2)], 1.0);
        let est = triggered_binning(&t, ParticleKind::Neutron, 1.0).unwrap();
        assert_eq!((est.y, est.x), (0.0, 0.0));
    }

    #[test]
    fn triggered_window_is_respected() {
        let t = list(&[(0.1, 0), (0.2, 0), (0.9, 0)], 1.0);
        let est = triggered_binning(&t, ParticleKind::Neutron, 0.15).unwrap();
        assert_eq!(est.y, 2.0 / 3.0);
    }

    #[test]
    fn plateau_examples() {
        let rule = PlateauRule {
            levels: 3,
            tolerance: 0.02,
        };
        let (v, ok, _) = plateau(&[0.70, 0.71, 0.712, 0.711], &rule).unwrap();
        assert!(ok);
        assert!((v - 0.711).abs() < 1e-12);
        let (_, ok, _) = plateau(&[0.1, 0.2, 0.4, 0.8, 1.6], &rule).unwrap();
        assert!(!ok);
    }

    #[test]
    fn covariance_hand_cases() {
        let c = empirical_covariance(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(c[(0, 0)], 2.0);
        let c = empirical_covariance(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
        assert!(empirical_covariance(&[vec![1.0]]).is_err());
    }

    #[test]
    fn observation_validation() {
        assert!(ObservationVector::new(ObservationKind::Neutron, vec![0.0, 1.0, 1.0]).is_err());
        assert!(ObservationVector::new(ObservationKind::Joint, vec![1.0; 3]).is_err());
        let n = ObservationVector::new(ObservationKind::Neutron, vec![1.0, 2.0, 3.0]).unwrap();
        let g = ObservationVector::new(ObservationKind::Gamma, vec![4.0, 5.0, 6.0]).unwrap();
        let j = ObservationVector::joint(&n, &g).unwrap();
        assert_eq!(j.part(ObservationKind::Gamma).unwrap(), g);
    }
}
