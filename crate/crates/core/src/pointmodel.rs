//! Closed-form point-kinetics relations for the neutron count rate and the
//! second and third Feynman moments.
//!
//! All functions are pure and total over the validated parameter domain.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PMF_TOLERANCE: f64 = 1e-12;
const MOMENT_TOLERANCE: f64 = 1e-9;

/// Fission multiplicity data shared by the point model and the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuclearData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Mean neutrons per induced fission.
    pub nu_bar: f64,
    pub d2: f64,
    pub d3: f64,
    /// Mean neutrons per spontaneous fission.
    pub nu_bar_s: f64,
    pub d2_s: f64,
    pub d3_s: f64,
    /// Prompt decay constant (1/s).
    pub alpha: f64,
    pub induced_pmf: Vec<f64>,
    pub spont_pmf: Vec<f64>,
    pub gamma_pmf: Vec<f64>,
    pub gamma_spont_pmf: Vec<f64>,
}

/// Mean and normalized second/third factorial moments of a multiplicity PMF.
pub fn diven_factors(pmf: &[f64]) -> (f64, f64, f64) {
    let mut mean = 0.0;
    let mut f2 = 0.0;
    let mut f3 = 0.0;
    for (k, &p) in pmf.iter().enumerate() {
        let k = k as f64;
        mean += k * p;
        f2 += k * (k - 1.0) * p;
        f3 += k * (k - 1.0) * (k - 2.0) * p;
    }
    (mean, f2 / (mean * mean), f3 / (mean * mean * mean))
}

impl NuclearData {
    /// Shipped reference data (U-235 thermal induced fission, Pu-240
    /// spontaneous fission, negative-binomial prompt gamma multiplicities).
    pub fn reference() -> Self {
        let data: NuclearData = serde_json::from_str(include_str!("../data/nuclear_default.json"))
            .expect("bundled nuclear data parses");
        data.validate().expect("bundled nuclear data is consistent");
        data
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let data: NuclearData = serde_json::from_str(text)?;
        data.validate()?;
        Ok(data)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::NuclearData(format!("alpha must be > 0, got {}", self.alpha)));
        }
        let pmfs: [(&str, &[f64]); 4] = [
            ("induced_pmf", &self.induced_pmf),
            ("spont_pmf", &self.spont_pmf),
            ("gamma_pmf", &self.gamma_pmf),
            ("gamma_spont_pmf", &self.gamma_spont_pmf),
        ];
        for (name, pmf) in pmfs {
            if pmf.len() < 2 || pmf.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::NuclearData(format!(
                    "{name} must hold at least two non-negative entries"
                )));
            }
            let total: f64 = pmf.iter().sum();
            if (total - 1.0).abs() > PMF_TOLERANCE {
                return Err(Error::NuclearData(format!("{name} sums to {total}")));
            }
        }
        let checks = [
            ("induced", &self.induced_pmf, self.nu_bar, self.d2, self.d3),
            ("spontaneous", &self.spont_pmf, self.nu_bar_s, self.d2_s, self.d3_s),
        ];
        for (label, pmf, nu, d2, d3) in checks {
            let (m, e2, e3) = diven_factors(pmf);
            for (what, stored, derived) in [("mean", nu, m), ("d2", d2, e2), ("d3", d3, e3)] {
                if (stored - derived).abs() > MOMENT_TOLERANCE {
                    return Err(Error::NuclearData(format!(
                        "{label} {what}: stored {stored} but PMF gives {derived}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean prompt gammas per induced fission.
    pub fn gamma_mean(&self) -> f64 {
        diven_factors(&self.gamma_pmf).0
    }

    /// Mean prompt gammas per spontaneous fission.
    pub fn gamma_spont_mean(&self) -> f64 {
        diven_factors(&self.gamma_spont_pmf).0
    }
}

/// Neutron point-model parameters `(k_p, eps_F, S, x_s)` with the nuclear data.
#[derive(Debug, Clone, Copy)]
pub struct NeutronPointParams<'a> {
    pub k_p: f64,
    pub eps_f: f64,
    pub s_intensity: f64,
    pub x_s: f64,
    pub data: &'a NuclearData,
}

impl<'a> NeutronPointParams<'a> {
    pub fn new(k_p: f64, eps_f: f64, s_intensity: f64, x_s: f64, data: &'a NuclearData) -> Self {
        Self {
            k_p,
            eps_f,
            s_intensity,
            x_s,
            data,
        }
    }

    /// Prompt reactivity `(k_p - 1) / k_p`.
    pub fn reactivity(&self) -> f64 {
        (self.k_p - 1.0) / self.k_p
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_p > 0.0 && self.k_p < 1.0) {
            return Err(Error::invalid("k_p", format!("must satisfy 0 < k_p < 1, got {}", self.k_p)));
        }
        if !(self.eps_f > 0.0) || !self.eps_f.is_finite() {
            return Err(Error::invalid("eps_f", format!("must be > 0, got {}", self.eps_f)));
        }
        if !(self.s_intensity > 0.0) || !self.s_intensity.is_finite() {
            return Err(Error::invalid(
                "s_intensity",
                format!("must be > 0, got {}", self.s_intensity),
            ));
        }
        if !(0.0..=1.0).contains(&self.x_s) {
            return Err(Error::invalid("x_s", format!("must lie in [0, 1], got {}", self.x_s)));
        }
        if self.source_mix() <= 0.0 {
            return Err(Error::invalid("x_s", "degenerate source mix x_s + nu_s - x_s nu_s <= 0"));
        }
        Ok(())
    }

    fn source_mix(&self) -> f64 {
        let nu_s = self.data.nu_bar_s;
        self.x_s + nu_s - self.x_s * nu_s
    }

    /// `eps_F D2 / rho^2`, the Poisson-source second-moment amplitude.
    fn y_amplitude(&self) -> f64 {
        let rho = self.reactivity();
        self.eps_f * self.data.d2 / (rho * rho)
    }

    fn y_source_bracket(&self) -> f64 {
        let d = self.data;
        1.0 - self.x_s * self.reactivity() * d.nu_bar_s * d.d2_s / (d.nu_bar * d.d2)
    }

    fn x_source_bracket(&self) -> f64 {
        let d = self.data;
        let ratio = d.nu_bar_s / d.nu_bar;
        1.0 - self.x_s * self.reactivity() * ratio.powi(3) * d.d3_s / d.d3
    }

    fn x_terms(&self) -> (f64, f64) {
        let rho = self.reactivity();
        let amp = self.y_amplitude();
        let first = 3.0 * amp * amp * self.y_source_bracket();
        let second = -self.eps_f * self.eps_f * self.data.d3 / rho.powi(3) * self.x_source_bracket();
        (first, second)
    }
}

/// `1 - (1 - e^{-u}) / u`
fn time_factor_y(u: f64) -> f64 {
    if u < 1e-3 {
        u / 2.0 - u * u / 6.0 + u.powi(3) / 24.0
    } else {
        1.0 + (-u).exp_m1() / u
    }
}

/// `1 + e^{-u} - 2 (1 - e^{-u}) / u`
fn time_factor_x1(u: f64) -> f64 {
    if u < 1e-3 {
        u * u / 6.0 - u.powi(3) / 12.0 + u.powi(4) / 40.0
    } else {
        1.0 + (-u).exp() + 2.0 * (-u).exp_m1() / u
    }
}

/// `1 - (3 - 4 e^{-u} + e^{-2u}) / (2u)`
fn time_factor_x2(u: f64) -> f64 {
    if u < 1e-3 {
        u * u / 3.0 - u.powi(3) / 4.0 + 7.0 * u.powi(4) / 60.0
    } else {
        let e1 = (-u).exp_m1();
        let e2 = (-2.0 * u).exp_m1();
        // 3 - 4e^{-u} + e^{-2u} = -4 expm1(-u) + expm1(-2u)
        1.0 - (-4.0 * e1 + e2) / (2.0 * u)
    }
}

fn check_window(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid("T", format!("window must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// Mean detection rate (detections/s).
pub fn count_rate(p: &NeutronPointParams) -> Result<f64> {
    p.validate()?;
    let d = p.data;
    Ok(-(1.0 / p.source_mix()) * p.eps_f * d.nu_bar_s * p.s_intensity / (p.reactivity() * d.nu_bar))
}

/// Second Feynman moment `Y(T)`.
pub fn feynman_y(p: &NeutronPointParams, t: f64) -> Result<f64> {
    p.validate()?;
    check_window(t)?;
    Ok(p.y_amplitude() * p.y_source_bracket() * time_factor_y(p.data.alpha * t))
}

/// Third Feynman moment `X(T)`.
pub fn feynman_x(p: &NeutronPointParams, t: f64) -> Result<f64> {
    p.validate()?;
    check_window(t)?;
    let u = p.data.alpha * t;
    let (first, second) = p.x_terms();
    Ok(first * time_factor_x1(u) + second * time_factor_x2(u))
}

/// `(Y_inf, X_inf)`, the long-window limits, in closed form.
pub fn asymptotics(p: &NeutronPointParams) -> Result<(f64, f64)> {
    p.validate()?;
    let (first, second) = p.x_terms();
    Ok((p.y_amplitude() * p.y_source_bracket(), first + second))
}

/// `(R, Y_inf, X_inf)` for the neutron sub-input `(k_p, eps_F, S, x_s)`.
pub fn neutron_prior_mean(x: &[f64; 4], data: &NuclearData) -> Result<[f64; 3]> {
    let p = NeutronPointParams::new(x[0], x[1], x[2], x[3], data);
    let r = count_rate(&p)?;
    let (y, xx) = asymptotics(&p)?;
    Ok([r, y, xx])
}
