//! Named input parameters, outputs and axis-aligned design boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Kp,
    EpsF,
    Source,
    Xs,
    MGamma,
    EpsGamma,
}

impl Parameter {
    pub const ALL: [Parameter; 6] = [
        Parameter::Kp,
        Parameter::EpsF,
        Parameter::Source,
        Parameter::Xs,
        Parameter::MGamma,
        Parameter::EpsGamma,
    ];
    pub const NEUTRON: [Parameter; 4] = [Parameter::Kp, Parameter::EpsF, Parameter::Source, Parameter::Xs];
    pub const GAMMA: [Parameter; 5] = [
        Parameter::Kp,
        Parameter::Source,
        Parameter::Xs,
        Parameter::MGamma,
        Parameter::EpsGamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::Kp => "k_p",
            Parameter::EpsF => "eps_f",
            Parameter::Source => "s_intensity",
            Parameter::Xs => "x_s",
            Parameter::MGamma => "m_gamma",
            Parameter::EpsGamma => "eps_gamma",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Position in the joint 6-vector.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&p| p == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    RateN,
    YN,
    XN,
    RateG,
    YG,
    XG,
}

impl Output {
    pub const ALL: [Output; 6] = [Output::RateN, Output::YN, Output::XN, Output::RateG, Output::YG, Output::XG];
    pub const NEUTRON: [Output; 3] = [Output::RateN, Output::YN, Output::XN];
    pub const GAMMA: [Output; 3] = [Output::RateG, Output::YG, Output::XG];

    pub fn name(self) -> &'static str {
        match self {
            Output::RateN => "r_n",
            Output::YN => "y_n",
            Output::XN => "x_n",
            Output::RateG => "r_g",
            Output::YG => "y_g",
            Output::XG => "x_g",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.name() == name)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&o| o == self).unwrap()
    }
}

/// Axis-aligned box over a list of named parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub params: Vec<Parameter>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(params: Vec<Parameter>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { params, lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Default joint design box used throughout the toolkit.
    pub fn default_joint() -> Self {
        Self {
            params: Parameter::ALL.to_vec(),
            lower: vec![0.75, 0.005, 5.0e3, 0.2, 10.0, 0.05],
            upper: vec![0.95, 0.02, 2.0e4, 0.8, 50.0, 0.5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.lower.len() || self.params.len() != self.upper.len() {
            return Err(Error::invalid("box", "bounds length does not match parameter count"));
        }
        for ((p, lo), hi) in self.params.iter().zip(&self.lower).zip(&self.upper) {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::invalid(p.name(), format!("box bounds must satisfy lower < upper, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn position(&self, p: Parameter) -> Option<usize> {
        self.params.iter().position(|&q| q == p)
    }

    /// Sub-box over `params` (each must be present here).
    pub fn project(&self, params: &[Parameter]) -> Result<ParamBox> {
        let mut lower = Vec::with_capacity(params.len());
        let mut upper = Vec::with_capacity(params.len());
        for &p in params {
            let j = self
                .position(p)
                .ok_or_else(|| Error::invalid(p.name(), "not part of the source box"))?;
            lower.push(self.lower[j]);
            upper.push(self.upper[j]);
        }
        Ok(ParamBox {
            params: params.to_vec(),
            lower,
            upper,
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.lower[j]) / self.width(j))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, v)| self.lower[j] + v * self.width(j))
            .collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.width(j)).product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_round_trip() {
        let b = ParamBox::default_joint();
        let x = vec![0.8, 0.01, 1e4, 0.5, 20.0, 0.1];
        let back = b.from_unit(&b.to_unit(&x));
        for (a, c) in x.iter().zip(&back) {
            assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn projection_keeps_order_of_request() {
        let b = ParamBox::default_joint();
        let g = b.project(&Parameter::GAMMA).unwrap();
        assert_eq!(g.params, Parameter::GAMMA.to_vec());
        assert_eq!(g.lower[0], 0.75);
        assert_eq!(g.lower[3], 10.0);
    }

    #[test]
    fn reversed_bounds_name_parameter() {
        let err = ParamBox::new(vec![Parameter::Xs], vec![0.9], vec![0.1]).unwrap_err();
        assert!(err.to_string().contains("x_s"));
    }
}
