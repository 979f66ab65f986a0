//! Fissile-material parameter identification from neutron and gamma
//! correlation measurements.

pub mod config;
pub mod dataset;
pub mod design;
pub mod inference;
pub mod error;
pub mod moments;
pub mod metrics;
pub mod optim;
pub mod pointmodel;
pub mod seed;
pub mod simulator;
pub mod space;
pub mod surrogate;

pub use error::{Error, Result};
