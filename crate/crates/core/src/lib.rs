//! A desk-scale laboratory for studying label bias in selection systems.
//!
//! The crate generates synthetic applicant pools from a linear-Gaussian
//! structural causal model, injects group-dependent label bias, fits
//! ridge models with nested cross-validation, measures bias through
//! correspondence-experiment manipulations, and evaluates mitigation
//! strategies (orthogonalization, redaction, marginalization, rubric
//! restriction) together with their consequences for admitted cohorts.
//! A separate templating pipeline produces gender-swapped document
//! variants through a control-character marker format.

pub mod audit;
pub mod cohort;
pub mod error;
pub mod experiment;
pub mod linmodel;
pub mod mitigation;
pub mod proxy;
pub mod rng;
pub mod synth;
pub mod template;
pub mod types;

pub use error::{Error, Result};
