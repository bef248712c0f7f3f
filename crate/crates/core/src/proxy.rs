//! Proxy-label construction: group-dependent perturbation of the
//! ground-truth scores.
//!
//! The stylized injection adds Z ~ N(b, z_sd^2) to male applicants'
//! scores and subtracts it from female applicants'. The generalized
//! form perturbs with any group-conditional sampler B that is
//! independent of features given group.

use nalgebra::DVector;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::synth::SyntheticPool;
use crate::types::GroupAttribute;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    /// Male advantage b.
    pub b: f64,
    /// Standard deviation of the noise term Z.
    pub z_sd: f64,
    pub seed: u64,
    /// Grid of b values for sweeps.
    pub grid: Vec<f64>,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig { b: 0.0, z_sd: 1.0, seed: 17, grid: default_grid() }
    }
}

pub fn default_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5]
}

impl ProxyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b.is_finite() && self.b >= 0.0) {
            return Err(Error::InvalidConfig("b must be nonnegative".into()));
        }
        if !(self.z_sd.is_finite() && self.z_sd >= 0.0) {
            return Err(Error::InvalidConfig("z_sd must be nonnegative".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("b grid must be nonempty".into()));
        }
        Ok(())
    }

    pub fn at(&self, b: f64, seed: u64) -> ProxyConfig {
        ProxyConfig { b, z_sd: self.z_sd, seed, grid: self.grid.clone() }
    }
}

/// Proxy labels Y' = Y + Z for group m, Y - Z for group f, with
/// Z ~ N(b, z_sd^2) i.i.d. and independent of all features.
pub fn inject(pool: &SyntheticPool, config: &ProxyConfig) -> Result<DVector<f64>> {
    config.validate()?;
    if pool.n() == 0 {
        return Err(Error::InvalidConfig("pool is empty".into()));
    }
    let mut rng = stream_rng(config.seed, "proxy", &[]);
    let mut labels = pool.true_scores();
    if config.z_sd == 0.0 && config.b == 0.0 {
        return Ok(labels);
    }
    let normal = Normal::new(config.b, config.z_sd).map_err(|e| {
        Error::InvalidConfig(format!("invalid proxy noise parameters: {e}"))
    })?;
    for (i, a) in pool.applicants.iter().enumerate() {
        labels[i] += a.group.sign() * normal.sample(&mut rng);
    }
    Ok(labels)
}

/// Group-conditional sampler for the perturbation B.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSampler {
    /// B | G ~ N(mean_g, sd_g^2).
    Normal { male: (f64, f64), female: (f64, f64) },
    /// B | G ~ Uniform(lo_g, hi_g).
    Uniform { male: (f64, f64), female: (f64, f64) },
    /// Degenerate B = const_g.
    Constant { male: f64, female: f64 },
    /// The stylized injection as a special case: B = sign(G) * Z with
    /// Z ~ N(b, z_sd^2), so beta(m) = b and beta(f) = -b.
    SignedNormal { b: f64, z_sd: f64 },
}

/// A group-conditional perturbation with its analytic means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// E[B | G = m].
    pub beta_m: f64,
    /// E[B | G = f].
    pub beta_f: f64,
    pub sampler: GroupSampler,
}

impl PerturbationSpec {
    pub fn normal(male: (f64, f64), female: (f64, f64)) -> Self {
        PerturbationSpec { beta_m: male.0, beta_f: female.0, sampler: GroupSampler::Normal { male, female } }
    }

    pub fn uniform(male: (f64, f64), female: (f64, f64)) -> Self {
        PerturbationSpec {
            beta_m: (male.0 + male.1) / 2.0,
            beta_f: (female.0 + female.1) / 2.0,
            sampler: GroupSampler::Uniform { male, female },
        }
    }

    pub fn constant(male: f64, female: f64) -> Self {
        PerturbationSpec { beta_m: male, beta_f: female, sampler: GroupSampler::Constant { male, female } }
    }

    /// The stylized injection mapped through the general form.
    pub fn from_stylized(b: f64, z_sd: f64) -> Self {
        PerturbationSpec { beta_m: b, beta_f: -b, sampler: GroupSampler::SignedNormal { b, z_sd } }
    }

    /// beta(m) - beta(f), the group advantage term.
    pub fn beta_gap(&self) -> f64 {
        self.beta_m - self.beta_f
    }

    fn sample(&self, group: GroupAttribute, rng: &mut impl rand::Rng) -> Result<f64> {
        let value = match &self.sampler {
            GroupSampler::Normal { male, female } => {
                let (mean, sd) = if group == GroupAttribute::Male { *male } else { *female };
                Normal::new(mean, sd)
                    .map_err(|e| Error::InvalidConfig(format!("invalid normal sampler: {e}")))?
                    .sample(rng)
            }
            GroupSampler::Uniform { male, female } => {
                let (lo, hi) = if group == GroupAttribute::Male { *male } else { *female };
                if lo == hi {
                    lo
                } else {
                    Uniform::new(lo, hi)
                        .map_err(|e| Error::InvalidConfig(format!("invalid uniform sampler: {e}")))?
                        .sample(rng)
                }
            }
            GroupSampler::Constant { male, female } => {
                if group == GroupAttribute::Male {
                    *male
                } else {
                    *female
                }
            }
            GroupSampler::SignedNormal { b, z_sd } => {
                let z = Normal::new(*b, *z_sd)
                    .map_err(|e| Error::InvalidConfig(format!("invalid signed sampler: {e}")))?
                    .sample(rng);
                group.sign() * z
            }
        };
        Ok(value)
    }
}

/// Proxy labels Y' = Y + B under a general group-conditional sampler.
pub fn inject_general(
    pool: &SyntheticPool,
    spec: &PerturbationSpec,
    seed: u64,
) -> Result<DVector<f64>> {
    if pool.n() == 0 {
        return Err(Error::InvalidConfig("pool is empty".into()));
    }
    let mut rng = stream_rng(seed, "proxy-general", &[]);
    let mut labels = pool.true_scores();
    for (i, a) in pool.applicants.iter().enumerate() {
        labels[i] += spec.sample(a.group, &mut rng)?;
    }
    Ok(labels)
}
