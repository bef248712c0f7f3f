//! Shared domain vocabulary: applicants, representations, groups,
//! fitted models, and pooled estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary group attribute. Serialized as `"m"` / `"f"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupAttribute {
    #[serde(rename = "m")]
    Male,
    #[serde(rename = "f")]
    Female,
}

impl GroupAttribute {
    /// Sign convention used throughout: +1 for male, -1 for female.
    pub fn sign(self) -> f64 {
        match self {
            GroupAttribute::Male => 1.0,
            GroupAttribute::Female => -1.0,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            GroupAttribute::Male => "m",
            GroupAttribute::Female => "f",
        }
    }

    pub fn parse(code: &str) -> Result<Self> {
        match code {
            "m" => Ok(GroupAttribute::Male),
            "f" => Ok(GroupAttribute::Female),
            other => Err(Error::InvalidConfig(format!(
                "unknown group code '{other}', expected 'm' or 'f'"
            ))),
        }
    }
}

impl std::fmt::Display for GroupAttribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

/// One synthetic applicant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicantRecord {
    pub id: String,
    pub group: GroupAttribute,
    /// Latent skill vector of length `k`, standardized units.
    pub skills: Vec<f64>,
    /// Ground-truth score.
    pub true_score: f64,
    /// Country tag, used only by the templater name pools.
    pub country: String,
}

/// Which feature map produced a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationKind {
    BlackBox,
    Rubric,
    Redacted,
    KitchenSink,
}

impl std::fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RepresentationKind::BlackBox => "black_box",
            RepresentationKind::Rubric => "rubric",
            RepresentationKind::Redacted => "redacted",
            RepresentationKind::KitchenSink => "kitchen_sink",
        };
        f.write_str(s)
    }
}

/// Parameters of the feature map needed by downstream consumers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    /// Column index of the gender channel, when the representation
    /// carries one (black-box and kitchen-sink matrices).
    pub gender_channel: Option<usize>,
    /// Loading `c` of the gender channel.
    pub gender_loading: f64,
}

impl MapParams {
    pub fn none() -> Self {
        MapParams { gender_channel: None, gender_loading: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepresentationSpec {
    pub kind: RepresentationKind,
    pub dim: usize,
    pub map_params: MapParams,
}

impl RepresentationSpec {
    pub fn new(kind: RepresentationKind, dim: usize, map_params: MapParams) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("representation dim must be positive".into()));
        }
        Ok(RepresentationSpec { kind, dim, map_params })
    }
}

/// How a feature matrix currently presents gender to its reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Presentation {
    /// Each applicant's own gender, as generated.
    Natural,
    /// Every applicant manipulated to present the given gender.
    Uniform(GroupAttribute),
}

/// An n-by-dim feature matrix; row order matches applicant order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: DMatrix<f64>,
    pub spec: RepresentationSpec,
    pub presented: Presentation,
}

impl FeatureMatrix {
    pub fn new(rows: DMatrix<f64>, spec: RepresentationSpec) -> Result<Self> {
        if rows.ncols() != spec.dim {
            return Err(Error::InvalidConfig(format!(
                "feature matrix has {} columns but spec.dim = {}",
                rows.ncols(),
                spec.dim
            )));
        }
        let fm = FeatureMatrix { rows, spec, presented: Presentation::Natural };
        fm.check_finite()?;
        Ok(fm)
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.rows.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "non-finite entry in {} feature matrix",
                self.spec.kind
            )))
        }
    }
}

/// Affine calibration map applied to raw predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub slope: f64,
    pub offset: f64,
}

impl Calibration {
    pub fn identity() -> Self {
        Calibration { slope: 1.0, offset: 0.0 }
    }

    pub fn apply(&self, raw: f64) -> f64 {
        self.slope * raw + self.offset
    }
}

/// A fitted linear predictor with calibration and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub intercept: f64,
    pub coefficients: DVector<f64>,
    pub ridge_lambda: f64,
    pub calibration: Calibration,
    pub spec: RepresentationSpec,
}

impl FittedModel {
    /// Raw (uncalibrated) prediction for row `i` of a feature matrix.
    pub fn predict_row_raw(&self, features: &FeatureMatrix, i: usize) -> f64 {
        (features.rows.row(i) * &self.coefficients)[(0, 0)] + self.intercept
    }

    /// Calibrated prediction for row `i` of a feature matrix.
    pub fn predict_row(&self, features: &FeatureMatrix, i: usize) -> f64 {
        self.calibration.apply(self.predict_row_raw(features, i))
    }

    /// Calibrated predictions for a whole matrix.
    pub fn predict(&self, features: &FeatureMatrix) -> DVector<f64> {
        let mut out = &features.rows * &self.coefficients;
        out.add_scalar_mut(self.intercept);
        for v in out.iter_mut() {
            *v = self.calibration.apply(*v);
        }
        out
    }

    /// Coefficients of the calibrated predictor as a plain linear map.
    pub fn effective_coefficients(&self) -> DVector<f64> {
        &self.coefficients * self.calibration.slope
    }

    pub fn effective_intercept(&self) -> f64 {
        self.calibration.apply(self.intercept)
    }
}

/// Anything that produces one prediction per applicant.
pub trait PoolPredictor {
    fn predict(&self, features: &FeatureMatrix) -> DVector<f64>;
    fn representation(&self) -> &RepresentationSpec;
}

impl PoolPredictor for FittedModel {
    fn predict(&self, features: &FeatureMatrix) -> DVector<f64> {
        FittedModel::predict(self, features)
    }

    fn representation(&self) -> &RepresentationSpec {
        &self.spec
    }
}

/// A point estimate pooled across repetitions with Rubin's rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledEstimate {
    pub point: f64,
    pub within_var: f64,
    pub between_var: f64,
    pub total_se: f64,
    pub reps: usize,
}

/// Pools `(point, se)` pairs from repeated analyses.
///
/// `point` is the mean of the repetition points, `within_var` the mean
/// squared standard error, `between_var` the sample variance of the
/// points, and `total_se = sqrt(within + (1 + 1/reps) * between)`.
pub fn pooled_from_reps(estimates: &[(f64, f64)]) -> Result<PooledEstimate> {
    if estimates.is_empty() {
        return Err(Error::NoRepetitions);
    }
    if let Some((p, se)) = estimates.iter().find(|(p, se)| !p.is_finite() || !se.is_finite() || *se < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "invalid repetition estimate (point {p}, se {se})"
        )));
    }
    let m = estimates.len() as f64;
    let point = estimates.iter().map(|(p, _)| p).sum::<f64>() / m;
    let within_var = estimates.iter().map(|(_, se)| se * se).sum::<f64>() / m;
    let between_var = if estimates.len() > 1 {
        estimates.iter().map(|(p, _)| (p - point).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let total_se = (within_var + (1.0 + 1.0 / m) * between_var).sqrt();
    Ok(PooledEstimate { point, within_var, between_var, total_se, reps: estimates.len() })
}
