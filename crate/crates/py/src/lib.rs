//! Python bindings: pool generation, proxy injection, model fitting,
//! audit metrics, selection policies, templating, and the experiment
//! runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use biaslab_core::audit::{estimate_bias, Manipulation};
use biaslab_core::cohort::{select_top_k as core_select_top_k, SelectionPolicy};
use biaslab_core::experiment::{run_experiment as core_run_experiment, ExperimentConfig};
use biaslab_core::linmodel::{auc as core_auc, ridge_fit};
use biaslab_core::proxy::{inject as core_inject, ProxyConfig};
use biaslab_core::synth::{generate_pool, GeneratorConfig, SyntheticPool};
use biaslab_core::template::{
    annotate, instantiate, parse_template, serialize_template, InstantiationContext, KnownNames,
    Lexicon, NamePool, Variant,
};
use biaslab_core::types::{
    pooled_from_reps, FeatureMatrix, MapParams, Presentation, RepresentationKind,
    RepresentationSpec,
};
use nalgebra::{DMatrix, DVector};

fn err(e: biaslab_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_kind(kind: &str) -> PyResult<RepresentationKind> {
    match kind {
        "black_box" => Ok(RepresentationKind::BlackBox),
        "rubric" => Ok(RepresentationKind::Rubric),
        "kitchen_sink" => Ok(RepresentationKind::KitchenSink),
        other => Err(PyValueError::new_err(format!(
            "unknown representation '{other}' (expected black_box|rubric|kitchen_sink)"
        ))),
    }
}

/// A generated synthetic applicant pool.
#[pyclass]
struct Pool {
    inner: SyntheticPool,
}

#[pymethods]
impl Pool {
    /// Builds a pool from a GeneratorConfig JSON object; omitted
    /// fields take their defaults.
    #[new]
    fn new(config_json: &str) -> PyResult<Self> {
        let config: GeneratorConfig =
            serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Pool { inner: generate_pool(&config).map_err(err)? })
    }

    fn n(&self) -> usize {
        self.inner.n()
    }

    fn female_share(&self) -> f64 {
        self.inner.female_share()
    }

    fn true_scores(&self) -> Vec<f64> {
        self.inner.true_scores().iter().copied().collect()
    }

    fn groups(&self) -> Vec<String> {
        self.inner.groups().iter().map(|g| g.code().to_string()).collect()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.applicants.iter().map(|a| a.id.clone()).collect()
    }

    /// Feature matrix rows for black_box, rubric, or kitchen_sink.
    fn features(&self, kind: &str) -> PyResult<Vec<Vec<f64>>> {
        let features = self.inner.representation(parse_kind(kind)?).map_err(err)?;
        Ok((0..features.n())
            .map(|i| features.rows.row(i).iter().copied().collect())
            .collect())
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.inner.write_csv(&[], file).map_err(err)
    }
}

/// Proxy labels Y' under the stylized group-dependent injection.
#[pyfunction]
fn inject(pool: &Pool, b: f64, z_sd: f64, seed: u64) -> PyResult<Vec<f64>> {
    let config = ProxyConfig { b, z_sd, seed, ..ProxyConfig::default() };
    Ok(core_inject(&pool.inner, &config).map_err(err)?.iter().copied().collect())
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("feature rows are empty"));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(PyValueError::new_err("ragged feature rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

/// Ridge regression on centered data; returns (intercept, coefficients).
#[pyfunction(name = "ridge_fit")]
fn py_ridge_fit(x: Vec<Vec<f64>>, y: Vec<f64>, lambda: f64) -> PyResult<(f64, Vec<f64>)> {
    let rows = matrix_from_rows(&x)?;
    let dim = rows.ncols();
    let features = FeatureMatrix {
        rows,
        spec: RepresentationSpec { kind: RepresentationKind::Rubric, dim, map_params: MapParams::none() },
        presented: Presentation::Natural,
    };
    let labels = DVector::from_vec(y);
    let model = ridge_fit(&features, &labels, lambda).map_err(err)?;
    Ok((model.intercept, model.coefficients.iter().copied().collect()))
}

/// Mann-Whitney AUC with ties counting one half.
#[pyfunction(name = "auc")]
fn py_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    core_auc(&scores, &labels).map_err(err)
}

/// Rubin pooling of (point, se) repetitions; returns
/// (point, within_var, between_var, total_se).
#[pyfunction]
fn pooled(estimates: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64, f64)> {
    let p = pooled_from_reps(&estimates).map_err(err)?;
    Ok((p.point, p.within_var, p.between_var, p.total_se))
}

/// Indices of the top admit_fraction of predictions.
#[pyfunction]
fn select_top_k(predictions: Vec<f64>, admit_fraction: f64) -> PyResult<Vec<usize>> {
    let policy = SelectionPolicy { admit_fraction };
    core_select_top_k(&DVector::from_vec(predictions), &policy).map_err(err)
}

/// Audited bias (point, se) of an OLS model trained on the given
/// representation and labels, under the feature-space manipulation.
#[pyfunction]
fn ols_audit_bias(pool: &Pool, labels: Vec<f64>, representation: &str) -> PyResult<(f64, f64)> {
    let kind = parse_kind(representation)?;
    let features = pool.inner.representation(kind).map_err(err)?;
    let label_vec = DVector::from_vec(labels);
    let model = ridge_fit(features, &label_vec, 0.0).map_err(err)?;
    let manipulation = Manipulation::feature_space(&pool.inner);
    let bias = estimate_bias(&model, features, &manipulation).map_err(err)?;
    Ok((bias.point, bias.se))
}

/// Default experiment config as JSON (edit and pass to run_experiment).
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&ExperimentConfig::default())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// CI-sized experiment config as JSON.
#[pyfunction]
fn fast_config() -> PyResult<String> {
    serde_json::to_string_pretty(&ExperimentConfig::fast_mode())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs the full sweep; returns the manifest path.
#[pyfunction]
fn run_experiment(config_json: &str, output_dir: &str) -> PyResult<String> {
    let mut config = ExperimentConfig::from_json(config_json).map_err(err)?;
    config.output_dir = std::path::PathBuf::from(output_dir);
    core_run_experiment(&config).map_err(err)?;
    Ok(config.output_dir.join("manifest.json").display().to_string())
}

/// Wraps gender signals and name tokens; returns wire-format bytes.
#[pyfunction]
fn annotate_text(document: &str, first: &str, last: &str) -> PyResult<String> {
    let known = if first.is_empty() && last.is_empty() {
        KnownNames::none()
    } else {
        KnownNames::new(first, last)
    };
    let template = annotate(document, &Lexicon::builtin(), &known).map_err(err)?;
    Ok(serialize_template(&template))
}

/// Renders a wire-format template variant
/// (original|neutral|male|female).
#[pyfunction]
#[pyo3(signature = (template, variant, country = "US", applicant_id = "a00000", seed = 17))]
fn instantiate_text(
    template: &str,
    variant: &str,
    country: &str,
    applicant_id: &str,
    seed: u64,
) -> PyResult<String> {
    let parsed = parse_template(template).map_err(err)?;
    let variant = Variant::parse(variant).map_err(err)?;
    let pool = NamePool::builtin();
    let ctx = InstantiationContext { name_pool: &pool, country, applicant_id, seed };
    Ok(instantiate(&parsed, variant, &ctx).map_err(err)?.text)
}

#[pymodule]
fn biaslab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pool>()?;
    m.add_function(wrap_pyfunction!(inject, m)?)?;
    m.add_function(wrap_pyfunction!(py_ridge_fit, m)?)?;
    m.add_function(wrap_pyfunction!(py_auc, m)?)?;
    m.add_function(wrap_pyfunction!(pooled, m)?)?;
    m.add_function(wrap_pyfunction!(select_top_k, m)?)?;
    m.add_function(wrap_pyfunction!(ols_audit_bias, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(fast_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(annotate_text, m)?)?;
    m.add_function(wrap_pyfunction!(instantiate_text, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
