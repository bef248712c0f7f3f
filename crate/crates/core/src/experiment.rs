//! Config-driven experiment orchestration: sweeps over the male
//! advantage grid, strategies, and repetitions, with figure-ready CSV
//! reports and a hashed run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{
    estimate_bias, fit_gender_model_cv, paired_bias, BiasEstimate, GenderProbe, Manipulation,
    ProbeConfig,
};
use crate::cohort::{cohort_metrics, mse_gap_diagnostics, select_top_k, CohortReport, SelectionPolicy};
use crate::error::{Error, Result};
use crate::linmodel::{nested_cv_predict, CvConfig, RepetitionFit};
use crate::mitigation::{marginalize, orthogonalize, redact, Orthogonalizer, RedactionMap};
use crate::proxy::{inject, ProxyConfig};
use crate::rng::derive_seed;
use crate::synth::{generate_pool, GeneratorConfig, SyntheticPool};
use crate::types::{
    pooled_from_reps, FeatureMatrix, GroupAttribute, PooledEstimate, PoolPredictor,
};

/// A bias-mitigation strategy, selecting which representation a model
/// is trained on and how its predictions are post-processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    BlackBox,
    Rubric,
    KitchenSink,
    Redacted,
    Marginalized,
    Orthogonalized,
}

impl Strategy {
    /// Accepts both the strategy names and the CLI mitigation flags.
    pub fn parse(s: &str) -> Result<Strategy> {
        match s {
            "none" | "black_box" => Ok(Strategy::BlackBox),
            "rubric" => Ok(Strategy::Rubric),
            "kitchen_sink" => Ok(Strategy::KitchenSink),
            "redact" | "redacted" => Ok(Strategy::Redacted),
            "marginalize" | "marginalized" => Ok(Strategy::Marginalized),
            "orthogonalize" | "orthogonalized" => Ok(Strategy::Orthogonalized),
            other => Err(Error::InvalidConfig(format!("unknown strategy '{other}'"))),
        }
    }

    pub fn all() -> [Strategy; 6] {
        [
            Strategy::BlackBox,
            Strategy::Rubric,
            Strategy::KitchenSink,
            Strategy::Redacted,
            Strategy::Marginalized,
            Strategy::Orthogonalized,
        ]
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::BlackBox => "black_box",
            Strategy::Rubric => "rubric",
            Strategy::KitchenSink => "kitchen_sink",
            Strategy::Redacted => "redacted",
            Strategy::Marginalized => "marginalized",
            Strategy::Orthogonalized => "orthogonalized",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditOptions {
    pub probe: ProbeConfig,
    /// Marginalization weight; defaults to the pool's male share.
    pub marginal_weight: Option<f64>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { probe: ProbeConfig::default(), marginal_weight: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub proxy: ProxyConfig,
    pub cv: CvConfig,
    pub strategies: Vec<Strategy>,
    pub policy: SelectionPolicy,
    pub audit: AuditOptions,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generator: GeneratorConfig::default(),
            proxy: ProxyConfig::default(),
            // 5 repetitions by default; `full_mode` raises it to 20.
            cv: CvConfig { repetitions: 5, ..CvConfig::default() },
            strategies: vec![
                Strategy::BlackBox,
                Strategy::Rubric,
                Strategy::KitchenSink,
                Strategy::Redacted,
                Strategy::Marginalized,
            ],
            policy: SelectionPolicy::default(),
            audit: AuditOptions::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// CI-sized run: small pool, three repetitions, reduced CV.
    pub fn fast_mode() -> Self {
        let mut config = ExperimentConfig::default();
        config.generator.n = 500;
        config.cv = CvConfig::fast();
        config.output_dir = PathBuf::from("runs/fast");
        config
    }

    /// Full protocol with 20 repetitions.
    pub fn full_mode() -> Self {
        let mut config = ExperimentConfig::default();
        config.cv.repetitions = 20;
        config.output_dir = PathBuf::from("runs/full");
        config
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.proxy.validate()?;
        self.cv.validate()?;
        self.policy.validate()?;
        if let Some(w) = self.audit.marginal_weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidWeight(w));
            }
        }
        Ok(())
    }

    /// Hash of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex_digest(hasher)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(digest.len() * 2);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// One row of `bias_curve.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasRow {
    pub b: f64,
    pub strategy: String,
    pub bias: f64,
    pub se: f64,
    pub predicted_bias: f64,
    pub delta_pi: f64,
}

/// One row of `cohort_curves.csv`.
#[derive(Debug, Clone)]
pub struct CohortRow {
    pub b: f64,
    pub strategy: String,
    pub share_female: PooledEstimate,
    pub mean_true_score: PooledEstimate,
    pub rmse_proxy: f64,
    pub rmse_true: f64,
    pub ref_share_female: f64,
    pub ref_mean_true_score: f64,
    pub auxiliary_means: Vec<f64>,
}

/// One row of `mse_curves.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MseRow {
    pub b: f64,
    pub rmse_proxy_rubric: f64,
    pub rmse_proxy_kitchen: f64,
    pub rmse_true_rubric: f64,
    pub rmse_true_kitchen: f64,
    pub mse_gap_true: f64,
    pub mse_gap_se: f64,
    pub residualized_correlation: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub bias_rows: Vec<BiasRow>,
    pub cohort_rows: Vec<CohortRow>,
    pub mse_rows: Vec<MseRow>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub package_version: String,
    pub config_hash: String,
    pub files: BTreeMap<String, String>,
    pub config: ExperimentConfig,
}

fn stage<T>(name: &str, hash: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Stage {
        stage: name.to_string(),
        config_hash: hash.to_string(),
        source: Box::new(e),
    })
}

/// Everything a strategy needs inside a sweep cell.
struct StrategyPlan {
    strategy: Strategy,
    /// Features the model trains on; also the natural features the
    /// selection policy ranks.
    train: FeatureMatrix,
    /// Orthogonalizer for composing the audit view, when applicable.
    ortho: Option<Orthogonalizer>,
}

impl StrategyPlan {
    fn build(
        strategy: Strategy,
        pool: &SyntheticPool,
        groups: &[GroupAttribute],
    ) -> Result<StrategyPlan> {
        let (train, ortho) = match strategy {
            Strategy::BlackBox | Strategy::Marginalized => (pool.black_box().clone(), None),
            Strategy::Rubric => (pool.rubric().clone(), None),
            Strategy::KitchenSink => (pool.kitchen_sink().clone(), None),
            Strategy::Redacted => (redact(pool.black_box(), &RedactionMap::FeatureSpace)?, None),
            Strategy::Orthogonalized => {
                let (features, ortho) = orthogonalize(pool.black_box(), groups)?;
                (features, Some(ortho))
            }
        };
        Ok(StrategyPlan { strategy, train, ortho })
    }

    /// The strategy's reading of the manipulated pool.
    fn audit_view(
        &self,
        pool: &SyntheticPool,
        manipulation: &Manipulation,
        target: GroupAttribute,
    ) -> Result<FeatureMatrix> {
        match self.strategy {
            Strategy::Orthogonalized => {
                let manipulated = manipulation.apply(pool.black_box(), target)?;
                Ok(self.ortho.as_ref().expect("orthogonalizer present").transform(&manipulated))
            }
            _ => manipulation.apply(&self.train, target),
        }
    }
}

struct CellOutcome {
    bias: BiasEstimate,
    cohort: CohortReport,
    rubric_preds: Option<DVector<f64>>,
    kitchen_preds: Option<DVector<f64>>,
    warnings: Vec<String>,
}

/// Runs the sweep without touching the filesystem.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let hash = config.hash();

    let pool = stage("generate", &hash, generate_pool(&config.generator))?;
    let groups = pool.groups();
    let manipulation = Manipulation::feature_space(&pool);
    let male_share =
        groups.iter().filter(|g| **g == GroupAttribute::Male).count() as f64 / groups.len() as f64;
    let marginal_weight = config.audit.marginal_weight.unwrap_or(male_share);

    let plans: Vec<StrategyPlan> = config
        .strategies
        .iter()
        .map(|s| stage("fit", &hash, StrategyPlan::build(*s, &pool, &groups)))
        .collect::<Result<_>>()?;

    // Delta-pi per (strategy, repetition): the probe depends only on
    // the representation, never on the injected labels, so it is
    // shared across the grid. Redacted and marginalized predictors are
    // T-invariant by construction, so their delta-pi term is exactly
    // zero and no probe is fit.
    let reps = config.cv.repetitions;
    let mut delta_pi: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for (si, plan) in plans.iter().enumerate() {
        let estimates: Vec<(f64, f64)> = match plan.strategy {
            Strategy::Redacted | Strategy::Marginalized => vec![(0.0, 0.0); reps],
            _ => (0..reps)
                .into_par_iter()
                .map(|rep| -> Result<(f64, f64)> {
                    let probe_cfg = ProbeConfig {
                        seed: derive_seed(config.audit.probe.seed, "probe", &[si as u64, rep as u64]),
                        ..config.audit.probe
                    };
                    let probe = fit_gender_model_cv(&plan.train, &groups, &probe_cfg)?;
                    let male = plan.audit_view(&pool, &manipulation, GroupAttribute::Male)?;
                    let female = plan.audit_view(&pool, &manipulation, GroupAttribute::Female)?;
                    let diffs = probe.probability(&male) - probe.probability(&female);
                    let est = paired_bias(&diffs);
                    Ok((est.point, est.se))
                })
                .collect::<Result<_>>()
                .map_err(|e| Error::Stage {
                    stage: "audit".into(),
                    config_hash: hash.clone(),
                    source: Box::new(e),
                })?,
        };
        delta_pi.insert(si, estimates);
    }

    // Grid cells; a hidden b = 0 cell provides the baseline when the
    // grid does not contain zero.
    let mut grid: Vec<(f64, bool)> = config.proxy.grid.iter().map(|&b| (b, true)).collect();
    if !config.proxy.grid.contains(&0.0) {
        grid.push((0.0, false));
    }

    let cells: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|gi| (0..reps).map(move |rep| (gi, rep)))
        .collect();

    let cell_results: Vec<Result<Vec<CellOutcome>>> = cells
        .par_iter()
        .map(|&(gi, rep)| -> Result<Vec<CellOutcome>> {
            let (b, _) = grid[gi];
            let inject_cfg = config
                .proxy
                .at(b, derive_seed(config.proxy.seed, "inject", &[gi as u64, rep as u64]));
            let labels = inject(&pool, &inject_cfg)?;
            let mut outcomes = Vec::with_capacity(plans.len());
            for (si, plan) in plans.iter().enumerate() {
                let cell_cv = CvConfig {
                    repetitions: 1,
                    seed: derive_seed(config.cv.seed, "cell", &[gi as u64, rep as u64, si as u64]),
                    ..config.cv.clone()
                };
                let fit = nested_cv_predict(&plan.train, &labels, &groups, &cell_cv)?;
                let rep_fit: &RepetitionFit = &fit.reps[0];
                let mut warnings = rep_fit.warnings.clone();

                let (bias, natural_preds) = match plan.strategy {
                    Strategy::Marginalized => {
                        let marginal = marginalize(rep_fit, marginal_weight, &manipulation)?;
                        let bias = estimate_bias(&marginal, &plan.train, &manipulation)?;
                        (bias, marginal.predict(&plan.train))
                    }
                    Strategy::Orthogonalized => {
                        let male = plan.audit_view(&pool, &manipulation, GroupAttribute::Male)?;
                        let female = plan.audit_view(&pool, &manipulation, GroupAttribute::Female)?;
                        let diffs = rep_fit.predict(&male) - rep_fit.predict(&female);
                        (paired_bias(&diffs), rep_fit.predict(&plan.train))
                    }
                    _ => {
                        let bias = estimate_bias(rep_fit, &plan.train, &manipulation)?;
                        (bias, rep_fit.predict(&plan.train))
                    }
                };

                let admitted = select_top_k(&natural_preds, &config.policy)?;
                let cohort =
                    cohort_metrics(&admitted, &pool, &labels, &natural_preds, &config.policy)?;
                warnings.dedup();

                outcomes.push(CellOutcome {
                    bias,
                    cohort,
                    rubric_preds: (plan.strategy == Strategy::Rubric)
                        .then(|| natural_preds.clone()),
                    kitchen_preds: (plan.strategy == Strategy::KitchenSink)
                        .then(|| natural_preds.clone()),
                    warnings,
                });
            }
            Ok(outcomes)
        })
        .collect();

    let mut by_cell: BTreeMap<(usize, usize), Vec<CellOutcome>> = BTreeMap::new();
    for (key, result) in cells.iter().zip(cell_results) {
        by_cell.insert(*key, stage("sweep", &hash, result)?);
    }

    // Rubin-pool per (grid point, strategy).
    let mut bias_pooled: BTreeMap<(usize, usize), PooledEstimate> = BTreeMap::new();
    for gi in 0..grid.len() {
        for si in 0..plans.len() {
            let estimates: Vec<(f64, f64)> = (0..reps)
                .map(|rep| {
                    let outcome = &by_cell[&(gi, rep)][si];
                    (outcome.bias.point, outcome.bias.se)
                })
                .collect();
            bias_pooled.insert((gi, si), pooled_from_reps(&estimates)?);
        }
    }
    let baseline_gi = grid
        .iter()
        .position(|&(b, _)| b == 0.0)
        .expect("baseline grid point exists by construction");

    let mut bias_rows = Vec::new();
    let mut cohort_rows = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    for (gi, &(b, emit)) in grid.iter().enumerate() {
        if !emit {
            continue;
        }
        for (si, plan) in plans.iter().enumerate() {
            let pooled = bias_pooled[&(gi, si)];
            let baseline = bias_pooled[&(baseline_gi, si)].point;
            let dp = pooled_from_reps(&delta_pi[&si])?;
            // Stylized injection: beta(m) - beta(f) = 2b.
            let predicted = crate::audit::predicted_bias_decomposition(baseline, b, -b, dp.point);

            bias_rows.push(BiasRow {
                b,
                strategy: plan.strategy.to_string(),
                bias: pooled.point,
                se: pooled.total_se,
                predicted_bias: predicted,
                delta_pi: dp.point,
            });

            let share_estimates: Vec<(f64, f64)> = (0..reps)
                .map(|rep| {
                    let c = &by_cell[&(gi, rep)][si].cohort;
                    let k = c.admitted_count as f64;
                    (c.share_female, (c.share_female * (1.0 - c.share_female) / k).sqrt())
                })
                .collect();
            let truth_estimates: Vec<(f64, f64)> = (0..reps)
                .map(|rep| {
                    let c = &by_cell[&(gi, rep)][si].cohort;
                    (c.mean_true_score, 0.0)
                })
                .collect();
            let first = &by_cell[&(gi, 0)][si].cohort;
            let k_aux = first.auxiliary_means.len();
            let mut aux = vec![0.0; k_aux];
            let mut rmse_proxy = 0.0;
            let mut rmse_true = 0.0;
            for rep in 0..reps {
                let c = &by_cell[&(gi, rep)][si].cohort;
                for (j, v) in c.auxiliary_means.iter().enumerate() {
                    aux[j] += v / reps as f64;
                }
                rmse_proxy += c.rmse_proxy / reps as f64;
                rmse_true += c.rmse_true / reps as f64;
            }
            cohort_rows.push(CohortRow {
                b,
                strategy: plan.strategy.to_string(),
                share_female: pooled_from_reps(&share_estimates)?,
                mean_true_score: pooled_from_reps(&truth_estimates)?,
                rmse_proxy,
                rmse_true,
                ref_share_female: first.ref_share_female,
                ref_mean_true_score: first.ref_mean_true_score,
                auxiliary_means: aux,
            });
            for rep in 0..reps {
                for w in &by_cell[&(gi, rep)][si].warnings {
                    let tagged = format!("b={b} rep={rep} {}: {w}", plan.strategy);
                    warnings.push(tagged);
                }
            }
        }
    }

    // Accuracy diagnostics need both the rubric and kitchen-sink
    // strategies in the run.
    let rubric_si = plans.iter().position(|p| p.strategy == Strategy::Rubric);
    let kitchen_si = plans.iter().position(|p| p.strategy == Strategy::KitchenSink);
    let mut mse_rows = Vec::new();
    if let (Some(r_si), Some(k_si)) = (rubric_si, kitchen_si) {
        for (gi, &(b, emit)) in grid.iter().enumerate() {
            if !emit {
                continue;
            }
            let mut diags = Vec::with_capacity(reps);
            for rep in 0..reps {
                let inject_cfg = config
                    .proxy
                    .at(b, derive_seed(config.proxy.seed, "inject", &[gi as u64, rep as u64]));
                let labels = inject(&pool, &inject_cfg)?;
                let rubric_preds = by_cell[&(gi, rep)][r_si]
                    .rubric_preds
                    .as_ref()
                    .expect("rubric predictions recorded");
                let kitchen_preds = by_cell[&(gi, rep)][k_si]
                    .kitchen_preds
                    .as_ref()
                    .expect("kitchen predictions recorded");
                diags.push(stage(
                    "cohort",
                    &hash,
                    mse_gap_diagnostics(&pool, &labels, rubric_preds, kitchen_preds),
                )?);
            }
            let mean = |f: &dyn Fn(&crate::cohort::MseGapDiagnostics) -> f64| {
                diags.iter().map(|d| f(d)).sum::<f64>() / reps as f64
            };
            let gap_estimates: Vec<(f64, f64)> =
                diags.iter().map(|d| (d.mse_gap_true, 0.0)).collect();
            let gap = pooled_from_reps(&gap_estimates)?;
            mse_rows.push(MseRow {
                b,
                rmse_proxy_rubric: mean(&|d| d.rmse_proxy_rubric),
                rmse_proxy_kitchen: mean(&|d| d.rmse_proxy_kitchen),
                rmse_true_rubric: mean(&|d| d.rmse_true_rubric),
                rmse_true_kitchen: mean(&|d| d.rmse_true_kitchen),
                mse_gap_true: gap.point,
                mse_gap_se: gap.total_se,
                residualized_correlation: mean(&|d| d.residualized_correlation),
            });
        }
    }

    Ok(ExperimentResult { bias_rows, cohort_rows, mse_rows, warnings })
}

/// Runs the sweep and writes `bias_curve.csv`, `cohort_curves.csv`,
/// `mse_curves.csv`, and `manifest.json` into the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentResult, Manifest)> {
    let result = execute(config)?;
    let manifest = write_outputs(config, &result)?;
    Ok((result, manifest))
}

fn format_float(v: f64) -> String {
    format!("{v}")
}

fn write_outputs(config: &ExperimentConfig, result: &ExperimentResult) -> Result<Manifest> {
    std::fs::create_dir_all(&config.output_dir)?;
    let mut files = BTreeMap::new();

    let bias_path = config.output_dir.join("bias_curve.csv");
    {
        let mut w = csv::Writer::from_path(&bias_path)?;
        w.write_record(["b", "strategy", "bias", "se", "predicted_bias", "delta_pi"])?;
        for row in &result.bias_rows {
            w.write_record([
                format_float(row.b),
                row.strategy.clone(),
                format_float(row.bias),
                format_float(row.se),
                format_float(row.predicted_bias),
                format_float(row.delta_pi),
            ])?;
        }
        w.flush()?;
    }
    files.insert("bias_curve.csv".to_string(), hash_file(&bias_path)?);

    let cohort_path = config.output_dir.join("cohort_curves.csv");
    {
        let mut w = csv::Writer::from_path(&cohort_path)?;
        let mut header = vec![
            "b".to_string(),
            "strategy".to_string(),
            "share_female".to_string(),
            "share_female_se".to_string(),
            "mean_true_score".to_string(),
            "mean_true_score_se".to_string(),
            "rmse_proxy".to_string(),
            "rmse_true".to_string(),
            "ref_share_female".to_string(),
            "ref_mean_true_score".to_string(),
        ];
        for j in 0..config.generator.k {
            header.push(format!("aux_skill_{j}"));
        }
        w.write_record(&header)?;
        for row in &result.cohort_rows {
            let mut record = vec![
                format_float(row.b),
                row.strategy.clone(),
                format_float(row.share_female.point),
                format_float(row.share_female.total_se),
                format_float(row.mean_true_score.point),
                format_float(row.mean_true_score.total_se),
                format_float(row.rmse_proxy),
                format_float(row.rmse_true),
                format_float(row.ref_share_female),
                format_float(row.ref_mean_true_score),
            ];
            for v in &row.auxiliary_means {
                record.push(format_float(*v));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
    }
    files.insert("cohort_curves.csv".to_string(), hash_file(&cohort_path)?);

    let mse_path = config.output_dir.join("mse_curves.csv");
    {
        let mut w = csv::Writer::from_path(&mse_path)?;
        w.write_record([
            "b",
            "rmse_proxy_rubric",
            "rmse_proxy_kitchen",
            "rmse_true_rubric",
            "rmse_true_kitchen",
            "mse_gap_true",
            "mse_gap_se",
            "residualized_correlation",
        ])?;
        for row in &result.mse_rows {
            w.write_record([
                format_float(row.b),
                format_float(row.rmse_proxy_rubric),
                format_float(row.rmse_proxy_kitchen),
                format_float(row.rmse_true_rubric),
                format_float(row.rmse_true_kitchen),
                format_float(row.mse_gap_true),
                format_float(row.mse_gap_se),
                format_float(row.residualized_correlation),
            ])?;
        }
        w.flush()?;
    }
    files.insert("mse_curves.csv".to_string(), hash_file(&mse_path)?);

    let manifest = Manifest {
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        files,
        config: config.clone(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(config.output_dir.join("manifest.json"), manifest_json)?;
    Ok(manifest)
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_digest(hasher))
}

#[derive(Debug, Clone)]
pub struct PlotBundle {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn read(dir: &Path, name: &str) -> Result<CsvTable> {
        let mut reader = csv::Reader::from_path(dir.join(name))?;
        let header: Vec<String> =
            reader.headers()?.iter().map(|s| s.to_string()).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            rows.push(record?.iter().map(|s| s.to_string()).collect());
        }
        Ok(CsvTable { header, rows })
    }

    fn column(&self, report: &str, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            report: report.to_string(),
            column: name.to_string(),
        })
    }
}

/// Emits gnuplot-compatible panel data from a run directory: one file
/// per figure panel (bias, female share, mean true score, the two RMSE
/// panels, and the MSE gap).
pub fn emit_plots(run_dir: &Path) -> Result<PlotBundle> {
    let plots_dir = run_dir.join("plots");
    let mut bundle = PlotBundle { files: Vec::new(), warnings: Vec::new() };

    let bias = CsvTable::read(run_dir, "bias_curve.csv")?;
    let cohort = CsvTable::read(run_dir, "cohort_curves.csv")?;
    let mse = CsvTable::read(run_dir, "mse_curves.csv")?;
    if bias.rows.is_empty() && cohort.rows.is_empty() {
        bundle.warnings.push("no strategies in the run; nothing to plot".to_string());
        return Ok(bundle);
    }
    std::fs::create_dir_all(&plots_dir)?;

    // Strategy-keyed panels from the bias and cohort tables.
    let mut emit_panel = |file: &str,
                          title: &str,
                          ylabel: &str,
                          table: &CsvTable,
                          report: &str,
                          value_col: &str,
                          extra: Option<&str>|
     -> Result<()> {
        let b_col = table.column(report, "b")?;
        let strat_col = table.column(report, "strategy")?;
        let v_col = table.column(report, value_col)?;
        let e_col = match extra {
            Some(name) => Some(table.column(report, name)?),
            None => None,
        };
        let mut strategies: Vec<String> = Vec::new();
        for row in &table.rows {
            if !strategies.contains(&row[strat_col]) {
                strategies.push(row[strat_col].clone());
            }
        }
        let mut bs: Vec<String> = Vec::new();
        for row in &table.rows {
            if !bs.contains(&row[b_col]) {
                bs.push(row[b_col].clone());
            }
        }
        let path = plots_dir.join(file);
        let mut out = std::fs::File::create(&path)?;
        writeln!(out, "# {title}")?;
        writeln!(out, "# x: male advantage b")?;
        writeln!(out, "# y: {ylabel}")?;
        let mut columns = vec!["b".to_string()];
        for s in &strategies {
            columns.push(s.clone());
            if extra.is_some() {
                columns.push(format!("{s}_{}", extra.unwrap()));
            }
        }
        writeln!(out, "# columns: {}", columns.join(" "))?;
        for b in &bs {
            let mut line = vec![b.clone()];
            for s in &strategies {
                let row = table
                    .rows
                    .iter()
                    .find(|r| &r[b_col] == b && &r[strat_col] == s)
                    .ok_or_else(|| Error::MissingColumn {
                        report: report.to_string(),
                        column: format!("row b={b} strategy={s}"),
                    })?;
                line.push(row[v_col].clone());
                if let Some(e) = e_col {
                    line.push(row[e].clone());
                }
            }
            writeln!(out, "{}", line.join(" "))?;
        }
        bundle.files.push(path);
        Ok(())
    };

    emit_panel(
        "bias.dat",
        "Audited bias of fitted models",
        "bias estimate (with plug-in prediction)",
        &bias,
        "bias_curve.csv",
        "bias",
        Some("predicted_bias"),
    )?;
    emit_panel(
        "female_share.dat",
        "Share of women in the admitted cohort",
        "share female (top-20% policy)",
        &cohort,
        "cohort_curves.csv",
        "share_female",
        None,
    )?;
    emit_panel(
        "mean_true_score.dat",
        "Mean true score of the admitted cohort",
        "mean true score",
        &cohort,
        "cohort_curves.csv",
        "mean_true_score",
        None,
    )?;

    // Fixed-column panels from the MSE table.
    let mut emit_mse_panel =
        |file: &str, title: &str, ylabel: &str, cols: &[&str]| -> Result<()> {
            let b_col = mse.column("mse_curves.csv", "b")?;
            let idx: Vec<usize> = cols
                .iter()
                .map(|c| mse.column("mse_curves.csv", c))
                .collect::<Result<_>>()?;
            let path = plots_dir.join(file);
            let mut out = std::fs::File::create(&path)?;
            writeln!(out, "# {title}")?;
            writeln!(out, "# x: male advantage b")?;
            writeln!(out, "# y: {ylabel}")?;
            writeln!(out, "# columns: b {}", cols.join(" "))?;
            for row in &mse.rows {
                let mut line = vec![row[b_col].clone()];
                for &i in &idx {
                    line.push(row[i].clone());
                }
                writeln!(out, "{}", line.join(" "))?;
            }
            bundle.files.push(path);
            Ok(())
        };

    if mse.rows.is_empty() {
        bundle
            .warnings
            .push("mse_curves.csv has no rows (rubric or kitchen-sink strategy missing)".into());
    }
    emit_mse_panel(
        "rmse_proxy.dat",
        "RMSE against proxy labels",
        "RMSE vs Y'",
        &["rmse_proxy_rubric", "rmse_proxy_kitchen"],
    )?;
    emit_mse_panel(
        "rmse_true.dat",
        "RMSE against ground truth",
        "RMSE vs Y",
        &["rmse_true_rubric", "rmse_true_kitchen"],
    )?;
    emit_mse_panel(
        "mse_gap.dat",
        "MSE gap between kitchen-sink and rubric models on ground truth",
        "MSE gap (with residualized correlation)",
        &["mse_gap_true", "mse_gap_se", "residualized_correlation"],
    )?;

    Ok(bundle)
}

/// Reads BIASLAB_WORKERS and sizes the global worker pool accordingly.
/// Call once at process start; later calls are ignored.
pub fn configure_workers() {
    if let Ok(value) = std::env::var("BIASLAB_WORKERS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let mut config = ExperimentConfig::fast_mode();
        config.generator.n = 240;
        config.generator.bb_dim = 12;
        config.proxy.grid = vec![0.0, 2.5];
        config.cv.repetitions = 2;
        config.cv.lambda_grid = crate::linmodel::log_spaced_grid(1e-3, 1e3, 8);
        config.audit.probe.folds = 3;
        config.output_dir = dir.to_path_buf();
        config
    }

    #[test]
    fn sweep_produces_rows_for_every_cell() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let result = execute(&config).unwrap();
        assert_eq!(result.bias_rows.len(), 2 * config.strategies.len());
        assert_eq!(result.cohort_rows.len(), 2 * config.strategies.len());
        assert_eq!(result.mse_rows.len(), 2);
        // Redacted and marginalized biases vanish identically.
        for row in &result.bias_rows {
            if row.strategy == "redacted" || row.strategy == "marginalized" {
                assert!(row.bias.abs() < 1e-10, "{}: {}", row.strategy, row.bias);
                assert_eq!(row.delta_pi, 0.0);
            }
        }
    }

    #[test]
    fn outputs_are_deterministic_and_manifested() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut config_a = tiny_config(dir_a.path());
        let mut config_b = tiny_config(dir_b.path());
        // The output directory is not part of the numeric pipeline, so
        // neutralize it in both configs for identical manifests too.
        config_a.output_dir = dir_a.path().to_path_buf();
        config_b.output_dir = dir_b.path().to_path_buf();

        let (_, manifest_a) = run_experiment(&config_a).unwrap();
        let (_, manifest_b) = run_experiment(&config_b).unwrap();
        for name in ["bias_curve.csv", "cohort_curves.csv", "mse_curves.csv"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
            assert_eq!(manifest_a.files[name], manifest_b.files[name]);
        }
    }

    #[test]
    fn plots_cover_six_panels() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        run_experiment(&config).unwrap();
        let bundle = emit_plots(dir.path()).unwrap();
        assert_eq!(bundle.files.len(), 6);
        for file in &bundle.files {
            assert!(file.exists());
        }
    }

    #[test]
    fn strategy_parse_accepts_cli_spellings() {
        assert_eq!(Strategy::parse("none").unwrap(), Strategy::BlackBox);
        assert_eq!(Strategy::parse("orthogonalize").unwrap(), Strategy::Orthogonalized);
        assert_eq!(Strategy::parse("kitchen_sink").unwrap(), Strategy::KitchenSink);
        assert!(Strategy::parse("bogus").is_err());
    }

    #[test]
    fn rubric_only_run_reports_only_rubric_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.strategies = vec![Strategy::Rubric];
        let result = execute(&config).unwrap();
        assert!(!result.bias_rows.is_empty());
        for row in &result.bias_rows {
            assert_eq!(row.strategy, "rubric");
            assert!(row.bias.abs() <= 2.0 * row.se);
        }
        // No kitchen-sink strategy, no accuracy diagnostics.
        assert!(result.mse_rows.is_empty());
    }

    #[test]
    fn orthogonalized_strategy_runs_with_composed_audit_view() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.strategies = vec![Strategy::Orthogonalized];
        let result = execute(&config).unwrap();
        // Projection removes the group-mean direction, so the audited
        // bias is small even under heavy label bias.
        for row in &result.bias_rows {
            assert!(row.bias.abs() < 0.5, "b={} bias {}", row.b, row.bias);
        }
    }

    #[test]
    fn stage_failures_carry_stage_name_and_config_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        // Fewer rows than outer folds: generation succeeds, the sweep
        // stage fails.
        config.generator.n = 3;
        config.generator.bb_dim = 2;
        match execute(&config) {
            Err(Error::Stage { stage, config_hash, .. }) => {
                assert!(!stage.is_empty());
                assert_eq!(config_hash, config.hash());
            }
            other => panic!("expected stage error, got {other:?}"),
        }
    }

    #[test]
    fn empty_strategy_set_plots_nothing_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path());
        config.strategies = vec![];
        run_experiment(&config).unwrap();
        let bundle = emit_plots(dir.path()).unwrap();
        assert!(bundle.files.is_empty());
        assert!(!bundle.warnings.is_empty());
    }

    #[test]
    fn plotting_a_non_run_directory_names_the_missing_report() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bias_curve.csv"), "a,b\n1,2\n").unwrap();
        std::fs::write(dir.path().join("cohort_curves.csv"), "a,b\n1,2\n").unwrap();
        std::fs::write(dir.path().join("mse_curves.csv"), "a,b\n1,2\n").unwrap();
        match emit_plots(dir.path()) {
            Err(Error::MissingColumn { report, column }) => {
                assert_eq!(report, "bias_curve.csv");
                assert!(!column.is_empty());
            }
            other => panic!("expected missing column error, got {other:?}"),
        }
    }
}
