//! Top-k selection policies and cohort metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::ridge_fit;
use crate::synth::SyntheticPool;
use crate::types::{FeatureMatrix, GroupAttribute};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionPolicy {
    /// Fraction of the pool to admit, in (0, 1].
    pub admit_fraction: f64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy { admit_fraction: 0.20 }
    }
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.admit_fraction > 0.0 && self.admit_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "admit_fraction must lie in (0, 1], got {}",
                self.admit_fraction
            )));
        }
        Ok(())
    }

    pub fn admitted_count(&self, n: usize) -> usize {
        ((self.admit_fraction * n as f64).ceil() as usize).min(n).max(1)
    }
}

/// Indices of the `ceil(fraction * n)` largest predictions, sorted
/// ascending. Ties are broken deterministically: among equal scores
/// the lower index is admitted first.
pub fn select_top_k(predictions: &DVector<f64>, policy: &SelectionPolicy) -> Result<Vec<usize>> {
    policy.validate()?;
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidConfig("predictions must be finite".into()));
    }
    let n = predictions.len();
    let count = policy.admitted_count(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .partial_cmp(&predictions[a])
            .expect("finite predictions")
            .then(a.cmp(&b))
    });
    let mut admitted: Vec<usize> = order.into_iter().take(count).collect();
    admitted.sort_unstable();
    Ok(admitted)
}

/// Metrics of an admitted cohort, with the oracle top-k-by-Y cohort
/// as the reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortReport {
    pub share_female: f64,
    pub mean_true_score: f64,
    /// Mean of each latent skill coordinate over the admitted cohort,
    /// the auxiliary quality covariates.
    pub auxiliary_means: Vec<f64>,
    /// RMSE of the predictions against the proxy labels, full pool.
    pub rmse_proxy: f64,
    /// RMSE of the predictions against the true scores, full pool.
    pub rmse_true: f64,
    pub ref_share_female: f64,
    pub ref_mean_true_score: f64,
    pub admitted_count: usize,
}

/// Computes cohort composition and quality for an admitted index set.
pub fn cohort_metrics(
    admitted: &[usize],
    pool: &SyntheticPool,
    proxy_labels: &DVector<f64>,
    predictions: &DVector<f64>,
    policy: &SelectionPolicy,
) -> Result<CohortReport> {
    if admitted.is_empty() {
        return Err(Error::InvalidConfig("admitted set is empty".into()));
    }
    let n = pool.n();
    if proxy_labels.len() != n || predictions.len() != n {
        return Err(Error::InvalidConfig("labels/predictions length mismatch".into()));
    }
    if admitted.iter().any(|&i| i >= n) {
        return Err(Error::InvalidConfig("admitted index out of range".into()));
    }

    let truth = pool.true_scores();
    let reference = select_top_k(&truth, policy)?;

    let share_female = |idx: &[usize]| {
        idx.iter().filter(|&&i| pool.applicants[i].group == GroupAttribute::Female).count() as f64
            / idx.len() as f64
    };
    let mean_truth = |idx: &[usize]| {
        idx.iter().map(|&i| truth[i]).sum::<f64>() / idx.len() as f64
    };

    let k = pool.generator.k;
    let skills = pool.skill_matrix();
    let mut auxiliary_means = vec![0.0; k];
    for &i in admitted {
        for (j, aux) in auxiliary_means.iter_mut().enumerate() {
            *aux += skills[(i, j)];
        }
    }
    for aux in auxiliary_means.iter_mut() {
        *aux /= admitted.len() as f64;
    }

    let rmse = |target: &DVector<f64>| {
        (predictions
            .iter()
            .zip(target.iter())
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / n as f64)
            .sqrt()
    };

    Ok(CohortReport {
        share_female: share_female(admitted),
        mean_true_score: mean_truth(admitted),
        auxiliary_means,
        rmse_proxy: rmse(proxy_labels),
        rmse_true: rmse(&truth),
        ref_share_female: share_female(&reference),
        ref_mean_true_score: mean_truth(&reference),
        admitted_count: admitted.len(),
    })
}

/// Accuracy diagnostics comparing rubric and kitchen-sink models.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MseGapDiagnostics {
    pub rmse_proxy_rubric: f64,
    pub rmse_proxy_kitchen: f64,
    pub rmse_true_rubric: f64,
    pub rmse_true_kitchen: f64,
    /// MSE(kitchen, truth) - MSE(rubric, truth).
    pub mse_gap_true: f64,
    /// Correlation between the truth and the kitchen-sink predictions
    /// after both are linearly residualized on the rubric features.
    pub residualized_correlation: f64,
}

/// Computes the accuracy ordering and the conditional-correlation
/// diagnostic. Both prediction vectors must be out-of-sample on the
/// same applicants.
pub fn mse_gap_diagnostics(
    pool: &SyntheticPool,
    proxy_labels: &DVector<f64>,
    rubric_preds: &DVector<f64>,
    kitchen_preds: &DVector<f64>,
) -> Result<MseGapDiagnostics> {
    let n = pool.n();
    if proxy_labels.len() != n || rubric_preds.len() != n || kitchen_preds.len() != n {
        return Err(Error::InvalidConfig("prediction vector length mismatch".into()));
    }
    let truth = pool.true_scores();
    let mse = |preds: &DVector<f64>, target: &DVector<f64>| {
        preds.iter().zip(target.iter()).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n as f64
    };
    let mse_proxy_rubric = mse(rubric_preds, proxy_labels);
    let mse_proxy_kitchen = mse(kitchen_preds, proxy_labels);
    let mse_true_rubric = mse(rubric_preds, &truth);
    let mse_true_kitchen = mse(kitchen_preds, &truth);

    let y_resid = residualize(&truth, pool.rubric())?;
    let k_resid = residualize(kitchen_preds, pool.rubric())?;
    let residualized_correlation = correlation(&y_resid, &k_resid);

    Ok(MseGapDiagnostics {
        rmse_proxy_rubric: mse_proxy_rubric.sqrt(),
        rmse_proxy_kitchen: mse_proxy_kitchen.sqrt(),
        rmse_true_rubric: mse_true_rubric.sqrt(),
        rmse_true_kitchen: mse_true_kitchen.sqrt(),
        mse_gap_true: mse_true_kitchen - mse_true_rubric,
        residualized_correlation,
    })
}

/// Residuals of a linear regression of `target` on the features
/// (with intercept). A whisker of ridge keeps the solve stable when
/// rubric columns are collinear.
fn residualize(target: &DVector<f64>, features: &FeatureMatrix) -> Result<DVector<f64>> {
    let model = ridge_fit(features, target, 1e-8)?;
    let fitted = model.predict(features);
    Ok(target - fitted)
}

fn correlation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let ma = a.mean();
    let mb = b.mean();
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_pool, GeneratorConfig};

    fn pool_of(n: usize, seed: u64) -> SyntheticPool {
        let cfg = GeneratorConfig { n, seed, ..GeneratorConfig::default() };
        generate_pool(&cfg).unwrap()
    }

    #[test]
    fn full_fraction_admits_everyone() {
        let preds = DVector::from_vec(vec![3.0, 1.0, 2.0]);
        let admitted = select_top_k(&preds, &SelectionPolicy { admit_fraction: 1.0 }).unwrap();
        assert_eq!(admitted, vec![0, 1, 2]);
    }

    #[test]
    fn brute_force_example() {
        let preds = DVector::from_vec(vec![1.0, 5.0, 3.0, 2.0, 4.0]);
        let admitted = select_top_k(&preds, &SelectionPolicy { admit_fraction: 0.2 }).unwrap();
        assert_eq!(admitted, vec![1]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let preds = DVector::from_vec(vec![1.0, 2.0, 2.0, 2.0]);
        let admitted = select_top_k(&preds, &SelectionPolicy { admit_fraction: 0.5 }).unwrap();
        assert_eq!(admitted, vec![1, 2]);
    }

    #[test]
    fn true_score_predictions_reproduce_reference_cohort() {
        let pool = pool_of(500, 61);
        let policy = SelectionPolicy::default();
        let truth = pool.true_scores();
        let admitted = select_top_k(&truth, &policy).unwrap();
        let report = cohort_metrics(&admitted, &pool, &truth, &truth, &policy).unwrap();
        assert_eq!(report.share_female, report.ref_share_female);
        assert_eq!(report.mean_true_score, report.ref_mean_true_score);
        assert_eq!(report.rmse_true, 0.0);
    }

    #[test]
    fn whole_pool_cohort_matches_pool_composition() {
        let pool = pool_of(400, 62);
        let policy = SelectionPolicy { admit_fraction: 1.0 };
        let truth = pool.true_scores();
        let admitted = select_top_k(&truth, &policy).unwrap();
        let report = cohort_metrics(&admitted, &pool, &truth, &truth, &policy).unwrap();
        assert!((report.share_female - pool.female_share()).abs() < 1e-12);
    }

    #[test]
    fn oracle_cohort_dominates_every_other_selection() {
        let pool = pool_of(600, 63);
        let policy = SelectionPolicy::default();
        let truth = pool.true_scores();
        // Rank by an arbitrary alternative score (first skill).
        let alt = DVector::from_fn(pool.n(), |i, _| pool.skill_matrix()[(i, 0)]);
        let admitted = select_top_k(&alt, &policy).unwrap();
        let report = cohort_metrics(&admitted, &pool, &truth, &alt, &policy).unwrap();
        assert!(report.mean_true_score <= report.ref_mean_true_score + 1e-12);
    }

    #[test]
    fn empty_cohort_is_rejected() {
        let pool = pool_of(50, 64);
        let truth = pool.true_scores();
        let policy = SelectionPolicy::default();
        assert!(cohort_metrics(&[], &pool, &truth, &truth, &policy).is_err());
    }

    #[test]
    fn admitted_count_is_ceil() {
        assert_eq!(SelectionPolicy { admit_fraction: 0.2 }.admitted_count(5), 1);
        assert_eq!(SelectionPolicy { admit_fraction: 0.2 }.admitted_count(11), 3);
        assert_eq!(SelectionPolicy { admit_fraction: 1.0 }.admitted_count(7), 7);
    }
}
