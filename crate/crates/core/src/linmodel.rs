//! Ridge and OLS linear predictors with nested cross-validation,
//! linear-scaling calibration, and repetition pooling.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::types::{
    Calibration, FeatureMatrix, FittedModel, GroupAttribute, PoolPredictor, RepresentationSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub outer_folds: usize,
    pub inner_folds: usize,
    /// Ascending, strictly positive ridge penalties.
    pub lambda_grid: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            outer_folds: 10,
            inner_folds: 10,
            lambda_grid: log_spaced_grid(1e-4, 1e4, 50),
            repetitions: 20,
            seed: 17,
        }
    }
}

impl CvConfig {
    /// Reduced protocol for CI-sized runs.
    pub fn fast() -> Self {
        CvConfig {
            outer_folds: 5,
            inner_folds: 5,
            lambda_grid: log_spaced_grid(1e-4, 1e4, 20),
            repetitions: 3,
            seed: 17,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(Error::InvalidConfig("folds must be at least 2".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be positive".into()));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidConfig("lambda grid must be nonempty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidConfig("lambda grid entries must be positive".into()));
        }
        if self.lambda_grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("lambda grid must be sorted ascending".into()));
        }
        Ok(())
    }
}

/// `points` log-spaced values over `[lo, hi]`, inclusive.
pub fn log_spaced_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && lo > 0.0 && hi > lo);
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Fits ridge regression on column-centered data: the coefficients
/// solve `(Xc' Xc + lambda n I) a = Xc' yc`, with the intercept
/// recovered from the column means. `lambda = 0` is OLS.
pub fn ridge_fit(features: &FeatureMatrix, labels: &DVector<f64>, lambda: f64) -> Result<FittedModel> {
    features.check_finite()?;
    let n = features.n();
    let dim = features.dim();
    if labels.len() != n {
        return Err(Error::InvalidConfig(format!(
            "labels have length {}, expected {n}",
            labels.len()
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
    }
    if lambda == 0.0 && n <= dim {
        return Err(Error::SingularDesign);
    }
    let system = GramSystem::from_rows(&features.rows, labels);
    let (coefficients, intercept) = system.solve(lambda)?;
    Ok(FittedModel {
        intercept,
        coefficients,
        ridge_lambda: lambda,
        calibration: Calibration::identity(),
        spec: features.spec,
    })
}

/// Sufficient statistics for centered ridge systems. Supports
/// leave-fold-out updates so the inner CV reuses one pass over the
/// data for the whole lambda grid.
#[derive(Debug, Clone)]
struct GramSystem {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    col_sum: DVector<f64>,
    y_sum: f64,
    n: usize,
}

impl GramSystem {
    fn zeros(dim: usize) -> Self {
        GramSystem {
            gram: DMatrix::zeros(dim, dim),
            rhs: DVector::zeros(dim),
            col_sum: DVector::zeros(dim),
            y_sum: 0.0,
            n: 0,
        }
    }

    fn from_rows(rows: &DMatrix<f64>, labels: &DVector<f64>) -> Self {
        GramSystem {
            gram: rows.transpose() * rows,
            rhs: rows.transpose() * labels,
            col_sum: rows.row_sum().transpose(),
            y_sum: labels.sum(),
            n: rows.nrows(),
        }
    }

    fn add(&mut self, other: &GramSystem) {
        self.gram += &other.gram;
        self.rhs += &other.rhs;
        self.col_sum += &other.col_sum;
        self.y_sum += other.y_sum;
        self.n += other.n;
    }

    fn minus(&self, other: &GramSystem) -> GramSystem {
        GramSystem {
            gram: &self.gram - &other.gram,
            rhs: &self.rhs - &other.rhs,
            col_sum: &self.col_sum - &other.col_sum,
            y_sum: self.y_sum - other.y_sum,
            n: self.n - other.n,
        }
    }

    /// Solves the centered normal equations at the given penalty.
    fn solve(&self, lambda: f64) -> Result<(DVector<f64>, f64)> {
        let n = self.n as f64;
        let x_mean = &self.col_sum / n;
        let y_mean = self.y_sum / n;
        let mut centered = &self.gram - &self.col_sum * x_mean.transpose();
        let rhs_centered = &self.rhs - &self.col_sum * y_mean;
        if lambda > 0.0 {
            let shift = lambda * n;
            for i in 0..centered.nrows() {
                centered[(i, i)] += shift;
            }
        }
        let chol = Cholesky::new(centered).ok_or(Error::SingularDesign)?;
        let coefficients = chol.solve(&rhs_centered);
        let intercept = y_mean - x_mean.dot(&coefficients);
        Ok((coefficients, intercept))
    }
}

/// Seeded fold assignment, stratified by group. Indices within each
/// group are shuffled, then dealt round-robin with a running counter
/// so fold sizes stay balanced overall.
pub fn stratified_folds(
    groups: &[GroupAttribute],
    n_folds: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let mut assignment = vec![0usize; groups.len()];
    let mut counter = 0usize;
    for target in [GroupAttribute::Male, GroupAttribute::Female] {
        let mut idx: Vec<usize> =
            (0..groups.len()).filter(|&i| groups[i] == target).collect();
        idx.shuffle(rng);
        for i in idx {
            assignment[i] = counter % n_folds;
            counter += 1;
        }
    }
    assignment
}

/// One repetition of the nested-CV protocol: out-of-sample raw and
/// calibrated predictions, fold assignment, selected penalties, and
/// the refit per-fold models.
#[derive(Debug, Clone)]
pub struct RepetitionFit {
    pub raw: DVector<f64>,
    pub calibrated: DVector<f64>,
    pub assignment: Vec<usize>,
    pub chosen_lambda: Vec<f64>,
    pub fold_models: Vec<FittedModel>,
    pub warnings: Vec<String>,
    pub spec: RepresentationSpec,
}

impl PoolPredictor for RepetitionFit {
    /// Predicts each applicant with the model from the fold where the
    /// applicant was held out, keeping predictions out-of-sample.
    fn predict(&self, features: &FeatureMatrix) -> DVector<f64> {
        DVector::from_fn(features.n(), |i, _| {
            self.fold_models[self.assignment[i]].predict_row(features, i)
        })
    }

    fn representation(&self) -> &RepresentationSpec {
        &self.spec
    }
}

#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub reps: Vec<RepetitionFit>,
    pub spec: RepresentationSpec,
}

impl PredictionSet {
    /// Writes rows of (applicant id, repetition, fold, raw, calibrated).
    pub fn write_csv<W: std::io::Write>(&self, ids: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["applicant_id", "repetition", "fold", "raw", "calibrated"])?;
        for (r, rep) in self.reps.iter().enumerate() {
            for i in 0..ids.len() {
                w.write_record([
                    ids[i].as_str(),
                    &r.to_string(),
                    &rep.assignment[i].to_string(),
                    &format!("{}", rep.raw[i]),
                    &format!("{}", rep.calibrated[i]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Nested cross-validation: for each outer fold, an inner CV over the
/// lambda grid selects the penalty minimizing validation MSE (ties go
/// to the smallest lambda), the model is refit on all training folds,
/// calibrated by regressing training labels on training predictions,
/// and applied to the held-out fold.
pub fn nested_cv_predict(
    features: &FeatureMatrix,
    labels: &DVector<f64>,
    groups: &[GroupAttribute],
    config: &CvConfig,
) -> Result<PredictionSet> {
    config.validate()?;
    features.check_finite()?;
    let n = features.n();
    if labels.len() != n || groups.len() != n {
        return Err(Error::InvalidConfig("labels/groups length mismatch".into()));
    }
    if n < config.outer_folds {
        return Err(Error::InvalidConfig(format!(
            "need at least outer_folds = {} rows, got {n}",
            config.outer_folds
        )));
    }

    let mut reps = Vec::with_capacity(config.repetitions);
    for r in 0..config.repetitions {
        reps.push(run_repetition(features, labels, groups, config, r as u64)?);
    }
    Ok(PredictionSet { reps, spec: features.spec })
}

fn run_repetition(
    features: &FeatureMatrix,
    labels: &DVector<f64>,
    groups: &[GroupAttribute],
    config: &CvConfig,
    rep: u64,
) -> Result<RepetitionFit> {
    let n = features.n();
    let mut rng = stream_rng(config.seed, "cv-outer", &[rep]);
    let assignment = stratified_folds(groups, config.outer_folds, &mut rng);

    // Fold fits are independent; reduce in deterministic fold order.
    let fold_results: Vec<Result<FoldFit>> = (0..config.outer_folds)
        .into_par_iter()
        .map(|fold| fit_outer_fold(features, labels, groups, config, &assignment, fold, rep))
        .collect();

    let mut raw = DVector::zeros(n);
    let mut calibrated = DVector::zeros(n);
    let mut chosen_lambda = Vec::with_capacity(config.outer_folds);
    let mut fold_models = Vec::with_capacity(config.outer_folds);
    let mut warnings = Vec::new();
    for result in fold_results {
        let fit = result?;
        for (i, r_val, c_val) in fit.predictions {
            raw[i] = r_val;
            calibrated[i] = c_val;
        }
        chosen_lambda.push(fit.lambda);
        if let Some(w) = fit.warning {
            warnings.push(w);
        }
        fold_models.push(fit.model);
    }

    Ok(RepetitionFit {
        raw,
        calibrated,
        assignment,
        chosen_lambda,
        fold_models,
        warnings,
        spec: features.spec,
    })
}

struct FoldFit {
    model: FittedModel,
    lambda: f64,
    predictions: Vec<(usize, f64, f64)>,
    warning: Option<String>,
}

fn fit_outer_fold(
    features: &FeatureMatrix,
    labels: &DVector<f64>,
    groups: &[GroupAttribute],
    config: &CvConfig,
    assignment: &[usize],
    fold: usize,
    rep: u64,
) -> Result<FoldFit> {
    let n = features.n();
    let train_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
    let test_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
    let dim = features.dim();

    let train_rows = gather_rows(&features.rows, &train_idx);
    let train_labels = DVector::from_iterator(train_idx.len(), train_idx.iter().map(|&i| labels[i]));
    let train_groups: Vec<GroupAttribute> = train_idx.iter().map(|&i| groups[i]).collect();

    let mut inner_rng = stream_rng(config.seed, "cv-inner", &[rep, fold as u64]);
    let inner_assignment = stratified_folds(&train_groups, config.inner_folds, &mut inner_rng);

    // Per-inner-fold sufficient statistics; leave-one-fold-out systems
    // come from subtraction.
    let mut fold_systems = Vec::with_capacity(config.inner_folds);
    let mut fold_rows: Vec<Vec<usize>> = vec![Vec::new(); config.inner_folds];
    for (local, &inner_fold) in inner_assignment.iter().enumerate() {
        fold_rows[inner_fold].push(local);
    }
    for rows in &fold_rows {
        let sub_rows = gather_rows(&train_rows, rows);
        let sub_labels = DVector::from_iterator(rows.len(), rows.iter().map(|&i| train_labels[i]));
        fold_systems.push(GramSystem::from_rows(&sub_rows, &sub_labels));
    }
    let mut total = GramSystem::zeros(dim);
    for sys in &fold_systems {
        total.add(sys);
    }

    let mut best_lambda = config.lambda_grid[0];
    let mut best_mse = f64::INFINITY;
    for &lambda in &config.lambda_grid {
        let mut sse = 0.0;
        let mut count = 0usize;
        for (inner_fold, sys) in fold_systems.iter().enumerate() {
            if fold_rows[inner_fold].is_empty() {
                continue;
            }
            let held_out = total.minus(sys);
            let (coef, intercept) = held_out.solve(lambda)?;
            for &local in &fold_rows[inner_fold] {
                let pred = (train_rows.row(local) * &coef)[(0, 0)] + intercept;
                let err = pred - train_labels[local];
                sse += err * err;
                count += 1;
            }
        }
        let mse = sse / count as f64;
        if mse < best_mse {
            best_mse = mse;
            best_lambda = lambda;
        }
    }

    let (coefficients, intercept) = total.solve(best_lambda)?;

    // Linear-scaling calibration: regress training labels on training
    // predictions, fall back to identity when predictions have no
    // variance.
    let mut train_preds = &train_rows * &coefficients;
    train_preds.add_scalar_mut(intercept);
    let p_mean = train_preds.mean();
    let y_mean = train_labels.mean();
    let var_p: f64 =
        train_preds.iter().map(|p| (p - p_mean) * (p - p_mean)).sum::<f64>() / train_idx.len() as f64;
    let (calibration, warning) = if var_p < 1e-12 {
        (
            Calibration::identity(),
            Some(format!("fold {fold}: calibration slope undefined, using identity")),
        )
    } else {
        let cov: f64 = train_preds
            .iter()
            .zip(train_labels.iter())
            .map(|(p, y)| (p - p_mean) * (y - y_mean))
            .sum::<f64>()
            / train_idx.len() as f64;
        let slope = cov / var_p;
        (Calibration { slope, offset: y_mean - slope * p_mean }, None)
    };

    let model = FittedModel {
        intercept,
        coefficients,
        ridge_lambda: best_lambda,
        calibration,
        spec: features.spec,
    };

    let predictions = test_idx
        .iter()
        .map(|&i| {
            let raw = model.predict_row_raw(features, i);
            (i, raw, calibration.apply(raw))
        })
        .collect();

    Ok(FoldFit { model, lambda: best_lambda, predictions, warning })
}

fn gather_rows(matrix: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), matrix.ncols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from(&matrix.row(i));
    }
    out
}

/// Mann-Whitney AUC with midranks for ties: the probability that a
/// random positive outscores a random negative, ties counting 1/2.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidConfig("scores/labels length mismatch".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("non-finite score"));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Average rank (1-based) over the tie block [i, j].
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Out-of-sample R^2 of predictions against labels.
pub fn r_squared(predictions: &DVector<f64>, labels: &DVector<f64>) -> f64 {
    let mean = labels.mean();
    let sst: f64 = labels.iter().map(|y| (y - mean) * (y - mean)).sum();
    let sse: f64 = predictions.iter().zip(labels.iter()).map(|(p, y)| (p - y) * (p - y)).sum();
    1.0 - sse / sst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{MapParams, Presentation, RepresentationKind};
    use rand::Rng;

    fn matrix_of(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> FeatureMatrix {
        FeatureMatrix {
            rows: DMatrix::from_fn(rows, cols, |i, j| f(i, j)),
            spec: RepresentationSpec {
                kind: RepresentationKind::Rubric,
                dim: cols,
                map_params: MapParams::none(),
            },
            presented: Presentation::Natural,
        }
    }

    fn alternating_groups(n: usize) -> Vec<GroupAttribute> {
        (0..n)
            .map(|i| if i % 2 == 0 { GroupAttribute::Male } else { GroupAttribute::Female })
            .collect()
    }

    #[test]
    fn constant_labels_give_constant_model() {
        let features = matrix_of(40, 3, |i, j| ((i * 7 + j * 3) % 11) as f64);
        let labels = DVector::from_element(40, 4.25);
        for lambda in [0.0, 0.5, 100.0] {
            let model = ridge_fit(&features, &labels, lambda).unwrap();
            assert!((model.intercept - 4.25).abs() < 1e-10, "lambda {lambda}");
            assert!(model.coefficients.amax() < 1e-10, "lambda {lambda}");
        }
    }

    #[test]
    fn exact_line_recovered_at_lambda_zero() {
        let features = matrix_of(20, 1, |i, _| i as f64);
        let labels = DVector::from_fn(20, |i, _| 3.0 * i as f64);
        let model = ridge_fit(&features, &labels, 0.0).unwrap();
        assert!((model.coefficients[0] - 3.0).abs() < 1e-10);
        assert!(model.intercept.abs() < 1e-8);
    }

    #[test]
    fn huge_lambda_shrinks_to_mean() {
        let mut rng = stream_rng(3, "test", &[]);
        let features = matrix_of(50, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut rng2 = stream_rng(4, "test", &[]);
        let labels = DVector::from_fn(50, |_, _| rng2.random::<f64>() * 3.0);
        let model = ridge_fit(&features, &labels, 1e8).unwrap();
        assert!(model.coefficients.amax() < 1e-4);
        assert!((model.intercept - labels.mean()).abs() < 1e-4);
    }

    #[test]
    fn collinear_features_error_at_lambda_zero() {
        // Second column duplicates the first.
        let features = matrix_of(30, 2, |i, _| (i % 7) as f64);
        let labels = DVector::from_fn(30, |i, _| i as f64);
        assert!(matches!(ridge_fit(&features, &labels, 0.0), Err(Error::SingularDesign)));
        // Positive penalty resolves it.
        assert!(ridge_fit(&features, &labels, 0.1).is_ok());
    }

    #[test]
    fn normal_equations_residual_is_tiny() {
        let mut rng = stream_rng(5, "ridge-prop", &[]);
        for case in 0..10 {
            let n = 60 + case * 10;
            let dim = 5;
            let features = matrix_of(n, dim, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let labels = DVector::from_fn(n, |_, _| rng.random::<f64>() * 10.0 - 5.0);
            let lambda = [0.0, 1e-3, 1.0][case % 3];
            let model = ridge_fit(&features, &labels, lambda).unwrap();

            let x_mean = features.rows.row_mean();
            let mut xc = features.rows.clone();
            for mut row in xc.row_iter_mut() {
                row -= &x_mean;
            }
            let y_mean = labels.mean();
            let yc = labels.add_scalar(-y_mean);
            let lhs = (xc.transpose() * &xc
                + DMatrix::identity(dim, dim) * (lambda * n as f64))
                * &model.coefficients;
            let rhs = xc.transpose() * &yc;
            let rel = (&lhs - &rhs).norm() / rhs.norm().max(1e-12);
            assert!(rel < 1e-8, "case {case}: relative residual {rel}");
        }
    }

    #[test]
    fn training_mse_nondecreasing_in_lambda() {
        let mut rng = stream_rng(6, "mono", &[]);
        let features = matrix_of(80, 6, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let labels = DVector::from_fn(80, |i, _| {
            features.rows.row(i).sum() + rng.random::<f64>() * 0.5
        });
        let mut last = f64::NEG_INFINITY;
        for lambda in log_spaced_grid(1e-4, 1e4, 25) {
            let model = ridge_fit(&features, &labels, lambda).unwrap();
            let preds = model.predict(&features);
            let mse: f64 = preds
                .iter()
                .zip(labels.iter())
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>()
                / 80.0;
            assert!(mse >= last - 1e-10, "mse decreased at lambda {lambda}");
            last = mse;
        }
    }

    #[test]
    fn noiseless_linear_data_predicts_out_of_sample() {
        let mut rng = stream_rng(7, "cv", &[]);
        let n = 200;
        let features = matrix_of(n, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let labels = DVector::from_fn(n, |i, _| {
            2.0 * features.rows[(i, 0)] - features.rows[(i, 1)] + 0.5 * features.rows[(i, 3)]
        });
        let groups = alternating_groups(n);
        let config = CvConfig { repetitions: 1, ..CvConfig::fast() };
        let preds = nested_cv_predict(&features, &labels, &groups, &config).unwrap();
        let r2 = r_squared(&preds.reps[0].calibrated, &labels);
        assert!(r2 > 0.99, "out-of-sample R^2 = {r2}");
    }

    #[test]
    fn pure_noise_labels_have_no_out_of_sample_skill() {
        let mut rng = stream_rng(8, "cv-noise", &[]);
        let n = 300;
        let features = matrix_of(n, 5, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut rng2 = stream_rng(9, "cv-noise-labels", &[]);
        let labels = DVector::from_fn(n, |_, _| rng2.random::<f64>() * 2.0 - 1.0);
        let groups = alternating_groups(n);
        let config = CvConfig { repetitions: 1, ..CvConfig::fast() };
        let preds = nested_cv_predict(&features, &labels, &groups, &config).unwrap();
        let r2 = r_squared(&preds.reps[0].calibrated, &labels);
        assert!(r2 < 0.05, "unexpected skill on noise: R^2 = {r2}");
    }

    #[test]
    fn repetitions_have_distinct_partitions_and_exact_coverage() {
        let mut rng = stream_rng(10, "cv-reps", &[]);
        let n = 120;
        let features = matrix_of(n, 3, |_, _| rng.random::<f64>());
        let labels = DVector::from_fn(n, |i, _| features.rows[(i, 0)] + 0.1 * i as f64);
        let groups = alternating_groups(n);
        let config = CvConfig { repetitions: 2, ..CvConfig::fast() };
        let preds = nested_cv_predict(&features, &labels, &groups, &config).unwrap();
        assert_eq!(preds.reps.len(), 2);
        assert_ne!(preds.reps[0].assignment, preds.reps[1].assignment);
        for rep in &preds.reps {
            // Every applicant lands in exactly one fold, and fold ids
            // stay within range.
            assert_eq!(rep.assignment.len(), n);
            assert!(rep.assignment.iter().all(|&f| f < config.outer_folds));
            let mut counts = vec![0usize; config.outer_folds];
            for &f in &rep.assignment {
                counts[f] += 1;
            }
            assert_eq!(counts.iter().sum::<usize>(), n);
            assert!(counts.iter().all(|&c| c > 0));
        }
    }

    #[test]
    fn held_out_labels_cannot_leak_into_held_out_predictions() {
        let mut rng = stream_rng(11, "leak", &[]);
        let n = 100;
        let features = matrix_of(n, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let labels = DVector::from_fn(n, |i, _| features.rows[(i, 1)] * 2.0);
        let groups = alternating_groups(n);
        let config = CvConfig { repetitions: 1, ..CvConfig::fast() };

        let first = nested_cv_predict(&features, &labels, &groups, &config).unwrap();
        let assignment = first.reps[0].assignment.clone();

        // Permute the labels of fold 0 among themselves; models
        // predicting fold 0 never saw those labels, so predictions for
        // fold 0 must be bitwise unchanged.
        let fold0: Vec<usize> = (0..n).filter(|&i| assignment[i] == 0).collect();
        let mut permuted = labels.clone();
        for w in fold0.windows(2) {
            permuted.swap_rows(w[0], w[1]);
        }
        assert_ne!(labels, permuted);
        let second = nested_cv_predict(&features, &permuted, &groups, &config).unwrap();
        for &i in &fold0 {
            assert_eq!(first.reps[0].calibrated[i], second.reps[0].calibrated[i]);
            assert_eq!(first.reps[0].raw[i], second.reps[0].raw[i]);
        }
    }

    #[test]
    fn constant_label_fold_falls_back_to_identity_calibration() {
        // Constant labels produce zero-variance training predictions;
        // the fold records a warning instead of failing.
        let features = matrix_of(60, 2, |i, j| ((i + j) % 5) as f64);
        let labels = DVector::from_element(60, 7.0);
        let groups = alternating_groups(60);
        let config = CvConfig { repetitions: 1, ..CvConfig::fast() };
        let preds = nested_cv_predict(&features, &labels, &groups, &config).unwrap();
        assert!(!preds.reps[0].warnings.is_empty());
        for model in &preds.reps[0].fold_models {
            assert_eq!(model.calibration, Calibration::identity());
        }
    }

    #[test]
    fn auc_matches_brute_force_example() {
        // Pairs: (0.35 vs 0.1) win, (0.35 vs 0.4) loss,
        //        (0.8 vs 0.1) win,  (0.8 vs 0.4) win  -> 3/4.
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [false, false, true, true];
        assert!((auc(&scores, &labels).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_edges() {
        let perfect = auc(&[0.0, 0.1, 0.9, 1.0], &[false, false, true, true]).unwrap();
        assert_eq!(perfect, 1.0);
        let all_tied = auc(&[0.5; 6], &[true, false, true, false, true, false]).unwrap();
        assert!((all_tied - 0.5).abs() < 1e-12);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::AucUndefined)));

        let mut rng = stream_rng(12, "auc", &[]);
        let n = 4000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.03, "independent scores: auc {a}");
    }

    #[test]
    fn inner_cv_breaks_ties_toward_smallest_lambda() {
        // Constant labels: every lambda has identical validation MSE,
        // so the smallest grid value must be selected.
        let features = matrix_of(50, 2, |i, j| ((i * 3 + j) % 7) as f64);
        let labels = DVector::from_element(50, 1.0);
        let groups = alternating_groups(50);
        let config = CvConfig { repetitions: 1, ..CvConfig::fast() };
        let preds = nested_cv_predict(&features, &labels, &groups, &config).unwrap();
        for &l in &preds.reps[0].chosen_lambda {
            assert_eq!(l, config.lambda_grid[0]);
        }
    }
}
