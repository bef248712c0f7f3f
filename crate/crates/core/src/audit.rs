//! Correspondence-experiment machinery: the manipulation T, the
//! empirical bias estimator, the gender-probability probe, and the
//! theoretical bias predictors.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::stratified_folds;
use crate::rng::stream_rng;
use crate::synth::SyntheticPool;
use crate::template::DocumentManipulation;
use crate::types::{
    FeatureMatrix, GroupAttribute, PooledEstimate, PoolPredictor, Presentation,
    RepresentationKind, RepresentationSpec,
};

/// The manipulation T(x, g): produces the male- or female-presenting
/// version of each applicant.
#[derive(Debug, Clone)]
pub enum Manipulation {
    FeatureSpace(FeatureSpaceManipulation),
    DocumentSpace(DocumentManipulation),
}

impl Manipulation {
    pub fn feature_space(pool: &SyntheticPool) -> Self {
        Manipulation::FeatureSpace(FeatureSpaceManipulation::new(pool))
    }

    /// Applies T to a feature matrix. Document-space manipulations
    /// transform documents, not feature matrices; asking for features
    /// under one is a configuration error.
    pub fn apply(&self, features: &FeatureMatrix, target: GroupAttribute) -> Result<FeatureMatrix> {
        match self {
            Manipulation::FeatureSpace(m) => m.apply(features, target),
            Manipulation::DocumentSpace(_) => Err(Error::InvalidConfig(
                "document_space manipulation transforms documents; audit bias is estimated in \
                 feature space"
                    .into(),
            )),
        }
    }
}

/// Feature-space T: overwrites the gender reading of the black-box
/// channel with the target gender's value.
///
/// The manipulated channel is always recomputed from the stored
/// natural channel values, so repeated application is bitwise
/// idempotent: `apply(apply(x, f), m)` equals `apply(x, m)` exactly,
/// and applying an applicant's own gender returns the input verbatim.
#[derive(Debug, Clone)]
pub struct FeatureSpaceManipulation {
    channel_index: usize,
    loading: f64,
    groups: Vec<GroupAttribute>,
    natural_channel: Vec<f64>,
}

impl FeatureSpaceManipulation {
    pub fn new(pool: &SyntheticPool) -> Self {
        let channel_index = pool.generator.gender_channel_index();
        let bb = pool.black_box();
        FeatureSpaceManipulation {
            channel_index,
            loading: pool.generator.gender_loading,
            groups: pool.groups(),
            natural_channel: bb.rows.column(channel_index).iter().copied().collect(),
        }
    }

    pub fn channel_index(&self) -> usize {
        self.channel_index
    }

    pub fn loading(&self) -> f64 {
        self.loading
    }

    pub fn apply(&self, features: &FeatureMatrix, target: GroupAttribute) -> Result<FeatureMatrix> {
        if features.n() != self.groups.len() {
            return Err(Error::InvalidConfig(format!(
                "manipulation built for {} applicants, features have {} rows",
                self.groups.len(),
                features.n()
            )));
        }
        let mut out = features.clone();
        out.presented = Presentation::Uniform(target);
        match features.spec.kind {
            // Rubric features are untouched by T, and redacted
            // features mask it: both variants are the input verbatim.
            RepresentationKind::Rubric | RepresentationKind::Redacted => Ok(out),
            RepresentationKind::BlackBox | RepresentationKind::KitchenSink => {
                let col = self.channel_index;
                for i in 0..out.n() {
                    let shift = (target.sign() - self.groups[i].sign()) * self.loading;
                    out.rows[(i, col)] = if shift == 0.0 {
                        self.natural_channel[i]
                    } else {
                        self.natural_channel[i] + shift
                    };
                }
                Ok(out)
            }
        }
    }
}

/// Convenience entry point matching the audit flow: manipulated
/// features for the whole pool in the given representation.
pub fn apply_manipulation(
    manipulation: &Manipulation,
    features: &FeatureMatrix,
    target: GroupAttribute,
) -> Result<FeatureMatrix> {
    manipulation.apply(features, target)
}

/// A paired estimate of bias: mean prediction difference between the
/// male- and female-presenting variants of the same applicants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasEstimate {
    pub point: f64,
    pub se: f64,
}

/// Estimates bias with respect to T: the mean over applicants of
/// `h(T(x, m)) - h(T(x, f))`, with the paired-difference standard
/// error.
pub fn estimate_bias<P: PoolPredictor + ?Sized>(
    predictor: &P,
    features: &FeatureMatrix,
    manipulation: &Manipulation,
) -> Result<BiasEstimate> {
    if predictor.representation().kind != features.spec.kind {
        return Err(Error::InvalidConfig(format!(
            "predictor was fit on {} features, got {}",
            predictor.representation().kind,
            features.spec.kind
        )));
    }
    let male = manipulation.apply(features, GroupAttribute::Male)?;
    let female = manipulation.apply(features, GroupAttribute::Female)?;
    let diffs = predictor.predict(&male) - predictor.predict(&female);
    Ok(paired_bias(&diffs))
}

/// Point and standard error of a vector of paired differences.
pub fn paired_bias(diffs: &DVector<f64>) -> BiasEstimate {
    let n = diffs.len() as f64;
    let point = diffs.mean();
    let se = if diffs.len() > 1 {
        let var = diffs.iter().map(|d| (d - point) * (d - point)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    BiasEstimate { point, se }
}

/// Mean feature difference between the male- and female-presenting
/// variants: the empirical audit-induced representation shift.
pub fn empirical_shift(
    features: &FeatureMatrix,
    manipulation: &Manipulation,
) -> Result<DVector<f64>> {
    let male = manipulation.apply(features, GroupAttribute::Male)?;
    let female = manipulation.apply(features, GroupAttribute::Female)?;
    let diff = &male.rows - &female.rows;
    Ok(diff.row_mean().transpose())
}

/// Anything that maps features to a probability of belonging to
/// group m.
pub trait GenderProbe {
    fn probability(&self, features: &FeatureMatrix) -> DVector<f64>;
}

/// A constant probe; useful as the untrained baseline.
pub struct ConstantProbe(pub f64);

impl GenderProbe for ConstantProbe {
    fn probability(&self, features: &FeatureMatrix) -> DVector<f64> {
        DVector::from_element(features.n(), self.0)
    }
}

/// Regularized logistic model estimating pi(x) = Pr(G = m | r(x)).
///
/// Features are standardized internally; the optimizer ascends the
/// penalized log-likelihood with Newton steps and step halving until
/// the gradient norm falls below `tol` or `max_iter` is reached.
#[derive(Debug, Clone)]
pub struct GenderModel {
    pub intercept: f64,
    pub coefficients: DVector<f64>,
    pub l2: f64,
    pub spec: RepresentationSpec,
    feature_means: DVector<f64>,
    feature_sds: DVector<f64>,
    /// Brier score on the training data, a calibration diagnostic.
    pub brier: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Per-sample L2 penalty on the slopes.
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Folds for the out-of-sample probe.
    pub folds: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { l2: 1e-4, max_iter: 500, tol: 1e-8, folds: 5, seed: 17 }
    }
}

pub fn fit_gender_model(
    features: &FeatureMatrix,
    groups: &[GroupAttribute],
    config: &ProbeConfig,
) -> Result<GenderModel> {
    features.check_finite()?;
    let n = features.n();
    if groups.len() != n {
        return Err(Error::InvalidConfig("groups length mismatch".into()));
    }
    if !groups.contains(&GroupAttribute::Male) || !groups.contains(&GroupAttribute::Female) {
        return Err(Error::InvalidConfig("both groups must be present to fit the probe".into()));
    }
    let dim = features.dim();

    let means = features.rows.row_mean().transpose();
    let mut sds = DVector::zeros(dim);
    for j in 0..dim {
        let col = features.rows.column(j);
        let var = col.iter().map(|v| (v - means[j]) * (v - means[j])).sum::<f64>() / n as f64;
        sds[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    let mut x = features.rows.clone();
    for j in 0..dim {
        let mut col = x.column_mut(j);
        for v in col.iter_mut() {
            *v = (*v - means[j]) / sds[j];
        }
    }
    let y = DVector::from_iterator(
        n,
        groups.iter().map(|g| if *g == GroupAttribute::Male { 1.0 } else { 0.0 }),
    );

    let penalty = config.l2 * n as f64;
    let mut beta = DVector::<f64>::zeros(dim + 1); // intercept first
    let mut loglik = penalized_loglik(&x, &y, &beta, penalty);
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        let (grad, hess) = gradient_hessian(&x, &y, &beta, penalty);
        if grad.norm() / n as f64 <= config.tol {
            break;
        }
        let step = match Cholesky::new(hess) {
            Some(chol) => chol.solve(&grad),
            None => break,
        };
        // Step halving keeps the ascent monotone.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            let cand_ll = penalized_loglik(&x, &y, &candidate, penalty);
            if cand_ll >= loglik - 1e-12 {
                beta = candidate;
                loglik = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let mut brier = 0.0;
    for i in 0..n {
        let z = beta[0] + (x.row(i) * beta.rows(1, dim))[(0, 0)];
        let p = sigmoid(z);
        brier += (p - y[i]) * (p - y[i]);
    }
    brier /= n as f64;

    Ok(GenderModel {
        intercept: beta[0],
        coefficients: beta.rows(1, dim).into_owned(),
        l2: config.l2,
        spec: features.spec,
        feature_means: means,
        feature_sds: sds,
        brier,
        iterations,
    })
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(1e-12, 1.0 - 1e-12)
}

fn penalized_loglik(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, penalty: f64) -> f64 {
    let dim = x.ncols();
    let slopes = beta.rows(1, dim);
    let mut ll = 0.0;
    for i in 0..x.nrows() {
        let z = beta[0] + (x.row(i) * slopes)[(0, 0)];
        let p = sigmoid(z);
        ll += y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln();
    }
    ll - 0.5 * penalty * slopes.norm_squared()
}

fn gradient_hessian(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    penalty: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let dim = x.ncols();
    let slopes = beta.rows(1, dim);
    let mut grad = DVector::zeros(dim + 1);
    let mut hess = DMatrix::zeros(dim + 1, dim + 1);
    let mut residual = DVector::zeros(n);
    let mut weights = DVector::zeros(n);
    for i in 0..n {
        let z = beta[0] + (x.row(i) * slopes)[(0, 0)];
        let p = sigmoid(z);
        residual[i] = y[i] - p;
        weights[i] = (p * (1.0 - p)).max(1e-10);
    }
    grad[0] = residual.sum();
    let gx = x.transpose() * &residual - slopes * penalty;
    grad.rows_mut(1, dim).copy_from(&gx);

    // Hessian of the negative objective: [[sum w, w'X], [X'w, X'WX + penalty I]].
    let w_sum = weights.sum();
    hess[(0, 0)] = w_sum;
    let xw = x.transpose() * &weights;
    for j in 0..dim {
        hess[(0, j + 1)] = xw[j];
        hess[(j + 1, 0)] = xw[j];
    }
    let mut xtwx = DMatrix::zeros(dim, dim);
    // X' W X computed via a weighted copy of X.
    let mut xw_rows = x.clone();
    for i in 0..n {
        let w = weights[i];
        for j in 0..dim {
            xw_rows[(i, j)] *= w;
        }
    }
    xtwx.gemm_tr(1.0, x, &xw_rows, 0.0);
    for j in 0..dim {
        xtwx[(j, j)] += penalty;
    }
    hess.view_mut((1, 1), (dim, dim)).copy_from(&xtwx);
    (grad, hess)
}

impl GenderProbe for GenderModel {
    fn probability(&self, features: &FeatureMatrix) -> DVector<f64> {
        DVector::from_fn(features.n(), |i, _| {
            let mut z = self.intercept;
            for j in 0..features.dim() {
                z += self.coefficients[j] * (features.rows[(i, j)] - self.feature_means[j])
                    / self.feature_sds[j];
            }
            sigmoid(z)
        })
    }
}

/// Out-of-sample probe: one logistic model per fold, each applicant
/// scored by the model that never saw them.
#[derive(Debug, Clone)]
pub struct CvGenderModel {
    pub models: Vec<GenderModel>,
    pub assignment: Vec<usize>,
}

pub fn fit_gender_model_cv(
    features: &FeatureMatrix,
    groups: &[GroupAttribute],
    config: &ProbeConfig,
) -> Result<CvGenderModel> {
    let n = features.n();
    if n < config.folds || config.folds < 2 {
        return Err(Error::InvalidConfig("probe folds must be >= 2 and <= n".into()));
    }
    let mut rng = stream_rng(config.seed, "probe-folds", &[]);
    let assignment = stratified_folds(groups, config.folds, &mut rng);
    let mut models = Vec::with_capacity(config.folds);
    for fold in 0..config.folds {
        let train_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
        let mut rows = DMatrix::zeros(train_idx.len(), features.dim());
        for (r, &i) in train_idx.iter().enumerate() {
            rows.row_mut(r).copy_from(&features.rows.row(i));
        }
        let sub = FeatureMatrix { rows, spec: features.spec, presented: features.presented };
        let sub_groups: Vec<GroupAttribute> = train_idx.iter().map(|&i| groups[i]).collect();
        models.push(fit_gender_model(&sub, &sub_groups, config)?);
    }
    Ok(CvGenderModel { models, assignment })
}

impl GenderProbe for CvGenderModel {
    fn probability(&self, features: &FeatureMatrix) -> DVector<f64> {
        DVector::from_fn(features.n(), |i, _| {
            let model = &self.models[self.assignment[i]];
            let mut z = model.intercept;
            for j in 0..features.dim() {
                z += model.coefficients[j] * (features.rows[(i, j)] - model.feature_means[j])
                    / model.feature_sds[j];
            }
            sigmoid(z)
        })
    }
}

/// Delta-pi: mean over applicants of `pi(T(x, m)) - pi(T(x, f))`, the
/// degree to which the representation encodes gender.
pub fn estimate_delta_pi<P: GenderProbe + ?Sized>(
    probe: &P,
    features: &FeatureMatrix,
    manipulation: &Manipulation,
) -> Result<f64> {
    Ok(delta_pi_estimate(probe, features, manipulation)?.point)
}

/// Delta-pi with its paired standard error, for Rubin pooling.
pub fn delta_pi_estimate<P: GenderProbe + ?Sized>(
    probe: &P,
    features: &FeatureMatrix,
    manipulation: &Manipulation,
) -> Result<BiasEstimate> {
    let male = manipulation.apply(features, GroupAttribute::Male)?;
    let female = manipulation.apply(features, GroupAttribute::Female)?;
    let diffs = probe.probability(&male) - probe.probability(&female);
    Ok(paired_bias(&diffs))
}

/// Bias decomposition plug-in: baseline bias plus the group advantage
/// gap times delta-pi. Under the stylized injection the gap is `2b`.
pub fn predicted_bias_decomposition(baseline_bias: f64, beta_m: f64, beta_f: f64, delta_pi: f64) -> f64 {
    baseline_bias + (beta_m - beta_f) * delta_pi
}

/// Population-OLS audit bias: `s' Var(R)^{-1} Cov(R, Y)`.
///
/// When the condition number of `var_r` exceeds 1e12 the matrix is
/// regularized with `1e-10 I`; a matrix that still fails to factor is
/// reported as singular together with its conditioning.
pub fn predicted_bias_from_moments(
    shift: &DVector<f64>,
    var_r: &DMatrix<f64>,
    cov_ry: &DVector<f64>,
) -> Result<f64> {
    let dim = var_r.nrows();
    if var_r.ncols() != dim || shift.len() != dim || cov_ry.len() != dim {
        return Err(Error::InvalidConfig("moment dimensions disagree".into()));
    }
    let eigen = var_r.clone().symmetric_eigen();
    let max_ev = eigen.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ev = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY };

    let mut system = var_r.clone();
    if condition > 1e12 {
        for i in 0..dim {
            system[(i, i)] += 1e-10;
        }
    }
    let chol = Cholesky::new(system).ok_or(Error::SingularCovariance(condition))?;
    let alpha = chol.solve(cov_ry);
    Ok(shift.dot(&alpha))
}

/// Pooled audit results for one (grid point, strategy) cell.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub bias: PooledEstimate,
    pub delta_pi: PooledEstimate,
    pub baseline_bias: f64,
    pub predicted_bias: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_pool, GeneratorConfig};
    use crate::types::{Calibration, FittedModel};

    fn test_pool(seed: u64) -> SyntheticPool {
        let cfg = GeneratorConfig {
            n: 300,
            k: 3,
            skill_shift: vec![-0.4, 0.0, 0.5],
            outcome_weights: vec![1.0, 0.5, 0.7],
            bb_dim: 6,
            gender_loading: 2.0,
            omitted_skills: vec![],
            countries: vec!["US".into()],
            seed,
            ..GeneratorConfig::default()
        };
        generate_pool(&cfg).unwrap()
    }

    fn linear_model(spec: RepresentationSpec, coefficients: Vec<f64>) -> FittedModel {
        FittedModel {
            intercept: 0.3,
            coefficients: DVector::from_vec(coefficients),
            ridge_lambda: 0.0,
            calibration: Calibration::identity(),
            spec,
        }
    }

    #[test]
    fn own_gender_is_a_fixed_point() {
        let pool = test_pool(21);
        let manip = Manipulation::feature_space(&pool);
        let male = manip.apply(pool.black_box(), GroupAttribute::Male).unwrap();
        for (i, a) in pool.applicants.iter().enumerate() {
            if a.group == GroupAttribute::Male {
                assert_eq!(male.rows.row(i), pool.black_box().rows.row(i));
            }
        }
    }

    #[test]
    fn double_application_is_bitwise_idempotent() {
        let pool = test_pool(22);
        let manip = Manipulation::feature_space(&pool);
        let bb = pool.black_box();
        let via_female = manip
            .apply(&manip.apply(bb, GroupAttribute::Female).unwrap(), GroupAttribute::Male)
            .unwrap();
        let direct = manip.apply(bb, GroupAttribute::Male).unwrap();
        assert_eq!(via_female.rows, direct.rows);

        let kitchen = pool.kitchen_sink();
        let via = manip
            .apply(&manip.apply(kitchen, GroupAttribute::Male).unwrap(), GroupAttribute::Female)
            .unwrap();
        let direct = manip.apply(kitchen, GroupAttribute::Female).unwrap();
        assert_eq!(via.rows, direct.rows);
    }

    #[test]
    fn zero_loading_means_degenerate_manipulation() {
        let mut cfg = test_pool(23).generator;
        cfg.gender_loading = 0.0;
        let pool = generate_pool(&cfg).unwrap();
        let manip = Manipulation::feature_space(&pool);
        let male = manip.apply(pool.black_box(), GroupAttribute::Male).unwrap();
        let female = manip.apply(pool.black_box(), GroupAttribute::Female).unwrap();
        assert_eq!(male.rows, female.rows);

        let model = linear_model(pool.black_box().spec, vec![0.5; 6]);
        let bias = estimate_bias(&model, pool.black_box(), &manip).unwrap();
        assert_eq!(bias.point, 0.0);
    }

    #[test]
    fn constant_model_has_zero_bias() {
        let pool = test_pool(24);
        let manip = Manipulation::feature_space(&pool);
        let model = linear_model(pool.black_box().spec, vec![0.0; 6]);
        let bias = estimate_bias(&model, pool.black_box(), &manip).unwrap();
        assert_eq!(bias.point, 0.0);
        assert_eq!(bias.se, 0.0);
    }

    #[test]
    fn channel_projection_model_has_bias_two_c() {
        let pool = test_pool(25);
        let manip = Manipulation::feature_space(&pool);
        let mut coef = vec![0.0; 6];
        coef[pool.generator.gender_channel_index()] = 1.0;
        let model = linear_model(pool.black_box().spec, coef);
        let bias = estimate_bias(&model, pool.black_box(), &manip).unwrap();
        assert!((bias.point - 2.0 * pool.generator.gender_loading).abs() < 1e-12);
    }

    #[test]
    fn rubric_models_are_untouched_by_t() {
        let pool = test_pool(26);
        let manip = Manipulation::feature_space(&pool);
        let male = manip.apply(pool.rubric(), GroupAttribute::Male).unwrap();
        let female = manip.apply(pool.rubric(), GroupAttribute::Female).unwrap();
        assert_eq!(male.rows, female.rows);
        assert_eq!(male.rows, pool.rubric().rows);

        let model = linear_model(pool.rubric().spec, vec![1.0, -0.5, 0.25]);
        let bias = estimate_bias(&model, pool.rubric(), &manip).unwrap();
        assert_eq!(bias.point, 0.0);
    }

    #[test]
    fn bias_equals_shift_dot_coefficients_for_linear_models() {
        let pool = test_pool(27);
        let manip = Manipulation::feature_space(&pool);
        for kind in [RepresentationKind::BlackBox, RepresentationKind::KitchenSink] {
            let features = pool.representation(kind).unwrap();
            let dim = features.dim();
            let coefficients: Vec<f64> = (0..dim).map(|j| 0.3 - 0.07 * j as f64).collect();
            let mut model = linear_model(features.spec, coefficients);
            model.calibration = Calibration { slope: 1.7, offset: -0.2 };
            let bias = estimate_bias(&model, features, &manip).unwrap();
            let shift = empirical_shift(features, &manip).unwrap();
            let identity = shift.dot(&model.effective_coefficients());
            assert!(
                (bias.point - identity).abs() < 1e-10,
                "{kind}: bias {} vs s'a {identity}",
                bias.point
            );
        }
    }

    #[test]
    fn representation_mismatch_is_rejected() {
        let pool = test_pool(28);
        let manip = Manipulation::feature_space(&pool);
        let model = linear_model(pool.black_box().spec, vec![0.0; 6]);
        assert!(estimate_bias(&model, pool.rubric(), &manip).is_err());
    }

    #[test]
    fn decomposition_plugin_arithmetic() {
        assert_eq!(predicted_bias_decomposition(0.4, 1.0, 1.0, 0.9), 0.4);
        assert!((predicted_bias_decomposition(0.0, 1.0, -1.0, 0.9) - 1.8).abs() < 1e-15);
    }

    #[test]
    fn moment_predictor_trivial_and_whitened_cases() {
        let var = DMatrix::<f64>::identity(3, 3);
        let cov = DVector::from_vec(vec![0.5, -0.25, 1.0]);
        let zero = DVector::zeros(3);
        assert_eq!(predicted_bias_from_moments(&zero, &var, &cov).unwrap(), 0.0);

        // Whitened representation: bias reduces to s' Cov(R, Y).
        let shift = DVector::from_vec(vec![2.0, 0.0, 1.0]);
        let expected = shift.dot(&cov);
        assert!((predicted_bias_from_moments(&shift, &var, &cov).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn moment_predictor_regularizes_rank_deficient_covariance() {
        // Rank-one covariance: the epsilon ridge makes the solve
        // possible instead of failing outright.
        let v = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let var = &v * v.transpose();
        let cov = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let shift = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(predicted_bias_from_moments(&shift, &var, &cov).is_ok());
    }

    #[test]
    fn moment_predictor_rejects_broken_covariance() {
        // A matrix with a negative eigenvalue cannot be factored even
        // after regularization; the error names the conditioning.
        let var = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let cov = DVector::from_vec(vec![1.0, 1.0]);
        let shift = DVector::from_vec(vec![1.0, 0.0]);
        match predicted_bias_from_moments(&shift, &var, &cov) {
            Err(Error::SingularCovariance(_)) => {}
            other => panic!("expected singular covariance, got {other:?}"),
        }
    }

    #[test]
    fn constant_probe_gives_exactly_zero_delta_pi() {
        let pool = test_pool(29);
        let manip = Manipulation::feature_space(&pool);
        let probe = ConstantProbe(0.5);
        let dp = estimate_delta_pi(&probe, pool.black_box(), &manip).unwrap();
        assert_eq!(dp, 0.0);
    }

    #[test]
    fn logistic_probe_outputs_probabilities_and_separates() {
        let pool = test_pool(30);
        let groups = pool.groups();
        let probe = fit_gender_model(pool.black_box(), &groups, &ProbeConfig::default()).unwrap();
        let probs = probe.probability(pool.black_box());
        assert!(probs.iter().all(|p| *p > 0.0 && *p < 1.0));
        // Loading 2.0 with noise sd 0.25 separates the groups well.
        let scores: Vec<f64> = probs.iter().copied().collect();
        let labels: Vec<bool> = groups.iter().map(|g| *g == GroupAttribute::Male).collect();
        let auc = crate::linmodel::auc(&scores, &labels).unwrap();
        assert!(auc > 0.95, "probe auc {auc}");

        let manip = Manipulation::feature_space(&pool);
        let dp = estimate_delta_pi(&probe, pool.black_box(), &manip).unwrap();
        assert!(dp > 0.9, "delta pi {dp}");
    }

    #[test]
    fn document_space_manipulation_rejects_feature_audits() {
        use crate::template::{DocumentManipulation, Lexicon, NamePool};
        let pool = test_pool(32);
        let manip = Manipulation::DocumentSpace(DocumentManipulation::new(
            Lexicon::builtin(),
            NamePool::builtin(),
            1,
        ));
        let model = linear_model(pool.black_box().spec, vec![0.0; 6]);
        assert!(matches!(
            estimate_bias(&model, pool.black_box(), &manip),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn cv_probe_is_out_of_sample_and_close_to_full_fit() {
        let pool = test_pool(31);
        let groups = pool.groups();
        let config = ProbeConfig::default();
        let cv = fit_gender_model_cv(pool.black_box(), &groups, &config).unwrap();
        assert_eq!(cv.models.len(), config.folds);
        let manip = Manipulation::feature_space(&pool);
        let dp = estimate_delta_pi(&cv, pool.black_box(), &manip).unwrap();
        assert!(dp > 0.85, "cv delta pi {dp}");
    }
}
