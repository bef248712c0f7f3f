//! Bias mitigation strategies: orthogonalization, redaction,
//! marginalization, and rubric restriction.

use nalgebra::DVector;

use crate::audit::Manipulation;
use crate::error::{Error, Result};
use crate::synth::SyntheticPool;
use crate::template::DocumentManipulation;
use crate::types::{
    FeatureMatrix, GroupAttribute, PoolPredictor, Presentation, RepresentationKind,
    RepresentationSpec,
};

/// Projection removing the group-predictive linear subspace: the span
/// of the empirical group-mean-difference direction.
#[derive(Debug, Clone)]
pub struct Orthogonalizer {
    /// Unit direction removed; `None` when the groups were already
    /// balanced and the projection is the identity.
    pub direction: Option<DVector<f64>>,
    pub already_balanced: bool,
}

impl Orthogonalizer {
    pub fn fit(features: &FeatureMatrix, groups: &[GroupAttribute]) -> Result<Self> {
        if features.n() != groups.len() {
            return Err(Error::InvalidConfig("groups length mismatch".into()));
        }
        let n_m = groups.iter().filter(|g| **g == GroupAttribute::Male).count();
        if n_m == 0 || n_m == groups.len() {
            return Err(Error::InvalidConfig(
                "both groups must be present to orthogonalize".into(),
            ));
        }
        let dim = features.dim();
        let mut mean_m = DVector::zeros(dim);
        let mut mean_f = DVector::zeros(dim);
        for (i, g) in groups.iter().enumerate() {
            match g {
                GroupAttribute::Male => mean_m += features.rows.row(i).transpose(),
                GroupAttribute::Female => mean_f += features.rows.row(i).transpose(),
            }
        }
        mean_m /= n_m as f64;
        mean_f /= (groups.len() - n_m) as f64;
        let diff = mean_m - mean_f;
        let norm = diff.norm();
        if norm < 1e-12 {
            // Groups already balanced: nothing to remove.
            return Ok(Orthogonalizer { direction: None, already_balanced: true });
        }
        Ok(Orthogonalizer { direction: Some(diff / norm), already_balanced: false })
    }

    /// Applies `(I - P)` to every row.
    pub fn transform(&self, features: &FeatureMatrix) -> FeatureMatrix {
        let mut out = features.clone();
        if let Some(dir) = &self.direction {
            let projections = &features.rows * dir;
            for i in 0..out.n() {
                let p = projections[i];
                for j in 0..out.dim() {
                    out.rows[(i, j)] -= p * dir[j];
                }
            }
            // The gender channel no longer reads as a channel after
            // projection; manipulations must be composed upstream.
            out.spec.map_params.gender_channel = None;
        }
        out
    }
}

/// Fits and applies the orthogonalizer in one step.
pub fn orthogonalize(
    features: &FeatureMatrix,
    groups: &[GroupAttribute],
) -> Result<(FeatureMatrix, Orthogonalizer)> {
    let ortho = Orthogonalizer::fit(features, groups)?;
    let transformed = ortho.transform(features);
    Ok((transformed, ortho))
}

/// Redaction map rho, mode-matched to the manipulation.
#[derive(Debug, Clone)]
pub enum RedactionMap {
    /// Zero the gender channel of the feature representation.
    FeatureSpace,
    /// Instantiate the gender-neutral variant of templated documents;
    /// see `template::instantiate`.
    DocumentSpace(DocumentManipulation),
}

/// Applies rho to features: the gender channel is zeroed, which masks
/// the manipulation exactly: `rho(T(x, g)) = rho(x)` bitwise, because
/// T touches only the channel column.
pub fn redact(features: &FeatureMatrix, map: &RedactionMap) -> Result<FeatureMatrix> {
    match map {
        RedactionMap::FeatureSpace => {
            let channel = features.spec.map_params.gender_channel.ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{} features carry no gender channel to redact",
                    features.spec.kind
                ))
            })?;
            let mut out = features.clone();
            out.rows.column_mut(channel).fill(0.0);
            out.spec.kind = RepresentationKind::Redacted;
            out.spec.map_params.gender_channel = None;
            out.presented = Presentation::Natural;
            Ok(out)
        }
        RedactionMap::DocumentSpace(_) => Err(Error::InvalidConfig(
            "document redaction produces documents; instantiate the neutral variant via the \
             templater"
                .into(),
        )),
    }
}

/// Marginalized predictor: `w * h(T(x, m)) + (1 - w) * h(T(x, f))`.
#[derive(Debug, Clone)]
pub struct MarginalizedModel<'a, P: PoolPredictor> {
    pub base: &'a P,
    pub weight: f64,
    pub manipulation: &'a Manipulation,
}

/// Wraps a fitted model in the marginalized predictor. The weight must
/// lie in `[0, 1]`; the manipulation must be feature-space so that the
/// wrapped predictor can be evaluated on feature matrices.
pub fn marginalize<'a, P: PoolPredictor>(
    base: &'a P,
    weight: f64,
    manipulation: &'a Manipulation,
) -> Result<MarginalizedModel<'a, P>> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidWeight(weight));
    }
    if !matches!(manipulation, Manipulation::FeatureSpace(_)) {
        return Err(Error::InvalidConfig(
            "marginalization over document-space manipulations requires a document featurizer"
                .into(),
        ));
    }
    Ok(MarginalizedModel { base, weight, manipulation })
}

impl<P: PoolPredictor> PoolPredictor for MarginalizedModel<'_, P> {
    fn predict(&self, features: &FeatureMatrix) -> DVector<f64> {
        let male = self
            .manipulation
            .apply(features, GroupAttribute::Male)
            .expect("feature-space manipulation applies to matching features");
        let female = self
            .manipulation
            .apply(features, GroupAttribute::Female)
            .expect("feature-space manipulation applies to matching features");
        self.base.predict(&male) * self.weight + self.base.predict(&female) * (1.0 - self.weight)
    }

    fn representation(&self) -> &RepresentationSpec {
        self.base.representation()
    }
}

/// The rubric restriction: downstream models see only the rubric
/// features.
pub fn rubric_restrict(pool: &SyntheticPool) -> &FeatureMatrix {
    pool.rubric()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{estimate_bias, fit_gender_model, GenderProbe, Manipulation, ProbeConfig};
    use crate::cohort::{select_top_k, SelectionPolicy};
    use crate::linmodel::{auc, ridge_fit};
    use crate::synth::{generate_pool, GeneratorConfig};
    use crate::types::{Calibration, FittedModel, MapParams};
    use nalgebra::DMatrix;

    fn pool_with(seed: u64, n: usize) -> SyntheticPool {
        let cfg = GeneratorConfig {
            n,
            k: 4,
            skill_shift: vec![-0.5, 0.0, 0.3, -0.6],
            outcome_weights: vec![0.8, 0.5, 0.6, 0.9],
            bb_dim: 8,
            gender_loading: 2.5,
            omitted_skills: vec![3],
            countries: vec!["US".into()],
            seed,
            ..GeneratorConfig::default()
        };
        generate_pool(&cfg).unwrap()
    }

    fn raw_features(rows: DMatrix<f64>, channel: Option<usize>) -> FeatureMatrix {
        let dim = rows.ncols();
        FeatureMatrix {
            rows,
            spec: RepresentationSpec {
                kind: RepresentationKind::BlackBox,
                dim,
                map_params: MapParams { gender_channel: channel, gender_loading: 1.0 },
            },
            presented: Presentation::Natural,
        }
    }

    #[test]
    fn balanced_groups_leave_features_untouched() {
        let rows = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        let features = raw_features(rows, Some(1));
        let groups = vec![
            GroupAttribute::Male,
            GroupAttribute::Female,
            GroupAttribute::Male,
            GroupAttribute::Female,
        ];
        let (out, ortho) = orthogonalize(&features, &groups).unwrap();
        assert!(ortho.already_balanced);
        assert_eq!(out.rows, features.rows);
    }

    #[test]
    fn pure_gender_feature_is_annihilated() {
        let groups: Vec<GroupAttribute> = (0..6)
            .map(|i| if i % 2 == 0 { GroupAttribute::Male } else { GroupAttribute::Female })
            .collect();
        let rows = DMatrix::from_fn(6, 1, |i, _| groups[i].sign() * 1.5);
        let features = raw_features(rows, Some(0));
        let (out, ortho) = orthogonalize(&features, &groups).unwrap();
        assert!(!ortho.already_balanced);
        assert!(out.rows.amax() < 1e-10);
    }

    #[test]
    fn orthogonalized_group_means_agree_in_every_coordinate() {
        let pool = pool_with(41, 800);
        let groups = pool.groups();
        let (out, _) = orthogonalize(pool.black_box(), &groups).unwrap();
        let dim = out.dim();
        let mut mean_m = DVector::zeros(dim);
        let mut mean_f = DVector::zeros(dim);
        let mut n_m = 0.0;
        for (i, g) in groups.iter().enumerate() {
            match g {
                GroupAttribute::Male => {
                    mean_m += out.rows.row(i).transpose();
                    n_m += 1.0;
                }
                GroupAttribute::Female => mean_f += out.rows.row(i).transpose(),
            }
        }
        mean_m /= n_m;
        mean_f /= (groups.len() as f64) - n_m;
        assert!((mean_m - mean_f).amax() < 1e-10);
    }

    #[test]
    fn orthogonalization_restores_demographic_parity() {
        // Equal group covariances by construction, so removing the
        // mean-difference direction removes the gender signal; any
        // top-20% rule then selects group m near its population rate.
        let pool = pool_with(7, 5000);
        let groups = pool.groups();
        let (out, _) = orthogonalize(pool.black_box(), &groups).unwrap();

        let probe = fit_gender_model(&out, &groups, &ProbeConfig::default()).unwrap();
        let probs = probe.probability(&out);
        let scores: Vec<f64> = probs.iter().copied().collect();
        let labels: Vec<bool> = groups.iter().map(|g| *g == GroupAttribute::Male).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.035, "orthogonalized gender auc {a}");

        let model = ridge_fit(&out, &pool.true_scores(), 1e-3).unwrap();
        let preds = model.predict(&out);
        let admitted = select_top_k(&preds, &SelectionPolicy::default()).unwrap();
        let male_share = admitted
            .iter()
            .filter(|&&i| groups[i] == GroupAttribute::Male)
            .count() as f64
            / admitted.len() as f64;
        let p = pool.generator.p_male;
        let half_width = 1.96 * (p * (1.0 - p) / admitted.len() as f64).sqrt();
        assert!(
            (male_share - p).abs() < half_width,
            "male share {male_share} outside {p} +/- {half_width}"
        );
    }

    #[test]
    fn redaction_masks_the_manipulation_bitwise() {
        let pool = pool_with(42, 400);
        let manip = Manipulation::feature_space(&pool);
        let bb = pool.black_box();
        let map = RedactionMap::FeatureSpace;

        let direct = redact(bb, &map).unwrap();
        let male = redact(&manip.apply(bb, GroupAttribute::Male).unwrap(), &map).unwrap();
        let female = redact(&manip.apply(bb, GroupAttribute::Female).unwrap(), &map).unwrap();
        assert_eq!(direct.rows, male.rows);
        assert_eq!(direct.rows, female.rows);
        assert_eq!(direct.spec.kind, RepresentationKind::Redacted);
    }

    #[test]
    fn models_on_redacted_features_have_exactly_zero_bias() {
        let pool = pool_with(43, 500);
        let manip = Manipulation::feature_space(&pool);
        let redacted = redact(pool.black_box(), &RedactionMap::FeatureSpace).unwrap();
        let model = ridge_fit(&redacted, &pool.true_scores(), 1e-4).unwrap();
        let bias = estimate_bias(&model, &redacted, &manip).unwrap();
        assert_eq!(bias.point, 0.0);
        assert_eq!(bias.se, 0.0);
    }

    #[test]
    fn redacted_auc_sits_between_half_and_black_box() {
        // Gender-correlated skills survive redaction, so the probe
        // still beats chance but loses the explicit channel.
        let pool = pool_with(44, 4000);
        let groups = pool.groups();
        let cfg = ProbeConfig::default();

        let probe_bb = fit_gender_model(pool.black_box(), &groups, &cfg).unwrap();
        let p_bb = probe_bb.probability(pool.black_box());
        let labels: Vec<bool> = groups.iter().map(|g| *g == GroupAttribute::Male).collect();
        let auc_bb = auc(&p_bb.iter().copied().collect::<Vec<_>>(), &labels).unwrap();

        let redacted = redact(pool.black_box(), &RedactionMap::FeatureSpace).unwrap();
        let probe_red = fit_gender_model(&redacted, &groups, &cfg).unwrap();
        let p_red = probe_red.probability(&redacted);
        let auc_red = auc(&p_red.iter().copied().collect::<Vec<_>>(), &labels).unwrap();

        assert!(auc_red > 0.55, "redacted auc {auc_red} should beat chance");
        assert!(auc_red < auc_bb - 0.02, "redacted {auc_red} vs black-box {auc_bb}");
    }

    #[test]
    fn marginalization_weight_is_validated() {
        let pool = pool_with(45, 100);
        let manip = Manipulation::feature_space(&pool);
        let model = ridge_fit(pool.black_box(), &pool.true_scores(), 1e-3).unwrap();
        assert!(matches!(
            marginalize(&model, -0.1, &manip),
            Err(Error::InvalidWeight(_))
        ));
        assert!(matches!(marginalize(&model, 1.1, &manip), Err(Error::InvalidWeight(_))));
        assert!(marginalize(&model, 0.5, &manip).is_ok());
    }

    #[test]
    fn boundary_weight_reduces_to_male_variant() {
        let pool = pool_with(46, 200);
        let manip = Manipulation::feature_space(&pool);
        let model = ridge_fit(pool.black_box(), &pool.true_scores(), 1e-3).unwrap();
        let marginal = marginalize(&model, 1.0, &manip).unwrap();
        let preds = marginal.predict(pool.black_box());
        let male_preds =
            model.predict(&manip.apply(pool.black_box(), GroupAttribute::Male).unwrap());
        assert_eq!(preds, male_preds);
    }

    #[test]
    fn marginalized_models_have_exactly_zero_bias() {
        let pool = pool_with(47, 300);
        let manip = Manipulation::feature_space(&pool);
        let model = ridge_fit(pool.black_box(), &pool.true_scores(), 1e-3).unwrap();
        for w in [0.0, 0.3, 0.5, 1.0] {
            let marginal = marginalize(&model, w, &manip).unwrap();
            let bias = estimate_bias(&marginal, pool.black_box(), &manip).unwrap();
            assert!(bias.point.abs() < 1e-10, "w = {w}: bias {}", bias.point);
        }
    }

    #[test]
    fn marginalization_removes_exactly_the_channel_contribution() {
        // The group-mean prediction gap shrinks by the calibrated
        // channel coefficient times the 2c gender component.
        let pool = pool_with(48, 600);
        let manip = Manipulation::feature_space(&pool);
        let channel = pool.generator.gender_channel_index();
        let mut coefficients = vec![0.2; pool.generator.bb_dim];
        coefficients[channel] = 0.9;
        let model = FittedModel {
            intercept: 0.1,
            coefficients: DVector::from_vec(coefficients),
            ridge_lambda: 0.0,
            calibration: Calibration { slope: 1.3, offset: 0.4 },
            spec: pool.black_box().spec,
        };
        let w = 0.35;
        let marginal = marginalize(&model, w, &manip).unwrap();

        let groups = pool.groups();
        let gap = |preds: &DVector<f64>| {
            let mut sums = [0.0, 0.0];
            let mut counts = [0.0, 0.0];
            for (i, g) in groups.iter().enumerate() {
                let idx = usize::from(*g == GroupAttribute::Female);
                sums[idx] += preds[i];
                counts[idx] += 1.0;
            }
            sums[0] / counts[0] - sums[1] / counts[1]
        };
        let gap_base = gap(&model.predict(pool.black_box()));
        let gap_marginal = gap(&marginal.predict(pool.black_box()));
        let expected_shrink =
            model.effective_coefficients()[channel] * 2.0 * pool.generator.gender_loading;
        assert!(
            ((gap_base - gap_marginal) - expected_shrink).abs() < 1e-10,
            "shrink {} vs expected {expected_shrink}",
            gap_base - gap_marginal
        );
    }

    #[test]
    fn rubric_restriction_returns_rubric_features() {
        let pool = pool_with(49, 50);
        let rubric = rubric_restrict(&pool);
        assert_eq!(rubric.spec.kind, RepresentationKind::Rubric);
        assert_eq!(rubric.dim(), pool.generator.k);
    }
}
