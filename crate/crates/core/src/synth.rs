//! Synthetic applicant pool generator.
//!
//! The generator draws from a linear-Gaussian structural causal model:
//!
//! ```text
//! G ~ Bernoulli(p_male),                gamma(m) = +1, gamma(f) = -1
//! S | G ~ N(gamma(G) * shift / 2, I_k)
//! Y = w' S + eps_y,                     eps_y ~ N(0, sigma_y^2)
//! rubric    = S + N(0, sigma_r^2 I)
//! black-box = A S_kept + gamma(G) c e_ch + N(0, sigma_bb^2 I)
//! kitchen   = [black-box | rubric]
//! ```
//!
//! The gender channel is the last black-box coordinate (`e_ch`). Skills
//! listed in `omitted_skills` are dropped from the mixing input, which
//! is what makes gender a proxy for omitted quality and produces audit
//! bias under unbiased labels. Because the model is linear-Gaussian,
//! all second moments have closed forms ([`analytic_moments`]), giving
//! an exact oracle for the audit-bias predictions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::types::{
    ApplicantRecord, FeatureMatrix, GroupAttribute, MapParams, Presentation, RepresentationKind,
    RepresentationSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Pool size.
    pub n: usize,
    /// Skill dimension.
    pub k: usize,
    /// Probability of group m; must lie strictly inside (0, 1).
    pub p_male: f64,
    /// Group-mean difference of the skill vector (m minus f equals the
    /// full shift; each group is offset by half of it). Negative
    /// entries make female applicants stronger on that skill.
    pub skill_shift: Vec<f64>,
    /// Outcome weights w.
    pub outcome_weights: Vec<f64>,
    /// sigma_y.
    pub outcome_noise_sd: f64,
    /// sigma_r.
    pub rubric_noise_sd: f64,
    /// Black-box dimension (includes the gender channel coordinate).
    pub bb_dim: usize,
    /// sigma_bb.
    pub bb_noise_sd: f64,
    /// Explicit bb_dim x k mixing matrix rows; `None` draws a seeded
    /// N(0, 1/k) matrix with the gender-channel row zeroed.
    pub bb_mixing: Option<Vec<Vec<f64>>>,
    /// Gender-channel loading c.
    pub gender_loading: f64,
    /// Skill indices excluded from the mixing input.
    pub omitted_skills: Vec<usize>,
    /// Country tags assigned uniformly; consumed by the templater.
    pub countries: Vec<String>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 2000,
            k: 8,
            p_male: 0.5,
            skill_shift: vec![-0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.8],
            outcome_weights: vec![0.6, 0.5, 0.5, 0.4, 0.4, 0.3, 0.3, 0.8],
            outcome_noise_sd: 0.5,
            rubric_noise_sd: 0.3,
            bb_dim: 64,
            bb_noise_sd: 0.2,
            bb_mixing: None,
            gender_loading: 5.0,
            omitted_skills: vec![7],
            countries: default_countries(),
            seed: 17,
        }
    }
}

fn default_countries() -> Vec<String> {
    ["US", "IN", "CN", "NG", "BR"].iter().map(|s| s.to_string()).collect()
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("pool size n must be positive".into()));
        }
        if self.k == 0 || self.bb_dim == 0 {
            return Err(Error::InvalidConfig("dimensions k and bb_dim must be positive".into()));
        }
        if !(self.p_male > 0.0 && self.p_male < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_male must lie strictly in (0, 1), got {}",
                self.p_male
            )));
        }
        if self.skill_shift.len() != self.k {
            return Err(Error::InvalidConfig(format!(
                "skill_shift has length {}, expected k = {}",
                self.skill_shift.len(),
                self.k
            )));
        }
        if self.outcome_weights.len() != self.k {
            return Err(Error::InvalidConfig(format!(
                "outcome_weights has length {}, expected k = {}",
                self.outcome_weights.len(),
                self.k
            )));
        }
        for sd in [self.outcome_noise_sd, self.rubric_noise_sd, self.bb_noise_sd] {
            if !(sd.is_finite() && sd >= 0.0) {
                return Err(Error::InvalidConfig("noise sds must be nonnegative".into()));
            }
        }
        if !(self.gender_loading.is_finite() && self.gender_loading >= 0.0) {
            return Err(Error::InvalidConfig("gender_loading must be nonnegative".into()));
        }
        if let Some(idx) = self.omitted_skills.iter().find(|&&i| i >= self.k) {
            return Err(Error::InvalidConfig(format!(
                "omitted skill index {idx} out of range for k = {}",
                self.k
            )));
        }
        if let Some(rows) = &self.bb_mixing {
            if rows.len() != self.bb_dim || rows.iter().any(|r| r.len() != self.k) {
                return Err(Error::InvalidConfig(format!(
                    "bb_mixing must be {} x {}",
                    self.bb_dim, self.k
                )));
            }
        }
        if self.countries.is_empty() {
            return Err(Error::InvalidConfig("countries must be nonempty".into()));
        }
        Ok(())
    }

    /// Index of the gender channel in the black-box representation.
    pub fn gender_channel_index(&self) -> usize {
        self.bb_dim - 1
    }

    /// Mixing matrix with omitted skill columns zeroed. When no
    /// explicit matrix is configured, entries are seeded N(0, 1/k)
    /// with the gender-channel row zeroed.
    pub fn effective_mixing(&self) -> DMatrix<f64> {
        let mut a = match &self.bb_mixing {
            Some(rows) => {
                DMatrix::from_fn(self.bb_dim, self.k, |i, j| rows[i][j])
            }
            None => {
                let mut rng = stream_rng(self.seed, "mixing", &[]);
                let normal = Normal::new(0.0, 1.0 / (self.k as f64).sqrt()).unwrap();
                let mut a = DMatrix::from_fn(self.bb_dim, self.k, |_, _| normal.sample(&mut rng));
                a.row_mut(self.gender_channel_index()).fill(0.0);
                a
            }
        };
        for &idx in &self.omitted_skills {
            a.column_mut(idx).fill(0.0);
        }
        a
    }

    fn spec(&self, kind: RepresentationKind) -> RepresentationSpec {
        let channel = self.gender_channel_index();
        let (dim, map_params) = match kind {
            RepresentationKind::BlackBox => (
                self.bb_dim,
                MapParams { gender_channel: Some(channel), gender_loading: self.gender_loading },
            ),
            RepresentationKind::Rubric => (self.k, MapParams::none()),
            RepresentationKind::Redacted => (
                self.bb_dim,
                MapParams { gender_channel: None, gender_loading: self.gender_loading },
            ),
            RepresentationKind::KitchenSink => (
                self.bb_dim + self.k,
                MapParams { gender_channel: Some(channel), gender_loading: self.gender_loading },
            ),
        };
        RepresentationSpec { kind, dim, map_params }
    }
}

/// A generated pool with its feature representations.
#[derive(Debug, Clone)]
pub struct SyntheticPool {
    pub applicants: Vec<ApplicantRecord>,
    skills: DMatrix<f64>,
    black_box: FeatureMatrix,
    rubric: FeatureMatrix,
    kitchen: FeatureMatrix,
    pub generator: GeneratorConfig,
}

impl SyntheticPool {
    pub fn n(&self) -> usize {
        self.applicants.len()
    }

    pub fn groups(&self) -> Vec<GroupAttribute> {
        self.applicants.iter().map(|a| a.group).collect()
    }

    pub fn true_scores(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.applicants.iter().map(|a| a.true_score))
    }

    pub fn female_share(&self) -> f64 {
        let f = self.applicants.iter().filter(|a| a.group == GroupAttribute::Female).count();
        f as f64 / self.n() as f64
    }

    /// n x k latent skill matrix.
    pub fn skill_matrix(&self) -> &DMatrix<f64> {
        &self.skills
    }

    pub fn black_box(&self) -> &FeatureMatrix {
        &self.black_box
    }

    pub fn rubric(&self) -> &FeatureMatrix {
        &self.rubric
    }

    pub fn kitchen_sink(&self) -> &FeatureMatrix {
        &self.kitchen
    }

    /// Representation lookup by kind. The redacted representation is
    /// derived, not stored; see `mitigation::redact`.
    pub fn representation(&self, kind: RepresentationKind) -> Result<&FeatureMatrix> {
        match kind {
            RepresentationKind::BlackBox => Ok(&self.black_box),
            RepresentationKind::Rubric => Ok(&self.rubric),
            RepresentationKind::KitchenSink => Ok(&self.kitchen),
            RepresentationKind::Redacted => Err(Error::InvalidConfig(
                "redacted features are derived; apply mitigation::redact to the black-box matrix"
                    .into(),
            )),
        }
    }

    /// Writes the pool wide: one row per applicant with skills,
    /// black-box and rubric features, plus any extra label columns
    /// (e.g. "y_proxy_b0.5" vectors from proxy sweeps).
    pub fn write_csv<W: std::io::Write>(
        &self,
        extra_columns: &[(String, &DVector<f64>)],
        writer: W,
    ) -> Result<()> {
        for (name, column) in extra_columns {
            if column.len() != self.n() {
                return Err(Error::InvalidConfig(format!(
                    "extra column '{name}' has length {}, expected {}",
                    column.len(),
                    self.n()
                )));
            }
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header =
            vec!["id".to_string(), "group".to_string(), "country".to_string(), "true_score".to_string()];
        for j in 0..self.generator.k {
            header.push(format!("skill_{j}"));
        }
        for j in 0..self.generator.bb_dim {
            header.push(format!("bb_{j}"));
        }
        for j in 0..self.generator.k {
            header.push(format!("rubric_{j}"));
        }
        for (name, _) in extra_columns {
            header.push(name.clone());
        }
        w.write_record(&header)?;
        for (i, a) in self.applicants.iter().enumerate() {
            let mut record = vec![
                a.id.clone(),
                a.group.code().to_string(),
                a.country.clone(),
                format!("{}", a.true_score),
            ];
            for j in 0..self.generator.k {
                record.push(format!("{}", self.skills[(i, j)]));
            }
            for j in 0..self.generator.bb_dim {
                record.push(format!("{}", self.black_box.rows[(i, j)]));
            }
            for j in 0..self.generator.k {
                record.push(format!("{}", self.rubric.rows[(i, j)]));
            }
            for (_, column) in extra_columns {
                record.push(format!("{}", column[i]));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Generates a pool. Identical configs (including seed) produce
/// bitwise-identical pools.
pub fn generate_pool(config: &GeneratorConfig) -> Result<SyntheticPool> {
    config.validate()?;
    let n = config.n;
    let k = config.k;
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let mut rng = stream_rng(config.seed, "pool", &[]);
    let mut applicants = Vec::with_capacity(n);
    let mut skills = DMatrix::zeros(n, k);
    for i in 0..n {
        let group = if rng.random::<f64>() < config.p_male {
            GroupAttribute::Male
        } else {
            GroupAttribute::Female
        };
        let country = config.countries[rng.random_range(0..config.countries.len())].clone();
        let sign = group.sign();
        let mut skill_vec = Vec::with_capacity(k);
        for j in 0..k {
            let s = sign * config.skill_shift[j] / 2.0 + std_normal.sample(&mut rng);
            skills[(i, j)] = s;
            skill_vec.push(s);
        }
        let noise = config.outcome_noise_sd * std_normal.sample(&mut rng);
        let true_score: f64 =
            skill_vec.iter().zip(&config.outcome_weights).map(|(s, w)| s * w).sum::<f64>() + noise;
        applicants.push(ApplicantRecord {
            id: format!("a{i:05}"),
            group,
            skills: skill_vec,
            true_score,
            country,
        });
    }

    // Rubric features: skills plus independent noise.
    let mut rubric_rows = skills.clone();
    if config.rubric_noise_sd > 0.0 {
        let mut rng_r = stream_rng(config.seed, "rubric", &[]);
        for i in 0..n {
            for j in 0..k {
                rubric_rows[(i, j)] += config.rubric_noise_sd * std_normal.sample(&mut rng_r);
            }
        }
    }

    // Black-box features: mixed kept skills, gender channel, noise.
    let mixing = config.effective_mixing();
    let channel = config.gender_channel_index();
    let mut bb_rows = &skills * mixing.transpose();
    for (i, a) in applicants.iter().enumerate() {
        bb_rows[(i, channel)] += a.group.sign() * config.gender_loading;
    }
    if config.bb_noise_sd > 0.0 {
        let mut rng_b = stream_rng(config.seed, "bb", &[]);
        for i in 0..n {
            for j in 0..config.bb_dim {
                bb_rows[(i, j)] += config.bb_noise_sd * std_normal.sample(&mut rng_b);
            }
        }
    }

    let mut kitchen_rows = DMatrix::zeros(n, config.bb_dim + k);
    kitchen_rows.view_mut((0, 0), (n, config.bb_dim)).copy_from(&bb_rows);
    kitchen_rows.view_mut((0, config.bb_dim), (n, k)).copy_from(&rubric_rows);

    let black_box = FeatureMatrix {
        rows: bb_rows,
        spec: config.spec(RepresentationKind::BlackBox),
        presented: Presentation::Natural,
    };
    let rubric = FeatureMatrix {
        rows: rubric_rows,
        spec: config.spec(RepresentationKind::Rubric),
        presented: Presentation::Natural,
    };
    let kitchen = FeatureMatrix {
        rows: kitchen_rows,
        spec: config.spec(RepresentationKind::KitchenSink),
        presented: Presentation::Natural,
    };
    black_box.check_finite()?;

    Ok(SyntheticPool { applicants, skills, black_box, rubric, kitchen, generator: config.clone() })
}

/// Closed-form first and second moments of the black-box
/// representation under the generator, plus the audit shift.
///
/// With gamma in {-1, +1}, v = A_eff * shift / 2 + c * e_ch, and
/// Var(gamma) = 4 p (1-p):
///
/// ```text
/// E[R]      = E[gamma] v
/// Var(R)    = Var(gamma) v v' + A_eff A_eff' + sigma_bb^2 I
/// Cov(R, Y) = Var(gamma) (w' shift / 2) v + A_eff w
/// s         = 2 c e_ch
/// ```
#[derive(Debug, Clone)]
pub struct AnalyticMoments {
    pub mean_r: DVector<f64>,
    pub var_r: DMatrix<f64>,
    pub cov_ry: DVector<f64>,
    /// Audit-induced representation shift s for the feature-space
    /// manipulation: mean feature difference between the male- and
    /// female-presenting variants.
    pub audit_shift: DVector<f64>,
    /// Population mean black-box difference, group m minus group f.
    pub group_mean_diff: DVector<f64>,
    pub mean_y: f64,
    pub var_y: f64,
}

pub fn analytic_moments(config: &GeneratorConfig) -> Result<AnalyticMoments> {
    config.validate()?;
    let mixing = config.effective_mixing();
    let shift = DVector::from_column_slice(&config.skill_shift);
    let weights = DVector::from_column_slice(&config.outcome_weights);
    let channel = config.gender_channel_index();

    let mean_gamma = 2.0 * config.p_male - 1.0;
    let var_gamma = 4.0 * config.p_male * (1.0 - config.p_male);

    let mut v = &mixing * (&shift * 0.5);
    v[channel] += config.gender_loading;

    let mean_r = &v * mean_gamma;
    let mut var_r = &v * v.transpose() * var_gamma + &mixing * mixing.transpose();
    for i in 0..config.bb_dim {
        var_r[(i, i)] += config.bb_noise_sd * config.bb_noise_sd;
    }

    let half_wshift = 0.5 * weights.dot(&shift);
    let cov_ry = &v * (var_gamma * half_wshift) + &mixing * &weights;

    let mut audit_shift = DVector::zeros(config.bb_dim);
    audit_shift[channel] = 2.0 * config.gender_loading;

    let mean_y = mean_gamma * half_wshift;
    let var_y = var_gamma * half_wshift * half_wshift
        + weights.norm_squared()
        + config.outcome_noise_sd * config.outcome_noise_sd;

    Ok(AnalyticMoments {
        mean_r,
        var_r,
        cov_ry,
        audit_shift,
        group_mean_diff: &v * 2.0,
        mean_y,
        var_y,
    })
}
