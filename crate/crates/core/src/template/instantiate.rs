//! Four-variant instantiation of templates with name-pool sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::annotate::{annotate, KnownNames};
use super::lexicon::Lexicon;
use super::names::{NamePool, NameRecord};
use super::{Segment, TemplateDocument};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::types::GroupAttribute;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Original,
    Neutral,
    Male,
    Female,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "original" => Ok(Variant::Original),
            "neutral" => Ok(Variant::Neutral),
            "male" => Ok(Variant::Male),
            "female" => Ok(Variant::Female),
            other => Err(Error::InvalidConfig(format!(
                "unknown variant '{other}' (expected original|neutral|male|female)"
            ))),
        }
    }

    pub fn from_group(group: GroupAttribute) -> Variant {
        match group {
            GroupAttribute::Male => Variant::Male,
            GroupAttribute::Female => Variant::Female,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Original => "original",
            Variant::Neutral => "neutral",
            Variant::Male => "male",
            Variant::Female => "female",
        };
        f.write_str(s)
    }
}

/// Everything name sampling needs: the pool, the applicant's country
/// and identity, and the sampling seed. A given (applicant, seed,
/// target gender) always samples the same name.
#[derive(Debug, Clone)]
pub struct InstantiationContext<'a> {
    pub name_pool: &'a NamePool,
    pub country: &'a str,
    pub applicant_id: &'a str,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Instantiated {
    pub text: String,
    /// The name sampled for male/female variants, when the template
    /// contains name markers.
    pub sampled_name: Option<NameRecord>,
    pub warnings: Vec<String>,
}

fn name_rendering(record: &NameRecord, indicator: &str) -> String {
    match indicator {
        "first name" => record.first.clone(),
        "last name" => record.last.clone(),
        "handle" => record.handle(),
        "email address" => record.email(),
        _ => record.full(),
    }
}

fn neutral_name_rendering(indicator: &str) -> &'static str {
    match indicator {
        "first name" => "FIRSTNAME",
        "last name" => "LASTNAME",
        "handle" => "FIRSTNAMELASTNAME",
        "email address" => "FIRSTNAME.LASTNAME@example.com",
        _ => "FIRSTNAME LASTNAME",
    }
}

fn sample_name(
    ctx: &InstantiationContext<'_>,
    gender: GroupAttribute,
    warnings: &mut Vec<String>,
) -> Result<NameRecord> {
    let mut stratum = ctx.name_pool.stratum(Some(ctx.country), gender);
    if stratum.is_empty() {
        warnings.push(format!(
            "no names for country '{}' and gender '{}'; falling back to the gender-only stratum",
            ctx.country, gender
        ));
        stratum = ctx.name_pool.stratum(None, gender);
    }
    if stratum.is_empty() {
        return Err(Error::EmptyNamePool(gender.code().to_string()));
    }
    let gender_tag = u64::from(gender == GroupAttribute::Male);
    let mut rng = stream_rng(ctx.seed, ctx.applicant_id, &[0x6e616d65, gender_tag]);
    Ok(stratum[rng.random_range(0..stratum.len())].clone())
}

/// Renders one variant of a template. Gender markers render the
/// variant's field. Name markers render the original text (original
/// variant), fixed FIRSTNAME/LASTNAME placeholders (neutral), or a
/// name sampled once per (applicant, seed) from the matching
/// (country, gender) stratum.
pub fn instantiate(
    template: &TemplateDocument,
    variant: Variant,
    ctx: &InstantiationContext<'_>,
) -> Result<Instantiated> {
    let mut warnings = Vec::new();
    let target_gender = match variant {
        Variant::Male => Some(GroupAttribute::Male),
        Variant::Female => Some(GroupAttribute::Female),
        _ => None,
    };
    let sampled_name = match target_gender {
        Some(g) if template.name_markers().next().is_some() => {
            Some(sample_name(ctx, g, &mut warnings)?)
        }
        _ => None,
    };

    let mut text = String::new();
    for seg in &template.segments {
        match seg {
            Segment::Literal(s) => text.push_str(s),
            Segment::Gender(m) => text.push_str(match variant {
                Variant::Original => &m.original,
                Variant::Neutral => &m.neutral,
                Variant::Male => &m.male,
                Variant::Female => &m.female,
            }),
            Segment::Name(m) => match (&variant, &sampled_name) {
                (Variant::Original, _) => text.push_str(&m.original),
                (Variant::Neutral, _) => text.push_str(neutral_name_rendering(&m.indicator_type)),
                (_, Some(record)) => text.push_str(&name_rendering(record, &m.indicator_type)),
                (_, None) => unreachable!("sampled name exists when name markers are present"),
            },
        }
    }
    Ok(Instantiated { text, sampled_name, warnings })
}

/// Document-space manipulation: annotate, then instantiate the target
/// gender's variant. This is the templating pipeline's realization of
/// the correspondence-experiment transformation.
#[derive(Debug, Clone)]
pub struct DocumentManipulation {
    pub lexicon: Lexicon,
    pub name_pool: NamePool,
    pub seed: u64,
}

impl DocumentManipulation {
    pub fn new(lexicon: Lexicon, name_pool: NamePool, seed: u64) -> Self {
        DocumentManipulation { lexicon, name_pool, seed }
    }

    pub fn transform(
        &self,
        document: &str,
        known: &KnownNames,
        target: GroupAttribute,
        country: &str,
        applicant_id: &str,
    ) -> Result<Instantiated> {
        let template = annotate(document, &self.lexicon, known)?;
        let ctx = InstantiationContext {
            name_pool: &self.name_pool,
            country,
            applicant_id,
            seed: self.seed,
        };
        instantiate(&template, Variant::from_group(target), &ctx)
    }

    /// Document-space redaction: the gender-neutral variant.
    pub fn redact(
        &self,
        document: &str,
        known: &KnownNames,
        country: &str,
        applicant_id: &str,
    ) -> Result<Instantiated> {
        let template = annotate(document, &self.lexicon, known)?;
        let ctx = InstantiationContext {
            name_pool: &self.name_pool,
            country,
            applicant_id,
            seed: self.seed,
        };
        instantiate(&template, Variant::Neutral, &ctx)
    }
}
