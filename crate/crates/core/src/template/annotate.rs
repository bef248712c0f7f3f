//! Rule-based annotation, validation, and the repair loop.
//!
//! Annotation is a deterministic left-to-right longest-match scan over
//! the lexicon surfaces and the applicant's known name tokens, with
//! word boundaries on both sides. The validator re-runs the same
//! matcher over literal segments only, so annotate followed by
//! validate is a fixpoint.

use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicon, LexiconEntry};
use super::names::NameRecord;
use super::{
    GenderMarker, IssueKind, NameMarker, Segment, TemplateDocument, ValidationIssue, ETX, STX, US,
};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_REPAIR_ITERATIONS: usize = 3;

/// Corpus-level completion threshold: fewer than 0.005% of files may
/// remain unresolved after the repair loop.
pub const DEFAULT_UNRESOLVED_THRESHOLD: f64 = 5e-5;

/// The applicant's name tokens as they appear in documents.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KnownNames {
    pub first: String,
    pub last: String,
    pub handle: String,
    pub email: String,
}

impl KnownNames {
    /// Derives handle and email renderings from first and last name.
    pub fn new(first: &str, last: &str) -> Self {
        KnownNames {
            first: first.to_string(),
            last: last.to_string(),
            handle: format!("{}{}", first.to_lowercase(), last.to_lowercase()),
            email: format!("{}.{}@example.com", first.to_lowercase(), last.to_lowercase()),
        }
    }

    pub fn from_record(record: &NameRecord) -> Self {
        KnownNames {
            first: record.first.clone(),
            last: record.last.clone(),
            handle: record.handle(),
            email: record.email(),
        }
    }

    /// No name matching at all.
    pub fn none() -> Self {
        KnownNames::default()
    }

    /// (indicator type, token) pairs ordered longest first.
    fn candidates(&self) -> Vec<(&'static str, &str)> {
        let mut out: Vec<(&'static str, &str)> = [
            ("email address", self.email.as_str()),
            ("handle", self.handle.as_str()),
            ("first name", self.first.as_str()),
            ("last name", self.last.as_str()),
        ]
        .into_iter()
        .filter(|(_, s)| !s.is_empty())
        .collect();
        out.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.1.cmp(b.1)));
        out
    }
}

enum HitKind<'a> {
    Gender(&'a LexiconEntry),
    Name { indicator: &'static str },
}

struct Hit<'a> {
    len: usize,
    kind: HitKind<'a>,
}

fn boundary_ok(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    before.is_none_or(|c| !c.is_alphanumeric()) && after.is_none_or(|c| !c.is_alphanumeric())
}

fn find_hit<'a>(
    text: &str,
    pos: usize,
    lex_order: &[&'a LexiconEntry],
    names: &[(&'static str, &'a str)],
) -> Option<Hit<'a>> {
    let rest = &text[pos..];
    let mut best: Option<Hit<'a>> = None;
    for (indicator, token) in names {
        if rest.starts_with(token) && boundary_ok(text, pos, pos + token.len()) {
            best = Some(Hit { len: token.len(), kind: HitKind::Name { indicator } });
            break;
        }
    }
    for entry in lex_order {
        if rest.starts_with(entry.surface.as_str())
            && boundary_ok(text, pos, pos + entry.surface.len())
        {
            let len = entry.surface.len();
            // Name hits win ties.
            if best.as_ref().is_none_or(|b| len > b.len) {
                best = Some(Hit { len, kind: HitKind::Gender(entry) });
            }
            break;
        }
    }
    best
}

/// Wraps every covered gender signal and name token in a marker.
/// Source text containing the reserved control bytes is rejected;
/// there is no escape scheme.
pub fn annotate(document: &str, lexicon: &Lexicon, known: &KnownNames) -> Result<TemplateDocument> {
    if let Some((offset, byte)) =
        document.bytes().enumerate().find(|(_, b)| matches!(*b, STX | US | ETX)).map(|(i, b)| (i, b))
    {
        return Err(Error::ReservedControlByte { byte, offset });
    }
    let lex_order = lexicon.matcher_order();
    let names = known.candidates();

    let mut template = TemplateDocument::new();
    let mut literal_start = 0usize;
    let mut pos = 0usize;
    while pos < document.len() {
        if let Some(hit) = find_hit(document, pos, &lex_order, &names) {
            template.push_literal(&document[literal_start..pos]);
            let matched = &document[pos..pos + hit.len];
            match hit.kind {
                HitKind::Gender(entry) => template.push_gender(GenderMarker {
                    original: matched.to_string(),
                    neutral: entry.neutral.clone(),
                    male: entry.male.clone(),
                    female: entry.female.clone(),
                }),
                HitKind::Name { indicator } => template.push_name(NameMarker {
                    indicator_type: indicator.to_string(),
                    original: matched.to_string(),
                }),
            }
            pos += hit.len;
            literal_start = pos;
        } else {
            pos += document[pos..].chars().next().map_or(1, |c| c.len_utf8());
        }
    }
    template.push_literal(&document[literal_start..]);
    Ok(template)
}

fn marker_fields_ok(fields: &[&str]) -> bool {
    fields.iter().all(|f| !f.bytes().any(|b| matches!(b, STX | US | ETX)))
}

/// Re-runs annotation over literal segments (misses become issues),
/// checks marker well-formedness, and, when the source document is
/// supplied, verifies original-render fidelity. Positions are byte
/// offsets into the original rendering.
pub fn validate(
    template: &TemplateDocument,
    lexicon: &Lexicon,
    known: &KnownNames,
    source: Option<&str>,
) -> Vec<ValidationIssue> {
    let lex_order = lexicon.matcher_order();
    let names = known.candidates();
    let mut issues = Vec::new();
    let mut offset = 0usize;
    for seg in &template.segments {
        match seg {
            Segment::Literal(text) => {
                let mut pos = 0usize;
                while pos < text.len() {
                    if let Some(hit) = find_hit(text, pos, &lex_order, &names) {
                        let kind = match hit.kind {
                            HitKind::Gender(_) => IssueKind::MissedGenderSignal,
                            HitKind::Name { .. } => IssueKind::MissedName,
                        };
                        issues.push(ValidationIssue {
                            position: offset + pos,
                            kind,
                            detail: text[pos..pos + hit.len].to_string(),
                        });
                        pos += hit.len;
                    } else {
                        pos += text[pos..].chars().next().map_or(1, |c| c.len_utf8());
                    }
                }
                offset += text.len();
            }
            Segment::Gender(m) => {
                if m.original.is_empty()
                    || !marker_fields_ok(&[&m.original, &m.neutral, &m.male, &m.female])
                {
                    issues.push(ValidationIssue {
                        position: offset,
                        kind: IssueKind::MalformedMarker,
                        detail: "gender marker with empty original or control bytes".into(),
                    });
                }
                offset += m.original.len();
            }
            Segment::Name(m) => {
                if m.original.is_empty()
                    || m.indicator_type.is_empty()
                    || !marker_fields_ok(&[&m.indicator_type, &m.original])
                {
                    issues.push(ValidationIssue {
                        position: offset,
                        kind: IssueKind::MalformedMarker,
                        detail: "name marker with empty field or control bytes".into(),
                    });
                }
                offset += m.original.len();
            }
        }
    }
    if let Some(src) = source {
        let render = template.render_original();
        if render != src {
            let position = render
                .bytes()
                .zip(src.bytes())
                .position(|(a, b)| a != b)
                .unwrap_or_else(|| render.len().min(src.len()));
            issues.push(ValidationIssue {
                position,
                kind: IssueKind::OriginalMismatch,
                detail: "original rendering differs from the source document".into(),
            });
        }
    }
    issues
}

/// Wraps the missed signals listed in the issues by re-annotating the
/// literal segments. Malformed markers and render mismatches cannot be
/// repaired at this stage; they persist to the manual-review flag.
pub fn repair(
    template: &TemplateDocument,
    issues: &[ValidationIssue],
    lexicon: &Lexicon,
    known: &KnownNames,
) -> TemplateDocument {
    let has_missed = issues
        .iter()
        .any(|i| matches!(i.kind, IssueKind::MissedGenderSignal | IssueKind::MissedName));
    if !has_missed {
        return template.clone();
    }
    let mut out = TemplateDocument::new();
    for seg in &template.segments {
        match seg {
            Segment::Literal(text) => {
                let sub = annotate(text, lexicon, known)
                    .expect("literal segments never contain control bytes");
                for s in sub.segments {
                    match s {
                        Segment::Literal(t) => out.push_literal(&t),
                        Segment::Gender(m) => out.push_gender(m),
                        Segment::Name(m) => out.push_name(m),
                    }
                }
            }
            other => out.segments.push(other.clone()),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RepairLoopResult {
    pub template: TemplateDocument,
    pub iterations: usize,
    pub unresolved: Vec<ValidationIssue>,
    pub needs_manual_review: bool,
}

/// Validate-repair loop: repairs until the validator is clean or the
/// iteration budget is exhausted, in which case the document is
/// flagged for manual review. `validation_lexicon` may be stricter
/// than the repair lexicon, mirroring a second-opinion validator.
pub fn validate_and_repair(
    template: &TemplateDocument,
    repair_lexicon: &Lexicon,
    validation_lexicon: &Lexicon,
    known: &KnownNames,
    source: Option<&str>,
    max_iterations: usize,
) -> RepairLoopResult {
    let mut current = template.clone();
    let mut iterations = 0usize;
    loop {
        let issues = validate(&current, validation_lexicon, known, source);
        if issues.is_empty() {
            return RepairLoopResult {
                template: current,
                iterations,
                unresolved: Vec::new(),
                needs_manual_review: false,
            };
        }
        if iterations >= max_iterations {
            return RepairLoopResult {
                template: current,
                iterations,
                unresolved: issues,
                needs_manual_review: true,
            };
        }
        iterations += 1;
        current = repair(&current, &issues, repair_lexicon, known);
    }
}

/// Outcome of templating a whole corpus.
#[derive(Debug, Clone, Serialize)]
pub struct CorpusRunReport {
    pub total: usize,
    pub completed: usize,
    pub flagged: Vec<String>,
    pub unresolved_fraction: f64,
    pub within_threshold: bool,
}

/// Annotates and repair-loops every document; documents still failing
/// validation are flagged. The run is within threshold when the
/// flagged fraction stays below `threshold`.
pub fn process_corpus<'a, I>(
    documents: I,
    lexicon: &Lexicon,
    max_iterations: usize,
    threshold: f64,
) -> Result<CorpusRunReport>
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a KnownNames)>,
{
    let mut total = 0usize;
    let mut flagged = Vec::new();
    for (id, text, known) in documents {
        total += 1;
        let template = annotate(text, lexicon, known)?;
        let outcome =
            validate_and_repair(&template, lexicon, lexicon, known, Some(text), max_iterations);
        if outcome.needs_manual_review {
            flagged.push(id.to_string());
        }
    }
    if total == 0 {
        return Err(Error::InvalidConfig("corpus is empty".into()));
    }
    let unresolved_fraction = flagged.len() as f64 / total as f64;
    Ok(CorpusRunReport {
        total,
        completed: total - flagged.len(),
        flagged,
        unresolved_fraction,
        within_threshold: unresolved_fraction < threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::super::lexicon::SignalCategory;
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::builtin()
    }

    #[test]
    fn pronoun_pair_gets_standard_neutral_forms() {
        let t = annotate("She thanked her", &lex(), &KnownNames::none()).unwrap();
        let markers: Vec<&GenderMarker> = t.gender_markers().collect();
        assert_eq!(markers.len(), 2);
        assert_eq!(markers[0].original, "She");
        assert_eq!(markers[0].neutral, "They");
        assert_eq!(markers[1].original, "her");
        assert_eq!(markers[1].neutral, "their");
        assert_eq!(t.render_original(), "She thanked her");
    }

    #[test]
    fn title_gets_male_counterpart_and_neutral_honorific() {
        let t = annotate("Mrs. Sharma arrived.", &lex(), &KnownNames::none()).unwrap();
        let markers: Vec<&GenderMarker> = t.gender_markers().collect();
        assert_eq!(markers.len(), 1);
        assert_eq!(markers[0].original, "Mrs.");
        assert_eq!(markers[0].male, "Mr.");
        assert_eq!(markers[0].neutral, "Mx.");
    }

    #[test]
    fn empty_document_gives_empty_template() {
        let t = annotate("", &lex(), &KnownNames::none()).unwrap();
        assert!(t.segments.is_empty());
    }

    #[test]
    fn word_boundaries_prevent_inner_matches() {
        for text in ["the theory holds", "schoolteachers share", "hermit chemistry"] {
            let t = annotate(text, &lex(), &KnownNames::none()).unwrap();
            assert_eq!(t.gender_markers().count(), 0, "false positive in {text:?}");
            assert_eq!(t.render_original(), text);
        }
    }

    #[test]
    fn longest_match_wins() {
        // "herself" must not be split into "her" + "self".
        let t = annotate("she proved herself", &lex(), &KnownNames::none()).unwrap();
        let originals: Vec<&str> =
            t.gender_markers().map(|m| m.original.as_str()).collect();
        assert_eq!(originals, vec!["she", "herself"]);
    }

    #[test]
    fn known_names_become_name_markers() {
        let known = KnownNames::new("Priya", "Sharma");
        let text = "Contact Priya Sharma at priya.sharma@example.com or @priyasharma.";
        let t = annotate(text, &lex(), &known).unwrap();
        let names: Vec<(&str, &str)> =
            t.name_markers().map(|m| (m.indicator_type.as_str(), m.original.as_str())).collect();
        assert_eq!(
            names,
            vec![
                ("first name", "Priya"),
                ("last name", "Sharma"),
                ("email address", "priya.sharma@example.com"),
                ("handle", "priyasharma"),
            ]
        );
        assert_eq!(t.render_original(), text);
    }

    #[test]
    fn control_bytes_are_rejected_not_escaped() {
        let doc = "plain \x02 text";
        match annotate(doc, &lex(), &KnownNames::none()) {
            Err(Error::ReservedControlByte { byte, offset }) => {
                assert_eq!(byte, 0x02);
                assert_eq!(offset, 6);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn annotation_is_deterministic() {
        let known = KnownNames::new("Mei", "Lin");
        let text = "Mrs. Lin said she would send her notes to @meilin.";
        let a = annotate(text, &lex(), &known).unwrap();
        let b = annotate(text, &lex(), &known).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn annotate_then_validate_is_a_fixpoint() {
        let known = KnownNames::new("Emily", "Carter");
        let text = "She is the daughter of Mrs. Carter; reach Emily at emily.carter@example.com.";
        let t = annotate(text, &lex(), &known).unwrap();
        let issues = validate(&t, &lex(), &known, Some(text));
        assert!(issues.is_empty(), "unexpected issues: {issues:?}");
    }

    #[test]
    fn missed_pronoun_is_flagged_with_offset() {
        let mut t = TemplateDocument::new();
        t.push_literal("I recommend ");
        t.push_gender(GenderMarker::new("her", "their", "his", "her").unwrap());
        t.push_literal(" work and his dedication.");
        let issues = validate(&t, &lex(), &KnownNames::none(), None);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, IssueKind::MissedGenderSignal);
        assert_eq!(issues[0].detail, "his");
        // Offset in the original rendering: "I recommend her work and ".
        assert_eq!(issues[0].position, "I recommend her work and ".len());
    }

    #[test]
    fn original_mismatch_is_flagged() {
        let text = "She arrived早.";
        let mut t = annotate(text, &lex(), &KnownNames::none()).unwrap();
        // Corrupt a literal segment.
        if let Some(Segment::Literal(s)) = t.segments.last_mut() {
            *s = s.replace("arrived", "departed");
        }
        let issues = validate(&t, &lex(), &KnownNames::none(), Some(text));
        assert!(issues.iter().any(|i| i.kind == IssueKind::OriginalMismatch));
    }

    #[test]
    fn repair_fixes_missed_signals() {
        let mut t = TemplateDocument::new();
        t.push_literal("Her thesis impressed everyone; she defended it well.");
        let issues = validate(&t, &lex(), &KnownNames::none(), None);
        assert_eq!(issues.len(), 2);
        let repaired = repair(&t, &issues, &lex(), &KnownNames::none());
        let after = validate(&repaired, &lex(), &KnownNames::none(), None);
        assert!(after.is_empty());
        assert_eq!(repaired.render_original(), t.render_original());
    }

    #[test]
    fn repair_with_no_issues_returns_template_unchanged() {
        let t = annotate("She spoke.", &lex(), &KnownNames::none()).unwrap();
        let repaired = repair(&t, &[], &lex(), &KnownNames::none());
        assert_eq!(repaired, t);
    }

    #[test]
    fn unrepairable_document_is_flagged_after_max_iterations() {
        // The validation lexicon knows a token the repair lexicon
        // lacks, so the loop can never converge.
        let mut strict = lex();
        strict.entries.push(LexiconEntry {
            surface: "godmother".into(),
            neutral: "godparent".into(),
            male: "godfather".into(),
            female: "godmother".into(),
            category: SignalCategory::Kinship,
        });
        let relaxed = lex();
        let text = "Their godmother attended.";
        let t = annotate(text, &relaxed, &KnownNames::none()).unwrap();
        let outcome = validate_and_repair(
            &t,
            &relaxed,
            &strict,
            &KnownNames::none(),
            Some(text),
            DEFAULT_MAX_REPAIR_ITERATIONS,
        );
        assert!(outcome.needs_manual_review);
        assert_eq!(outcome.iterations, DEFAULT_MAX_REPAIR_ITERATIONS);
        assert!(!outcome.unresolved.is_empty());
    }

    #[test]
    fn repair_loop_converges_on_coverable_text() {
        let known = KnownNames::new("Ana", "Souza");
        let text = "Mrs. Souza said she and her sister would visit.";
        let t = annotate(text, &lex(), &known).unwrap();
        let outcome =
            validate_and_repair(&t, &lex(), &lex(), &known, Some(text), DEFAULT_MAX_REPAIR_ITERATIONS);
        assert!(!outcome.needs_manual_review);
        assert_eq!(outcome.iterations, 0);
    }
}
