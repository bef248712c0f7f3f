//! Audit-material templating: a control-character marker format for
//! gender signals and applicant names, a rule-based annotator with a
//! validate/repair loop, four-variant instantiation with name pools,
//! and a synthetic document corpus with known ground truth.
//!
//! Wire format: a marker is `STX field (US field)* ETX` with
//! `STX = 0x02`, `US = 0x1F`, `ETX = 0x03`. Gender markers carry four
//! fields (original, neutral, male, female); name markers carry three
//! (the literal `NAME`, the indicator type, the original text).
//! Rendering every marker as its original field reproduces the source
//! document byte for byte.

mod annotate;
mod corpus;
mod instantiate;
mod lexicon;
mod names;

pub use annotate::{
    annotate, process_corpus, repair, validate, validate_and_repair, CorpusRunReport, KnownNames,
    RepairLoopResult, DEFAULT_MAX_REPAIR_ITERATIONS, DEFAULT_UNRESOLVED_THRESHOLD,
};
pub use corpus::{generate_corpus, CorpusConfig, CorpusDocument, ExpectedSignal};
pub use instantiate::{
    instantiate, DocumentManipulation, Instantiated, InstantiationContext, Variant,
};
pub use lexicon::{Lexicon, LexiconEntry, SignalCategory};
pub use names::{NamePool, NameRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STX: u8 = 0x02;
pub const US: u8 = 0x1F;
pub const ETX: u8 = 0x03;

/// Instruction texts for driving an external (hosted) annotator that
/// emits the same wire format. The rule-based annotator in this module
/// is the default and the test oracle; these assets document the
/// contract an external service must satisfy.
pub mod prompts {
    pub const TEMPLATING: &str = include_str!("../../assets/prompts/templating.txt");
    pub const VALIDATION: &str = include_str!("../../assets/prompts/validation.txt");
    pub const REPAIR: &str = include_str!("../../assets/prompts/repair.txt");
}

/// Pluggable interface for an external annotation service. Implementors
/// receive raw document text and return wire-format bytes.
pub trait ExternalAnnotator {
    fn build_template(&self, document: &str) -> Result<String>;
    fn validate_template(&self, document: &str, template: &str) -> Result<Vec<String>>;
    fn repair_template(&self, template: &str, issues: &[String]) -> Result<String>;
}

fn field_ok(s: &str) -> bool {
    !s.bytes().any(|b| b == STX || b == US || b == ETX)
}

/// A wrapped gender signal with its three alternatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderMarker {
    pub original: String,
    pub neutral: String,
    pub male: String,
    pub female: String,
}

impl GenderMarker {
    pub fn new(original: &str, neutral: &str, male: &str, female: &str) -> Result<Self> {
        for f in [original, neutral, male, female] {
            if !field_ok(f) {
                return Err(Error::InvalidConfig(
                    "marker fields must not contain control bytes".into(),
                ));
            }
        }
        Ok(GenderMarker {
            original: original.into(),
            neutral: neutral.into(),
            male: male.into(),
            female: female.into(),
        })
    }
}

/// A wrapped name indicator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameMarker {
    /// e.g. "first name", "last name", "handle", "email address".
    pub indicator_type: String,
    pub original: String,
}

impl NameMarker {
    pub fn new(indicator_type: &str, original: &str) -> Result<Self> {
        if !field_ok(indicator_type) || !field_ok(original) {
            return Err(Error::InvalidConfig(
                "marker fields must not contain control bytes".into(),
            ));
        }
        Ok(NameMarker { indicator_type: indicator_type.into(), original: original.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Literal(String),
    Gender(GenderMarker),
    Name(NameMarker),
}

impl Segment {
    /// Bytes this segment contributes to the original rendering.
    pub fn original_len(&self) -> usize {
        match self {
            Segment::Literal(s) => s.len(),
            Segment::Gender(m) => m.original.len(),
            Segment::Name(m) => m.original.len(),
        }
    }
}

/// A parsed document: literal text interleaved with markers.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TemplateDocument {
    pub segments: Vec<Segment>,
}

impl TemplateDocument {
    pub fn new() -> Self {
        TemplateDocument { segments: Vec::new() }
    }

    /// Appends literal text, merging with a preceding literal segment
    /// so templates stay in normal form (no empty or adjacent
    /// literals).
    pub fn push_literal(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(Segment::Literal(prev)) = self.segments.last_mut() {
            prev.push_str(text);
        } else {
            self.segments.push(Segment::Literal(text.to_string()));
        }
    }

    pub fn push_gender(&mut self, marker: GenderMarker) {
        self.segments.push(Segment::Gender(marker));
    }

    pub fn push_name(&mut self, marker: NameMarker) {
        self.segments.push(Segment::Name(marker));
    }

    /// Renders every marker as its original field, reproducing the
    /// source document byte for byte.
    pub fn render_original(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Gender(m) => out.push_str(&m.original),
                Segment::Name(m) => out.push_str(&m.original),
            }
        }
        out
    }

    pub fn gender_markers(&self) -> impl Iterator<Item = &GenderMarker> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Gender(m) => Some(m),
            _ => None,
        })
    }

    pub fn name_markers(&self) -> impl Iterator<Item = &NameMarker> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Name(m) => Some(m),
            _ => None,
        })
    }
}

/// Serializes a template to the wire format.
pub fn serialize_template(template: &TemplateDocument) -> String {
    let mut out = String::new();
    let stx = STX as char;
    let us = US as char;
    let etx = ETX as char;
    for seg in &template.segments {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Gender(m) => {
                out.push(stx);
                out.push_str(&m.original);
                out.push(us);
                out.push_str(&m.neutral);
                out.push(us);
                out.push_str(&m.male);
                out.push(us);
                out.push_str(&m.female);
                out.push(etx);
            }
            Segment::Name(m) => {
                out.push(stx);
                out.push_str("NAME");
                out.push(us);
                out.push_str(&m.indicator_type);
                out.push(us);
                out.push_str(&m.original);
                out.push(etx);
            }
        }
    }
    out
}

/// Parses wire-format bytes into a template.
///
/// Unterminated markers, nested STX, stray control bytes in literal
/// text, and wrong field arity are all malformed-marker errors carrying
/// the byte offset of the offending marker.
pub fn parse_template(input: &str) -> Result<TemplateDocument> {
    let bytes = input.as_bytes();
    let mut template = TemplateDocument::new();
    let mut literal_start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        match bytes[i] {
            STX => {
                template.push_literal(&input[literal_start..i]);
                let marker_start = i;
                let mut fields: Vec<&str> = Vec::new();
                let mut field_start = i + 1;
                let mut j = i + 1;
                loop {
                    if j >= bytes.len() {
                        return Err(Error::MalformedMarker {
                            offset: marker_start,
                            detail: "unterminated marker (missing ETX)".into(),
                        });
                    }
                    match bytes[j] {
                        STX => {
                            return Err(Error::MalformedMarker {
                                offset: j,
                                detail: "nested STX inside marker".into(),
                            });
                        }
                        US => {
                            fields.push(&input[field_start..j]);
                            field_start = j + 1;
                            j += 1;
                        }
                        ETX => {
                            fields.push(&input[field_start..j]);
                            break;
                        }
                        _ => j += 1,
                    }
                }
                match fields.as_slice() {
                    [original, neutral, male, female] => {
                        template.push_gender(GenderMarker {
                            original: (*original).into(),
                            neutral: (*neutral).into(),
                            male: (*male).into(),
                            female: (*female).into(),
                        });
                    }
                    [tag, indicator, original] if *tag == "NAME" => {
                        template.push_name(NameMarker {
                            indicator_type: (*indicator).into(),
                            original: (*original).into(),
                        });
                    }
                    other => {
                        return Err(Error::MalformedMarker {
                            offset: marker_start,
                            detail: format!(
                                "expected 4 gender fields or a NAME marker with 3, got {} fields",
                                other.len()
                            ),
                        });
                    }
                }
                i = j + 1;
                literal_start = i;
            }
            US | ETX => {
                return Err(Error::MalformedMarker {
                    offset: i,
                    detail: format!("control byte {:#04x} outside marker", bytes[i]),
                });
            }
            _ => i += 1,
        }
    }
    template.push_literal(&input[literal_start..]);
    Ok(template)
}

/// Issue kinds reported by the validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    MissedGenderSignal,
    MissedName,
    MalformedMarker,
    OriginalMismatch,
}

/// A validation finding at a byte offset of the original rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub position: usize,
    pub kind: IssueKind,
    pub detail: String,
}
