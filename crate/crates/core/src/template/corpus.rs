//! Grammar-based synthetic recommendation letters with known
//! ground-truth annotations, standing in for a private document
//! corpus.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::annotate::KnownNames;
use super::names::{NamePool, NameRecord};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::types::GroupAttribute;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_docs: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { n_docs: 100, seed: 17 }
    }
}

/// A token the generator knows it emitted, with its byte span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedSignal {
    pub offset: usize,
    pub text: String,
    pub is_name: bool,
}

#[derive(Debug, Clone)]
pub struct CorpusDocument {
    pub id: String,
    pub text: String,
    pub country: String,
    pub gender: GroupAttribute,
    pub name: NameRecord,
    pub known: KnownNames,
    pub expected: Vec<ExpectedSignal>,
}

struct DocBuilder {
    text: String,
    expected: Vec<ExpectedSignal>,
}

impl DocBuilder {
    fn new() -> Self {
        DocBuilder { text: String::new(), expected: Vec::new() }
    }

    fn push(&mut self, s: &str) {
        self.text.push_str(s);
    }

    fn push_signal(&mut self, s: &str) {
        self.expected.push(ExpectedSignal { offset: self.text.len(), text: s.to_string(), is_name: false });
        self.text.push_str(s);
    }

    fn push_name(&mut self, s: &str) {
        self.expected.push(ExpectedSignal { offset: self.text.len(), text: s.to_string(), is_name: true });
        self.text.push_str(s);
    }
}

struct GenderForms {
    subj: &'static str,
    subj_cap: &'static str,
    poss: &'static str,
    poss_cap: &'static str,
    reflexive: &'static str,
    title: &'static str,
    kinship: &'static str,
    occupation: &'static str,
    organization: &'static str,
}

fn forms(gender: GroupAttribute) -> GenderForms {
    // Every surface here is covered by the builtin lexicon, and each
    // male/female pair shares a substitution triple, which is what the
    // document-space consistency tests rely on.
    match gender {
        GroupAttribute::Female => GenderForms {
            subj: "she",
            subj_cap: "She",
            poss: "her",
            poss_cap: "Her",
            reflexive: "herself",
            title: "Mrs.",
            kinship: "daughter",
            occupation: "waitress",
            organization: "sorority",
        },
        GroupAttribute::Male => GenderForms {
            subj: "he",
            subj_cap: "He",
            poss: "his",
            poss_cap: "His",
            reflexive: "himself",
            title: "Mr.",
            kinship: "son",
            occupation: "waiter",
            organization: "fraternity",
        },
    }
}

/// Generates seeded recommendation letters. Every gendered token and
/// name mention flows through the builder, so each document carries
/// its exact expected annotation spans.
pub fn generate_corpus(config: &CorpusConfig, pool: &NamePool) -> Result<Vec<CorpusDocument>> {
    if config.n_docs == 0 {
        return Err(Error::InvalidConfig("corpus size must be positive".into()));
    }
    let countries: Vec<String> = {
        let mut cs: Vec<String> = pool.entries.iter().map(|r| r.country.clone()).collect();
        cs.sort();
        cs.dedup();
        cs
    };
    let mut docs = Vec::with_capacity(config.n_docs);
    for i in 0..config.n_docs {
        let mut rng = stream_rng(config.seed, "corpus", &[i as u64]);
        let country = &countries[rng.random_range(0..countries.len())];
        let gender =
            if rng.random::<f64>() < 0.5 { GroupAttribute::Female } else { GroupAttribute::Male };
        let stratum = pool.stratum(Some(country), gender);
        if stratum.is_empty() {
            return Err(Error::EmptyNamePool(gender.code().to_string()));
        }
        let name = stratum[rng.random_range(0..stratum.len())].clone();
        let known = KnownNames::from_record(&name);
        let f = forms(gender);

        let mut b = DocBuilder::new();
        b.push("Dear Admissions Committee,\n\n");
        b.push("I am writing to recommend ");
        b.push_name(&known.first);
        b.push(" ");
        b.push_name(&known.last);
        b.push(" for your graduate program.");
        if rng.random::<f64>() < 0.8 {
            b.push(" ");
            b.push_signal(f.title);
            b.push(" ");
            b.push_name(&known.last);
            b.push(" joined my research group three years ago.");
        }
        if rng.random::<f64>() < 0.9 {
            b.push(" ");
            b.push_signal(f.subj_cap);
            b.push(" quickly became the strongest analyst on the team.");
        }
        if rng.random::<f64>() < 0.7 {
            b.push(" ");
            b.push_signal(f.poss_cap);
            b.push(" senior thesis on market design earned the department prize.");
        }
        if rng.random::<f64>() < 0.6 {
            b.push(" Colleagues often sought ");
            b.push_signal(f.poss);
            b.push(" feedback before submitting their own drafts.");
        }
        if rng.random::<f64>() < 0.5 {
            b.push(" Before graduate study, ");
            b.push_signal(f.subj);
            b.push(" worked as a ");
            b.push_signal(f.occupation);
            b.push(" to fund ");
            b.push_signal(f.poss);
            b.push(" tuition.");
        }
        if rng.random::<f64>() < 0.5 {
            b.push(" As the ");
            b.push_signal(f.kinship);
            b.push(" of two schoolteachers, ");
            b.push_signal(f.subj);
            b.push(" values public service deeply.");
        }
        if rng.random::<f64>() < 0.5 {
            b.push(" ");
            b.push_signal(f.subj_cap);
            b.push(" served as president of ");
            b.push_signal(f.poss);
            b.push(" ");
            b.push_signal(f.organization);
            b.push(" and organized its mentoring program.");
        }
        if rng.random::<f64>() < 0.6 {
            b.push(" ");
            b.push_signal(f.subj_cap);
            b.push(" proved ");
            b.push_signal(f.reflexive);
            b.push(" during a demanding summer practicum.");
        }
        if rng.random::<f64>() < 0.7 {
            b.push(" You can reach ");
            b.push_name(&known.first);
            b.push(" at ");
            b.push_name(&known.email);
            b.push(" or @");
            b.push_name(&known.handle);
            b.push(" with any questions.");
        }
        b.push("\n\nSincerely,\nProf. A. Whitfield");

        docs.push(CorpusDocument {
            id: format!("doc{i:04}"),
            text: b.text,
            country: country.clone(),
            gender,
            name,
            known,
            expected: b.expected,
        });
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::super::annotate::{annotate, validate};
    use super::super::lexicon::Lexicon;
    use super::super::Segment;
    use super::*;

    #[test]
    fn corpus_is_deterministic() {
        let pool = NamePool::builtin();
        let cfg = CorpusConfig { n_docs: 12, seed: 9 };
        let a = generate_corpus(&cfg, &pool).unwrap();
        let b = generate_corpus(&cfg, &pool).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.text, y.text);
            assert_eq!(x.expected, y.expected);
        }
    }

    #[test]
    fn expected_spans_match_document_text() {
        let pool = NamePool::builtin();
        let docs = generate_corpus(&CorpusConfig { n_docs: 30, seed: 3 }, &pool).unwrap();
        for doc in &docs {
            for sig in &doc.expected {
                assert_eq!(
                    &doc.text[sig.offset..sig.offset + sig.text.len()],
                    sig.text,
                    "bad span in {}",
                    doc.id
                );
            }
        }
    }

    #[test]
    fn annotation_covers_every_expected_signal() {
        let pool = NamePool::builtin();
        let lexicon = Lexicon::builtin();
        let docs = generate_corpus(&CorpusConfig { n_docs: 40, seed: 5 }, &pool).unwrap();
        for doc in &docs {
            let template = annotate(&doc.text, &lexicon, &doc.known).unwrap();
            // Build marker spans in original-render byte space.
            let mut spans = Vec::new();
            let mut offset = 0usize;
            for seg in &template.segments {
                let len = seg.original_len();
                if !matches!(seg, Segment::Literal(_)) {
                    spans.push((offset, offset + len));
                }
                offset += len;
            }
            for sig in &doc.expected {
                let end = sig.offset + sig.text.len();
                let covered = spans.iter().any(|&(s, e)| s <= sig.offset && end <= e);
                assert!(covered, "{}: token {:?} at {} not wrapped", doc.id, sig.text, sig.offset);
            }
            // Fixpoint: the annotator leaves nothing for the validator.
            let issues = validate(&template, &lexicon, &doc.known, Some(&doc.text));
            assert!(issues.is_empty(), "{}: {issues:?}", doc.id);
        }
    }
}
