//! Gendered-language lexicon: surface forms with their neutral, male,
//! and female alternatives. Ships as a versioned data file; the
//! compiled-in copy is the default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalCategory {
    Pronoun,
    Title,
    Kinship,
    Occupation,
    Organization,
}

/// One substitution-table row. Tables carry cased variants explicitly
/// ("Her" and "her" are separate entries).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub surface: String,
    pub neutral: String,
    pub male: String,
    pub female: String,
    pub category: SignalCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub version: u32,
    pub entries: Vec<LexiconEntry>,
}

impl Lexicon {
    /// The compiled-in default lexicon.
    pub fn builtin() -> Lexicon {
        serde_json::from_str(include_str!("../../assets/lexicon.json"))
            .expect("builtin lexicon asset is valid")
    }

    pub fn from_json(json: &str) -> Result<Lexicon> {
        let lexicon: Lexicon = serde_json::from_str(json)?;
        lexicon.check()?;
        Ok(lexicon)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Lexicon> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn check(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidConfig("lexicon has no entries".into()));
        }
        for e in &self.entries {
            if e.surface.is_empty() {
                return Err(Error::InvalidConfig("lexicon entry with empty surface".into()));
            }
        }
        Ok(())
    }

    /// Entries sorted by surface byte length, longest first, for
    /// longest-match scanning.
    pub(crate) fn matcher_order(&self) -> Vec<&LexiconEntry> {
        let mut ordered: Vec<&LexiconEntry> = self.entries.iter().collect();
        ordered.sort_by(|a, b| {
            b.surface.len().cmp(&a.surface.len()).then_with(|| a.surface.cmp(&b.surface))
        });
        ordered
    }

    pub fn lookup(&self, surface: &str) -> Option<&LexiconEntry> {
        self.entries.iter().find(|e| e.surface == surface)
    }
}
