//! Country- and gender-stratified name pools.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::GroupAttribute;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameRecord {
    pub country: String,
    pub gender: GroupAttribute,
    pub first: String,
    pub last: String,
}

impl NameRecord {
    pub fn full(&self) -> String {
        format!("{} {}", self.first, self.last)
    }

    pub fn handle(&self) -> String {
        format!("{}{}", self.first.to_lowercase(), self.last.to_lowercase())
    }

    pub fn email(&self) -> String {
        format!("{}.{}@example.com", self.first.to_lowercase(), self.last.to_lowercase())
    }
}

/// Name pool loaded from CSV rows of (country, gender, first, last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamePool {
    pub entries: Vec<NameRecord>,
}

impl NamePool {
    /// The compiled-in synthetic pool.
    pub fn builtin() -> NamePool {
        Self::from_csv_str(include_str!("../../assets/name_pool.csv"))
            .expect("builtin name pool asset is valid")
    }

    pub fn from_csv_str(data: &str) -> Result<NamePool> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(data.as_bytes());
        let mut entries = Vec::new();
        for row in reader.records() {
            let row = row?;
            if row.len() != 4 {
                return Err(Error::InvalidConfig(format!(
                    "name pool rows need 4 columns, got {}",
                    row.len()
                )));
            }
            entries.push(NameRecord {
                country: row[0].to_string(),
                gender: GroupAttribute::parse(&row[1])?,
                first: row[2].to_string(),
                last: row[3].to_string(),
            });
        }
        if entries.is_empty() {
            return Err(Error::InvalidConfig("name pool is empty".into()));
        }
        Ok(NamePool { entries })
    }

    pub fn from_path(path: &std::path::Path) -> Result<NamePool> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    /// Entries for a (country, gender) stratum; `None` country means
    /// the gender-only stratum.
    pub fn stratum(&self, country: Option<&str>, gender: GroupAttribute) -> Vec<&NameRecord> {
        self.entries
            .iter()
            .filter(|r| r.gender == gender && country.is_none_or(|c| r.country == c))
            .collect()
    }
}
