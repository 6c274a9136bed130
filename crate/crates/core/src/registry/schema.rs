use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::RegistryError;
use crate::crypto::VoterId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub label: String,
    /// Maximum plaintext bytes. Every ciphertext in this column has the same length.
    pub pad_len: usize,
    /// Column default for the public predicate; per-voter overrides win.
    #[serde(default)]
    pub public: bool,
}

impl Column {
    pub fn new(label: impl Into<String>, pad_len: usize, public: bool) -> Self {
        Self { label: label.into(), pad_len, public }
    }
}

/// Ordered column labels. The order is fixed for the life of a registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnSchema {
    columns: Vec<Column>,
}

impl<'de> Deserialize<'de> for ColumnSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            columns: Vec<Column>,
        }
        let raw = Raw::deserialize(d)?;
        ColumnSchema::new(raw.columns).map_err(serde::de::Error::custom)
    }
}

impl ColumnSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, RegistryError> {
        if columns.is_empty() {
            return Err(RegistryError::InvalidSchema("no columns".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if c.label.is_empty() {
                return Err(RegistryError::InvalidSchema("empty column label".into()));
            }
            if !seen.insert(c.label.as_str()) {
                return Err(RegistryError::InvalidSchema(format!("duplicate column {}", c.label)));
            }
            if c.pad_len == 0 {
                return Err(RegistryError::InvalidSchema(format!("column {} has zero pad length", c.label)));
            }
        }
        Ok(Self { columns })
    }

    /// Name, date of birth and address are sensitive; party and status are
    /// public. Pad lengths are sized for typical US registration rows.
    pub fn default_schema() -> Self {
        Self::new(vec![
            Column::new("name", 64, false),
            Column::new("dob", 10, false),
            Column::new("address", 96, false),
            Column::new("party", 16, true),
            Column::new("status", 12, true),
        ])
        .expect("static schema is valid")
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.label.as_str())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.label == label)
    }

    pub fn column(&self, label: &str) -> Result<&Column, RegistryError> {
        self.index_of(label).map(|i| &self.columns[i]).ok_or_else(|| RegistryError::UnknownColumn(label.into()))
    }
}

/// Decides which fields of which voters are stored in the clear.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicPredicate {
    /// Per-voter, per-column overrides, e.g. address-confidentiality voters
    /// with `{"address": false}`.
    #[serde(default)]
    pub overrides: BTreeMap<VoterId, BTreeMap<String, bool>>,
}

impl PublicPredicate {
    pub fn is_public(&self, schema: &ColumnSchema, voter: &VoterId, column: usize) -> bool {
        let col = &schema.columns[column];
        self.overrides.get(voter).and_then(|o| o.get(&col.label)).copied().unwrap_or(col.public)
    }

    pub fn set_override(&mut self, voter: VoterId, column: impl Into<String>, public: bool) {
        self.overrides.entry(voter).or_default().insert(column.into(), public);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThirdPartyRules {
    /// Columns granted for every voter.
    #[serde(default)]
    pub columns: BTreeSet<String>,
    /// Additional per-voter grants.
    #[serde(default)]
    pub voters: BTreeMap<VoterId, BTreeSet<String>>,
}

/// Which third parties may read which fields. Anything not granted is denied.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessPolicy {
    #[serde(default)]
    pub third_parties: BTreeMap<String, ThirdPartyRules>,
}

impl AccessPolicy {
    pub fn knows(&self, third_party: &str) -> bool {
        self.third_parties.contains_key(third_party)
    }

    pub fn allows(&self, third_party: &str, voter: &VoterId, column: &str) -> bool {
        self.third_parties.get(third_party).is_some_and(|r| {
            r.columns.contains(column) || r.voters.get(voter).is_some_and(|cs| cs.contains(column))
        })
    }

    pub fn grant_column(&mut self, third_party: impl Into<String>, column: impl Into<String>) {
        self.third_parties.entry(third_party.into()).or_default().columns.insert(column.into());
    }

    pub fn grant_voter(&mut self, third_party: impl Into<String>, voter: VoterId, column: impl Into<String>) {
        self.third_parties.entry(third_party.into()).or_default().voters.entry(voter).or_default().insert(column.into());
    }

    pub fn add_party(&mut self, third_party: impl Into<String>) {
        self.third_parties.entry(third_party.into()).or_default();
    }
}

/// Contents of `policy.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(default)]
    pub public: PublicPredicate,
    #[serde(default)]
    pub access: AccessPolicy,
}
