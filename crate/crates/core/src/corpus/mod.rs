//! Datasets: claim/evidence pairs, dataset configurations, test-set
//! reservation, few-shot sampling and BM25 evidence retrieval.

mod bm25;
mod io;
mod split;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bm25::{retrieve_evidence, Bm25Index, Bm25Params, ClaimQuery, Document};
pub use io::{load_dataset, load_pairs, load_raw_records, resolve_evidence, write_pairs, RawRecord};
pub use split::{
    build_splits, sample_few_shot, subsample, FewShotSample, SplitBundle, SplitManifest, MANIFEST_FILE, TEST_FILE, TRAIN_FILE,
};

/// Veracity label. The declaration order is the canonical class order used
/// for tie-breaking and column layout everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "SUPPORTS")]
    Supports,
    #[serde(rename = "REFUTES")]
    Refutes,
    #[serde(rename = "NOT_ENOUGH_INFO")]
    NotEnoughInfo,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Supports, Label::Refutes, Label::NotEnoughInfo];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supports => "SUPPORTS",
            Label::Refutes => "REFUTES",
            Label::NotEnoughInfo => "NOT_ENOUGH_INFO",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SUPPORTS" => Ok(Label::Supports),
            "REFUTES" => Ok(Label::Refutes),
            "NOT_ENOUGH_INFO" => Ok(Label::NotEnoughInfo),
            other => Err(Error::Validation(format!("unknown label '{other}'"))),
        }
    }
}

/// One claim with one piece of evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimEvidencePair {
    pub id: String,
    pub claim: String,
    pub evidence: String,
    pub label: Option<Label>,
}

impl ClaimEvidencePair {
    pub fn new(
        id: impl Into<String>,
        claim: impl Into<String>,
        evidence: impl Into<String>,
        label: Option<Label>,
    ) -> Result<Self> {
        let pair = ClaimEvidencePair {
            id: id.into(),
            claim: claim.into(),
            evidence: evidence.into(),
            label,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("pair with empty id".into()));
        }
        if self.claim.trim().is_empty() {
            return Err(Error::Validation(format!("pair '{}' has an empty claim", self.id)));
        }
        if self.evidence.trim().is_empty() {
            return Err(Error::Validation(format!("pair '{}' has empty evidence", self.id)));
        }
        Ok(())
    }

    /// The same pair with its label removed.
    pub fn unlabeled(&self) -> Self {
        ClaimEvidencePair {
            label: None,
            ..self.clone()
        }
    }

    pub fn require_label(&self) -> Result<Label> {
        self.label
            .ok_or_else(|| Error::Validation(format!("pair '{}' has no label", self.id)))
    }
}

/// The four dataset configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetName {
    #[serde(rename = "FEVER")]
    Fever,
    #[serde(rename = "cFEVER")]
    ClimateFever,
    #[serde(rename = "SciFact_oracle")]
    SciFactOracle,
    #[serde(rename = "SciFact_retrieved")]
    SciFactRetrieved,
}

impl DatasetName {
    pub const ALL: [DatasetName; 4] = [
        DatasetName::Fever,
        DatasetName::ClimateFever,
        DatasetName::SciFactOracle,
        DatasetName::SciFactRetrieved,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Fever => "FEVER",
            DatasetName::ClimateFever => "cFEVER",
            DatasetName::SciFactOracle => "SciFact_oracle",
            DatasetName::SciFactRetrieved => "SciFact_retrieved",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetName::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown dataset '{s}' (expected FEVER, cFEVER, SciFact_oracle or SciFact_retrieved)"
                ))
            })
    }
}

pub const DEFAULT_TEST_PER_CLASS: usize = 150;
pub const DEFAULT_SPLIT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: DatasetName,
    pub test_per_class: usize,
    pub split_seed: u64,
}

impl DatasetConfig {
    pub fn new(name: DatasetName) -> Self {
        DatasetConfig {
            name,
            test_per_class: DEFAULT_TEST_PER_CLASS,
            split_seed: DEFAULT_SPLIT_SEED,
        }
    }
}

/// Per-class counts in canonical label order. Unlabeled pairs are ignored.
pub fn label_histogram(pairs: &[ClaimEvidencePair]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for label in pairs.iter().filter_map(|p| p.label) {
        counts[label.index()] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_order_and_names() {
        assert!(Label::Supports < Label::Refutes);
        assert!(Label::Refutes < Label::NotEnoughInfo);
        for label in Label::ALL {
            assert_eq!(label.as_str().parse::<Label>().unwrap(), label);
            assert_eq!(Label::from_index(label.index()), Some(label));
        }
        let json = serde_json::to_string(&Label::NotEnoughInfo).unwrap();
        assert_eq!(json, "\"NOT_ENOUGH_INFO\"");
    }

    #[test]
    fn misspelled_label_is_rejected() {
        let err = "SUPPORT".parse::<Label>().unwrap_err();
        assert!(err.to_string().contains("SUPPORT"));
    }

    #[test]
    fn pair_rejects_blank_fields() {
        assert!(ClaimEvidencePair::new("a", "  ", "ev", None).is_err());
        assert!(ClaimEvidencePair::new("a", "claim", "\n", None).is_err());
        assert!(ClaimEvidencePair::new("", "claim", "ev", None).is_err());
        assert!(ClaimEvidencePair::new("a", "claim", "ev", Some(Label::Refutes)).is_ok());
    }

    #[test]
    fn dataset_names_parse() {
        assert_eq!("scifact_oracle".parse::<DatasetName>().unwrap(), DatasetName::SciFactOracle);
        assert_eq!("cFEVER".parse::<DatasetName>().unwrap(), DatasetName::ClimateFever);
        assert!("scifact".parse::<DatasetName>().is_err());
    }
}
