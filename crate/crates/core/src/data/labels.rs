use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, dataset-scoped stance labels. Index order is the class index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<String>);

/// The label schemes of the five benchmark datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelScheme {
    /// Mtse, Mccq
    FavorAgainstNeutral,
    /// Mwtwt
    SupportRefuteCommentUnrelated,
    /// Mruc, Mtwq
    SupportOpposeNeutral,
}

impl LabelScheme {
    pub fn labels(self) -> LabelSet {
        let names: &[&str] = match self {
            Self::FavorAgainstNeutral => &["favor", "against", "neutral"],
            Self::SupportRefuteCommentUnrelated => &["support", "refute", "comment", "unrelated"],
            Self::SupportOpposeNeutral => &["support", "oppose", "neutral"],
        };
        LabelSet::new(names.iter().map(|s| s.to_string()).collect()).expect("distinct")
    }
}

impl FromStr for LabelScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "favor-against-neutral" => Ok(Self::FavorAgainstNeutral),
            "support-refute-comment-unrelated" => Ok(Self::SupportRefuteCommentUnrelated),
            "support-oppose-neutral" => Ok(Self::SupportOpposeNeutral),
            other => Err(Error::Config(format!("unknown label scheme `{other}`"))),
        }
    }
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Invalid("empty label set".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::Invalid(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn name(&self, index: usize) -> &str {
        &self.0[index]
    }

    pub fn index(&self, label: &str) -> Result<usize> {
        self.0
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel {
                label: label.to_string(),
                label_set: self.0.clone(),
            })
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("/"))
    }
}
