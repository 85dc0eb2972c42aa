use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TokenizedText;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("idf is undefined on an empty collection")]
    DomainError,
}

/// Which IDF formula to apply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdfVariant {
    /// `ln((N + 1) / (df + 1)) + 1`
    #[default]
    Smoothed,
    /// `ln(N / max(df, 1))`
    Raw,
}

impl std::str::FromStr for IdfVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smoothed" => Ok(IdfVariant::Smoothed),
            "raw" => Ok(IdfVariant::Raw),
            other => Err(format!("unknown idf variant `{other}` (expected smoothed|raw)")),
        }
    }
}

/// Document frequencies over a collection of texts. Stopwords are not counted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermStats {
    pub doc_count: u64,
    pub df: BTreeMap<String, u64>,
    pub total_terms: u64,
}

impl TermStats {
    pub fn build<'a, I>(docs: I) -> Self
    where
        I: IntoIterator<Item = &'a TokenizedText>,
    {
        let mut stats = TermStats::default();
        for doc in docs {
            stats.add(doc);
        }
        stats
    }

    pub fn add(&mut self, doc: &TokenizedText) {
        self.doc_count += 1;
        let mut seen = HashSet::new();
        for stem in doc.content_stems() {
            self.total_terms += 1;
            if seen.insert(stem) {
                *self.df.entry(stem.to_string()).or_default() += 1;
            }
        }
    }

    /// Associative merge of two partial statistics.
    pub fn merge(mut self, other: TermStats) -> TermStats {
        self.doc_count += other.doc_count;
        self.total_terms += other.total_terms;
        for (k, v) in other.df {
            *self.df.entry(k).or_default() += v;
        }
        self
    }

    pub fn df(&self, stem: &str) -> u64 {
        self.df.get(stem).copied().unwrap_or(0)
    }

    pub fn idf(&self, stem: &str) -> Result<f64, TextError> {
        self.idf_with(stem, IdfVariant::Smoothed)
    }

    pub fn idf_with(&self, stem: &str, variant: IdfVariant) -> Result<f64, TextError> {
        if self.doc_count == 0 {
            return Err(TextError::DomainError);
        }
        let n = self.doc_count as f64;
        let df = self.df(stem) as f64;
        Ok(match variant {
            IdfVariant::Smoothed => ((n + 1.0) / (df + 1.0)).ln() + 1.0,
            IdfVariant::Raw => (n / df.max(1.0)).ln(),
        })
    }
}
