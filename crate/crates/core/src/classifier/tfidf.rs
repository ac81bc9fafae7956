//! TF-IDF features over an explicit vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::tokenize::tokenize;
use crate::error::{Error, Result};

/// Sparse vector as `(feature index, value)` pairs sorted by index.
pub type SparseVec = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    document_frequency: Vec<usize>,
    n_documents: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    document_frequency: Vec<usize>,
    n_documents: usize,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(repr: VocabularyRepr) -> Self {
        let index = repr.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens: repr.tokens,
            index,
            document_frequency: repr.document_frequency,
            n_documents: repr.n_documents,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            document_frequency: v.document_frequency,
            n_documents: v.n_documents,
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_documents(&self) -> usize {
        self.n_documents
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn document_frequency(&self, index: usize) -> usize {
        self.document_frequency[index]
    }

    /// `ln((1 + N) / (1 + df)) + 1`
    pub fn idf(&self, index: usize) -> f64 {
        let n = self.n_documents as f64;
        let df = self.document_frequency[index] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.tokens.len() != self.document_frequency.len() {
            return Err(Error::validation("vocabulary token and frequency lengths differ"));
        }
        if self.document_frequency.iter().any(|&df| df > self.n_documents) {
            return Err(Error::validation("document frequency exceeds document count"));
        }
        Ok(())
    }
}

/// Build a vocabulary from `documents`. Token indices follow lexicographic
/// token order.
pub fn fit_vocabulary<S: AsRef<str>>(documents: &[S]) -> Result<Vocabulary> {
    if documents.is_empty() {
        return Err(Error::validation("cannot fit a vocabulary on an empty corpus"));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in documents {
        let unique: BTreeSet<String> = tokenize(doc.as_ref()).into_iter().collect();
        for token in unique {
            *df.entry(token).or_insert(0) += 1;
        }
    }
    if df.is_empty() {
        return Err(Error::validation("corpus produced an empty vocabulary"));
    }
    let (tokens, document_frequency): (Vec<_>, Vec<_>) = df.into_iter().unzip();
    Ok(VocabularyRepr {
        tokens,
        document_frequency,
        n_documents: documents.len(),
    }
    .into())
}

/// L2-normalized TF-IDF vector with raw counts as term frequency. Tokens not
/// in the vocabulary are ignored; text with no known token maps to the empty
/// (zero) vector.
pub fn featurize(vocab: &Vocabulary, text: &str) -> SparseVec {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for token in tokenize(text) {
        if let Some(i) = vocab.index_of(&token) {
            *counts.entry(i).or_insert(0.0) += 1.0;
        }
    }
    let mut v: SparseVec = counts.into_iter().map(|(i, tf)| (i, tf * vocab.idf(i))).collect();
    let norm = v.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, x) in &mut v {
            *x /= norm;
        }
    }
    v
}
