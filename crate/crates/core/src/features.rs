//! Feature extraction: token counting over contract source plus an
//! impact-severity encoding, and the deterministic train/test split.
//!
//! Feature layout is `[token counts (vocabulary order) | impact
//! histogram (levels 0..4) | max impact code]`. Vulnerability names and
//! confidence levels are deliberately not features.

use crate::corpus::{ContractRecord, Severity};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("record has no analysis output to encode")]
    MissingAnalysis,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowercase the text and return maximal runs of `[a-z0-9_]` at least
/// two characters long, in order of occurrence.
pub fn tokenize(source: &str) -> Vec<String> {
    let lower = source.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in lower.chars().chain(std::iter::once(' ')) {
        if matches!(ch, 'a'..='z' | '0'..='9' | '_') {
            current.push(ch);
        } else if !current.is_empty() {
            if current.len() >= 2 {
                tokens.push(std::mem::take(&mut current));
            } else {
                current.clear();
            }
        }
    }
    tokens
}

/// Token-to-index bijection; tokens sorted lexicographically, indices
/// dense from zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_sorted(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Tokens in index order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Persist as a sorted token list, one per line.
    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let mut text = String::new();
        for token in &self.tokens {
            text.push_str(token);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary, FeatureError> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Ok(Vocabulary::from_sorted(tokens))
    }
}

/// Union of tokens over all record sources, sorted and densely indexed.
/// Independent of corpus order.
pub fn build_vocabulary(records: &[ContractRecord]) -> Vocabulary {
    let mut set = BTreeSet::new();
    for record in records {
        set.extend(tokenize(&record.source));
    }
    Vocabulary::from_sorted(set.into_iter().collect())
}

/// Counts per severity level in code order 0..4, then the highest code
/// present (0 for an empty list).
pub fn encode_impact(impacts: &[Severity]) -> [u32; 6] {
    let mut out = [0u32; 6];
    for s in impacts {
        out[s.code()] += 1;
    }
    out[5] = impacts
        .iter()
        .map(|s| s.code() as u32)
        .max()
        .unwrap_or(0);
    out
}

/// One training row: token counts in vocabulary order, the six impact
/// features, and the ground-truth label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub token_counts: Vec<u32>,
    pub impact_features: [u32; 6],
    pub label: bool,
}

impl FeatureVector {
    pub fn width(&self) -> usize {
        self.token_counts.len() + 6
    }

    /// Concatenated numeric row in feature-index order.
    pub fn dense(&self) -> Vec<f64> {
        self.token_counts
            .iter()
            .chain(self.impact_features.iter())
            .map(|&c| c as f64)
            .collect()
    }
}

/// Encode one analyzed record against a vocabulary. Out-of-vocabulary
/// tokens are ignored. Records the analyzer never produced output for
/// cannot be encoded.
pub fn vectorize(record: &ContractRecord, vocab: &Vocabulary) -> Result<FeatureVector, FeatureError> {
    let impacts = record.impacts.as_ref().ok_or(FeatureError::MissingAnalysis)?;
    let mut token_counts = vec![0u32; vocab.len()];
    for token in tokenize(&record.source) {
        if let Some(i) = vocab.index_of(&token) {
            token_counts[i] += 1;
        }
    }
    Ok(FeatureVector {
        token_counts,
        impact_features: encode_impact(impacts),
        label: record.malicious,
    })
}

/// Seeded shuffle then prefix/suffix split. The train side gets exactly
/// `floor(n * train_fraction)` items; together the sides are a
/// permutation of the input.
pub fn train_test_split<T>(items: Vec<T>, train_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    assert!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train_fraction must be in (0, 1), got {train_fraction}"
    );
    let mut items = items;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
    let n_train = (items.len() as f64 * train_fraction).floor() as usize;
    let test = items.split_off(n_train);
    (items, test)
}
