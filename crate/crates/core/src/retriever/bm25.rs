//! Okapi BM25 scoring over an inverted index.
//!
//! Only document *text* is tokenized; titles travel alongside for display but
//! never influence term statistics. The non-negative (Lucene-style) idf
//! variant is used:
//!
//! ```text
//! idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(q, d) = sum over query tokens t of
//!     idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avg_len))
//! ```
//!
//! The sum runs over the query token *list*, so a token repeated in the query
//! contributes once per occurrence. Ranking sorts by score descending with
//! ties broken by document ordinal ascending, and drops zero-score documents,
//! so only documents sharing at least one token with the query ever appear.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrieverError;
use crate::corpus::Corpus;

/// File format version accepted by [`load_index`].
pub const INDEX_VERSION: u32 = 1;
const INDEX_FORMAT_TAG: &str = "queryloop-bm25-index";

/// BM25 free parameters. `k1` saturates term frequency, `b` controls length
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    fn validate(&self) -> Result<(), RetrieverError> {
        if !self.k1.is_finite() || self.k1 < 0.0 {
            return Err(RetrieverError::InvalidParams(format!(
                "k1 must be finite and >= 0, got {}",
                self.k1
            )));
        }
        if !self.b.is_finite() || !(0.0..=1.0).contains(&self.b) {
            return Err(RetrieverError::InvalidParams(format!(
                "b must be in [0, 1], got {}",
                self.b
            )));
        }
        Ok(())
    }
}

/// A ranked retrieval result. `rank` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedHit {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Inverted index: term -> postings of `(doc ordinal, term frequency)`,
/// sorted by ordinal. `BTreeMap` keeps serialization order deterministic so
/// identical inputs produce byte-identical index files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

/// Splits text into lowercased runs of Unicode alphanumeric characters.
/// Everything else (punctuation, hyphens, underscores) separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lower in ch.to_lowercase() {
                current.push(lower);
            }
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Indexes every document of a non-empty corpus.
pub fn build_index(corpus: &Corpus, params: Bm25Params) -> Result<Bm25Index, RetrieverError> {
    params.validate()?;
    if corpus.is_empty() {
        return Err(RetrieverError::EmptyCorpus);
    }

    let mut doc_ids = Vec::with_capacity(corpus.len());
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();

    for (ordinal, doc) in corpus.iter().enumerate() {
        let tokens = tokenize(&doc.text);
        doc_ids.push(doc.id.clone());
        doc_lengths.push(tokens.len() as u32);

        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        for token in tokens {
            *counts.entry(token).or_insert(0) += 1;
        }
        for (token, tf) in counts {
            postings.entry(token).or_default().push((ordinal as u32, tf));
        }
    }

    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    let avg_doc_length = total as f64 / doc_lengths.len() as f64;

    Ok(Bm25Index {
        params,
        doc_ids,
        doc_lengths,
        avg_doc_length,
        postings,
    })
}

impl Bm25Index {
    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    /// Document frequency of a term (0 for unseen terms).
    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_count() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_frequency(&self, term: &str, ordinal: u32) -> u32 {
        match self.postings.get(term) {
            Some(list) => match list.binary_search_by_key(&ordinal, |&(o, _)| o) {
                Ok(i) => list[i].1,
                Err(_) => 0,
            },
            None => 0,
        }
    }

    /// BM25 score of one document against a query token list. Tokens absent
    /// from the whole index contribute zero; an empty token list scores zero.
    pub fn score(&self, query_tokens: &[String], ordinal: usize) -> Result<f64, RetrieverError> {
        if ordinal >= self.doc_count() {
            return Err(RetrieverError::OrdinalOutOfRange {
                ordinal,
                doc_count: self.doc_count(),
            });
        }
        let dl = self.doc_lengths[ordinal] as f64;
        let Bm25Params { k1, b } = self.params;
        let norm = k1 * (1.0 - b + b * dl / self.avg_doc_length);

        let mut total = 0.0;
        for token in query_tokens {
            let df = self.doc_frequency(token);
            if df == 0 {
                continue;
            }
            let tf = self.term_frequency(token, ordinal as u32) as f64;
            if tf == 0.0 {
                continue;
            }
            total += self.idf(df) * tf * (k1 + 1.0) / (tf + norm);
        }
        Ok(total)
    }

    /// Top-`k` documents for a raw query string. Ties on score break toward
    /// the lower ordinal; zero-score documents are excluded entirely.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<RankedHit> {
        let query_tokens = tokenize(query);
        if k == 0 || query_tokens.is_empty() {
            return Vec::new();
        }

        // Accumulate per-document scores over the postings of each query
        // token; documents sharing no token with the query never enter the
        // map, which is exactly the zero-score exclusion rule.
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for token in &query_tokens {
            let Some(list) = self.postings.get(token) else {
                continue;
            };
            let df = list.len();
            let idf = self.idf(df);
            let Bm25Params { k1, b } = self.params;
            for &(ordinal, tf) in list {
                let dl = self.doc_lengths[ordinal as usize] as f64;
                let tf = tf as f64;
                let contribution =
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avg_doc_length));
                *scores.entry(ordinal).or_insert(0.0) += contribution;
            }
        }

        let mut ranked: Vec<(u32, f64)> = scores
            .into_iter()
            .filter(|&(_, score)| score > 0.0)
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        ranked
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (ordinal, score))| RankedHit {
                doc_id: self.doc_ids[ordinal as usize].clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }

    fn check_integrity(&self) -> Result<(), RetrieverError> {
        let n = self.doc_ids.len();
        if n == 0 {
            return Err(RetrieverError::Corrupt("index holds no documents".into()));
        }
        if self.doc_lengths.len() != n {
            return Err(RetrieverError::Corrupt(format!(
                "doc_lengths has {} entries for {} documents",
                self.doc_lengths.len(),
                n
            )));
        }
        let total: u64 = self.doc_lengths.iter().map(|&l| l as u64).sum();
        let expected_avg = total as f64 / n as f64;
        if (expected_avg - self.avg_doc_length).abs() > 1e-9 * expected_avg.max(1.0) {
            return Err(RetrieverError::Corrupt(format!(
                "avg_doc_length {} does not match doc_lengths (expected {})",
                self.avg_doc_length, expected_avg
            )));
        }
        for (term, list) in &self.postings {
            for &(ordinal, tf) in list {
                if ordinal as usize >= n {
                    return Err(RetrieverError::Corrupt(format!(
                        "term \"{term}\" references ordinal {ordinal} beyond doc_count {n}"
                    )));
                }
                if tf == 0 {
                    return Err(RetrieverError::Corrupt(format!(
                        "term \"{term}\" carries a zero term frequency"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// On-disk container. The version gate lets future layouts fail loudly
/// instead of mis-reading.
#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    index: Bm25Index,
}

/// Writes the index as a single deterministic JSON document: same corpus and
/// parameters always produce byte-identical files.
pub fn save_index(index: &Bm25Index, path: impl AsRef<Path>) -> Result<(), RetrieverError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| RetrieverError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let container = IndexFile {
        format: INDEX_FORMAT_TAG.to_string(),
        version: INDEX_VERSION,
        index: index.clone(),
    };
    serde_json::to_writer(BufWriter::new(file), &container)
        .map_err(|e| RetrieverError::Corrupt(format!("cannot serialize index: {e}")))
}

/// Reads an index back, refusing unknown versions and structurally
/// inconsistent files.
pub fn load_index(path: impl AsRef<Path>) -> Result<Bm25Index, RetrieverError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| RetrieverError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let container: IndexFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| RetrieverError::Corrupt(format!("unreadable index file: {e}")))?;
    if container.format != INDEX_FORMAT_TAG {
        return Err(RetrieverError::Corrupt(format!(
            "not a BM25 index file (format tag \"{}\")",
            container.format
        )));
    }
    if container.version != INDEX_VERSION {
        return Err(RetrieverError::UnsupportedVersion {
            found: container.version,
            expected: INDEX_VERSION,
        });
    }
    container.index.check_integrity()?;
    Ok(container.index)
}
