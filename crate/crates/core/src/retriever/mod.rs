//! Retrieval seam: an embedded Okapi BM25 index over a [`Corpus`], plus a
//! remote HTTP retriever speaking a small JSON protocol. The rollout engine
//! only sees the [`Retriever`] trait, so episodes run identically against
//! either backend.

mod bm25;
mod remote;

pub use bm25::{build_index, load_index, save_index, tokenize, Bm25Index, Bm25Params, RankedHit};
pub use remote::{RemoteRetriever, RemoteRetrieverConfig};

use crate::corpus::Corpus;

/// A passage returned through the retrieval seam, ready to be rendered into
/// an `<information>` block.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoredPassage {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum RetrieverError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("document ordinal {ordinal} out of range (doc_count {doc_count})")]
    OrdinalOutOfRange { ordinal: usize, doc_count: usize },
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("index file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported index version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("index references document \"{id}\" missing from the corpus")]
    MissingDocument { id: String },
    #[error("remote retriever transport error: {0}")]
    RemoteTransport(String),
    #[error("remote retriever returned HTTP {status}: {body}")]
    RemoteStatus { status: u16, body: String },
    #[error("remote retriever response could not be decoded: {0}")]
    RemoteDecode(String),
}

/// Anything that maps a query string to the top-`k` scored passages.
///
/// Implementations must be shareable across concurrently running episodes.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>, RetrieverError>;
}

/// BM25 retrieval over an in-memory corpus: resolves ranked index hits back
/// to full documents.
#[derive(Debug)]
pub struct Bm25Retriever {
    corpus: Corpus,
    index: Bm25Index,
}

impl Bm25Retriever {
    /// Pairs an index with the corpus it was built from. Every document id
    /// the index knows must resolve in the corpus.
    pub fn new(corpus: Corpus, index: Bm25Index) -> Result<Self, RetrieverError> {
        for id in index.doc_ids() {
            if corpus.get(id).is_none() {
                return Err(RetrieverError::MissingDocument { id: id.clone() });
            }
        }
        Ok(Bm25Retriever { corpus, index })
    }

    /// Builds the index on the spot. Convenience for tests and small corpora.
    pub fn from_corpus(corpus: Corpus, params: Bm25Params) -> Result<Self, RetrieverError> {
        let index = build_index(&corpus, params)?;
        Ok(Bm25Retriever { corpus, index })
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }
}

impl Retriever for Bm25Retriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<ScoredPassage>, RetrieverError> {
        let hits = self.index.retrieve(query, k);
        hits.into_iter()
            .map(|hit| {
                let doc = self
                    .corpus
                    .get(&hit.doc_id)
                    .ok_or_else(|| RetrieverError::MissingDocument {
                        id: hit.doc_id.clone(),
                    })?;
                Ok(ScoredPassage {
                    doc_id: doc.id.clone(),
                    title: doc.title.clone(),
                    text: doc.text.clone(),
                    score: hit.score,
                })
            })
            .collect()
    }
}
