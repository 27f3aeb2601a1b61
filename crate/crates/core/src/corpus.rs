//! Passage corpus: documents with stable string ids, loaded from a
//! line-delimited JSON file (one object per line, blank lines skipped).
//!
//! Each record carries `id`, `title`, and `text`. Unknown extra fields are
//! ignored with a warning so corpora exported from richer pipelines still
//! load. Duplicate ids and empty `id`/`text` fields are hard errors: the
//! retriever addresses documents by ordinal and resolves hits back through
//! the id, so silent duplicates would corrupt retrieval results.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One retrievable passage. `title` may be empty; `id` and `text` may not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// An ordered document collection with id-based lookup.
///
/// Ordinal order is load order, and it is what the BM25 index uses for
/// tie-breaking, so it must stay stable across save/load round trips.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate document id \"{id}\" (line {line})")]
    DuplicateId { id: String, line: usize },
}

impl Corpus {
    /// Builds a corpus from documents already in memory, running the same
    /// integrity checks as the file loader. Document order is preserved.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus {
            documents: Vec::with_capacity(documents.len()),
            by_id: HashMap::with_capacity(documents.len()),
        };
        for (i, doc) in documents.into_iter().enumerate() {
            corpus.push(doc, i + 1)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, doc: Document, line: usize) -> Result<(), CorpusError> {
        if doc.id.is_empty() {
            return Err(CorpusError::Parse {
                line,
                reason: "document id is empty".into(),
            });
        }
        if doc.text.trim().is_empty() {
            return Err(CorpusError::Parse {
                line,
                reason: format!("document \"{}\" has empty text", doc.id),
            });
        }
        if self.by_id.contains_key(&doc.id) {
            return Err(CorpusError::DuplicateId { id: doc.id, line });
        }
        self.by_id.insert(doc.id.clone(), self.documents.len());
        self.documents.push(doc);
        Ok(())
    }

    /// Looks a document up by id.
    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    /// Returns the document at a load-order ordinal.
    pub fn doc(&self, ordinal: usize) -> Option<&Document> {
        self.documents.get(ordinal)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter()
    }
}

/// Loads a corpus from a line-delimited JSON file.
///
/// Blank lines are skipped. Any malformed line fails the whole load with its
/// 1-based line number; a duplicate id fails with the offending id. Extra
/// fields beyond `id`/`title`/`text` are logged at warn level and dropped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut corpus = Corpus {
        documents: Vec::new(),
        by_id: HashMap::new(),
    };
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_document_line(&line, line_no)?;
        corpus.push(doc, line_no)?;
    }
    Ok(corpus)
}

fn parse_document_line(line: &str, line_no: usize) -> Result<Document, CorpusError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: line_no,
            reason: format!("invalid JSON: {e}"),
        })?;
    let obj = value.as_object().ok_or_else(|| CorpusError::Parse {
        line: line_no,
        reason: "expected a JSON object".into(),
    })?;

    let field = |name: &str| -> Result<String, CorpusError> {
        match obj.get(name) {
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(CorpusError::Parse {
                line: line_no,
                reason: format!("field \"{name}\" must be a string"),
            }),
            None => Err(CorpusError::Parse {
                line: line_no,
                reason: format!("missing field \"{name}\""),
            }),
        }
    };

    let extras: Vec<&str> = obj
        .keys()
        .filter(|k| !matches!(k.as_str(), "id" | "title" | "text"))
        .map(|k| k.as_str())
        .collect();
    if !extras.is_empty() {
        log::warn!(
            "corpus line {line_no}: ignoring unknown fields: {}",
            extras.join(", ")
        );
    }

    Ok(Document {
        id: field("id")?,
        title: field("title")?,
        text: field("text")?,
    })
}

/// Writes a corpus back out in the same line-delimited format.
///
/// Loading the written file yields field-identical documents in the same
/// order.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = File::create(path).map_err(io_err)?;
    for doc in corpus.iter() {
        // Document serialization only produces strings, so this cannot fail.
        let line = serde_json::to_string(doc).expect("document serializes");
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}
