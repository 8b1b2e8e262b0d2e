//! Proposals, tokenization, vocabulary, corpus files and the synthetic
//! corpus generator.
//!
//! Corpus files hold one JSON record per line:
//!
//! ```json
//! {"id":"train-00001","documents":[{"type":"title","text":"w012 w150"}],"labels":["A","A02"]}
//! ```
//!
//! `labels` may be omitted (or `null`) for unlabeled records; an empty list is
//! a valid gold path that stops at the first level.

mod embeddings;
mod synthetic;
mod tokenize;
mod vocab;

pub use embeddings::import_embeddings;
pub use synthetic::{generate_synthetic, DocSpec, GenConfig, SyntheticCorpus};
pub use tokenize::{tokenize, TokenizerMode};
pub use vocab::{EncodedDocument, Vocabulary, PAD, UNK};

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{LabelPath, Taxonomy};

pub const DEFAULT_DOC_TYPES: [&str; 4] = ["title", "keywords", "fields", "abstract"];

pub fn default_doc_types() -> Vec<String> {
    DEFAULT_DOC_TYPES.iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_type: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(doc_type: impl Into<String>, tokens: Vec<String>) -> Self {
        Self {
            doc_type: doc_type.into(),
            tokens,
        }
    }
}

/// An ordered set of typed documents with an optional gold label path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub id: String,
    pub documents: Vec<Document>,
    pub gold: Option<LabelPath>,
}

impl Proposal {
    pub fn new(id: impl Into<String>, documents: Vec<Document>) -> Result<Self> {
        let id = id.into();
        if documents.is_empty() {
            return Err(Error::Data(format!("proposal {id} has no documents")));
        }
        for (i, d) in documents.iter().enumerate() {
            if documents[..i].iter().any(|e| e.doc_type == d.doc_type) {
                return Err(Error::Data(format!(
                    "proposal {id} repeats document type `{}`",
                    d.doc_type
                )));
            }
        }
        Ok(Self {
            id,
            documents,
            gold: None,
        })
    }

    pub fn with_gold(mut self, gold: LabelPath) -> Self {
        self.gold = Some(gold);
        self
    }

    pub fn from_record(
        record: &CorpusRecord,
        taxonomy: &Taxonomy,
        mode: TokenizerMode,
    ) -> Result<Self> {
        let docs = record
            .documents
            .iter()
            .map(|d| Document::new(d.doc_type.clone(), tokenize(&d.text, mode)))
            .collect();
        let proposal = Self::new(record.id.clone(), docs)?;
        Ok(match &record.labels {
            Some(codes) => {
                let gold = taxonomy
                    .gold_path(codes)
                    .map_err(|e| Error::Data(format!("record {}: {e}", record.id)))?;
                proposal.with_gold(gold)
            }
            None => proposal,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    #[serde(rename = "type")]
    pub doc_type: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    #[serde(default)]
    pub id: String,
    pub documents: Vec<DocumentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), n + 1), e))?;
        if rec.id.is_empty() {
            rec.id = format!("line-{}", n + 1);
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serialises");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    taxonomy: &Taxonomy,
    mode: TokenizerMode,
) -> Result<Vec<Proposal>> {
    read_records(path)?
        .iter()
        .map(|r| Proposal::from_record(r, taxonomy, mode))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip_and_labels() {
        let t = Taxonomy::balanced(&[2, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recs = vec![
            CorpusRecord {
                id: "a".into(),
                documents: vec![DocumentRecord {
                    doc_type: "title".into(),
                    text: "Deep, graph learning".into(),
                }],
                labels: Some(vec!["B".into(), "B02".into()]),
            },
            CorpusRecord {
                id: "b".into(),
                documents: vec![DocumentRecord {
                    doc_type: "title".into(),
                    text: "x".into(),
                }],
                labels: None,
            },
        ];
        write_records(&path, &recs).unwrap();
        assert_eq!(read_records(&path).unwrap(), recs);
        let ps = load_corpus(&path, &t, TokenizerMode::Words).unwrap();
        assert_eq!(ps[0].documents[0].tokens, vec!["deep", "graph", "learning"]);
        assert_eq!(t.codes(ps[0].gold.as_ref().unwrap()), vec!["B", "B02"]);
        assert!(ps[1].gold.is_none());
    }

    #[test]
    fn rejects_bad_proposals() {
        assert!(Proposal::new("x", vec![]).is_err());
        let d = Document::new("title", vec![]);
        assert!(Proposal::new("x", vec![d.clone(), d]).is_err());
        let t = Taxonomy::balanced(&[2, 2]).unwrap();
        let rec = CorpusRecord {
            id: "bad".into(),
            documents: vec![DocumentRecord {
                doc_type: "title".into(),
                text: "x".into(),
            }],
            labels: Some(vec!["A".into(), "B01".into()]),
        };
        assert!(matches!(
            Proposal::from_record(&rec, &t, TokenizerMode::Words),
            Err(Error::Data(_))
        ));
    }
}
