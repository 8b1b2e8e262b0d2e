use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Proposal;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token → id map. Layout: `<pad>`, `<unk>`, one type token per document
/// type, then words in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyParts", into = "VocabularyParts")]
pub struct Vocabulary {
    doc_types: Vec<String>,
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyParts {
    doc_types: Vec<String>,
    words: Vec<String>,
}

impl From<VocabularyParts> for Vocabulary {
    fn from(p: VocabularyParts) -> Self {
        Self::from_parts(p.doc_types, p.words)
    }
}

impl From<Vocabulary> for VocabularyParts {
    fn from(v: Vocabulary) -> Self {
        Self {
            doc_types: v.doc_types,
            words: v.words,
        }
    }
}

/// One encoded document: `ids` is padded to the configured length, `len`
/// counts the real positions (type token included).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedDocument {
    pub ids: Vec<usize>,
    pub len: usize,
}

impl EncodedDocument {
    pub fn real(&self) -> &[usize] {
        &self.ids[..self.len]
    }
}

impl Vocabulary {
    /// Builds from any token multiset; the result does not depend on order.
    pub fn build<'a>(doc_types: &[String], tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<&str> = tokens.into_iter().collect();
        Self::from_parts(
            doc_types.to_vec(),
            words.into_iter().map(String::from).collect(),
        )
    }

    pub fn from_proposals(doc_types: &[String], proposals: &[Proposal]) -> Self {
        Self::build(
            doc_types,
            proposals
                .iter()
                .flat_map(|p| p.documents.iter())
                .flat_map(|d| d.tokens.iter().map(String::as_str)),
        )
    }

    fn from_parts(doc_types: Vec<String>, words: Vec<String>) -> Self {
        let mut index = HashMap::new();
        index.insert(PAD_TOKEN.to_string(), PAD);
        index.insert(UNK_TOKEN.to_string(), UNK);
        for (i, t) in doc_types.iter().enumerate() {
            index.insert(type_token(t), 2 + i);
        }
        let base = 2 + doc_types.len();
        for (i, w) in words.iter().enumerate() {
            index.insert(w.clone(), base + i);
        }
        Self {
            doc_types,
            words,
            index,
        }
    }

    pub fn len(&self) -> usize {
        2 + self.doc_types.len() + self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn doc_types(&self) -> &[String] {
        &self.doc_types
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn type_id(&self, doc_type: &str) -> Result<usize> {
        self.doc_types
            .iter()
            .position(|t| t == doc_type)
            .map(|i| 2 + i)
            .ok_or_else(|| {
                Error::Config(format!(
                    "document type `{doc_type}` is not in the vocabulary (known: {})",
                    self.doc_types.join(", ")
                ))
            })
    }

    /// Id of a word; unknown words map to [`UNK`].
    pub fn word_id(&self, word: &str) -> usize {
        match self.index.get(word) {
            Some(&id) if id >= 2 + self.doc_types.len() => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        let types = self.doc_types.len();
        match id {
            PAD => Some(PAD_TOKEN),
            UNK => Some(UNK_TOKEN),
            i if i < 2 + types => None,
            i => self.words.get(i - 2 - types).map(String::as_str),
        }
    }

    /// `[type token, word ids...]` truncated to `max_len` and padded with [`PAD`].
    pub fn encode_document(
        &self,
        doc_type: &str,
        tokens: &[String],
        max_len: usize,
    ) -> Result<EncodedDocument> {
        if max_len == 0 {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        let mut ids = Vec::with_capacity(max_len);
        ids.push(self.type_id(doc_type)?);
        ids.extend(tokens.iter().take(max_len - 1).map(|w| self.word_id(w)));
        let len = ids.len();
        ids.resize(max_len, PAD);
        Ok(EncodedDocument { ids, len })
    }

    pub fn encode_proposal(&self, p: &Proposal, max_len: usize) -> Result<Vec<EncodedDocument>> {
        p.documents
            .iter()
            .map(|d| self.encode_document(&d.doc_type, &d.tokens, max_len))
            .collect()
    }

    /// Words of an encoded document, skipping padding, unknowns and the type token.
    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .filter(|&&id| id >= 2 + self.doc_types.len())
            .filter_map(|&id| self.token(id))
            .collect()
    }
}

fn type_token(doc_type: &str) -> String {
    format!("<type:{doc_type}>")
}
