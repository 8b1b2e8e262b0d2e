//! Synthetic labelled corpora with learnable label signal.
//!
//! Every taxonomy node owns a small disjoint set of signature tokens. A
//! proposal's words are drawn either from the signatures of the nodes on its
//! gold path (with probability `signal_strength`) or uniformly from the whole
//! vocabulary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusRecord, DocumentRecord, Proposal, TokenizerMode};
use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, Taxonomy};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSpec {
    pub doc_type: String,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Children per node at each level; `[4, 3, 2]` gives 4/12/24 labels.
    pub branching: Vec<usize>,
    pub vocab_size: usize,
    pub signature_tokens: usize,
    pub signal_strength: f64,
    /// Fraction of proposals whose gold path stops above the deepest level.
    pub variable_depth_fraction: f64,
    pub documents: Vec<DocSpec>,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        let doc = |t: &str, length| DocSpec {
            doc_type: t.into(),
            length,
        };
        Self {
            branching: vec![4, 3, 2],
            vocab_size: 200,
            signature_tokens: 4,
            signal_strength: 0.6,
            variable_depth_fraction: 0.25,
            documents: vec![
                doc("title", 5),
                doc("keywords", 4),
                doc("fields", 3),
                doc("abstract", 16),
            ],
            train: 2000,
            valid: 250,
            test: 250,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branching.is_empty() || self.branching.contains(&0) {
            return Err(Error::Config(
                "branching factors must be non-empty and positive".into(),
            ));
        }
        if self.signature_tokens == 0 {
            return Err(Error::Config(
                "signature_tokens must be positive to give labels a signal".into(),
            ));
        }
        let mut nodes = 0usize;
        let mut width = 1usize;
        for &b in &self.branching {
            width = width.saturating_mul(b);
            nodes = nodes.saturating_add(width);
        }
        let needed = nodes.saturating_mul(self.signature_tokens);
        if needed > self.vocab_size {
            return Err(Error::Config(format!(
                "{nodes} labels x {} signature tokens need {needed} distinct tokens, vocab_size is {}",
                self.signature_tokens, self.vocab_size
            )));
        }
        if !(0.0..=1.0).contains(&self.signal_strength)
            || !(0.0..=1.0).contains(&self.variable_depth_fraction)
        {
            return Err(Error::Config(
                "signal_strength and variable_depth_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.documents.is_empty() {
            return Err(Error::Config("at least one document type is required".into()));
        }
        for (i, d) in self.documents.iter().enumerate() {
            if self.documents[..i].iter().any(|e| e.doc_type == d.doc_type) {
                return Err(Error::Config(format!(
                    "document type `{}` listed twice",
                    d.doc_type
                )));
            }
        }
        Ok(())
    }

    pub fn doc_types(&self) -> Vec<String> {
        self.documents.iter().map(|d| d.doc_type.clone()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub taxonomy: Taxonomy,
    /// Signature tokens per node id (empty for the root).
    pub signatures: Vec<Vec<String>>,
    pub train: Vec<CorpusRecord>,
    pub valid: Vec<CorpusRecord>,
    pub test: Vec<CorpusRecord>,
}

impl SyntheticCorpus {
    pub fn proposals(&self, records: &[CorpusRecord]) -> Result<Vec<Proposal>> {
        records
            .iter()
            .map(|r| Proposal::from_record(r, &self.taxonomy, TokenizerMode::Words))
            .collect()
    }
}

pub fn vocab_token(i: usize) -> String {
    format!("w{i:03}")
}

pub fn generate_synthetic(config: &GenConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let taxonomy = Taxonomy::balanced(&config.branching)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let vocab: Vec<String> = (0..config.vocab_size).map(vocab_token).collect();
    let mut order = vocab.clone();
    order.shuffle(&mut rng);
    let mut pool = order.into_iter();
    let signatures: Vec<Vec<String>> = taxonomy
        .nodes()
        .iter()
        .map(|n| {
            if n.id == taxonomy.root() {
                Vec::new()
            } else {
                pool.by_ref().take(config.signature_tokens).collect()
            }
        })
        .collect();

    let split = |name: &str, count: usize, rng: &mut ChaCha8Rng| -> Vec<CorpusRecord> {
        (1..=count)
            .map(|i| sample_record(config, &taxonomy, &signatures, &vocab, format!("{name}-{i:05}"), rng))
            .collect()
    };
    let train = split("train", config.train, &mut rng);
    let valid = split("valid", config.valid, &mut rng);
    let test = split("test", config.test, &mut rng);
    Ok(SyntheticCorpus {
        taxonomy,
        signatures,
        train,
        valid,
        test,
    })
}

fn sample_record(
    config: &GenConfig,
    taxonomy: &Taxonomy,
    signatures: &[Vec<String>],
    vocab: &[String],
    id: String,
    rng: &mut ChaCha8Rng,
) -> CorpusRecord {
    let depth_max = taxonomy.max_depth();
    let depth = if depth_max > 1 && rng.gen_bool(config.variable_depth_fraction) {
        rng.gen_range(1..depth_max)
    } else {
        depth_max
    };
    let mut path: Vec<NodeId> = Vec::with_capacity(depth);
    let mut current = taxonomy.root();
    for _ in 0..depth {
        let kids = taxonomy.children(current).expect("node exists");
        current = kids[rng.gen_range(0..kids.len())];
        path.push(current);
    }

    // Signal tokens cycle through the path nodes from a random start so that
    // every node on the path is represented once there are enough of them.
    let mut cursor = rng.gen_range(0..path.len());
    let documents = config
        .documents
        .iter()
        .map(|spec| {
            let words: Vec<&str> = (0..spec.length)
                .map(|_| {
                    if rng.gen_bool(config.signal_strength) {
                        let sig = &signatures[path[cursor % path.len()].0];
                        cursor += 1;
                        sig[rng.gen_range(0..sig.len())].as_str()
                    } else {
                        vocab[rng.gen_range(0..vocab.len())].as_str()
                    }
                })
                .collect();
            DocumentRecord {
                doc_type: spec.doc_type.clone(),
                text: words.join(" "),
            }
        })
        .collect();
    CorpusRecord {
        id,
        documents,
        labels: Some(path.iter().map(|&n| taxonomy.code(n).to_string()).collect()),
    }
}
