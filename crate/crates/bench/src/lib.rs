//! Shared fixtures for the criterion benchmarks under `benches/`.

use hmt_core::corpus::{generate_synthetic, GenConfig};
use hmt_core::{HmtModel, ModelConfig, Proposal, Vocabulary};

pub struct Fixture {
    pub model: HmtModel,
    pub train: Vec<Proposal>,
    pub test: Vec<Proposal>,
}

/// An untrained desk-scale model over the default synthetic corpus, with
/// `train` and `test` proposals.
pub fn desk(train: usize, test: usize) -> Fixture {
    let gen = GenConfig {
        train,
        valid: 0,
        test,
        ..GenConfig::default()
    };
    let corpus = generate_synthetic(&gen, 0).expect("default recipe is valid");
    let train = corpus.proposals(&corpus.train).expect("generated records parse");
    let test = corpus.proposals(&corpus.test).expect("generated records parse");
    let vocab = Vocabulary::from_proposals(&gen.doc_types(), &train);
    let model = HmtModel::new(ModelConfig::desk(), vocab, corpus.taxonomy).expect("desk config is valid");
    Fixture { model, train, test }
}
