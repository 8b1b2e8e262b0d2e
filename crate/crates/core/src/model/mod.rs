//! The full network: a word-level encoder shared by all document types, a
//! document-level encoder over the pooled document vectors, and a label
//! decoder that reads the encoder output through source attention.

mod checkpoint;
mod train;

pub use train::{train, EpochMetrics, LevelMetrics, TrainConfig, TrainReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::corpus::{EncodedDocument, Proposal, TokenizerMode, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{
    AttentionMask, BlockConfig, DecoderBlock, Embedding, EncoderBlock, Initializer, Linear, Mode,
};
use crate::taxonomy::{LabelPath, NodeId, Taxonomy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub num_heads: usize,
    /// Ffn inner width; `0` means `4 * hidden_dim`.
    pub ffn_dim: usize,
    /// Per-document token limit, type token included.
    pub max_seq_len: usize,
    pub dropout_p: f64,
    pub epsilon: f64,
    pub init_seed: u64,
    pub tokenizer: TokenizerMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Full-scale setting (h=64, 8 encoder layers, 1 decoder layer, 8 heads).
    pub fn full() -> Self {
        Self {
            hidden_dim: 64,
            encoder_layers: 8,
            decoder_layers: 1,
            num_heads: 8,
            ffn_dim: 0,
            max_seq_len: 50,
            dropout_p: 0.2,
            epsilon: 1e-5,
            init_seed: 0,
            tokenizer: TokenizerMode::Words,
        }
    }

    /// Small recipe used for synthetic corpora on one CPU core.
    pub fn desk() -> Self {
        Self {
            hidden_dim: 32,
            encoder_layers: 2,
            decoder_layers: 1,
            num_heads: 4,
            dropout_p: 0.1,
            ..Self::full()
        }
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            ffn_dim: if self.ffn_dim == 0 {
                4 * self.hidden_dim
            } else {
                self.ffn_dim
            },
            dropout_p: self.dropout_p,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_layers == 0 || self.decoder_layers == 0 || self.max_seq_len == 0 {
            return Err(Error::Config(
                "encoder_layers, decoder_layers and max_seq_len must be positive".into(),
            ));
        }
        self.block().validate()
    }
}

/// Greedy decoding either over all labels of a level or only over the
/// children of the previous label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Constrained,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictOptions {
    pub mode: DecodeMode,
    pub top_k: usize,
    /// Logits are divided by this before the softmax.
    pub temperature: f64,
    pub expert_prefix: Vec<NodeId>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            top_k: 5,
            temperature: 1.0,
            expert_prefix: Vec::new(),
        }
    }
}

/// `None` is the stop label.
pub type Choice = Option<NodeId>;

#[derive(Clone, Debug, PartialEq)]
pub struct LevelPrediction {
    pub level: usize,
    /// Model distribution over the level's labels with stop in the last slot.
    pub distribution: Vec<f64>,
    pub choice: Choice,
    /// Probability of `choice` under the distribution the decision was made
    /// from (renormalised over the allowed set in constrained mode).
    pub prob: f64,
    pub alternatives: Vec<(Choice, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub path: LabelPath,
    /// Decoded levels only; levels given by the expert prefix are absent.
    pub levels: Vec<LevelPrediction>,
    /// Product of the chosen probabilities.
    pub score: f64,
    pub valid: bool,
}

/// The `T × h` encoder output for one proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalEncoding {
    pub views: Tensor,
}

#[derive(Clone, Debug)]
pub(crate) struct LevelHead {
    pub hidden: Linear,
    pub out: Linear,
}

impl LevelHead {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, h)
    }
}

#[derive(Clone, Debug)]
pub struct HmtModel {
    pub(crate) config: ModelConfig,
    pub(crate) vocab: Vocabulary,
    pub(crate) taxonomy: Taxonomy,
    pub(crate) store: ParamStore,
    pub(crate) word_embedding: Embedding,
    pub(crate) word_positions: Embedding,
    pub(crate) word_encoder: Vec<EncoderBlock>,
    pub(crate) doc_encoder: Vec<EncoderBlock>,
    pub(crate) label_embedding: Embedding,
    pub(crate) label_positions: Embedding,
    pub(crate) decoder: Vec<DecoderBlock>,
    pub(crate) heads: Vec<LevelHead>,
}

impl HmtModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, taxonomy: Taxonomy) -> Result<Self> {
        config.validate()?;
        if taxonomy.max_depth() == 0 {
            return Err(Error::Config("taxonomy has no levels below the root".into()));
        }
        let block = config.block();
        let h = config.hidden_dim;
        let depth = taxonomy.max_depth();
        let mut store = ParamStore::new();
        let mut init = Initializer::new(ChaCha8Rng::seed_from_u64(config.init_seed));
        let word_embedding = Embedding::new(&mut store, &mut init, "word_embedding", vocab.len(), h);
        let word_positions =
            Embedding::new(&mut store, &mut init, "word_positions", config.max_seq_len, h);
        let word_encoder = (0..config.encoder_layers)
            .map(|i| EncoderBlock::new(&mut store, &mut init, &format!("word_encoder.{i}"), &block))
            .collect();
        let doc_encoder = (0..config.encoder_layers)
            .map(|i| EncoderBlock::new(&mut store, &mut init, &format!("doc_encoder.{i}"), &block))
            .collect();
        let label_embedding =
            Embedding::new(&mut store, &mut init, "label_embedding", taxonomy.num_nodes(), h);
        let label_positions = Embedding::new(&mut store, &mut init, "label_positions", depth, h);
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderBlock::new(&mut store, &mut init, &format!("decoder.{i}"), &block))
            .collect();
        let bound = 1.0 / (h as f64).sqrt();
        let heads = (1..=depth)
            .map(|k| {
                let width = taxonomy.level(k).len() + 1;
                LevelHead {
                    hidden: Linear::new(&mut store, &mut init, &format!("head.{k}.1"), h, h, bound),
                    out: Linear::new(&mut store, &mut init, &format!("head.{k}.2"), h, width, bound),
                }
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            taxonomy,
            store,
            word_embedding,
            word_positions,
            word_encoder,
            doc_encoder,
            label_embedding,
            label_positions,
            decoder,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn word_embedding_table(&mut self) -> &mut Tensor {
        self.store.get_mut(self.word_embedding.table())
    }

    /// Parameter ids of the level-`k` head (hidden weight, hidden bias,
    /// output weight, output bias).
    pub fn head_params(&self, level: usize) -> Result<[crate::autodiff::ParamId; 4]> {
        let head = self.head(level)?;
        Ok([head.hidden.weight, head.hidden.bias, head.out.weight, head.out.bias])
    }

    fn head(&self, level: usize) -> Result<&LevelHead> {
        level
            .checked_sub(1)
            .and_then(|i| self.heads.get(i))
            .ok_or(Error::OutOfRange {
                what: "decoder level",
                index: level,
                limit: self.heads.len(),
            })
    }

    pub fn encode_documents(&self, proposal: &Proposal) -> Result<Vec<EncodedDocument>> {
        if proposal.documents.is_empty() {
            return Err(Error::Contract(format!(
                "proposal {} has no documents",
                proposal.id
            )));
        }
        self.vocab.encode_proposal(proposal, self.config.max_seq_len)
    }

    /// Builds `A` on `tape`. Each document is encoded on its unpadded length,
    /// which gives the same type-token output as masking the padding keys.
    pub(crate) fn encode_on(
        &self,
        tape: &mut Tape,
        docs: &[EncodedDocument],
        mode: &mut Mode,
    ) -> Result<Var> {
        if docs.is_empty() {
            return Err(Error::Contract("cannot encode zero documents".into()));
        }
        let mut pooled = Vec::with_capacity(docs.len());
        for doc in docs {
            let ids = doc.real();
            let emb = self.word_embedding.lookup(tape, ids)?;
            let pos = self.word_positions.positions(tape, ids.len())?;
            let mut x = tape.add(emb, pos)?;
            x = mode.dropout(tape, x)?;
            for block in &self.word_encoder {
                x = block.forward(tape, x, None, mode)?;
            }
            pooled.push(tape.slice_rows(x, 0, 1)?);
        }
        let mut a = if pooled.len() == 1 {
            pooled[0]
        } else {
            tape.concat_rows(&pooled)?
        };
        for block in &self.doc_encoder {
            a = block.forward(tape, a, None, mode)?;
        }
        Ok(a)
    }

    /// Decoder states for the input `[root, prefix...]` under a causal mask.
    pub(crate) fn decode_on(
        &self,
        tape: &mut Tape,
        views: Var,
        prefix: &[NodeId],
        mode: &mut Mode,
    ) -> Result<Var> {
        let n = prefix.len() + 1;
        if n > self.taxonomy.max_depth() {
            return Err(Error::OutOfRange {
                what: "decoder level",
                index: n,
                limit: self.taxonomy.max_depth(),
            });
        }
        let mut ids = Vec::with_capacity(n);
        ids.push(Taxonomy::ROOT.0);
        ids.extend(prefix.iter().map(|l| l.0));
        let emb = self.label_embedding.lookup(tape, &ids)?;
        let pos = self.label_positions.positions(tape, n)?;
        let mut s = tape.add(emb, pos)?;
        s = mode.dropout(tape, s)?;
        let mask = AttentionMask::causal(n);
        for block in &self.decoder {
            s = block.forward(tape, s, views, Some(&mask), mode)?;
        }
        Ok(s)
    }

    /// Level-`row + 1` logits read from decoder row `row`.
    fn head_logits(&self, tape: &mut Tape, states: Var, row: usize) -> Result<Var> {
        let x = tape.slice_rows(states, row, 1)?;
        self.head(row + 1)?.forward(tape, x)
    }

    pub fn encode(&self, proposal: &Proposal) -> Result<ProposalEncoding> {
        let docs = self.encode_documents(proposal)?;
        let mut tape = Tape::new(&self.store);
        let a = self.encode_on(&mut tape, &docs, &mut Mode::Eval)?;
        Ok(ProposalEncoding {
            views: tape.value(a).clone(),
        })
    }

    /// Raw logits for level `prefix.len() + 1` given the ancestors `prefix`.
    pub fn decode_logits(&self, enc: &ProposalEncoding, prefix: &[NodeId]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let views = tape.constant(enc.views.clone());
        let states = self.decode_on(&mut tape, views, prefix, &mut Mode::Eval)?;
        let logits = self.head_logits(&mut tape, states, prefix.len())?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// `ŷ_k` over the level's labels plus stop (last slot).
    pub fn decode_step(&self, enc: &ProposalEncoding, prefix: &[NodeId]) -> Result<Vec<f64>> {
        Ok(softmax(&self.decode_logits(enc, prefix)?, 1.0))
    }

    /// Logits for every level `1..=path.len() + 1` (capped at `H`) from one
    /// causal pass over `[root, path...]`.
    pub fn teacher_forced_logits(
        &self,
        enc: &ProposalEncoding,
        path: &[NodeId],
    ) -> Result<Vec<Vec<f64>>> {
        let n = (path.len() + 1).min(self.taxonomy.max_depth());
        let mut tape = Tape::new(&self.store);
        let views = tape.constant(enc.views.clone());
        let states = self.decode_on(&mut tape, views, &path[..n - 1], &mut Mode::Eval)?;
        (0..n)
            .map(|row| {
                let l = self.head_logits(&mut tape, states, row)?;
                Ok(tape.value(l).data().to_vec())
            })
            .collect()
    }

    /// Sum over levels `start_level..=n` of the level cross-entropies for one
    /// proposal, where `n = min(|gold| + 1, H)`; the target past the last
    /// gold label is stop. Returns the loss and, per scored level,
    /// `(level, loss, argmax == target)`.
    pub(crate) fn proposal_loss(
        &self,
        tape: &mut Tape,
        docs: &[EncodedDocument],
        gold: &LabelPath,
        start_level: usize,
        mode: &mut Mode,
    ) -> Result<(Var, Vec<(usize, f64, bool)>)> {
        let depth = self.taxonomy.max_depth();
        if gold.len() > depth {
            return Err(Error::Data(format!(
                "gold path has {} labels but the taxonomy has {depth} levels",
                gold.len()
            )));
        }
        let n = (gold.len() + 1).min(depth);
        let start = start_level.max(1);
        let views = self.encode_on(tape, docs, mode)?;
        let states = self.decode_on(tape, views, &gold.labels[..n - 1], mode)?;
        let mut terms = Vec::new();
        let mut stats = Vec::new();
        for level in start..=n {
            let target = match gold.at_level(level) {
                Some(id) => {
                    if self.taxonomy.level_of(id) != level {
                        return Err(Error::Data(format!(
                            "gold label {} is not at level {level}",
                            self.taxonomy.code(id)
                        )));
                    }
                    self.taxonomy.slot(id)
                }
                None => self.taxonomy.level(level).len(),
            };
            let logits = self.head_logits(tape, states, level - 1)?;
            let ce = tape.cross_entropy(logits, &[target])?;
            let correct = argmax(tape.value(logits).data()) == target;
            stats.push((level, tape.value(ce).item(), correct));
            terms.push(ce);
        }
        let loss = match terms.split_first() {
            None => tape.constant(Tensor::scalar(0.0)),
            Some((&first, rest)) => {
                let mut acc = first;
                for &t in rest {
                    acc = tape.add(acc, t)?;
                }
                acc
            }
        };
        Ok((loss, stats))
    }

    /// Mean over the batch of the per-proposal losses (evaluation mode).
    pub fn loss(&self, batch: &[(Proposal, LabelPath)], start_level: usize) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Contract("loss of an empty batch".into()));
        }
        let mut total = 0.0;
        for (p, gold) in batch {
            let docs = self.encode_documents(p)?;
            let mut tape = Tape::new(&self.store);
            let (loss, _) = self.proposal_loss(&mut tape, &docs, gold, start_level, &mut Mode::Eval)?;
            total += tape.value(loss).item();
        }
        Ok(total / batch.len() as f64)
    }

    /// Checks an expert prefix: a reasonable path no longer than `H`.
    pub fn check_prefix(&self, prefix: &[NodeId]) -> Result<()> {
        if prefix.len() > self.taxonomy.max_depth() {
            return Err(Error::InvalidPrefix(format!(
                "{} labels given but the taxonomy has {} levels",
                prefix.len(),
                self.taxonomy.max_depth()
            )));
        }
        let path = LabelPath::new(prefix.to_vec(), false);
        match self.taxonomy.validate_path(&path) {
            Ok(true) => Ok(()),
            Ok(false) => Err(Error::InvalidPrefix(format!(
                "{} is not a chain from the root",
                self.taxonomy.codes(&path).join(" > ")
            ))),
            Err(e) => Err(Error::InvalidPrefix(e.to_string())),
        }
    }

    pub fn predict(&self, proposal: &Proposal, options: &PredictOptions) -> Result<Prediction> {
        self.check_prefix(&options.expert_prefix)?;
        if !(options.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        let depth = self.taxonomy.max_depth();
        let mut labels = options.expert_prefix.clone();
        let mut levels = Vec::new();
        let mut score = 1.0;
        let mut terminated = false;
        if labels.len() < depth {
            let enc = self.encode(proposal)?;
            while labels.len() < depth {
                let level = labels.len() + 1;
                let logits = self.decode_logits(&enc, &labels)?;
                let distribution = softmax(&logits, options.temperature);
                let decision = match options.mode {
                    DecodeMode::Greedy => distribution.clone(),
                    DecodeMode::Constrained => self.restrict(&distribution, labels.last().copied())?,
                };
                let pick = argmax(&decision);
                let choice = self.choice(level, pick);
                let alternatives = top_k(&decision, options.top_k)
                    .into_iter()
                    .map(|i| (self.choice(level, i), decision[i]))
                    .collect();
                score *= decision[pick];
                levels.push(LevelPrediction {
                    level,
                    distribution,
                    choice,
                    prob: decision[pick],
                    alternatives,
                });
                match choice {
                    Some(id) => labels.push(id),
                    None => {
                        terminated = true;
                        break;
                    }
                }
            }
        }
        let path = LabelPath::new(labels, terminated);
        let valid = self.taxonomy.validate_path(&path)?;
        Ok(Prediction {
            path,
            levels,
            score,
            valid,
        })
    }

    fn choice(&self, level: usize, slot: usize) -> Choice {
        self.taxonomy.level(level).get(slot).copied()
    }

    /// Zeroes everything outside `children(prev) ∪ {stop}` and renormalises.
    fn restrict(&self, dist: &[f64], prev: Option<NodeId>) -> Result<Vec<f64>> {
        let parent = prev.unwrap_or(Taxonomy::ROOT);
        let mut out = vec![0.0; dist.len()];
        let stop = dist.len() - 1;
        out[stop] = dist[stop];
        for &c in self.taxonomy.children(parent)? {
            let s = self.taxonomy.slot(c);
            out[s] = dist[s];
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|p| *p /= total);
        } else {
            out[stop] = 1.0;
        }
        Ok(out)
    }
}

pub(crate) fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn top_k(xs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
