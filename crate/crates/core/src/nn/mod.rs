//! Transformer building blocks on top of the gradient tape.
//!
//! Blocks only hold [`ParamId`]s; the values live in a [`ParamStore`] so that a
//! model can be cloned, checkpointed or optimised as a flat parameter list.

mod attention;
mod block;

pub use attention::{AttentionMask, MultiHeadAttention};
pub use block::{DecoderBlock, EncoderBlock, FeedForward, LayerNormParams, Linear};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_p: f64,
    pub epsilon: f64,
}

impl BlockConfig {
    pub fn new(hidden_dim: usize, num_heads: usize) -> Self {
        Self {
            hidden_dim,
            num_heads,
            ffn_dim: 4 * hidden_dim,
            dropout_p: 0.0,
            epsilon: 1e-5,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(
                "hidden_dim, num_heads and ffn_dim must be positive".into(),
            ));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("layer norm epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Whether a forward pass applies dropout.
pub enum Mode<'r> {
    Eval,
    Train { dropout_p: f64, rng: &'r mut ChaCha8Rng },
}

impl Mode<'_> {
    /// Inverted dropout: kept activations are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train { dropout_p, .. } if *dropout_p == 0.0 => Ok(x),
            Mode::Train { dropout_p, rng } => {
                let p = *dropout_p;
                let keep = 1.0 / (1.0 - p);
                let shape = tape.value(x).shape().to_vec();
                let n = tape.value(x).len();
                let mask = (0..n)
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect();
                let mask = tape.constant(Tensor::new(shape, mask)?);
                tape.mul(x, mask)
            }
        }
    }
}

/// Draws initial parameter values.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(rng: ChaCha8Rng) -> Self {
        Self { rng }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("positive shape")
    }
}

/// Learned lookup table; used for word, label and position embeddings.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
    width: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        rows: usize,
        width: usize,
    ) -> Self {
        let bound = 1.0 / (width as f64).sqrt();
        let table = store.add(name, init.uniform(&[rows, width], bound));
        Self { table, rows, width }
    }

    pub fn table(&self) -> ParamId {
        self.table
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn check(&self, index: usize) -> Result<()> {
        if index >= self.rows {
            return Err(Error::OutOfRange {
                what: "embedding",
                index,
                limit: self.rows,
            });
        }
        Ok(())
    }

    pub fn lookup(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var> {
        for &i in ids {
            self.check(i)?;
        }
        let table = tape.param(self.table);
        tape.gather_rows(table, ids)
    }

    /// The vector stored for `index`.
    pub fn row(&self, store: &ParamStore, index: usize) -> Result<Tensor> {
        self.check(index)?;
        Tensor::vector(store.get(self.table).row(index).to_vec())
    }

    /// Rows `0..len`, i.e. positions of a sequence of that length.
    pub fn positions(&self, tape: &mut Tape, len: usize) -> Result<Var> {
        let ids: Vec<usize> = (0..len).collect();
        self.lookup(tape, &ids)
    }
}
