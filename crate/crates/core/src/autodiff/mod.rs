//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.

mod kernels;
mod optim;
mod param;
mod tape;
mod tensor;

pub use optim::{Adam, AdamConfig};
pub use param::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Gradient-free evaluation helpers built on the same kernels as the tape.
pub mod functional {
    use super::*;

    pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let (a, b) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let out = tape.matmul(a, b)?;
        Ok(tape.value(out).clone())
    }

    pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(x.clone());
        let out = tape.softmax(x, axis)?;
        Ok(tape.value(out).clone())
    }

    pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(x.clone());
        let g = tape.constant(gain.clone());
        let b = tape.constant(bias.clone());
        let out = tape.layer_norm(x, g, b, eps)?;
        Ok(tape.value(out).clone())
    }
}
