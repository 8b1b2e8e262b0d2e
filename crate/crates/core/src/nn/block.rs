use super::{AttentionMask, BlockConfig, Initializer, Mode, MultiHeadAttention};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Affine map `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bound: f64,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), init.uniform(&[fan_in, fan_out], bound));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// Two-layer ReLU network.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, config: &BlockConfig) -> Self {
        let bound = 1.0 / (config.hidden_dim as f64).sqrt();
        Self {
            inner: Linear::new(store, init, &format!("{name}.1"), config.hidden_dim, config.ffn_dim, bound),
            outer: Linear::new(store, init, &format!("{name}.2"), config.ffn_dim, config.hidden_dim, bound),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let hidden = self.inner.forward(tape, x)?;
        let hidden = tape.relu(hidden);
        self.outer.forward(tape, hidden)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub epsilon: f64,
}

impl LayerNormParams {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, epsilon: f64) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[width], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width])),
            epsilon,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, self.epsilon)
    }
}

/// `norm(residual + dropout(sublayer))`
fn residual_norm(tape: &mut Tape, norm: &LayerNormParams, residual: Var, sub: Var, mode: &mut Mode) -> Result<Var> {
    let sub = mode.dropout(tape, sub)?;
    let sum = tape.add(residual, sub)?;
    norm.forward(tape, sum)
}

fn check_width(tape: &Tape, x: Var, hidden: usize, op: &'static str) -> Result<()> {
    if tape.value(x).cols() != hidden {
        return Err(Error::Shape {
            op,
            lhs: tape.value(x).shape().to_vec(),
            rhs: vec![hidden],
        });
    }
    Ok(())
}

/// Post-norm self-attention block.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNormParams,
    pub ffn: FeedForward,
    pub norm2: LayerNormParams,
    hidden: usize,
}

impl EncoderBlock {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, prefix: &str, config: &BlockConfig) -> Self {
        Self {
            attention: MultiHeadAttention::new(store, init, &format!("{prefix}.attn"), config),
            norm1: LayerNormParams::new(store, &format!("{prefix}.norm1"), config.hidden_dim, config.epsilon),
            ffn: FeedForward::new(store, init, &format!("{prefix}.ffn"), config),
            norm2: LayerNormParams::new(store, &format!("{prefix}.norm2"), config.hidden_dim, config.epsilon),
            hidden: config.hidden_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, mask: Option<&AttentionMask>, mode: &mut Mode) -> Result<Var> {
        check_width(tape, x, self.hidden, "encoder_block")?;
        let attn = self.attention.forward(tape, x, x, x, mask)?;
        let z = residual_norm(tape, &self.norm1, x, attn, mode)?;
        let ff = self.ffn.forward(tape, z)?;
        residual_norm(tape, &self.norm2, z, ff, mode)
    }
}

/// Self-attention over the label stream, then source attention whose keys and
/// values come from the encoder output.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_attention: MultiHeadAttention,
    pub norm1: LayerNormParams,
    pub source_attention: MultiHeadAttention,
    pub norm2: LayerNormParams,
    pub ffn: FeedForward,
    pub norm3: LayerNormParams,
    hidden: usize,
}

impl DecoderBlock {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, prefix: &str, config: &BlockConfig) -> Self {
        let h = config.hidden_dim;
        Self {
            self_attention: MultiHeadAttention::new(store, init, &format!("{prefix}.self_attn"), config),
            norm1: LayerNormParams::new(store, &format!("{prefix}.norm1"), h, config.epsilon),
            source_attention: MultiHeadAttention::new(store, init, &format!("{prefix}.src_attn"), config),
            norm2: LayerNormParams::new(store, &format!("{prefix}.norm2"), h, config.epsilon),
            ffn: FeedForward::new(store, init, &format!("{prefix}.ffn"), config),
            norm3: LayerNormParams::new(store, &format!("{prefix}.norm3"), h, config.epsilon),
            hidden: h,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        labels: Var,
        source: Var,
        self_mask: Option<&AttentionMask>,
        mode: &mut Mode,
    ) -> Result<Var> {
        check_width(tape, labels, self.hidden, "decoder_block labels")?;
        check_width(tape, source, self.hidden, "decoder_block source")?;
        let attn = self.self_attention.forward(tape, labels, labels, labels, self_mask)?;
        let s_hat = residual_norm(tape, &self.norm1, labels, attn, mode)?;
        let src = self.source_attention.forward(tape, s_hat, source, source, None)?;
        let z = residual_norm(tape, &self.norm2, s_hat, src, mode)?;
        let ff = self.ffn.forward(tape, z)?;
        residual_norm(tape, &self.norm3, z, ff, mode)
    }
}
