use super::{BlockConfig, Initializer};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Which keys each query may attend to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    queries: usize,
    keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(queries: usize, keys: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..queries)
            .flat_map(|i| (0..keys).map(move |j| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Self {
            queries,
            keys,
            allowed,
        }
    }

    /// Query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    /// Every query sees the first `valid` keys; the rest are padding.
    pub fn key_padding(queries: usize, keys: usize, valid: usize) -> Self {
        Self::from_fn(queries, keys, |_, j| j < valid)
    }

    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allowed[query * self.keys + key]
    }

    fn additive(&self, queries: usize, keys: usize) -> Result<Tensor> {
        if (self.queries, self.keys) != (queries, keys) {
            return Err(Error::Shape {
                op: "attention mask",
                lhs: vec![self.queries, self.keys],
                rhs: vec![queries, keys],
            });
        }
        if let Some(row) = (0..queries).find(|&i| !(0..keys).any(|j| self.allows(i, j))) {
            return Err(Error::Contract(format!(
                "attention mask leaves query {row} with no keys"
            )));
        }
        let data = self
            .allowed
            .iter()
            .map(|&ok| if ok { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Tensor::matrix(queries, keys, data)
    }
}

/// `Concat(head_1..head_n) W^O` with `head_i = softmax(Q_i K_iᵀ / sqrt(d_head)) V_i`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    wq: Vec<ParamId>,
    wk: Vec<ParamId>,
    wv: Vec<ParamId>,
    wo: ParamId,
    hidden: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        config: &BlockConfig,
    ) -> Self {
        let h = config.hidden_dim;
        let d = config.head_dim();
        let bound = 1.0 / (h as f64).sqrt();
        let mut per_head = |kind: &str| -> Vec<ParamId> {
            (0..config.num_heads)
                .map(|i| store.add(format!("{prefix}.{kind}.{i}"), init.uniform(&[h, d], bound)))
                .collect()
        };
        let wq = per_head("wq");
        let wk = per_head("wk");
        let wv = per_head("wv");
        let wo = store.add(format!("{prefix}.wo"), init.uniform(&[h, h], bound));
        Self {
            wq,
            wk,
            wv,
            wo,
            hidden: h,
            head_dim: d,
        }
    }

    pub fn num_heads(&self) -> usize {
        self.wq.len()
    }

    pub fn query_weights(&self) -> &[ParamId] {
        &self.wq
    }

    pub fn key_weights(&self) -> &[ParamId] {
        &self.wk
    }

    pub fn value_weights(&self) -> &[ParamId] {
        &self.wv
    }

    pub fn output_weight(&self) -> ParamId {
        self.wo
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Var> {
        self.forward_with_weights(tape, q_in, k_in, v_in, mask)
            .map(|(out, _)| out)
    }

    /// Also returns each head's `s_q × s_k` attention matrix.
    pub fn forward_with_weights(
        &self,
        tape: &mut Tape,
        q_in: Var,
        k_in: Var,
        v_in: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<(Var, Vec<Var>)> {
        for v in [q_in, k_in, v_in] {
            let width = tape.value(v).cols();
            if width != self.hidden {
                return Err(Error::Shape {
                    op: "multi_head_attention",
                    lhs: tape.value(v).shape().to_vec(),
                    rhs: vec![self.hidden],
                });
            }
        }
        let sq = tape.value(q_in).rows();
        let sk = tape.value(k_in).rows();
        if tape.value(v_in).rows() != sk {
            return Err(Error::Shape {
                op: "multi_head_attention keys/values",
                lhs: tape.value(k_in).shape().to_vec(),
                rhs: tape.value(v_in).shape().to_vec(),
            });
        }
        let additive = match mask {
            Some(m) => Some(tape.constant(m.additive(sq, sk)?)),
            None => None,
        };
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.wq.len());
        let mut weights = Vec::with_capacity(self.wq.len());
        for i in 0..self.wq.len() {
            let (wq, wk, wv) = (tape.param(self.wq[i]), tape.param(self.wk[i]), tape.param(self.wv[i]));
            let q = tape.matmul(q_in, wq)?;
            let k = tape.matmul(k_in, wk)?;
            let v = tape.matmul(v_in, wv)?;
            let logits = tape.matmul_t(q, k)?;
            let mut logits = tape.scale(logits, scale);
            if let Some(add) = additive {
                logits = tape.add(logits, add)?;
            }
            let probs = tape.softmax(logits, 1)?;
            heads.push(tape.matmul(probs, v)?);
            weights.push(probs);
        }
        let concat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let wo = tape.param(self.wo);
        Ok((tape.matmul(concat, wo)?, weights))
    }
}
