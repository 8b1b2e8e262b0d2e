//! Loop-based reference implementations used to check the tape-based code.
//!
//! Nothing here shares code with the differentiable path: every routine is
//! written with explicit index loops over plain `Vec<f64>` buffers.

use crate::autodiff::{AdamConfig, Gradients, ParamStore, Tensor};
use crate::error::Result;

pub type Matrix = Vec<Vec<f64>>;

pub fn to_rows(t: &Tensor) -> Matrix {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn from_rows(rows: &Matrix) -> Tensor {
    let cols = rows[0].len();
    Tensor::matrix(rows.len(), cols, rows.iter().flatten().copied().collect()).unwrap()
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    from_rows(&mm(&to_rows(a), &to_rows(b)))
}

pub fn mm(a: &Matrix, b: &Matrix) -> Matrix {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i][p] * b[p][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

pub fn softmax_vec(x: &Tensor) -> Tensor {
    Tensor::vector(softmax_slice(x.data())).unwrap()
}

pub fn layer_norm_row(row: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    row.iter()
        .enumerate()
        .map(|(i, x)| (x - mean) / (var + eps).sqrt() * gain[i] + bias[i])
        .collect()
}

pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Tensor {
    let rows: Matrix = to_rows(x)
        .iter()
        .map(|r| layer_norm_row(r, gain.data(), bias.data(), eps))
        .collect();
    from_rows(&rows)
}

/// Weights of one multi-head attention layer in plain-matrix form.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    pub wq: Vec<Matrix>,
    pub wk: Vec<Matrix>,
    pub wv: Vec<Matrix>,
    pub wo: Matrix,
}

/// Per-head scaled dot-product attention with explicit loops.
/// `allowed[i][j] == false` removes key `j` from query `i`.
pub fn attention(
    w: &AttentionWeights,
    q_in: &Matrix,
    k_in: &Matrix,
    v_in: &Matrix,
    allowed: Option<&Vec<Vec<bool>>>,
) -> Matrix {
    let heads = w.wq.len();
    let (sq, sk) = (q_in.len(), k_in.len());
    let mut concat = vec![Vec::new(); sq];
    for h in 0..heads {
        let q = mm(q_in, &w.wq[h]);
        let k = mm(k_in, &w.wk[h]);
        let v = mm(v_in, &w.wv[h]);
        let d = q[0].len();
        for i in 0..sq {
            let mut logits = Vec::new();
            let mut keys = Vec::new();
            for j in 0..sk {
                if allowed.is_none_or(|m| m[i][j]) {
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += q[i][c] * k[j][c];
                    }
                    logits.push(dot / (d as f64).sqrt());
                    keys.push(j);
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let shifted: Vec<f64> = logits.iter().map(|l| l - max).collect();
            let weights = softmax_slice(&shifted);
            for c in 0..d {
                let mut acc = 0.0;
                for (wgt, &j) in weights.iter().zip(&keys) {
                    acc += wgt * v[j][c];
                }
                concat[i].push(acc);
            }
        }
    }
    mm(&concat, &w.wo)
}

#[derive(Clone, Debug)]
pub struct FeedForwardWeights {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

pub fn feed_forward(w: &FeedForwardWeights, x: &Matrix) -> Matrix {
    let hidden: Matrix = mm(x, &w.w1)
        .into_iter()
        .map(|r| {
            r.iter()
                .zip(&w.b1)
                .map(|(v, b)| (v + b).max(0.0))
                .collect()
        })
        .collect();
    mm(&hidden, &w.w2)
        .into_iter()
        .map(|r| r.iter().zip(&w.b2).map(|(v, b)| v + b).collect())
        .collect()
}

#[derive(Clone, Debug)]
pub struct NormWeights {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

fn norm_rows(n: &NormWeights, x: &Matrix, eps: f64) -> Matrix {
    x.iter()
        .map(|r| layer_norm_row(r, &n.gain, &n.bias, eps))
        .collect()
}

#[derive(Clone, Debug)]
pub struct EncoderBlockWeights {
    pub attn: AttentionWeights,
    pub norm1: NormWeights,
    pub ffn: FeedForwardWeights,
    pub norm2: NormWeights,
}

pub fn encoder_block(
    w: &EncoderBlockWeights,
    x: &Matrix,
    allowed: Option<&Vec<Vec<bool>>>,
    eps: f64,
) -> Matrix {
    let z = norm_rows(&w.norm1, &add(x, &attention(&w.attn, x, x, x, allowed)), eps);
    norm_rows(&w.norm2, &add(&z, &feed_forward(&w.ffn, &z)), eps)
}

#[derive(Clone, Debug)]
pub struct DecoderBlockWeights {
    pub self_attn: AttentionWeights,
    pub norm1: NormWeights,
    pub src_attn: AttentionWeights,
    pub norm2: NormWeights,
    pub ffn: FeedForwardWeights,
    pub norm3: NormWeights,
}

pub fn decoder_block(
    w: &DecoderBlockWeights,
    s: &Matrix,
    a: &Matrix,
    self_allowed: Option<&Vec<Vec<bool>>>,
    eps: f64,
) -> Matrix {
    let s_hat = norm_rows(
        &w.norm1,
        &add(s, &attention(&w.self_attn, s, s, s, self_allowed)),
        eps,
    );
    let z = norm_rows(
        &w.norm2,
        &add(&s_hat, &attention(&w.src_attn, &s_hat, a, a, None)),
        eps,
    );
    norm_rows(&w.norm3, &add(&z, &feed_forward(&w.ffn, &z)), eps)
}

pub fn causal(n: usize) -> Vec<Vec<bool>> {
    (0..n).map(|i| (0..n).map(|j| j <= i).collect()).collect()
}

/// Outcome of a central finite-difference comparison.
#[derive(Clone, Debug)]
pub struct FdReport {
    /// Largest relative error over the smooth entries.
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
    /// Entries whose probe window straddles a ReLU kink (see [`finite_difference_check`]).
    pub kinks: usize,
}

/// Relative error with a floor so that vanishing gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

const KINK_TOLERANCE: f64 = 1e-3;

/// Perturbs every scalar of every parameter by `±step` and compares the central
/// difference of `loss` against `grads`.
///
/// ReLU makes the loss only piecewise smooth, so a probe window can straddle a
/// kink. An entry that misses by more than 1e-3 is re-probed at `step / 100`;
/// if it agrees there it is counted in `kinks` rather than in `max_rel_err`.
pub fn finite_difference_check(
    store: &ParamStore,
    grads: &Gradients,
    step: f64,
    loss: impl Fn(&ParamStore) -> Result<f64>,
) -> Result<FdReport> {
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
        kinks: 0,
    };
    let mut work = store.clone();
    for (id, name, value) in store.iter() {
        for j in 0..value.len() {
            let original = value.data()[j];
            let mut central = |h: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[j] = original + h;
                let plus = loss(&work)?;
                work.get_mut(id).data_mut()[j] = original - h;
                let minus = loss(&work)?;
                work.get_mut(id).data_mut()[j] = original;
                Ok((plus - minus) / (2.0 * h))
            };
            let numeric = central(step)?;
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[j]);
            let err = rel_err(analytic, numeric);
            report.checked += 1;
            if err > KINK_TOLERANCE && rel_err(analytic, central(step / 100.0)?) < KINK_TOLERANCE {
                report.kinks += 1;
                continue;
            }
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{name}[{j}]: analytic {analytic:e}, numeric {numeric:e}");
            }
        }
    }
    Ok(report)
}

/// Scalar Adam written directly from the textbook update.
pub struct ReferenceAdam {
    config: AdamConfig,
    m: f64,
    v: f64,
    t: i32,
}

impl ReferenceAdam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: 0.0,
            v: 0.0,
            t: 0,
        }
    }

    pub fn update(&mut self, p: f64, g: f64) -> f64 {
        let c = &self.config;
        self.t += 1;
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g;
        let m_hat = self.m / (1.0 - c.beta1.powi(self.t));
        let v_hat = self.v / (1.0 - c.beta2.powi(self.t));
        let lr = if c.warmup_steps == 0 {
            c.learning_rate
        } else {
            c.learning_rate * (self.t as f64 / c.warmup_steps as f64).min(1.0)
        };
        p - lr * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * p)
    }
}

fn matrix_of(store: &ParamStore, id: crate::autodiff::ParamId) -> Matrix {
    to_rows(store.get(id))
}

fn vector_of(store: &ParamStore, id: crate::autodiff::ParamId) -> Vec<f64> {
    store.get(id).data().to_vec()
}

pub fn attention_weights(store: &ParamStore, mha: &crate::nn::MultiHeadAttention) -> AttentionWeights {
    let all = |ids: &[crate::autodiff::ParamId]| ids.iter().map(|&id| matrix_of(store, id)).collect();
    AttentionWeights {
        wq: all(mha.query_weights()),
        wk: all(mha.key_weights()),
        wv: all(mha.value_weights()),
        wo: matrix_of(store, mha.output_weight()),
    }
}

pub fn norm_weights(store: &ParamStore, n: &crate::nn::LayerNormParams) -> NormWeights {
    NormWeights {
        gain: vector_of(store, n.gain),
        bias: vector_of(store, n.bias),
    }
}

pub fn ffn_weights(store: &ParamStore, f: &crate::nn::FeedForward) -> FeedForwardWeights {
    FeedForwardWeights {
        w1: matrix_of(store, f.inner.weight),
        b1: vector_of(store, f.inner.bias),
        w2: matrix_of(store, f.outer.weight),
        b2: vector_of(store, f.outer.bias),
    }
}

pub fn encoder_weights(store: &ParamStore, b: &crate::nn::EncoderBlock) -> EncoderBlockWeights {
    EncoderBlockWeights {
        attn: attention_weights(store, &b.attention),
        norm1: norm_weights(store, &b.norm1),
        ffn: ffn_weights(store, &b.ffn),
        norm2: norm_weights(store, &b.norm2),
    }
}

pub fn decoder_weights(store: &ParamStore, b: &crate::nn::DecoderBlock) -> DecoderBlockWeights {
    DecoderBlockWeights {
        self_attn: attention_weights(store, &b.self_attention),
        norm1: norm_weights(store, &b.norm1),
        src_attn: attention_weights(store, &b.source_attention),
        norm2: norm_weights(store, &b.norm2),
        ffn: ffn_weights(store, &b.ffn),
        norm3: norm_weights(store, &b.norm3),
    }
}

/// Micro and macro F1 by brute force: every distinct label is treated as a
/// class, and for each class the `(proposal, level)` slots are scanned for its
/// true positives, false positives and false negatives. `levels` selects the
/// scored levels. Follows the same vacuous-case rules as the library.
pub fn confusion_f1(
    predictions: &[crate::taxonomy::LabelPath],
    truths: &[crate::taxonomy::LabelPath],
    levels: &[usize],
) -> (f64, f64) {
    let mut classes: Vec<crate::taxonomy::NodeId> = predictions
        .iter()
        .chain(truths)
        .flat_map(|p| p.labels.iter().copied())
        .collect();
    classes.sort();
    classes.dedup();
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    let mut per_class = Vec::new();
    for &c in &classes {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (p, t) in predictions.iter().zip(truths) {
            for &k in levels {
                let pk = p.labels.get(k - 1) == Some(&c);
                let tk = t.labels.get(k - 1) == Some(&c);
                match (pk, tk) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        if tp + fn_ > 0 {
            per_class.push(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        }
    }
    let denom = 2 * tp_all + fp_all + fn_all;
    let micro = if denom == 0 {
        1.0
    } else {
        2.0 * tp_all as f64 / denom as f64
    };
    let macro_ = if per_class.is_empty() {
        if fp_all == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        per_class.iter().sum::<f64>() / per_class.len() as f64
    };
    (micro, macro_)
}

/// A random root-anchored chain of `len` labels, or (with `valid == false`)
/// `len` labels drawn independently per level.
pub fn random_path(
    rng: &mut impl rand::Rng,
    taxonomy: &crate::taxonomy::Taxonomy,
    len: usize,
    valid: bool,
) -> crate::taxonomy::LabelPath {
    let mut labels = Vec::with_capacity(len);
    let mut cur = crate::taxonomy::Taxonomy::ROOT;
    for k in 1..=len {
        let pool = if valid {
            taxonomy.children(cur).expect("node exists")
        } else {
            taxonomy.level(k)
        };
        if pool.is_empty() {
            break;
        }
        cur = pool[rng.gen_range(0..pool.len())];
        labels.push(cur);
    }
    let terminated = labels.len() < taxonomy.max_depth();
    crate::taxonomy::LabelPath::new(labels, terminated)
}

/// Largest deviation found by one of the randomized comparison sweeps.
#[derive(Clone, Debug)]
pub struct SweepReport {
    pub cases: usize,
    pub max_abs_diff: f64,
    pub worst: String,
}

impl SweepReport {
    fn new() -> Self {
        Self {
            cases: 0,
            max_abs_diff: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, diff: f64, case: impl FnOnce() -> String) {
        self.cases += 1;
        if diff > self.max_abs_diff || diff.is_nan() {
            self.max_abs_diff = diff;
            self.worst = case();
        }
    }
}

mod sweep {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::autodiff::Tensor;
    use crate::nn::{AttentionMask, Initializer};

    pub fn init(seed: u64) -> Initializer {
        Initializer::new(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).expect("consistent shape")
    }

    /// Random mask with at least one allowed key per query.
    pub fn random_mask(rng: &mut ChaCha8Rng, q: usize, k: usize) -> Vec<Vec<bool>> {
        (0..q)
            .map(|_| {
                let mut row: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.6)).collect();
                row[rng.gen_range(0..k)] = true;
                row
            })
            .collect()
    }

    pub fn to_mask(allowed: &[Vec<bool>]) -> AttentionMask {
        AttentionMask::from_fn(allowed.len(), allowed[0].len(), |i, j| allowed[i][j])
    }

    /// (rows, keys, heads, head width); the first case is fixed, the rest
    /// random with singletons and uneven sizes.
    pub fn shapes(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize, usize, usize)> {
        let mut out = vec![(3, 4, 2, 4)];
        out.extend((1..n).map(|_| {
            (
                rng.gen_range(1..6),
                rng.gen_range(1..7),
                [1, 2, 4][rng.gen_range(0..3)],
                rng.gen_range(1..4),
            )
        }));
        out
    }
}

/// Multi-head attention against [`attention`] on `n` random shapes, every
/// other one with a random mask.
pub fn mha_sweep(seed: u64, n: usize) -> Result<SweepReport> {
    use rand::SeedableRng;

    use crate::autodiff::Tape;
    use crate::nn::{BlockConfig, MultiHeadAttention};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = SweepReport::new();
    for (i, (sq, sk, heads, d)) in sweep::shapes(&mut rng, n).into_iter().enumerate() {
        let cfg = BlockConfig::new(heads * d, heads);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut sweep::init(seed + i as u64), "mha", &cfg);
        let q = sweep::random(&mut rng, sq, cfg.hidden_dim);
        let k = sweep::random(&mut rng, sk, cfg.hidden_dim);
        let v = sweep::random(&mut rng, sk, cfg.hidden_dim);
        let allowed = (i % 2 == 1).then(|| sweep::random_mask(&mut rng, sq, sk));
        let mask = allowed.as_deref().map(sweep::to_mask);

        let mut tape = Tape::new(&store);
        let (qv, kv, vv) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
        let out = mha.forward(&mut tape, qv, kv, vv, mask.as_ref())?;
        let expected = attention(
            &attention_weights(&store, &mha),
            &to_rows(&q),
            &to_rows(&k),
            &to_rows(&v),
            allowed.as_ref(),
        );
        let diff = tape.value(out).max_abs_diff(&from_rows(&expected));
        report.record(diff, || format!("queries {sq}, keys {sk}, heads {heads}, head width {d}"));
    }
    Ok(report)
}

/// Encoder block against [`encoder_block`] with perturbed norm parameters;
/// every other case uses key padding.
pub fn encoder_sweep(seed: u64, n: usize) -> Result<SweepReport> {
    use rand::SeedableRng;

    use crate::autodiff::Tape;
    use crate::nn::{AttentionMask, BlockConfig, EncoderBlock, Mode};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = SweepReport::new();
    for (i, (s, valid, heads, d)) in sweep::shapes(&mut rng, n).into_iter().enumerate() {
        let cfg = BlockConfig::new(heads * d, heads);
        let mut store = ParamStore::new();
        let block = EncoderBlock::new(&mut store, &mut sweep::init(seed + i as u64), "enc", &cfg);
        for id in [block.norm1.gain, block.norm1.bias, block.norm2.gain, block.norm2.bias] {
            let t = sweep::random(&mut rng, 1, cfg.hidden_dim);
            store.set(id, Tensor::vector(t.data().to_vec())?)?;
        }
        let x = sweep::random(&mut rng, s, cfg.hidden_dim);
        let valid = valid.min(s);
        let padded = i % 2 == 0;
        let mask = padded.then(|| AttentionMask::key_padding(s, s, valid));
        let allowed = padded.then(|| vec![(0..s).map(|j| j < valid).collect::<Vec<bool>>(); s]);

        let mut tape = Tape::new(&store);
        let xv = tape.constant(x.clone());
        let out = block.forward(&mut tape, xv, mask.as_ref(), &mut Mode::Eval)?;
        let expected = encoder_block(&encoder_weights(&store, &block), &to_rows(&x), allowed.as_ref(), cfg.epsilon);
        let diff = tape.value(out).max_abs_diff(&from_rows(&expected));
        report.record(diff, || format!("length {s} ({valid} valid), heads {heads}, head width {d}"));
    }
    Ok(report)
}

/// Decoder block against [`decoder_block`]; two cases in three are causal.
pub fn decoder_sweep(seed: u64, n: usize) -> Result<SweepReport> {
    use rand::SeedableRng;

    use crate::autodiff::Tape;
    use crate::nn::{AttentionMask, BlockConfig, DecoderBlock, Mode};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = SweepReport::new();
    for (i, (k, t, heads, d)) in sweep::shapes(&mut rng, n).into_iter().enumerate() {
        let cfg = BlockConfig::new(heads * d, heads);
        let mut store = ParamStore::new();
        let block = DecoderBlock::new(&mut store, &mut sweep::init(seed + 100 + i as u64), "dec", &cfg);
        let s = sweep::random(&mut rng, k, cfg.hidden_dim);
        let a = sweep::random(&mut rng, t, cfg.hidden_dim);
        let is_causal = i % 3 != 2;

        let mut tape = Tape::new(&store);
        let (sv, av) = (tape.constant(s.clone()), tape.constant(a.clone()));
        let mask = is_causal.then(|| AttentionMask::causal(k));
        let out = block.forward(&mut tape, sv, av, mask.as_ref(), &mut Mode::Eval)?;
        let allowed = is_causal.then(|| causal(k));
        let expected = decoder_block(
            &decoder_weights(&store, &block),
            &to_rows(&s),
            &to_rows(&a),
            allowed.as_ref(),
            cfg.epsilon,
        );
        let diff = tape.value(out).max_abs_diff(&from_rows(&expected));
        report.record(diff, || {
            format!("targets {k}, sources {t}, heads {heads}, head width {d}, causal {is_causal}")
        });
    }
    Ok(report)
}

/// Every tape primitive composed into one scalar loss and checked by
/// [`finite_difference_check`].
pub fn primitive_gradient_check(seed: u64) -> Result<FdReport> {
    use rand::SeedableRng;

    use crate::autodiff::{Tape, Var};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let a = store.add("a", sweep::random(&mut rng, 3, 4));
    let b = store.add("b", sweep::random(&mut rng, 4, 5));
    let c = store.add("c", sweep::random(&mut rng, 2, 5));
    let d = store.add("d", sweep::random(&mut rng, 3, 10));
    let gain = store.add("gain", Tensor::vector(sweep::random(&mut rng, 1, 5).data().to_vec())?);
    let bias = store.add("bias", Tensor::vector(sweep::random(&mut rng, 1, 5).data().to_vec())?);
    let table = store.add("table", sweep::random(&mut rng, 6, 5));
    let readout = sweep::random(&mut rng, 4, 3);

    let forward = |tape: &mut Tape| -> Result<Var> {
        let (av, bv, cv, dv) = (tape.param(a), tape.param(b), tape.param(c), tape.param(d));
        let ab = tape.matmul(av, bv)?;
        let abc = tape.matmul_t(ab, cv)?;
        let act = tape.relu(ab);
        let by_row = tape.softmax(act, 1)?;
        let by_col = tape.softmax(ab, 0)?;
        let mixed = tape.add(by_row, by_col)?;
        let (g, bb) = (tape.param(gain), tape.param(bias));
        let ln = tape.layer_norm(mixed, g, bb, 1e-5)?;
        let t = tape.param(table);
        let rows = tape.gather_rows(t, &[1, 4, 1])?;
        let both = tape.add(ln, rows)?;
        let shifted = tape.add_row(both, bb)?;
        let stacked = tape.concat_rows(&[shifted, rows])?;
        let wide = tape.concat_cols(&[stacked, stacked])?;
        let part = tape.slice_rows(wide, 1, 4)?;
        let logits = tape.matmul_t(part, dv)?;
        let ro = tape.constant(readout.clone());
        let weighted = tape.mul(logits, ro)?;
        let scaled = tape.scale(weighted, 0.7);
        let ce = tape.cross_entropy(scaled, &[0, 1, 2, 0])?;
        let side = tape.sum(abc);
        let side = tape.scale(side, 0.3);
        tape.add(ce, side)
    };

    let mut tape = Tape::new(&store);
    let loss = forward(&mut tape)?;
    let grads = tape.backward(loss)?;
    finite_difference_check(&store, &grads, 1e-4, |s| {
        let mut tape = Tape::new(s);
        let loss = forward(&mut tape)?;
        Ok(tape.value(loss).item())
    })
}

/// The summed training loss of `batch` (evaluation mode) differentiated by
/// the tape and by [`finite_difference_check`].
pub fn model_gradient_check(
    model: &crate::model::HmtModel,
    batch: &[(crate::corpus::Proposal, crate::taxonomy::LabelPath)],
    start_level: usize,
) -> Result<FdReport> {
    use crate::autodiff::Tape;
    use crate::nn::Mode;

    let encoded = batch
        .iter()
        .map(|(p, gold)| Ok((model.encode_documents(p)?, gold)))
        .collect::<Result<Vec<_>>>()?;
    let loss_with = |store: &ParamStore| -> Result<f64> {
        let mut probe = model.clone();
        probe.store = store.clone();
        let mut total = 0.0;
        for (docs, gold) in &encoded {
            let mut tape = Tape::new(&probe.store);
            let (loss, _) = probe.proposal_loss(&mut tape, docs, gold, start_level, &mut Mode::Eval)?;
            total += tape.value(loss).item();
        }
        Ok(total)
    };
    let mut grads = Gradients::for_store(&model.store);
    for (docs, gold) in &encoded {
        let mut tape = Tape::new(&model.store);
        let (loss, _) = model.proposal_loss(&mut tape, docs, gold, start_level, &mut Mode::Eval)?;
        tape.backward_into(loss, 1.0, &mut grads)?;
    }
    finite_difference_check(&model.store, &grads, 1e-4, loss_with)
}
