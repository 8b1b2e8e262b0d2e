use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HmtModel;
use crate::autodiff::{Adam, AdamConfig, Gradients, ParamStore, Tape};
use crate::corpus::{EncodedDocument, Proposal};
use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::taxonomy::LabelPath;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    /// First level scored by the loss.
    pub start_level: usize,
}

impl TrainConfig {
    pub fn full() -> Self {
        Self {
            epochs: 30,
            batch_size: 512,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            warmup_steps: 1000,
            seed: 0,
            start_level: 1,
        }
    }

    /// Batch 32 and a 100-step warmup; 2000 proposals give 63 steps per epoch.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            warmup_steps: 100,
            ..Self::full()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "learning_rate and weight_decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub level: usize,
    /// Mean cross-entropy over the proposals scored at this level.
    pub loss: f64,
    /// Teacher-forced argmax accuracy (stop included).
    pub accuracy: f64,
    pub count: usize,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_levels: Vec<LevelMetrics>,
    pub valid_loss: Option<f64>,
    pub valid_levels: Vec<LevelMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose parameters the model holds afterwards (0 = initial).
    pub best_epoch: usize,
}

#[derive(Default)]
struct LevelAccumulator {
    loss: Vec<f64>,
    correct: Vec<usize>,
    count: Vec<usize>,
}

impl LevelAccumulator {
    fn add(&mut self, stats: &[(usize, f64, bool)]) {
        for &(level, loss, ok) in stats {
            if self.count.len() < level {
                self.loss.resize(level, 0.0);
                self.correct.resize(level, 0);
                self.count.resize(level, 0);
            }
            self.loss[level - 1] += loss;
            self.correct[level - 1] += ok as usize;
            self.count[level - 1] += 1;
        }
    }

    fn finish(&self) -> Vec<LevelMetrics> {
        (0..self.count.len())
            .filter(|&i| self.count[i] > 0)
            .map(|i| LevelMetrics {
                level: i + 1,
                loss: self.loss[i] / self.count[i] as f64,
                accuracy: self.correct[i] as f64 / self.count[i] as f64,
                count: self.count[i],
            })
            .collect()
    }
}

struct Example {
    docs: Vec<EncodedDocument>,
    gold: LabelPath,
}

fn prepare(model: &HmtModel, proposals: &[Proposal]) -> Result<Vec<Example>> {
    proposals
        .iter()
        .map(|p| {
            let gold = p
                .gold
                .clone()
                .ok_or_else(|| Error::Data(format!("proposal {} has no gold labels", p.id)))?;
            Ok(Example {
                docs: model.encode_documents(p)?,
                gold,
            })
        })
        .collect()
}

fn evaluate(model: &HmtModel, examples: &[Example], start_level: usize) -> Result<(f64, Vec<LevelMetrics>)> {
    let mut levels = LevelAccumulator::default();
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::new(&model.store);
        let (loss, stats) =
            model.proposal_loss(&mut tape, &ex.docs, &ex.gold, start_level, &mut Mode::Eval)?;
        total += tape.value(loss).item();
        levels.add(&stats);
    }
    Ok((total / examples.len() as f64, levels.finish()))
}

/// Mini-batch Adam with teacher forcing. With a non-empty `valid` set the
/// parameters of the epoch with the lowest validation loss are kept.
pub fn train(
    model: &mut HmtModel,
    train: &[Proposal],
    valid: &[Proposal],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let train_set = prepare(model, train)?;
    let valid_set = prepare(model, valid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam(), &model.store);
    let mut grads = Gradients::for_store(&model.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best: Option<(f64, usize, ParamStore)> = None;
    if !valid_set.is_empty() && config.epochs > 0 {
        let (loss, _) = evaluate(model, &valid_set, config.start_level)?;
        best = Some((loss, 0, model.store.clone()));
    }

    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut levels = LevelAccumulator::default();
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            let seed = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &train_set[i];
                let mut mode = Mode::Train {
                    dropout_p: model.config.dropout_p,
                    rng: &mut rng,
                };
                let mut tape = Tape::new(&model.store);
                let (loss, stats) =
                    model.proposal_loss(&mut tape, &ex.docs, &ex.gold, config.start_level, &mut mode)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step: adam.step_count() + 1,
                        detail: format!("loss {value} on training example {i}"),
                    });
                }
                total += value;
                levels.add(&stats);
                tape.backward_into(loss, seed, &mut grads)?;
            }
            let g = grads.max_abs();
            if !g.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: adam.step_count() + 1,
                    detail: format!("gradient magnitude {g}"),
                });
            }
            adam.step(&mut model.store, &grads, true)?;
        }
        let (valid_loss, valid_levels) = if valid_set.is_empty() {
            (None, Vec::new())
        } else {
            let (loss, lv) = evaluate(model, &valid_set, config.start_level)?;
            (Some(loss), lv)
        };
        if let (Some(loss), Some((best_loss, _, _))) = (valid_loss, &best) {
            if loss < *best_loss {
                best = Some((loss, epoch, model.store.clone()));
            }
        }
        let metrics = EpochMetrics {
            epoch,
            steps: adam.step_count(),
            learning_rate: adam.current_lr(),
            train_loss: total / train_set.len() as f64,
            train_levels: levels.finish(),
            valid_loss,
            valid_levels,
        };
        on_epoch(&metrics);
        epochs.push(metrics);
    }
    let best_epoch = match best {
        Some((_, epoch, store)) => {
            model.store = store;
            epoch
        }
        None => config.epochs,
    };
    Ok(TrainReport { epochs, best_epoch })
}
