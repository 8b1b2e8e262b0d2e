//! Level-wise and overall F1, path-length outcomes, reasonable-path rate and
//! the expert-prefix sweep.
//!
//! Scoring treats every `(proposal, level)` pair as one slot. A slot where
//! both paths have a label counts a true positive when they agree and one
//! false positive plus one false negative otherwise. A slot filled only in
//! the prediction is a false positive, one filled only in the truth a false
//! negative. Root and stop are never scored.
//!
//! Micro-F1 is `2TP / (2TP + FP + FN)` over the pooled counts. Macro-F1
//! averages per-class F1 over classes with support (`TP + FN > 0`). When a
//! scope has no labels at all, micro-F1 is 1.0; when no class has support,
//! macro-F1 is 1.0 if nothing was predicted and 0.0 otherwise.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecodeMode, HmtModel, PredictOptions};
use crate::corpus::Proposal;
use crate::taxonomy::{classify_result, LabelPath, NodeId, PathOutcome, Taxonomy};

/// Which levels a score pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Level(usize),
    Overall,
    /// Levels strictly deeper than the given one.
    Below(usize),
}

impl Scope {
    fn includes(self, level: usize) -> bool {
        match self {
            Scope::Level(k) => level == k,
            Scope::Overall => true,
            Scope::Below(m) => level > m,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct F1 {
    pub micro: f64,
    pub macro_: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct ClassCounts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

pub fn f1_scores(predictions: &[LabelPath], truths: &[LabelPath], scope: Scope) -> Result<F1> {
    if predictions.is_empty() {
        return Err(Error::Contract("F1 of an empty evaluation set".into()));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let mut classes: BTreeMap<NodeId, ClassCounts> = BTreeMap::new();
    for (pred, truth) in predictions.iter().zip(truths) {
        let depth = pred.len().max(truth.len());
        for level in (1..=depth).filter(|&k| scope.includes(k)) {
            match (pred.at_level(level), truth.at_level(level)) {
                (Some(p), Some(t)) if p == t => classes.entry(p).or_default().tp += 1,
                (p, t) => {
                    if let Some(p) = p {
                        classes.entry(p).or_default().fp += 1;
                    }
                    if let Some(t) = t {
                        classes.entry(t).or_default().fn_ += 1;
                    }
                }
            }
        }
    }
    let (tp, fp, fn_) = classes
        .values()
        .fold((0, 0, 0), |(a, b, c), k| (a + k.tp, b + k.fp, c + k.fn_));
    let micro = ratio(tp, fp, fn_).unwrap_or(1.0);
    let supported: Vec<f64> = classes
        .values()
        .filter(|k| k.tp + k.fn_ > 0)
        .map(|k| ratio(k.tp, k.fp, k.fn_).expect("support is positive"))
        .collect();
    let macro_ = if supported.is_empty() {
        if fp == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        supported.iter().sum::<f64>() / supported.len() as f64
    };
    Ok(F1 { micro, macro_ })
}

fn ratio(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    let denom = 2 * tp + fp + fn_;
    (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub acc: usize,
    pub sl: usize,
    pub se: usize,
    pub other: usize,
}

impl OutcomeCounts {
    pub fn total(&self) -> usize {
        self.acc + self.sl + self.se + self.other
    }

    pub fn acc_rate(&self) -> f64 {
        self.acc as f64 / self.total().max(1) as f64
    }
}

pub fn path_sensitivity(predictions: &[LabelPath], truths: &[LabelPath]) -> OutcomeCounts {
    let mut counts = OutcomeCounts::default();
    for (p, t) in predictions.iter().zip(truths) {
        match classify_result(p, t) {
            PathOutcome::Acc => counts.acc += 1,
            PathOutcome::Sl => counts.sl += 1,
            PathOutcome::Se => counts.se += 1,
            PathOutcome::Other => counts.other += 1,
        }
    }
    counts
}

/// Fraction of predicted paths that are parent→child chains from the root.
pub fn hierarchy_dependency(predictions: &[LabelPath], taxonomy: &Taxonomy) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Contract("no predictions to audit".into()));
    }
    let mut valid = 0;
    for p in predictions {
        valid += taxonomy.validate_path(p)? as usize;
    }
    Ok(valid as f64 / predictions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelScore {
    pub level: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

fn level_scores(preds: &[LabelPath], truths: &[LabelPath], depth: usize) -> Result<Vec<LevelScore>> {
    (1..=depth)
        .map(|level| {
            let f = f1_scores(preds, truths, Scope::Level(level))?;
            Ok(LevelScore {
                level,
                micro_f1: f.micro,
                macro_f1: f.macro_,
            })
        })
        .collect()
}

/// One row of the expert sweep: the first `prefix_len` gold labels are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertRow {
    pub prefix_len: usize,
    pub evaluated: usize,
    /// Proposals whose gold path is shorter than `prefix_len`.
    pub skipped: usize,
    pub levels: Vec<LevelScore>,
    pub overall: F1,
    /// Levels deeper than `prefix_len`.
    pub remaining: F1,
    /// The same levels and proposals scored on predictions without a prefix.
    pub baseline_remaining: F1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub proposals: usize,
    pub mode: DecodeMode,
    pub levels: Vec<LevelScore>,
    pub overall: F1,
    pub outcomes: OutcomeCounts,
    pub reasonable_path_rate: f64,
    pub expert_grid: Vec<ExpertRow>,
}

impl MetricsReport {
    /// Everything except the expert sweep, which needs a model.
    pub fn from_predictions(
        predictions: &[LabelPath],
        truths: &[LabelPath],
        taxonomy: &Taxonomy,
        mode: DecodeMode,
    ) -> Result<Self> {
        let depth = taxonomy.max_depth();
        Ok(Self {
            proposals: predictions.len(),
            mode,
            levels: level_scores(predictions, truths, depth)?,
            overall: f1_scores(predictions, truths, Scope::Overall)?,
            outcomes: path_sensitivity(predictions, truths),
            reasonable_path_rate: hierarchy_dependency(predictions, taxonomy)?,
            expert_grid: Vec::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// `prefix_len,evaluated,skipped,level_1_micro,level_1_macro,...,overall_micro,overall_macro,remaining_micro,baseline_remaining_micro`
    pub fn expert_grid_csv(&self) -> String {
        let depth = self.levels.len();
        let mut out = String::from("prefix_len,evaluated,skipped");
        for k in 1..=depth {
            write!(out, ",level_{k}_micro,level_{k}_macro").unwrap();
        }
        out.push_str(",overall_micro,overall_macro,remaining_micro,remaining_macro,baseline_remaining_micro,baseline_remaining_macro\n");
        for row in &self.expert_grid {
            write!(out, "{},{},{}", row.prefix_len, row.evaluated, row.skipped).unwrap();
            for l in &row.levels {
                write!(out, ",{:.6},{:.6}", l.micro_f1, l.macro_f1).unwrap();
            }
            writeln!(
                out,
                ",{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                row.overall.micro,
                row.overall.macro_,
                row.remaining.micro,
                row.remaining.macro_,
                row.baseline_remaining.micro,
                row.baseline_remaining.macro_
            )
            .unwrap();
        }
        out
    }

    pub fn levels_csv(&self) -> String {
        let mut out = String::from("scope,micro_f1,macro_f1\n");
        for l in &self.levels {
            writeln!(out, "level_{},{:.6},{:.6}", l.level, l.micro_f1, l.macro_f1).unwrap();
        }
        writeln!(out, "overall,{:.6},{:.6}", self.overall.micro, self.overall.macro_).unwrap();
        out
    }

    /// Aligned plain-text summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        writeln!(out, "proposals            {}", self.proposals).unwrap();
        let mode = match self.mode {
            DecodeMode::Greedy => "greedy",
            DecodeMode::Constrained => "constrained",
        };
        writeln!(out, "decoding             {mode}").unwrap();
        writeln!(out, "{:<20} {:>9} {:>9}", "scope", "micro-F1", "macro-F1").unwrap();
        for l in &self.levels {
            writeln!(
                out,
                "{:<20} {:>9.4} {:>9.4}",
                format!("level {}", l.level),
                l.micro_f1,
                l.macro_f1
            )
            .unwrap();
        }
        writeln!(
            out,
            "{:<20} {:>9.4} {:>9.4}",
            "overall", self.overall.micro, self.overall.macro_
        )
        .unwrap();
        let o = &self.outcomes;
        writeln!(
            out,
            "outcomes             acc {}  sl {}  se {}  other {}",
            o.acc, o.sl, o.se, o.other
        )
        .unwrap();
        writeln!(out, "reasonable paths     {:.4}", self.reasonable_path_rate).unwrap();
        if !self.expert_grid.is_empty() {
            writeln!(
                out,
                "{:<6} {:>9} {:>8} {:>10} {:>10} {:>10}",
                "prefix", "evaluated", "skipped", "overall", "remaining", "baseline"
            )
            .unwrap();
            for r in &self.expert_grid {
                writeln!(
                    out,
                    "{:<6} {:>9} {:>8} {:>10.4} {:>10.4} {:>10.4}",
                    r.prefix_len,
                    r.evaluated,
                    r.skipped,
                    r.overall.micro,
                    r.remaining.micro,
                    r.baseline_remaining.micro
                )
                .unwrap();
            }
        }
        out
    }
}

fn gold_paths(proposals: &[Proposal]) -> Result<Vec<LabelPath>> {
    proposals
        .iter()
        .map(|p| {
            p.gold.clone().ok_or_else(|| {
                Error::Data(format!(
                    "proposal {} has no gold labels; evaluation needs labelled data",
                    p.id
                ))
            })
        })
        .collect()
}

/// Predicts every proposal with `options` (which must carry no prefix).
pub fn predict_all(model: &HmtModel, proposals: &[Proposal], options: &PredictOptions) -> Result<Vec<LabelPath>> {
    proposals
        .iter()
        .map(|p| model.predict(p, options).map(|pred| pred.path))
        .collect()
}

/// For each prefix length `m`, predicts with the first `m` gold labels given.
/// `baseline` holds the unconditioned predictions for the same proposals.
pub fn expert_knowledge_sweep(
    model: &HmtModel,
    proposals: &[Proposal],
    baseline: &[LabelPath],
    prefix_lengths: &[usize],
    options: &PredictOptions,
) -> Result<Vec<ExpertRow>> {
    let truths = gold_paths(proposals)?;
    let depth = model.taxonomy().max_depth();
    let mut rows = Vec::new();
    for &m in prefix_lengths {
        let mut preds = Vec::new();
        let mut kept_truths = Vec::new();
        let mut kept_baseline = Vec::new();
        for (i, (p, gold)) in proposals.iter().zip(&truths).enumerate() {
            if gold.len() < m {
                continue;
            }
            let opts = PredictOptions {
                expert_prefix: gold.labels[..m].to_vec(),
                ..options.clone()
            };
            preds.push(model.predict(p, &opts)?.path);
            kept_truths.push(gold.clone());
            kept_baseline.push(baseline[i].clone());
        }
        if preds.is_empty() {
            rows.push(ExpertRow {
                prefix_len: m,
                evaluated: 0,
                skipped: proposals.len(),
                levels: Vec::new(),
                overall: F1::default(),
                remaining: F1::default(),
                baseline_remaining: F1::default(),
            });
            continue;
        }
        rows.push(ExpertRow {
            prefix_len: m,
            evaluated: preds.len(),
            skipped: proposals.len() - preds.len(),
            levels: level_scores(&preds, &kept_truths, depth)?,
            overall: f1_scores(&preds, &kept_truths, Scope::Overall)?,
            remaining: f1_scores(&preds, &kept_truths, Scope::Below(m))?,
            baseline_remaining: f1_scores(&kept_baseline, &kept_truths, Scope::Below(m))?,
        });
    }
    Ok(rows)
}

/// Full report for a labelled set: plain decoding plus the expert sweep over
/// `prefix_lengths`.
pub fn evaluate(
    model: &HmtModel,
    proposals: &[Proposal],
    mode: DecodeMode,
    prefix_lengths: &[usize],
) -> Result<MetricsReport> {
    let truths = gold_paths(proposals)?;
    let options = PredictOptions {
        mode,
        ..PredictOptions::default()
    };
    let preds = predict_all(model, proposals, &options)?;
    let mut report = MetricsReport::from_predictions(&preds, &truths, model.taxonomy(), mode)?;
    report.expert_grid = expert_knowledge_sweep(model, proposals, &preds, prefix_lengths, &options)?;
    Ok(report)
}
