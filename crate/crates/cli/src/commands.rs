use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hmt_core::corpus::{
    generate_synthetic, import_embeddings, load_corpus, read_records, write_records, CorpusRecord,
    DocumentRecord, GenConfig, TokenizerMode,
};
use hmt_core::eval::{evaluate, MetricsReport};
use hmt_core::model::{train as train_model, TrainReport};
use hmt_core::{DecodeMode, HmtModel, LabelPath, ModelConfig, Proposal, Taxonomy, TrainConfig, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, EvalArgs, GenArgs, PredictArgs, ServeArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::service::{self, AppState};
use crate::wire::{self, PredictResponse, RequestError};

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(user(format!("{what} {} does not exist", path.display())))
    }
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| user(format!("cannot write {}: {e}", path.display())))
}

fn write_err(path: &Path, e: std::io::Error) -> CliError {
    user(format!("cannot write {}: {e}", path.display()))
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => gen(&a, out).map(drop),
        Command::Train(a) => train(&a, out).map(drop),
        Command::Predict(a) => predict(&a, out),
        Command::Eval(a) => eval(&a, out).map(drop),
        Command::Serve(a) => serve(&a),
    }
}

/// Per-level label counts under each top-level label, and gold-depth
/// histograms per split.
#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub depth: usize,
    /// `(code, counts)` where `counts[j]` is the number of descendants at
    /// level `j + 2`.
    pub branches: Vec<(String, Vec<usize>)>,
    /// `(split, counts)` where `counts[j]` is the number of records whose
    /// gold path has `j + 1` labels.
    pub depths: Vec<(String, Vec<usize>)>,
}

impl GenSummary {
    pub fn new(taxonomy: &Taxonomy, splits: &[(&str, &[CorpusRecord])]) -> CliResult<Self> {
        let depth = taxonomy.max_depth();
        let branches = taxonomy
            .level(1)
            .iter()
            .map(|&top| {
                let mut counts = vec![0; depth.saturating_sub(1)];
                for k in 2..=depth {
                    counts[k - 2] = taxonomy
                        .level(k)
                        .iter()
                        .filter(|&&n| taxonomy.precedes(n, top))
                        .count();
                }
                (taxonomy.code(top).to_string(), counts)
            })
            .collect();
        let depths = splits
            .iter()
            .map(|(name, records)| {
                let mut counts = vec![0; depth];
                for r in records.iter() {
                    let n = r.labels.as_ref().map_or(0, Vec::len);
                    if n == 0 || n > depth {
                        return Err(user(format!("record {} has {n} labels", r.id)));
                    }
                    counts[n - 1] += 1;
                }
                Ok((name.to_string(), counts))
            })
            .collect::<CliResult<_>>()?;
        Ok(Self {
            depth,
            branches,
            depths,
        })
    }
}

impl fmt::Display for GenSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<8}{:>8}", "prefix", "total")?;
        for k in 2..=self.depth {
            write!(f, "{:>8}", format!("|C{k}|"))?;
        }
        writeln!(f)?;
        let mut totals = vec![0; self.depth.saturating_sub(1)];
        for (code, counts) in &self.branches {
            write!(f, "{code:<8}{:>8}", counts.iter().sum::<usize>())?;
            for (t, c) in totals.iter_mut().zip(counts) {
                *t += c;
                write!(f, "{c:>8}")?;
            }
            writeln!(f)?;
        }
        write!(f, "{:<8}{:>8}", "total", totals.iter().sum::<usize>())?;
        for t in &totals {
            write!(f, "{t:>8}")?;
        }
        writeln!(f)?;
        writeln!(f)?;
        write!(f, "{:<8}{:>8}", "split", "records")?;
        for k in 1..=self.depth {
            write!(f, "{:>8}", format!("depth{k}"))?;
        }
        writeln!(f)?;
        for (name, counts) in &self.depths {
            write!(f, "{name:<8}{:>8}", counts.iter().sum::<usize>())?;
            for c in counts {
                write!(f, "{c:>8}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn gen_config(args: &GenArgs) -> GenConfig {
    GenConfig {
        branching: args.branching.clone(),
        vocab_size: args.vocab_size,
        signature_tokens: args.signature_tokens,
        signal_strength: args.signal_strength,
        variable_depth_fraction: args.variable_depth_fraction,
        train: args.train,
        valid: args.valid,
        test: args.test,
        ..GenConfig::default()
    }
}

pub fn gen(args: &GenArgs, out: &mut dyn Write) -> CliResult<GenSummary> {
    let config = gen_config(args);
    config.validate()?;
    let taxonomy_path = args.out.join("taxonomy.json");
    let split_paths: Vec<PathBuf> = SPLITS
        .iter()
        .map(|s| args.out.join(format!("{s}.jsonl")))
        .collect();
    if !args.force {
        let existing: Vec<String> = std::iter::once(&taxonomy_path)
            .chain(&split_paths)
            .filter(|p| p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !existing.is_empty() {
            return Err(user(format!(
                "refusing to overwrite {} (pass --force)",
                existing.join(", ")
            )));
        }
    }
    let corpus = generate_synthetic(&config, args.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| write_err(&args.out, e))?;
    corpus.taxonomy.save(&taxonomy_path)?;
    let splits: [(&str, &[CorpusRecord]); 3] = [
        ("train", &corpus.train),
        ("valid", &corpus.valid),
        ("test", &corpus.test),
    ];
    for ((_, records), path) in splits.iter().zip(&split_paths) {
        write_records(path, records)?;
    }
    let summary = GenSummary::new(&corpus.taxonomy, &splits)?;
    write!(out, "{summary}").map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(summary)
}

pub fn model_config(args: &TrainArgs) -> ModelConfig {
    let mut c = if args.full_scale {
        ModelConfig::full()
    } else {
        ModelConfig::desk()
    };
    c.init_seed = args.seed;
    if let Some(t) = args.tokenizer {
        c.tokenizer = t.into();
    }
    c.hidden_dim = args.hidden_dim.unwrap_or(c.hidden_dim);
    c.encoder_layers = args.encoder_layers.unwrap_or(c.encoder_layers);
    c.decoder_layers = args.decoder_layers.unwrap_or(c.decoder_layers);
    c.num_heads = args.heads.unwrap_or(c.num_heads);
    c.ffn_dim = args.ffn_dim.unwrap_or(c.ffn_dim);
    c.max_seq_len = args.max_seq_len.unwrap_or(c.max_seq_len);
    c.dropout_p = args.dropout.unwrap_or(c.dropout_p);
    c
}

pub fn train_config(args: &TrainArgs) -> TrainConfig {
    let mut c = if args.full_scale {
        TrainConfig::full()
    } else {
        TrainConfig::desk()
    };
    c.seed = args.seed;
    c.epochs = args.epochs.unwrap_or(c.epochs);
    c.batch_size = args.batch_size.unwrap_or(c.batch_size);
    c.learning_rate = args.lr.unwrap_or(c.learning_rate);
    c.weight_decay = args.weight_decay.unwrap_or(c.weight_decay);
    c.warmup_steps = args.warmup.unwrap_or(c.warmup_steps);
    c.start_level = args.start_level.unwrap_or(c.start_level);
    c
}

/// Document types in order of first appearance.
fn doc_types(proposals: &[Proposal]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for d in proposals.iter().flat_map(|p| &p.documents) {
        if !out.contains(&d.doc_type) {
            out.push(d.doc_type.clone());
        }
    }
    out
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<TrainReport> {
    let taxonomy_path = args.data.taxonomy_path();
    let train_path = args.data.split(&args.train_file, "train");
    let valid_path = args.data.split(&args.valid_file, "valid");
    require(&taxonomy_path, "taxonomy")?;
    require(&train_path, "training split")?;
    require(&valid_path, "validation split")?;
    if let Some(e) = &args.embeddings {
        require(e, "embedding file")?;
    }
    let model_config = model_config(args);
    let train_config = train_config(args);
    model_config.validate()?;
    train_config.validate()?;

    let taxonomy = Taxonomy::load(&taxonomy_path)?;
    let train_set = load_corpus(&train_path, &taxonomy, model_config.tokenizer)?;
    let valid_set = load_corpus(&valid_path, &taxonomy, model_config.tokenizer)?;
    let vocab = Vocabulary::from_proposals(&doc_types(&train_set), &train_set);
    let mut model = HmtModel::new(model_config, vocab, taxonomy)?;
    if let Some(path) = &args.embeddings {
        let vocab = model.vocab().clone();
        let replaced = import_embeddings(path, &vocab, model.word_embedding_table())?;
        if !args.quiet {
            eprintln!("imported {replaced} embedding rows from {}", path.display());
        }
    }

    let mut log = create(&args.log)?;
    let mut log_error = None;
    let start = Instant::now();
    let quiet = args.quiet;
    let report = train_model(&mut model, &train_set, &valid_set, &train_config, |m| {
        if log_error.is_none() {
            let line = serde_json::to_string(m).expect("metrics serialise");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                log_error = Some(e);
            }
        }
        if !quiet {
            let valid = m
                .valid_loss
                .map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            eprintln!(
                "epoch {:>3}  train {:.4}  valid {valid}  {:.1}s",
                m.epoch,
                m.train_loss,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    if let Some(e) = log_error {
        return Err(write_err(&args.log, e));
    }
    log.flush().map_err(|e| write_err(&args.log, e))?;
    model.save(&args.checkpoint)?;
    writeln!(
        out,
        "best epoch {} of {}; checkpoint {} (sha256 {})",
        report.best_epoch,
        train_config.epochs,
        args.checkpoint.display(),
        model.digest()
    )
    .map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(report)
}

fn load_model(data: &crate::args::DataArgs, checkpoint: &Path) -> CliResult<HmtModel> {
    let taxonomy_path = data.taxonomy_path();
    require(&taxonomy_path, "taxonomy")?;
    require(checkpoint, "checkpoint")?;
    let taxonomy = Taxonomy::load(&taxonomy_path)?;
    Ok(HmtModel::load(checkpoint, &taxonomy)?)
}

/// One line of `hmt predict` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    #[serde(flatten)]
    pub response: PredictResponse,
}

fn parse_doc(arg: &str) -> CliResult<DocumentRecord> {
    match arg.split_once('=') {
        Some((t, text)) if !t.is_empty() => Ok(DocumentRecord {
            doc_type: t.to_string(),
            text: text.to_string(),
        }),
        _ => Err(user(format!("--doc expects TYPE=TEXT, got `{arg}`"))),
    }
}

fn request_error(id: &str, e: RequestError) -> CliError {
    match e {
        RequestError::Documents(m) => user(format!("record {id}: {m}")),
        RequestError::Prefix(m) => user(m),
        RequestError::Internal(m) => CliError::Internal(format!("record {id}: {m}")),
    }
}

pub fn predict(args: &PredictArgs, out: &mut dyn Write) -> CliResult<()> {
    let records = match (&args.input, args.doc.is_empty()) {
        (Some(path), _) => {
            require(path, "input file")?;
            read_records(path)?
        }
        (None, false) => vec![CorpusRecord {
            id: "input".into(),
            documents: args.doc.iter().map(|d| parse_doc(d)).collect::<CliResult<_>>()?,
            labels: None,
        }],
        (None, true) => return Err(user("give --input FILE or at least one --doc TYPE=TEXT")),
    };
    let model = load_model(&args.data, &args.checkpoint)?;
    wire::options(&model, &args.prefix, args.mode.into(), args.top_k)
        .map_err(|e| request_error("-", e))?;

    let mut file;
    let mut stdout;
    let (sink, target): (&mut dyn Write, String) = match &args.out {
        Some(p) => {
            file = create(p)?;
            (&mut file, p.display().to_string())
        }
        None => {
            stdout = out;
            (&mut stdout, "output".to_string())
        }
    };
    for r in &records {
        let response = wire::predict(&model, &r.id, &r.documents, &args.prefix, args.mode.into(), args.top_k)
            .map_err(|e| request_error(&r.id, e))?;
        let row = PredictionRow {
            id: r.id.clone(),
            response,
        };
        let line = serde_json::to_string(&row).expect("row serialises");
        writeln!(sink, "{line}").map_err(|e| user(format!("cannot write {target}: {e}")))?;
    }
    sink.flush().map_err(|e| user(format!("cannot write {target}: {e}")))?;
    Ok(())
}

fn require_gold(proposals: &[Proposal], path: &Path) -> CliResult<Vec<LabelPath>> {
    if proposals.is_empty() {
        return Err(user(format!("{} holds no records", path.display())));
    }
    let missing: Vec<&str> = proposals
        .iter()
        .filter(|p| p.gold.is_none())
        .map(|p| p.id.as_str())
        .collect();
    if let Some(first) = missing.first() {
        return Err(user(format!(
            "evaluation needs gold labels, but {} of {} records in {} have none (first: {first})",
            missing.len(),
            proposals.len(),
            path.display()
        )));
    }
    Ok(proposals.iter().map(|p| p.gold.clone().expect("checked")).collect())
}

fn read_predictions(path: &Path, taxonomy: &Taxonomy) -> CliResult<HashMap<String, LabelPath>> {
    let text = fs::read_to_string(path).map_err(|e| user(format!("cannot read {}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: PredictionRow = serde_json::from_str(line)
            .map_err(|e| user(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let codes: Vec<&str> = row.response.path.iter().map(|s| s.code.as_str()).collect();
        let labels = taxonomy.path_from_codes(&codes, row.response.terminated)?;
        out.insert(row.id, labels);
    }
    Ok(out)
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<MetricsReport> {
    let corpus_path = args.data.split(&args.corpus, "test");
    require(&corpus_path, "evaluation split")?;
    let mode: DecodeMode = args.mode.into();
    let report = match &args.predictions {
        Some(pred_path) => {
            let taxonomy_path = args.data.taxonomy_path();
            require(&taxonomy_path, "taxonomy")?;
            require(pred_path, "predictions file")?;
            let taxonomy = Taxonomy::load(&taxonomy_path)?;
            let proposals = load_corpus(&corpus_path, &taxonomy, TokenizerMode::default())?;
            let truths = require_gold(&proposals, &corpus_path)?;
            let mut by_id = read_predictions(pred_path, &taxonomy)?;
            let preds = proposals
                .iter()
                .map(|p| {
                    by_id
                        .remove(&p.id)
                        .ok_or_else(|| user(format!("no prediction for record {}", p.id)))
                })
                .collect::<CliResult<Vec<_>>>()?;
            MetricsReport::from_predictions(&preds, &truths, &taxonomy, mode)?
        }
        None => {
            let model = load_model(&args.data, &args.checkpoint)?;
            let depth = model.taxonomy().max_depth();
            if let Some(m) = args.prefix_lengths.iter().find(|&&m| m > depth) {
                return Err(user(format!(
                    "prefix length {m} exceeds the taxonomy depth {depth}"
                )));
            }
            let proposals = load_corpus(&corpus_path, model.taxonomy(), model.config().tokenizer)?;
            require_gold(&proposals, &corpus_path)?;
            evaluate(&model, &proposals, mode, &args.prefix_lengths)?
        }
    };
    write_report(&report, &args.report_dir)?;
    write!(out, "{}", report.summary()).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(report)
}

pub fn write_report(report: &MetricsReport, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| write_err(dir, e))?;
    let files = [
        ("report.json", report.to_json()),
        ("levels.csv", report.levels_csv()),
        ("expert_grid.csv", report.expert_grid_csv()),
        ("summary.txt", report.summary()),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| write_err(&path, e))?;
    }
    Ok(())
}

pub fn serve(args: &ServeArgs) -> CliResult<()> {
    let model = load_model(&args.data, &args.checkpoint)?;
    let state = AppState::new(model);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    runtime
        .block_on(service::serve(state, &args.bind))
        .map_err(|e| user(format!("cannot serve on {}: {e}", args.bind)))
}
