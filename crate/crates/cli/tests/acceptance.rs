//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Runs without the test harness so that the criteria execute one after
//! another: the desk-scale runs are timed, and on a single core parallel
//! tests would inflate each other's wall clock.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::{binary, run};
use hmt_cli::commands::PredictionRow;
use hmt_cli::service::{router, AppState};
use hmt_cli::wire::PredictResponse;
use hmt_core::corpus::{generate_synthetic, load_corpus, read_records, Document, GenConfig, TokenizerMode};
use hmt_core::eval::{f1_scores, MetricsReport, Scope};
use hmt_core::{oracle, DecodeMode, HmtModel, LabelPath, ModelConfig, PredictOptions, Proposal, Taxonomy, Vocabulary};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

const SEEDS: [u64; 3] = [0, 1, 2];
const DESK_BUDGET: Duration = Duration::from_secs(600);
const GRADIENT_BUDGET: Duration = Duration::from_secs(60);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Written straight to the process stdout so the lines are never captured.
fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, name: &str, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            self.failures += 1;
        }
        let tag = if v.pass { "PASS" } else { "FAIL" };
        say(&format!("{tag}  {name}: {} [{:.1}s]", v.detail, start.elapsed().as_secs_f64()));
    }
}

/// One desk-scale run of the documented recipe through the CLI commands.
struct DeskRun {
    seed: u64,
    dir: tempfile::TempDir,
    elapsed: Duration,
    greedy: MetricsReport,
    constrained: MetricsReport,
}

impl DeskRun {
    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }

    fn model(&self) -> HmtModel {
        let taxonomy = Taxonomy::load(self.dir.path().join("data/taxonomy.json")).unwrap();
        HmtModel::load(self.dir.path().join("model.ckpt"), &taxonomy).unwrap()
    }

    fn test_set(&self, model: &HmtModel) -> Vec<Proposal> {
        load_corpus(self.dir.path().join("data/test.jsonl"), model.taxonomy(), TokenizerMode::Words).unwrap()
    }
}

fn desk_run(seed: u64) -> DeskRun {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let seed_s = seed.to_string();
    let start = Instant::now();
    run(&["gen", "--out", &p("data"), "--seed", &seed_s]).unwrap();
    run(&["train", "--data", &p("data"), "--checkpoint", &p("model.ckpt"), "--log", &p("metrics.jsonl"), "--seed", &seed_s, "--quiet"])
        .unwrap();
    run(&["eval", "--data", &p("data"), "--checkpoint", &p("model.ckpt"), "--report-dir", &p("greedy")]).unwrap();
    let elapsed = start.elapsed();
    run(&["eval", "--data", &p("data"), "--checkpoint", &p("model.ckpt"), "--mode", "constrained", "--report-dir", &p("constrained")])
        .unwrap();
    let read = |name: &str| -> MetricsReport {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(name).join("report.json")).unwrap()).unwrap()
    };
    let greedy = read("greedy");
    let constrained = read("constrained");
    say(&format!(
        "      seed {seed}: overall {:.4}, level 1 {:.4}, acc {:.3}, reasonable {:.3}, {:.0}s",
        greedy.overall.micro,
        greedy.levels[0].micro_f1,
        greedy.outcomes.acc_rate(),
        greedy.reasonable_path_rate,
        elapsed.as_secs_f64()
    ));
    DeskRun {
        seed,
        dir,
        elapsed,
        greedy,
        constrained,
    }
}

fn all_seeds(runs: &[DeskRun], f: impl Fn(&DeskRun) -> (bool, String)) -> Verdict {
    let results: Vec<(bool, String)> = runs.iter().map(&f).collect();
    let passed = results.iter().filter(|r| r.0).count();
    let detail = results
        .iter()
        .zip(runs)
        .map(|((_, d), r)| format!("seed {}: {d}", r.seed))
        .collect::<Vec<_>>()
        .join("; ");
    verdict(passed == runs.len() && !runs.is_empty(), format!("{passed}/{} seeds; {detail}", runs.len()))
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [4, 5, 6] {
        let r = oracle::primitive_gradient_check(seed).unwrap();
        ok &= r.max_rel_err < 1e-3;
        lines.push(format!("primitives[{seed}] {:.1e} over {}", r.max_rel_err, r.checked));
    }
    let gen = GenConfig {
        branching: vec![2, 2],
        train: 4,
        valid: 0,
        test: 0,
        ..GenConfig::default()
    };
    let corpus = generate_synthetic(&gen, 3).unwrap();
    let proposals = corpus.proposals(&corpus.train).unwrap();
    let vocab = Vocabulary::from_proposals(&gen.doc_types(), &proposals);
    let config = ModelConfig {
        hidden_dim: 8,
        encoder_layers: 1,
        decoder_layers: 1,
        num_heads: 2,
        dropout_p: 0.0,
        ..ModelConfig::desk()
    };
    let model = HmtModel::new(config, vocab, corpus.taxonomy).unwrap();
    let batch: Vec<(Proposal, LabelPath)> = proposals
        .iter()
        .take(2)
        .map(|p| (p.clone(), p.gold.clone().unwrap()))
        .collect();
    let r = oracle::model_gradient_check(&model, &batch, 1).unwrap();
    ok &= r.max_rel_err < 1e-3 && r.kinks * 20 <= r.checked;
    lines.push(format!(
        "model {:.1e} over {} ({} ReLU-kink entries re-probed at 1e-6)",
        r.max_rel_err, r.checked, r.kinks
    ));
    let elapsed = start.elapsed();
    ok &= elapsed < GRADIENT_BUDGET;
    verdict(ok, format!("{}; {:.1}s < 60s", lines.join(", "), elapsed.as_secs_f64()))
}

fn attention_oracles() -> Verdict {
    let sweeps = [
        ("mha", oracle::mha_sweep(101, 25).unwrap()),
        ("encoder", oracle::encoder_sweep(102, 22).unwrap()),
        ("decoder", oracle::decoder_sweep(103, 23).unwrap()),
    ];
    let ok = sweeps.iter().all(|(_, r)| r.max_abs_diff < 1e-10 && r.cases >= 20);
    let detail = sweeps
        .iter()
        .map(|(n, r)| format!("{n} {:.1e} over {} shapes", r.max_abs_diff, r.cases))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(ok, format!("{detail} (tol 1e-10)"))
}

fn teacher_forcing(run: &DeskRun) -> Verdict {
    let model = run.model();
    let t = model.taxonomy().clone();
    let test = run.test_set(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    let mut logits = 0;
    for trial in 0..100 {
        let enc = model.encode(&test[trial]).unwrap();
        let len = rng.gen_range(0..=t.max_depth());
        let mut path = Vec::new();
        let mut cur = Taxonomy::ROOT;
        for _ in 0..len {
            let kids = t.children(cur).unwrap();
            cur = kids[rng.gen_range(0..kids.len())];
            path.push(cur);
        }
        let batched = model.teacher_forced_logits(&enc, &path).unwrap();
        for (k, row) in batched.iter().enumerate() {
            let step = model.decode_logits(&enc, &path[..k]).unwrap();
            for (u, v) in row.iter().zip(&step) {
                worst = worst.max((u - v).abs());
                logits += 1;
            }
        }
    }
    verdict(worst < 1e-6, format!("max |diff| {worst:.1e} over {logits} logits, 100 prefixes (tol 1e-6)"))
}

fn constrained_on_arbitrary_inputs() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    let mut valid = 0;
    for seed in 0..5u64 {
        let gen = GenConfig {
            branching: vec![3, 4, 2],
            train: 20,
            valid: 0,
            test: 0,
            ..GenConfig::default()
        };
        let corpus = generate_synthetic(&gen, seed).unwrap();
        let proposals = corpus.proposals(&corpus.train).unwrap();
        let vocab = Vocabulary::from_proposals(&gen.doc_types(), &proposals);
        let config = ModelConfig {
            init_seed: seed,
            ..ModelConfig::desk()
        };
        let model = HmtModel::new(config, vocab, corpus.taxonomy).unwrap();
        for _ in 0..40 {
            let mut docs = Vec::new();
            for t in gen.doc_types() {
                if rng.gen_bool(0.7) {
                    let n = rng.gen_range(0..12);
                    docs.push(Document::new(t, (0..n).map(|_| format!("w{:03}", rng.gen_range(0..300))).collect()));
                }
            }
            let docs = if docs.is_empty() {
                vec![Document::new("title", vec![])]
            } else {
                docs
            };
            let p = Proposal::new("arbitrary", docs).unwrap();
            let temperature = [0.1, 1.0, 10.0][rng.gen_range(0..3)];
            let options = PredictOptions {
                mode: DecodeMode::Constrained,
                temperature,
                ..PredictOptions::default()
            };
            checked += 1;
            valid += model.predict(&p, &options).unwrap().valid as usize;
        }
    }
    (valid == checked, format!("untrained models on arbitrary records {valid}/{checked}"))
}

fn metric_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut comparisons = 0;
    for _ in 0..1000 {
        let branching: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(1..5)).collect();
        let t = Taxonomy::balanced(&branching).unwrap();
        let h = t.max_depth();
        let n = rng.gen_range(1..60);
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        for _ in 0..n {
            let (a, b) = (rng.gen_range(0..=h), rng.gen_range(0..=h));
            let valid = rng.gen_bool(0.6);
            preds.push(oracle::random_path(&mut rng, &t, a, valid));
            truths.push(oracle::random_path(&mut rng, &t, b, true));
        }
        let mut scopes: Vec<(Scope, Vec<usize>)> = (1..=h).map(|k| (Scope::Level(k), vec![k])).collect();
        scopes.push((Scope::Overall, (1..=h).collect()));
        for m in 1..h {
            scopes.push((Scope::Below(m), (m + 1..=h).collect()));
        }
        for (scope, levels) in scopes {
            let f = f1_scores(&preds, &truths, scope).unwrap();
            let (micro, macro_) = oracle::confusion_f1(&preds, &truths, &levels);
            worst = worst.max((f.micro - micro).abs()).max((f.macro_ - macro_).abs());
            comparisons += 1;
        }
    }
    verdict(
        worst <= 1e-12,
        format!("max |diff| {worst:.1e} over 1000 sets, {comparisons} scope comparisons (tol 1e-12)"),
    )
}

fn checkpoint_round_trip(run: &DeskRun) -> Verdict {
    let model = run.model();
    let test = run.test_set(&model);
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.ckpt");
    model.save(&copy).unwrap();
    let loaded = HmtModel::load(&copy, model.taxonomy()).unwrap();
    let mut identical = 0;
    let mut total = 0;
    for mode in [DecodeMode::Greedy, DecodeMode::Constrained] {
        let options = PredictOptions {
            mode,
            ..PredictOptions::default()
        };
        for p in &test {
            let a = model.predict(p, &options).unwrap();
            let b = loaded.predict(p, &options).unwrap();
            let same = a == b
                && a.score.to_bits() == b.score.to_bits()
                && a.levels.iter().zip(&b.levels).all(|(x, y)| {
                    x.distribution.iter().zip(&y.distribution).all(|(u, v)| u.to_bits() == v.to_bits())
                });
            identical += same as usize;
            total += 1;
        }
    }
    let other = Taxonomy::balanced(&[4, 3, 3]).unwrap();
    let refused = matches!(
        HmtModel::load(&copy, &other),
        Err(hmt_core::Error::FingerprintMismatch { .. })
    );
    verdict(
        identical == total && refused,
        format!("{identical}/{total} predictions bit-identical after save/load; foreign taxonomy refused: {refused}"),
    )
}

fn service_cli_consistency(run: &DeskRun) -> Verdict {
    let model = run.model();
    let tops: Vec<String> = model
        .taxonomy()
        .level(1)
        .iter()
        .map(|&id| model.taxonomy().code(id).to_string())
        .collect();
    let records = read_records(Path::new(&run.path("data/test.jsonl"))).unwrap();
    let app = router(AppState::new(model));
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();

    let mut cases: Vec<(Vec<String>, &str)> = vec![(vec![], "greedy"), (vec![], "constrained")];
    cases.extend(tops.iter().map(|c| (vec![c.clone()], "greedy")));
    cases.push((vec![tops[0].clone(), format!("{}01", tops[0])], "constrained"));
    let mut same = 0;
    let mut total = 0;
    for (prefix, mode) in &cases {
        let mut args = vec![
            "predict".to_string(),
            "--data".into(),
            run.path("data"),
            "--checkpoint".into(),
            run.path("model.ckpt"),
            "--input".into(),
            run.path("data/test.jsonl"),
            "--mode".into(),
            mode.to_string(),
        ];
        if !prefix.is_empty() {
            args.extend(["--prefix".into(), prefix.join(",")]);
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = binary(&args, run.dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let rows: Vec<PredictionRow> = String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(rows.len(), records.len());
        for (row, record) in rows.iter().zip(&records) {
            let body = serde_json::json!({"documents": record.documents, "expert_prefix": prefix, "mode": mode});
            let req = Request::post("/predict")
                .header("content-type", "application/json")
                .body(Body::from(body.to_string()))
                .unwrap();
            let http: PredictResponse = runtime.block_on(async {
                let resp = app.clone().oneshot(req).await.unwrap();
                assert_eq!(resp.status(), StatusCode::OK);
                let bytes = resp.into_body().collect().await.unwrap().to_bytes();
                serde_json::from_slice(&bytes).unwrap()
            });
            same += (http == row.response) as usize;
            total += 1;
        }
    }
    verdict(
        same == total,
        format!("{same}/{total} identical responses across {} prefix/mode cases (binary vs HTTP)", cases.len()),
    )
}

fn main() {
    let mut suite = Suite { failures: 0 };
    say("acceptance criteria");
    suite.check("gradient suite", gradient_suite);
    suite.check("attention/norm oracles", attention_oracles);
    suite.check("metric oracle", metric_oracle);

    say(&format!("      desk-scale recipe, seeds {SEEDS:?} (gen -> train -> eval with default flags)"));
    let mut runs = Vec::new();
    for seed in SEEDS {
        match catch_unwind(|| desk_run(seed)) {
            Ok(r) => runs.push(r),
            Err(_) => say(&format!("      seed {seed}: run failed")),
        }
    }
    let complete = runs.len() == SEEDS.len();

    suite.check("desk-scale learning", || {
        let v = all_seeds(&runs, |r| {
            let overall = r.greedy.overall.micro;
            let l1 = r.greedy.levels[0].micro_f1;
            (
                overall >= 0.90 && l1 >= 0.95 && r.elapsed < DESK_BUDGET,
                format!("overall {overall:.4} >= 0.90, level 1 {l1:.4} >= 0.95, {:.0}s < 600s", r.elapsed.as_secs_f64()),
            )
        });
        verdict(v.pass && complete, v.detail)
    });
    suite.check("expert-knowledge monotonicity", || {
        let v = all_seeds(&runs, |r| {
            let mut ok = true;
            let mut parts = Vec::new();
            for m in [1, 2] {
                let Some(row) = r.greedy.expert_grid.iter().find(|row| row.prefix_len == m) else {
                    return (false, format!("no m={m} row"));
                };
                let conditioned = row.levels.iter().filter(|l| l.level <= m).all(|l| l.micro_f1 == 1.0);
                let gain = row.remaining.micro >= row.baseline_remaining.micro - 0.01;
                ok &= conditioned && gain && row.evaluated > 0;
                parts.push(format!(
                    "m={m} conditioned=1.0:{conditioned} remaining {:.4} vs m=0 {:.4}",
                    row.remaining.micro, row.baseline_remaining.micro
                ));
            }
            (ok, parts.join(", "))
        });
        verdict(v.pass && complete, v.detail)
    });
    suite.check("path-length sensitivity", || {
        let v = all_seeds(&runs, |r| {
            let o = &r.greedy.outcomes;
            let n = r.greedy.proposals;
            (
                o.acc_rate() >= 0.85 && o.total() == n,
                format!("acc {:.3} >= 0.85, acc+sl+se+other {}+{}+{}+{} = {n}", o.acc_rate(), o.acc, o.sl, o.se, o.other),
            )
        });
        verdict(v.pass && complete, v.detail)
    });
    suite.check("hierarchy dependency", || {
        let v = all_seeds(&runs, |r| {
            let g = r.greedy.reasonable_path_rate;
            let c = r.constrained.reasonable_path_rate;
            (g >= 0.90 && c == 1.0, format!("greedy {g:.3} >= 0.90, constrained {c:.3} == 1.0"))
        });
        let (arbitrary_ok, arbitrary) = constrained_on_arbitrary_inputs();
        verdict(v.pass && arbitrary_ok && complete, format!("{}; {arbitrary}", v.detail))
    });
    match runs.first() {
        Some(first) => {
            suite.check("teacher-forcing equivalence", || teacher_forcing(first));
            suite.check("checkpoint round-trip", || checkpoint_round_trip(first));
            suite.check("service/CLI consistency", || service_cli_consistency(first));
        }
        None => {
            for name in ["teacher-forcing equivalence", "checkpoint round-trip", "service/CLI consistency"] {
                suite.check(name, || verdict(false, "no desk-scale model was trained"));
            }
        }
    }

    say(&format!("{} criteria failed", suite.failures));
    if suite.failures > 0 {
        std::process::exit(1);
    }
}
