#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use hmt_cli::args::Cli;
use hmt_cli::commands;

pub const BIN: &str = env!("CARGO_BIN_EXE_hmt");

/// Parses `args` as `hmt` would and runs the command, returning stdout.
pub fn run(args: &[&str]) -> Result<String, hmt_cli::CliError> {
    let cli = Cli::try_parse_from(std::iter::once("hmt").chain(args.iter().copied()))
        .unwrap_or_else(|e| panic!("bad test arguments {args:?}: {e}"));
    let mut out = Vec::new();
    commands::run(cli, &mut out)?;
    Ok(String::from_utf8(out).expect("utf-8 output"))
}

pub fn binary(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("HMT_BIND")
        .output()
        .expect("binary runs")
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    /// A small generated corpus.
    pub fn data(seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        run(&[
            "gen",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            &seed.to_string(),
            "--branching",
            "3,2,2",
            "--vocab-size",
            "60",
            "--signature-tokens",
            "2",
            "--train",
            "60",
            "--valid",
            "20",
            "--test",
            "20",
        ])
        .unwrap();
        Self { dir }
    }

    /// The corpus plus a tiny model trained for `epochs`.
    pub fn trained(seed: u64, epochs: usize) -> Self {
        let f = Self::data(seed);
        let data = f.path("data");
        let ckpt = f.path("model.ckpt");
        let log = f.path("metrics.jsonl");
        run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--log",
            log.to_str().unwrap(),
            "--hidden-dim",
            "8",
            "--heads",
            "2",
            "--encoder-layers",
            "1",
            "--epochs",
            &epochs.to_string(),
            "--batch-size",
            "8",
            "--seed",
            &seed.to_string(),
            "--quiet",
        ])
        .unwrap();
        f
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }
}
