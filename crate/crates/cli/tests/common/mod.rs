// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biasheads::synthetic::{planted_bias_fixture, FixtureFiles};

pub fn planted_files(dir: &Path, sentences: usize) -> FixtureFiles {
    planted_bias_fixture::<f32>(7, sentences).write_files(dir).unwrap()
}

pub fn biasheads(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biasheads"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Common input flags for a fixture.
pub fn inputs(f: &FixtureFiles) -> Vec<String> {
    vec![
        "--model".into(),
        path(&f.model).into(),
        "--vocab".into(),
        path(&f.vocab).into(),
        "--wordlists".into(),
        path(&f.wordlists).into(),
        "--corpus".into(),
        path(&f.corpus).into(),
    ]
}

pub fn run(command: &str, f: &FixtureFiles, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![command.into()];
    args.extend(inputs(f));
    args.extend(["--out".into(), path(out).into()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    biasheads(&refs)
}

pub fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}
