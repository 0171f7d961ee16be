//! Helpers for driving the built binary in integration tests.
//! Each test binary uses its own subset of these.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn memvr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_memvr"))
        .args(args)
        .output()
        .expect("spawn memvr binary")
}

pub fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

pub fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

pub fn assert_code(out: &Output, want: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "{what}: exit {:?}, stderr: {}",
        out.status.code(),
        stderr_of(out)
    );
}

/// Write a small 12-layer model so layer-count behavior (11 probe
/// columns) stays cheap to exercise.
pub fn init_twelve_layer_weights(dir: &Path) -> PathBuf {
    let path = dir.join("twelve.bin");
    let out = memvr(&[
        "init-weights",
        "--out",
        path.to_str().unwrap(),
        "--layers",
        "12",
        "--dim",
        "16",
        "--ffn-dim",
        "32",
        "--vocab",
        "32",
        "--heads",
        "2",
        "--visual-tokens",
        "2",
        "--max-seq",
        "64",
        "--seed",
        "5",
    ]);
    assert_code(&out, 0, "init twelve-layer weights");
    path
}

/// Write a tiny 4-layer model for fast decoding tests.
pub fn init_tiny_weights(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.bin");
    let out = memvr(&[
        "init-weights",
        "--out",
        path.to_str().unwrap(),
        "--layers",
        "4",
        "--dim",
        "16",
        "--ffn-dim",
        "32",
        "--vocab",
        "32",
        "--heads",
        "2",
        "--visual-tokens",
        "2",
        "--max-seq",
        "64",
        "--seed",
        "9",
    ]);
    assert_code(&out, 0, "init tiny weights");
    path
}
