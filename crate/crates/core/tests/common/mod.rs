#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn smoke_dir() -> PathBuf {
    fixture_dir().join("smoke")
}

pub fn golden_dir() -> PathBuf {
    smoke_dir().join("golden")
}

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn egokit(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_egokit")).args(args).output().expect("spawn egokit");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Files produced by the smoke pipeline, all compared against goldens.
pub const SMOKE_OUTPUTS: [&str; 12] = [
    "decisions.jsonl",
    "kept.jsonl",
    "segments.jsonl",
    "qa_fg_spatial.jsonl",
    "qa_fg_temporal.jsonl",
    "qa_long.jsonl",
    "rewards_og.jsonl",
    "rewards_tg.jsonl",
    "report_spatial.json",
    "report_temporal.json",
    "report_mc.json",
    "toy_report.jsonl",
];

/// filter -> segment -> qa build (mock) -> reward score -> eval, plus a short
/// toy training run. Returns the first failing step.
pub fn run_smoke(out: &Path) -> Result<(), String> {
    let src = smoke_dir();
    let s = |name: &str| src.join(name).display().to_string();
    let o = |name: &str| out.join(name).display().to_string();
    let mock = format!("mock:{}", s("canned.jsonl"));

    let steps: Vec<Vec<String>> = vec![
        to_args(&[
            "curate",
            "filter",
            "--detections",
            &s("clips.jsonl"),
            "--out",
            &o("decisions.jsonl"),
            "--kept",
            &o("kept.jsonl"),
        ]),
        to_args(&["curate", "segment", "--clips", &o("kept.jsonl"), "--out", &o("segments.jsonl")]),
        to_args(&[
            "qa",
            "build",
            "--split",
            "fg-spatial",
            "--clips",
            &o("kept.jsonl"),
            "--adapter",
            &mock,
            "--out",
            &o("qa_fg_spatial.jsonl"),
            "--seed",
            "7",
            "--backoff-ms",
            "0",
        ]),
        to_args(&[
            "qa",
            "build",
            "--split",
            "fg-temporal",
            "--clips",
            &o("kept.jsonl"),
            "--adapter",
            &mock,
            "--out",
            &o("qa_fg_temporal.jsonl"),
            "--seed",
            "7",
            "--backoff-ms",
            "0",
        ]),
        to_args(&[
            "qa",
            "build",
            "--split",
            "long",
            "--clips",
            &o("segments.jsonl"),
            "--adapter",
            &mock,
            "--out",
            &o("qa_long.jsonl"),
            "--seed",
            "7",
            "--backoff-ms",
            "0",
        ]),
        to_args(&[
            "reward",
            "score",
            "--task",
            "og",
            "--pred",
            &s("pred_spatial.jsonl"),
            "--gt",
            &o("qa_fg_spatial.jsonl"),
            "--out",
            &o("rewards_og.jsonl"),
        ]),
        to_args(&[
            "reward",
            "score",
            "--task",
            "tg",
            "--pred",
            &s("pred_temporal.jsonl"),
            "--gt",
            &o("qa_fg_temporal.jsonl"),
            "--out",
            &o("rewards_tg.jsonl"),
        ]),
        to_args(&[
            "eval",
            "grounding",
            "--kind",
            "spatial",
            "--pred",
            &s("pred_spatial.jsonl"),
            "--gt",
            &o("qa_fg_spatial.jsonl"),
            "--report",
            &o("report_spatial.json"),
        ]),
        to_args(&[
            "eval",
            "grounding",
            "--kind",
            "temporal",
            "--pred",
            &s("pred_temporal.jsonl"),
            "--gt",
            &o("qa_fg_temporal.jsonl"),
            "--tau",
            "0.05,0.5",
            "--report",
            &o("report_temporal.json"),
        ]),
        to_args(&[
            "eval",
            "grounding",
            "--kind",
            "mc",
            "--pred",
            &s("mc_pred.jsonl"),
            "--gt",
            &s("mc_gt.jsonl"),
            "--report",
            &o("report_mc.json"),
        ]),
        to_args(&[
            "grpo",
            "train-toy",
            "--task",
            "box",
            "--iters",
            "20",
            "--seed",
            "3",
            "--report",
            &o("toy_report.jsonl"),
        ]),
    ];
    for args in &steps {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let r = egokit(&refs);
        if r.code != 0 {
            return Err(format!("`egokit {}` exited {}: {}", refs[..2].join(" "), r.code, r.stderr.trim()));
        }
    }
    Ok(())
}

fn to_args(a: &[&str]) -> Vec<String> {
    a.iter().map(|s| s.to_string()).collect()
}

/// Compares smoke outputs with the committed goldens, or refreshes them when
/// `UPDATE_GOLDEN` is set. Returns the names of differing files.
pub fn compare_with_golden(out: &Path) -> Vec<String> {
    let golden = golden_dir();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(&golden).unwrap();
        for name in SMOKE_OUTPUTS {
            std::fs::copy(out.join(name), golden.join(name)).unwrap();
        }
    }
    SMOKE_OUTPUTS
        .iter()
        .filter(|name| {
            let got = std::fs::read(out.join(name)).ok();
            let want = std::fs::read(golden.join(name)).ok();
            got.is_none() || got != want
        })
        .map(|s| s.to_string())
        .collect()
}
