//! The `g2i` binary on a small synthetic graph.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 14] = [
    "--set",
    "synth_blocks=12,12,12",
    "--set",
    "synth_k=16",
    "--set",
    "epochs=3",
    "--set",
    "n_permutations=2",
    "--set",
    "fc_sizes=32,16",
    "--set",
    "conv_layers=2",
    "--seed",
    "9",
];

fn g2i(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_g2i")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = g2i(args);
    assert!(out.status.success(), "g2i {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL).collect()
}

fn inputs(data: &Path) -> Vec<String> {
    ["edges.tsv", "features.csv", "labels.csv"]
        .iter()
        .zip(["--edges", "--features", "--labels"])
        .flat_map(|(f, flag)| [flag.to_string(), data.join(f).display().to_string()])
        .collect()
}

#[test]
fn stage_by_stage_matches_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&with_small(&["synth", "--out", data.to_str().unwrap()]));
    let input_args = inputs(&data);
    let input_refs: Vec<&str> = input_args.iter().map(String::as_str).collect();

    let full = dir.path().join("full");
    let mut args = with_small(&["run", "--out", full.to_str().unwrap()]);
    args.extend(&input_refs);
    ok(&args);

    let staged = dir.path().join("staged");
    for stage in ["ingest", "cluster", "layout", "render", "train", "eval", "explain", "metrics"] {
        let mut args = with_small(&[stage, "--out", staged.to_str().unwrap()]);
        args.extend(&input_refs);
        ok(&args);
    }

    let mut names: Vec<_> = fs::read_dir(&full).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for expected in ["images.g2im", "checkpoint.g2im", "train_report.csv", "importance.csv", "clustering_metrics.csv"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
    for name in &names {
        assert_eq!(fs::read(full.join(name)).unwrap(), fs::read(staged.join(name)).unwrap(), "{name:?} differs");
    }
}

#[test]
fn config_file_supplies_the_inputs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&with_small(&["synth", "--out", dir.path().join("data").to_str().unwrap()]));
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "edges = data/edges.tsv\nfeatures = data/features.csv\nlabels = data/labels.csv\nout = out\ncommunities = 3\n",
    )
    .unwrap();
    ok(&["cluster", "--config", cfg.to_str().unwrap()]);
    let text = fs::read_to_string(dir.path().join("out/communities.csv")).unwrap();
    assert_eq!(text.lines().count(), 37);
    let max = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).max();
    assert_eq!(max, Some(2));
}

#[test]
fn failures_exit_nonzero_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = g2i(&["cluster", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: ingest: --edges is required"));

    ok(&with_small(&["synth", "--out", dir.path().join("data").to_str().unwrap()]));
    let input_args = inputs(&dir.path().join("data"));
    let mut args = vec!["train", "--out", dir.path().to_str().unwrap()];
    args.extend(input_args.iter().map(String::as_str));
    let out = g2i(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error: train:"));

    let out = g2i(&["cluster", "--set", "bogus=1"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}
