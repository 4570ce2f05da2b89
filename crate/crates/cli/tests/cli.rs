use std::path::Path;
use std::process::{Command, Output};

fn predinfo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_predinfo"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn predinfo")
}

const SMALL: &[&str] = &[
    "--set", "total_len=30", "--set", "split_index=20", "--set", "t_past=8", "--set", "t_future=8",
    "--set", "train_steps=30", "--set", "hidden_dim=4", "--set", "critic_steps=60",
    "--set", "n_est_train=300", "--set", "n_est_val=200", "--set", "n_est_test=200",
];

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(predinfo(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(predinfo(dir.path(), &["train", "--out", "m.ckpt", "--set", "bogus=1"]).status.code(), Some(1));
    assert_eq!(predinfo(dir.path(), &["plot", "--points", "missing.csv", "--out", "x.svg"]).status.code(), Some(1));
    let unstable = predinfo(dir.path(), &["bho-gen", "--dt", "5", "--gamma", "0.001", "--out", "x.tsv"]);
    assert_eq!(unstable.status.code(), Some(2));
    assert_eq!(predinfo(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn frontier_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = predinfo(dir.path(), &["gib-frontier", "--points", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "i_past,i_future");
    assert_eq!(lines.len(), 4);
}

#[test]
fn train_estimate_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = predinfo(d, &with_small(&["train", "--sigma", "0.2", "--out", "m.ckpt"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = predinfo(d, &with_small(&["estimate", "--model", "m.ckpt", "--out", "p.csv"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(d.join("p.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model_id,cell,train_noise_sigma,eval_noise_sigma,seed,i_past_lower,i_past_upper,i_future_nce,critic_stop_step"
    );
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&fields[..4], &["m", "vanilla", "0.2", "0.2"]);
    let (lo, up): (f64, f64) = (fields[5].parse().unwrap(), fields[6].parse().unwrap());
    assert!(lo > 0.0 && lo <= up);

    let out = predinfo(d, &with_small(&["sweep", "--set", "sigmas=0.3", "--set", "seeds=0", "--set", "cells=gru", "--out", "run"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = predinfo(d, &["plot", "--points", "run/points.csv", "--frontier", "run/frontier.csv", "--out", "run/p.svg"]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(d.join("run/p.svg")).unwrap().starts_with("<svg"));
}
