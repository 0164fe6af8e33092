use std::path::Path;
use std::process::Command;

use waveletgan::cli::cli_main;

const TINY: [&str; 10] = [
    "--set", "base_width=4", "--set", "disc_width=4", "--set", "z_dim=8", "--set", "batch=4", "--set", "n_disc=2",
];

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("waveletgan").chain(args.iter().copied()))
}

fn train(out: &Path, extra: &[&str]) -> i32 {
    let out = out.to_str().unwrap();
    let mut args = vec!["train", "--synthetic", "24", "--data-seed", "3", "--holdout", "8", "--out", out, "--log-every", "0"];
    args.extend_from_slice(extra);
    run(&args)
}

fn rows_without_wall_clock(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_waveletgan");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(code(&["--help"]), Some(0));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["inspect", "/nonexistent/checkpoint.wgc"]), Some(1));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train"]), 2);
    assert_eq!(train(dir.path(), &["--set", "no_such_key=1"]), 2);
    assert_eq!(train(dir.path(), &["--set", "base_width=wide"]), 2);
    assert_eq!(run(&["train", "--out", dir.path().to_str().unwrap()]), 2);
}

#[test]
fn zero_steps_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TINY.to_vec();
    args.extend(["--steps", "0"]);
    assert_eq!(train(dir.path(), &args), 0);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv, "step,d_loss,g_loss,proxy_fid,scale_0,scale_1,scale_2,scale_3,scale_4,wall_ms\n");
    assert!(dir.path().join("final.wgc").exists());
    assert!(dir.path().join("config.txt").exists());
}

#[test]
fn resume_reproduces_straight_run() {
    let straight = tempfile::tempdir().unwrap();
    let mut args = TINY.to_vec();
    args.extend(["--steps", "4", "--set", "checkpoint_every=2", "--set", "sample_every=0"]);
    assert_eq!(train(straight.path(), &args), 0);

    let split = tempfile::tempdir().unwrap();
    let mut first = TINY.to_vec();
    first.extend(["--steps", "2", "--set", "checkpoint_every=2", "--set", "sample_every=0"]);
    assert_eq!(train(split.path(), &first), 0);
    let ck = split.path().join("checkpoint_000002.wgc");
    assert_eq!(train(split.path(), &["--resume", ck.to_str().unwrap(), "--steps", "4"]), 0);

    let a = rows_without_wall_clock(&straight.path().join("metrics.csv"));
    let b = rows_without_wall_clock(&split.path().join("metrics.csv"));
    assert_eq!(a.len(), 5);
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(straight.path().join("final.wgc")).unwrap(),
        std::fs::read(split.path().join("final.wgc")).unwrap()
    );
}

#[test]
fn sample_fid_and_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = TINY.to_vec();
    args.extend(["--steps", "1"]);
    assert_eq!(train(dir.path(), &args), 0);
    let ck = dir.path().join("final.wgc");
    let ck = ck.to_str().unwrap();
    let grid = dir.path().join("grid.pgm");
    assert_eq!(run(&["sample", "--checkpoint", ck, "--out", grid.to_str().unwrap(), "--rows", "2", "--cols", "3"]), 0);
    let (w, h, c, _) = waveletgan::data::parse_pnm(&std::fs::read(&grid).unwrap()).unwrap();
    assert_eq!(c, 1);
    assert!(w > 3 * 28 && h > 2 * 28);
    let fid = ["fid", "--checkpoint", ck, "--synthetic", "24", "--data-seed", "3", "--holdout", "8", "--repeats", "2"];
    assert_eq!(run(&fid), 0);
    assert_eq!(run(&["fid", "--checkpoint", ck, "--synthetic", "24", "--extractor", "inception"]), 2);
    assert_eq!(run(&["inspect", ck]), 0);
}

#[test]
fn gradcheck_passes() {
    assert_eq!(run(&["gradcheck", "--seed", "3"]), 0);
}
