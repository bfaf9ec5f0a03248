use std::path::Path;
use std::process::{Command, Output};

mod common;

fn cfrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfrec")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cfrec(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&cfrec(dir.path(), &["train", "--p-uncond", "often"])), 1);
    assert_eq!(code(&cfrec(dir.path(), &["--help"])), 0);
}

#[test]
fn invalid_config_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cfrec(dir.path(), &["show-config", "--p-uncond", "1.5"])), 1);
    assert_eq!(code(&cfrec(dir.path(), &["show-config", "--split", "70:0:10"])), 1);
    std::fs::write(dir.path().join("bad.toml"), "[train]\nbogus = 1\n").unwrap();
    assert_eq!(code(&cfrec(dir.path(), &["--config", "bad.toml", "show-config"])), 1);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[train]\nlr = 0.5\nbatch_size = 7\n").unwrap();
    let out = cfrec(dir.path(), &["--config", "c.toml", "show-config", "--lr", "0.25"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("lr = 0.25"), "{text}");
    assert!(text.contains("batch_size = 7"), "{text}");
}

#[test]
fn missing_raw_file_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfrec(dir.path(), &["preprocess", "--raw", "nope.csv"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("cache").exists());
}

#[test]
fn end_to_end_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&cfrec(d, &["synth", "--out", "syn.csv"])), 0);
    let common = [
        "--raw", "syn.csv", "--format", "csv_unrated", "--split", "80:20", "--steps", "20", "--hidden", "16",
        "--max-steps", "40", "--eval-every", "20", "--seed", "4",
    ];
    let pre = cfrec(d, &[&["preprocess"], &common[..]].concat());
    assert_eq!(code(&pre), 0, "{}", String::from_utf8_lossy(&pre.stderr));
    assert!(String::from_utf8(pre.stdout).unwrap().contains("users         200"));

    let train = cfrec(d, &[&["train"], &common[..]].concat());
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    assert!(String::from_utf8(train.stdout).unwrap().contains("run/model.ckpt"));

    let eval = cfrec(d, &[&["evaluate", "--checkpoint", "run/model.ckpt", "--guidance-weights", "0,1"], &common[..]].concat());
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(d.join("run/reports/eval_w0.json").exists());
    assert!(d.join("run/reports/eval_w1.txt").exists());

    let rec = cfrec(d, &[&["recommend", "--checkpoint", "run/model.ckpt", "--history", "0,1,2", "-k", "3"], &common[..]].concat());
    assert_eq!(code(&rec), 0);
    assert_eq!(String::from_utf8(rec.stdout).unwrap().lines().count(), 4);

    let bad = cfrec(d, &[&["recommend", "--checkpoint", "run/model.ckpt", "--history", "400"], &common[..]].concat());
    assert_eq!(code(&bad), 2);
}
