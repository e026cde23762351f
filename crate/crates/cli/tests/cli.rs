use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn blobs_config(dir: &Path, extra: &str) -> PathBuf {
    let base = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/blobs.conf")).unwrap();
    let path = dir.join("blobs.conf");
    std::fs::write(&path, format!("{base}\noutput_dir = run\n{extra}")).unwrap();
    path
}

fn dldr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dldr")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_extract_ptrain_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs_config(dir.path(), "");
    let out = dldr(&["train", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for f in ["init.dltr", "final.dltr", "trajectory.dltr", "metrics.csv", "run.meta"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let out = dldr(&["extract", "--config", s(&cfg), "--d", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("dimension 4"));

    let pout = dir.path().join("projected");
    let out = dldr(&[
        "ptrain",
        "--config",
        s(&cfg),
        "--basis",
        s(&run.join("basis.dlbs")),
        "--init",
        s(&run.join("init.dltr")),
        "--out",
        s(&pout),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(pout.join("projected_metrics.csv").exists());
    assert!(pout.join("projected_final.dltr").exists());

    let out = dldr(&["spectrum", "--config", s(&cfg)]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 13);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs_config(dir.path(), "baseline.learning_rate = 0.1\n");
    let out = dldr(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline.learning_rate"));
}

#[test]
fn bad_trajectory_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs_config(dir.path(), "");
    let bogus = dir.path().join("bogus.dltr");
    std::fs::write(&bogus, b"NOPE and then some bytes").unwrap();
    let out = dldr(&["extract", "--config", s(&cfg), "--trajectory", s(&bogus)]);
    assert_eq!(out.status.code(), Some(3));
    let out = dldr(&["extract", "--config", s(&cfg), "--trajectory", s(&dir.path().join("absent.dltr"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn d_beyond_snapshot_count_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs_config(dir.path(), "baseline.epochs = 1\nsampling.include_init = false\n");
    assert!(dldr(&["train", "--config", s(&cfg)]).status.success());
    let out = dldr(&["extract", "--config", s(&cfg), "--d", "3"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t = 2"));
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = blobs_config(dir.path(), "baseline.epochs = 1\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(dldr(&["train", "--config", s(&cfg), "--seed", "0", "--out", s(&a)]).status.success());
    assert!(dldr(&["train", "--config", s(&cfg), "--seed", "1", "--out", s(&b)]).status.success());
    let meta = std::fs::read_to_string(b.join("run.meta")).unwrap();
    assert!(meta.contains("seeds.init=1\n") && meta.contains("seeds.data=2\n") && meta.contains("seeds.noise=3\n"));
    assert_ne!(std::fs::read(a.join("init.dltr")).unwrap(), std::fs::read(b.join("init.dltr")).unwrap());
}
