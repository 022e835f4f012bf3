use std::path::PathBuf;
use std::process::{Command, Output};

fn difuada(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_difuada")).args(args).env_remove("DIFUADA_THREADS").output().expect("spawn difuada")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("difuada-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn difuada_line(line: &str) -> Output {
    difuada(&line.split_whitespace().collect::<Vec<_>>())
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn no_arguments_prints_usage() {
    let o = difuada(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_checkpoint_is_reported() {
    let o = difuada(&["solve", "--ckpt", "/nonexistent/model.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot load checkpoint"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(difuada(&["verify", "--bogus"]).status.code(), Some(2));
}

#[test]
fn empty_method_list_fails() {
    let dir = scratch("methods");
    let ckpt = dir.join("m.ckpt");
    let o = difuada_line(&format!(
        "train --samples 8 --epochs 1 --eval 0 --layers 1 --hidden 4 --embed-dim 8 --ckpt {} --out-dir {}",
        ckpt.display(),
        dir.display()
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = difuada(&["bench", "--ckpt", ckpt.to_str().unwrap(), "--methods", "", "--sizes", "6", "--instances", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_solve_bench_round_trip() {
    let dir = scratch("flow");
    let d = dir.to_str().unwrap();
    let ckpt = dir.join("m.ckpt");
    let c = ckpt.to_str().unwrap();
    let o = difuada_line(&format!(
        "--out-dir {d} train --n 6 --samples 16 --epochs 2 --eval 4 --layers 1 --hidden 8 --embed-dim 8 --ckpt {c}"
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.join("train_log.csv").exists());

    let trace = dir.join("trace.csv");
    let o = difuada(&["solve", "--ckpt", c, "--problem", "op", "--n", "7", "--K", "3", "--trace-out", trace.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("feasible true"));
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 5);

    let bench = |out: &str| {
        let o = difuada_line(&format!("--seed 4 --out-dir {out} bench --ckpt {c} --problem pctsp --sizes 6 --instances 3 --K 2"));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(PathBuf::from(out).join("bench_pctsp.csv")).unwrap()
    };
    let a = bench(&format!("{d}/a"));
    let b = bench(&format!("{d}/b"));
    assert_eq!(a, b);
    assert!(dir.join("a/bench_pctsp_timing.csv").exists());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_file_overrides_flags() {
    let dir = scratch("config");
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "DIFUADA-CONFIG v1\nout_dir ").unwrap();
    let o = difuada(&["--config", cfg.to_str().unwrap(), "oracle", "--problem", "tsp", "--n", "5"]);
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(&cfg, "DIFUADA-CONFIG v1\nseed 9\nend\n").unwrap();
    let with_file = difuada(&["--seed", "1", "--config", cfg.to_str().unwrap(), "oracle", "--problem", "pctsp", "--n", "6"]);
    let direct = difuada(&["--seed", "9", "oracle", "--problem", "pctsp", "--n", "6"]);
    assert!(with_file.status.success());
    assert_eq!(stdout(&with_file), stdout(&direct));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn verify_reports_every_check() {
    let dir = scratch("verify");
    let o = difuada(&["--out-dir", dir.to_str().unwrap(), "verify", "--instances", "5", "--n", "6", "--fixtures", "5"]);
    let text = stdout(&o);
    for name in ["pctsp characterization", "max cardinality", "node-splitting reduction", "time-expanded graph"] {
        assert!(text.lines().any(|l| l.starts_with("PASS") && l.contains(name)), "{text}");
    }
    // The literal OP statement has counterexamples, so the run exits 1.
    assert_eq!(o.status.code(), Some(if text.contains("FAIL") { 1 } else { 0 }));
    std::fs::remove_dir_all(&dir).unwrap();
}
