use std::path::Path;
use std::process::{Command, Output};

fn meltpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meltpinn")).args(args).output().expect("spawn meltpinn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn gen(dir: &Path) {
    let out = dir.to_str().unwrap();
    let o = meltpinn(&["gen-data", "--re", "100", "--pe", "20", "--grid-n", "16", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(code(&meltpinn(&["gen-data", "--re", "-5", "--pe", "20", "--out", out])), 2);
    assert_eq!(code(&meltpinn(&["gen-data", "--pe", "20", "--out", out])), 2);
    assert_eq!(code(&meltpinn(&["train-forward", "--out", out])), 2);
    assert_eq!(code(&meltpinn(&["bogus"])), 2);
}

#[test]
fn missing_input_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = meltpinn(&["train-forward", "--data", "/nonexistent/data", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 4);
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a);
    gen(&b);
    let ha = std::fs::read(a.join("header.json")).unwrap();
    let hb = std::fs::read(b.join("header.json")).unwrap();
    assert_eq!(ha, hb);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["exit_status"], 0);
    assert_eq!(m["config"]["grid_n"], 16);
}

#[test]
fn train_then_eval_reproduces_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data);
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[train]\nhidden_layers = 2\nwidth = 8\n").unwrap();
    let fwd = tmp.path().join("fwd");
    let o = meltpinn(&[
        "--config", cfg.to_str().unwrap(),
        "train-forward", "--data", data.to_str().unwrap(),
        "--points-per-time", "30", "--times", "3", "--iterations", "10", "--eval-every", "5",
        "--out", fwd.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(fwd.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["train"]["seed"], 5);
    assert_eq!(m["config"]["train"]["width"], 8);
    assert_eq!(m["config"]["train"]["max_iterations"], 10);
    assert!(m["inputs"].as_object().unwrap().len() >= 2);

    let ev = tmp.path().join("ev");
    let o = meltpinn(&[
        "eval", "--model", fwd.join("checkpoint.mpck").to_str().unwrap(),
        "--data", data.to_str().unwrap(), "--out", ev.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(fwd.join("report.csv")).unwrap(), std::fs::read(ev.join("report.csv")).unwrap());
}

#[test]
fn bad_config_key_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearnin_rate = 0.1\n").unwrap();
    let o = meltpinn(&["--config", cfg.to_str().unwrap(), "bench-solver", "--grids", "8,16,32"]);
    assert_eq!(code(&o), 2);
}
