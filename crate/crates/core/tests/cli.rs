use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cooldown_lab::cli::checkpoint::load_checkpoint;
use cooldown_lab::cli::config::load_config;
use cooldown_lab::cli::manifest::{RunManifest, RunStatus};
use cooldown_lab::trainer::{evaluate, RunRecord};
use tempfile::TempDir;

const SMALL: &str = r#"{
  "seed": 5,
  "task": {"kind": "noisy_quadratic", "dim": 10},
  "schedule": {"kind": "constant", "peak_lr": 0.01, "total_steps": 200, "warmup_steps": 20},
  "eval_every": 20,
  "checkpoint_every": 100
}"#;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cooldown-lab"))
        .args(args)
        .current_dir(dir)
        .env_remove("COOLDOWN_LAB_OUT_DIR")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn schedule_table_to_stdout_and_file() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "s.json",
        r#"{"kind": "constant_cooldown", "peak_lr": 1.0, "total_steps": 10, "warmup_steps": 2, "decay_steps": 4, "shape": "linear"}"#,
    );
    let out = bin(tmp.path(), &["schedule", "--config", "s.json"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[0].starts_with("step,"));
    let out = bin(tmp.path(), &["schedule", "--config", "s.json", "--stride", "5", "--out", "t.csv"]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(tmp.path().join("t.csv")).unwrap().lines().count(), 4);
}

#[test]
fn unknown_flag_is_usage_error_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", SMALL);
    let out = bin(tmp.path(), &["train", "--config", "c.json", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(files_under(tmp.path()), vec![tmp.path().join("c.json")]);
}

#[test]
fn invalid_config_exits_3() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", r#"{"optimizer": {"beta3": 1}}"#);
    let out = bin(tmp.path(), &["train", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("optimizer.beta3"));
    write(tmp.path(), "d.json", r#"{"schedule": {"kind": "constant", "peak_lr": -1}}"#);
    assert_eq!(bin(tmp.path(), &["train", "--config", "d.json"]).status.code(), Some(3));
}

#[test]
fn train_writes_reloadable_artifacts_and_refuses_rerun() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", SMALL);
    let out = bin(tmp.path(), &["train", "--config", "c.json", "--run-id", "a", "--out-dir", "o"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("o/a");
    let manifest = RunManifest::load(&run).unwrap();
    assert_eq!(manifest.status, RunStatus::Complete);
    assert_eq!(load_config(run.join("config.json")).unwrap().seed, 5);
    let record = RunRecord::read_csv(fs::File::open(run.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(record.last().unwrap().step, 200);
    let ckpt = load_checkpoint(run.join("checkpoints/step-00000200.ckpt")).unwrap();
    assert_eq!(evaluate(&ckpt).unwrap(), record.last().unwrap().eval_loss);

    let again = bin(tmp.path(), &["train", "--config", "c.json", "--run-id", "a", "--out-dir", "o"]);
    assert_eq!(again.status.code(), Some(1));
    let forced = bin(tmp.path(), &["train", "--config", "c.json", "--run-id", "a", "--out-dir", "o", "--force"]);
    assert!(forced.status.success());
    assert_eq!(
        fs::read(run.join("metrics.csv")).unwrap(),
        fs::read(tmp.path().join("o/a/metrics.csv")).unwrap()
    );
}

#[test]
fn env_var_sets_output_dir() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_cooldown-lab"))
        .args(["train", "--config", "c.json", "--run-id", "e"])
        .current_dir(tmp.path())
        .env("COOLDOWN_LAB_OUT_DIR", "elsewhere")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("elsewhere/e/manifest.json").exists());
}

#[test]
fn damaged_checkpoint_exits_4() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", SMALL);
    assert!(bin(tmp.path(), &["train", "--config", "c.json", "--run-id", "a", "--out-dir", "o"])
        .status
        .success());
    let src = tmp.path().join("o/a/checkpoints/step-00000100.ckpt");
    let mut bytes = fs::read(&src).unwrap();
    bytes[0] ^= 0xff;
    fs::write(tmp.path().join("bad.ckpt"), &bytes).unwrap();
    let out = bin(
        tmp.path(),
        &["cooldown", "--checkpoint", "bad.ckpt", "--decay-steps", "50", "--out-dir", "o"],
    );
    assert_eq!(out.status.code(), Some(4));
    let out = bin(tmp.path(), &["interp", "--from", "bad.ckpt", "--to", src.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn divergence_exits_5_and_is_recorded() {
    let tmp = TempDir::new().unwrap();
    write(
        tmp.path(),
        "c.json",
        r#"{"task": {"kind": "noisy_quadratic", "dim": 10, "eigen_min": 1, "eigen_max": 100, "noise_scale": 0},
            "method": "sgd", "optimizer": {"clip_max": null},
            "schedule": {"kind": "constant", "peak_lr": 10, "total_steps": 300, "warmup_steps": 0},
            "eval_every": 10, "checkpoint_every": 300}"#,
    );
    let out = bin(tmp.path(), &["train", "--config", "c.json", "--run-id", "d", "--out-dir", "o"]);
    assert_eq!(out.status.code(), Some(5));
    let m = RunManifest::load(tmp.path().join("o/d")).unwrap();
    assert_eq!(m.status, RunStatus::Diverged);
}

#[test]
fn cooldown_swa_and_interp_commands() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", SMALL);
    assert!(bin(tmp.path(), &["train", "--config", "c.json", "--run-id", "t", "--out-dir", "o"])
        .status
        .success());
    let ck = |s: u64| format!("o/t/checkpoints/step-{s:08}.ckpt");
    let out = bin(
        tmp.path(),
        &["cooldown", "--checkpoint", &ck(100), "--decay-steps", "100", "--shape", "power:0.5", "--run-id", "b", "--out-dir", "o"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let branch = RunRecord::read_csv(fs::File::open(tmp.path().join("o/b/metrics.csv")).unwrap()).unwrap();
    assert_eq!(branch.last().unwrap().lr, 0.0);

    let out = bin(tmp.path(), &["swa", &ck(20), &ck(100), &ck(200), "--last", "2", "--out", "avg.ckpt"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let avg = load_checkpoint(tmp.path().join("avg.ckpt")).unwrap();
    let a = load_checkpoint(tmp.path().join(ck(100))).unwrap();
    let b = load_checkpoint(tmp.path().join(ck(200))).unwrap();
    for i in 0..avg.params.len() {
        assert!((avg.params[i] - (a.params[i] + b.params[i]) / 2.0).abs() < 1e-15);
    }

    let out = bin(tmp.path(), &["interp", "--from", &ck(100), "--to", "o/b/checkpoints/step-00000200.ckpt", "--points", "5"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 6);
}

#[test]
fn flops_plan_and_fit_commands() {
    let tmp = TempDir::new().unwrap();
    let model = r#"{"name": "m", "d_model": 64, "n_layers": 2, "ffw_size": 256, "key_size": 16, "n_heads": 4,
                    "vocab_size": 1000, "seq_len": 128, "swiglu": false, "param_count": 200000}"#;
    write(tmp.path(), "m.json", model);
    write(tmp.path(), "suite.json", &format!("[{model}]"));
    let out = bin(tmp.path(), &["flops", "--config", "m.json", "--tokens", "1000000"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["ratio_to_6nd"].as_f64().unwrap() > 0.0);

    let out = bin(tmp.path(), &["plan", "--models", "suite.json", "--ratios", "10,20", "--csv", "p.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["plans"].as_array().unwrap().len(), 3);
    assert!(tmp.path().join("p.csv").exists());

    let mut csv = String::from("n_params,tokens,loss\n");
    for n in [1e6, 3e6, 1e7, 3e7] {
        for d in [1e8, 3e8, 1e9, 3e9] {
            let l: f64 = 400.0 / f64::powf(n, 0.34) + 400.0 / f64::powf(d, 0.28) + 1.7;
            csv.push_str(&format!("{n},{d},{l}\n"));
        }
    }
    write(tmp.path(), "pts.csv", &csv);
    let out = bin(tmp.path(), &["fit", "--data", "pts.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_is_independent_of_concurrency() {
    let tmp = TempDir::new().unwrap();
    write(tmp.path(), "c.json", SMALL);
    let sweep = |dir: &str, conc: &str| {
        let out = bin(
            tmp.path(),
            &["sweep", "--config", "c.json", "--grid", "schedule.peak_lr=0.005,0.01", "--grid", "batch_size=1,4",
              "--repeats", "2", "--concurrency", conc, "--out-dir", dir],
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    sweep("one", "1");
    sweep("four", "4");
    let a = files_under(&tmp.path().join("one"));
    let b = files_under(&tmp.path().join("four"));
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), 1 + 8 * 6);
    for (x, y) in a.iter().zip(&b) {
        if x.file_name().unwrap() == "manifest.json" {
            continue;
        }
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    let summary = fs::read_to_string(tmp.path().join("one/sweep-summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 9);
}
