use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[run]
rounds = 6
eval_every = 3

[data]
num_classes = 5
examples_per_class = 40
num_clients = 20
feature_dim = 8

[fedfv]
sample_frac = 0.25
tau = 2
"#;

fn fedfv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedfv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn run_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("res");
    let o = fedfv(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for seed in ["seed_1", "seed_2"] {
        let fairness = read(out.join(seed).join("fairness.csv"));
        assert!(fairness.starts_with("round,mean,std,variance,worst5,best5\n"));
        // rounds 0, 3, 6
        assert_eq!(fairness.lines().count(), 4);
        assert!(read(out.join(seed).join("clients.csv")).starts_with("round,client_id,acc\n"));
        assert_eq!(read(out.join(seed).join("rounds.jsonl")).lines().count(), 6);
    }
    let summary = read(out.join("summary.csv"));
    assert!(summary.starts_with("label,statistic,seeds,mean,std\n"));
    assert_eq!(summary.lines().count(), 6);
    let effective = read(out.join("effective_config.toml"));
    assert!(
        effective.contains("seeds = [1, 2]") || effective.contains("seeds = [\n    1,\n    2,\n]")
    );
}

#[test]
fn outputs_are_deterministic_and_config_echo_reproduces_them() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = fedfv(&[
            "run",
            "--config",
            &cfg,
            "--seed",
            "4",
            "--dropout",
            "0.2",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
    }
    let files = [
        "seed_4/fairness.csv",
        "seed_4/clients.csv",
        "seed_4/rounds.jsonl",
        "summary.csv",
    ];
    for f in files {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    // re-run from the echoed config, pointing it somewhere else
    let c = tmp.path().join("c");
    let echoed = a.join("effective_config.toml");
    let o = fedfv(&[
        "run",
        "--config",
        echoed.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    for f in files {
        assert_eq!(read(a.join(f)), read(c.join(f)), "{f}");
    }
}

#[test]
fn config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), SMALL);
    let bad_key = tmp.path().join("bad.toml");
    fs::write(&bad_key, "[fedfv]\nbeta = 1\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["run", "--config", &good, "--alpha", "1.5"],
        vec!["run", "--config", &good, "--algorithm", "fedprox"],
        vec!["run", "--config", &good, "--sample-frac", "0"],
        vec!["run", "--config", bad_key.to_str().unwrap()],
        vec!["run", "--config", "/nonexistent/cfg.toml"],
        vec!["ablate-order", "--config", &good, "--alpha", "0.5"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = fedfv(&args);
        assert_eq!(
            code(&o),
            1,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn missing_data_files_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[data]\nsource = \"idx\"\nimages = \"/nonexistent/images\"\nlabels = \"/nonexistent/labels\"\n",
    );
    let out = tmp.path().join("o");
    let o = fedfv(&[
        "run",
        "--config",
        &cfg,
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn theory_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fedfv(&[
        "theory",
        "--count",
        "5",
        "--seed",
        "3",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("theorem 2: 5 pass"), "{stdout}");
    let report = read(tmp.path().join("theory_report.jsonl"));
    assert!(report
        .lines()
        .last()
        .unwrap()
        .contains("\"check\":\"summary\""));
}

#[test]
fn ablation_writes_one_directory_per_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("abl");
    let o = fedfv(&[
        "ablate-order",
        "--config",
        &cfg,
        "--seed",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for mode in ["loss_ascending", "random", "reverse"] {
        assert!(out.join(mode).join("seed_0").join("fairness.csv").exists());
    }
    let table = read(out.join("ablation.csv"));
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("order_mode,"));
}
