use std::path::Path;
use std::process::Command;

fn satenq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_satenq"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SUITE: &str = r#"
seeds = [0, 1]
threads = 1
reference = "dqn"

[base]
total_steps = 400
eval_episodes = 3
distill_steps = 20
env = { name = "gridworld" }

[[arms]]
name = "sat_enq"
algorithm = "sat_enq"

[[arms]]
name = "dqn"
algorithm = "dqn"
"#;

#[test]
fn suite_then_report_and_plot_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    let out = tmp.path().join("out");
    std::fs::write(&cfg, SUITE).unwrap();
    let run = satenq(&["suite", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stderr).contains("4 runs executed, 0 reused"));
    for f in ["report.csv", "report.json", "experiment.toml", "plot_data/sat_enq.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let again = satenq(&["report", "--dir", out.to_str().unwrap()]);
    assert!(again.status.success());
    let text = String::from_utf8_lossy(&again.stdout);
    assert!(text.contains("sat_enq") && text.contains("dqn"));

    let plot = satenq(&["plot-data", "--dir", out.to_str().unwrap()]);
    assert!(plot.status.success());
    assert_eq!(String::from_utf8_lossy(&plot.stdout).lines().count(), 2);
}

#[test]
fn train_writes_a_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "total_steps = 300\neval_episodes = 2\nenv = { name = \"gridworld\" }\n").unwrap();
    let rec = tmp.path().join("rec.json");
    let out = satenq(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--algorithm",
        "double-dqn",
        "--seed",
        "3",
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rec).unwrap()).unwrap();
    assert_eq!(json["metrics"]["seed"], 3);
    assert_eq!(json["metrics"]["algorithm"], "double_dqn");
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn bad_config_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[base]\nenv = { name = \"cartpole\" }\n[[arms]]\nname = \"a\"\nsat = { margin = -1.0 }\n",
    )
    .unwrap();
    let out = satenq(&["suite", cfg.to_str().unwrap(), "--output-dir", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("margin"));
    assert!(!Path::new(&tmp.path().join("o").join("runs")).exists());
}

#[test]
fn unknown_target_is_an_error() {
    let out = satenq(&["reproduce", "--target", "table9"]);
    assert_eq!(out.status.code(), Some(2));
}
