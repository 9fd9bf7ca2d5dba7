use std::path::Path;
use std::process::{Command, Output};

fn sparseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparseq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const CHAIN: &str = r#"
algorithm = "eaude_dqn"
env = "chain"
[train]
total_steps = 1500
target_period = 100
warmup = 200
[log]
period = 100
"#;

#[test]
fn train_inspect_evaluate_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "chain.toml", CHAIN);
    let runs = dir.path().join("runs");
    for seed in ["0", "1"] {
        let out_dir = runs.join(format!("seed{seed}"));
        let out = sparseq(&[
            "train",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
            "--checkpoint-every",
            "500",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        for file in [
            "run.json",
            "log.csv",
            "events.jsonl",
            "final.ckpt",
            "step-500.ckpt",
        ] {
            assert!(out_dir.join(file).is_file(), "missing {file}");
        }
    }
    let ckpt = runs.join("seed0/final.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    let out = sparseq(&["inspect", "--checkpoint", ckpt]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("algorithm eaude_dqn"));
    assert!(text.contains("step 1500 of 1500"));
    assert_eq!(
        text.lines()
            .find(|l| l.starts_with("sparsity "))
            .unwrap()
            .split(' ')
            .count(),
        6
    );

    let out = sparseq(&["evaluate", "--checkpoint", ckpt, "--episodes", "3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("episodes 3"));
    assert!(text.contains("mean_return "));
    assert!(text.contains("normalized_return "));

    let summary = dir.path().join("summary.csv");
    let out = sparseq(&[
        "aggregate",
        "--runs",
        runs.to_str().unwrap(),
        "--out",
        summary.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(summary).unwrap();
    assert!(csv.starts_with("step,runs,episode_return_iqm"));
    assert_eq!(csv.lines().count(), 16);
}

#[test]
fn resume_continues_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "chain.toml", CHAIN);
    let full = dir.path().join("full");
    let split = dir.path().join("split");
    let plain = CHAIN.replace("[log]\n", "[log]\nwallclock = false\n");
    let cfg_plain = write_config(dir.path(), "plain.toml", &plain);
    assert!(sparseq(&[
        "train",
        "--config",
        &cfg_plain,
        "--seed",
        "2",
        "--out",
        full.to_str().unwrap()
    ])
    .status
    .success());
    assert!(sparseq(&[
        "train",
        "--config",
        &cfg_plain,
        "--seed",
        "2",
        "--out",
        split.to_str().unwrap(),
        "--checkpoint-every",
        "700",
    ])
    .status
    .success());
    let resumed = dir.path().join("resumed");
    let out = sparseq(&[
        "train",
        "--config",
        &cfg_plain,
        "--seed",
        "2",
        "--out",
        resumed.to_str().unwrap(),
        "--resume",
        split.join("step-700.ckpt").to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a = std::fs::read(full.join("log.csv")).unwrap();
    assert_eq!(a, std::fs::read(resumed.join("log.csv")).unwrap());
    assert_eq!(a, std::fs::read(split.join("log.csv")).unwrap());

    let out = sparseq(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--out",
        dir.path().join("other").to_str().unwrap(),
        "--resume",
        split.join("step-700.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn invalid_configuration_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(
        dir.path(),
        "bad.toml",
        "algorithm = \"dqn\"\nenv = \"chain\"\n[train]\nstepz = 3\n",
    );
    let out = sparseq(&[
        "train",
        "--config",
        &unknown,
        "--seed",
        "0",
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let mismatch = write_config(
        dir.path(),
        "mismatch.toml",
        "algorithm = \"sac\"\nenv = \"chain\"\n",
    );
    let out = sparseq(&[
        "train",
        "--config",
        &mismatch,
        "--seed",
        "0",
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_3_and_dumps_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "diverge.toml",
        "algorithm = \"dqn\"\nenv = \"cartpole\"\n[train]\ntotal_steps = 3000\nwarmup = 100\nlearning_rate = 1e300\n",
    );
    let out_dir = dir.path().join("run");
    let out = sparseq(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out_dir.join("abort.ckpt").is_file());
    assert!(out_dir.join("log.csv").is_file());
}

#[test]
fn evaluate_rejects_zero_episodes() {
    let out = sparseq(&[
        "evaluate",
        "--checkpoint",
        "missing.ckpt",
        "--episodes",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
