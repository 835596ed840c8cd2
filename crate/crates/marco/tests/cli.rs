//! End-to-end tests of the `marco` binary: exit codes, output files,
//! determinism, and agreement with the library's own solvers.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use marco::baselines::brute_force_mc;
use marco::instances::GraphInstance;

fn marco_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_marco"))
}

fn run(args: &[&str]) -> Output {
    marco_bin().args(args).output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn help_lists_subcommands_and_exits_zero() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["generate", "train", "solve", "ablate", "bench"] {
        assert!(text.contains(sub), "--help should mention `{sub}`");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["generate", "--problem", "mc", "--frobnicate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn generate_is_deterministic_and_writes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = run(&[
            "generate",
            "--problem",
            "mc",
            "--n",
            "12",
            "--count",
            "3",
            "--seed",
            "7",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    }
    for name in ["mc_0000.txt", "mc_0001.txt", "mc_0002.txt", "manifest.txt"] {
        let (fa, fb) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        assert_eq!(fa, fb, "{name} should be byte-identical across runs");
    }
    let manifest = fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 4, "header plus one line per instance");
    assert!(manifest.starts_with("# problem=mc"));
    // Named instances parse and have the advertised size.
    let g = GraphInstance::load(&a.join("mc_0000.txt")).unwrap();
    assert_eq!(g.n, 12);
    // The run log captures the effective configuration.
    assert!(fs::read_to_string(a.join("run.log")).unwrap().contains("seed = 7"));
}

#[test]
fn generate_rejects_out_of_range_edge_probability() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "generate",
        "--problem",
        "mc",
        "--p",
        "1.5",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("0 < p < 1"));
}

#[test]
fn config_file_and_set_overrides_reach_the_run_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "n = 14\ncount = 2\n").unwrap();
    let dir = tmp.path().join("out");
    let out = run(&[
        "generate",
        "--problem",
        "mis",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "p=0.4",
        "--seed",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let log = fs::read_to_string(dir.join("run.log")).unwrap();
    for line in ["n = 14", "count = 2", "p = 0.4", "seed = 3"] {
        assert!(log.contains(line), "run.log should contain `{line}`:\n{log}");
    }
}

#[test]
fn unknown_config_key_lists_every_offender() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "generate",
        "--problem",
        "mc",
        "--set",
        "bogus=1",
        "--set",
        "nonsense=2",
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr_of(&out);
    assert!(err.contains("bogus") && err.contains("nonsense"), "both bad keys reported: {err}");
}

#[test]
fn solve_without_checkpoint_is_a_usage_error_for_neural_methods() {
    let out = run(&["solve", "--method", "marco", "--instance", "nowhere.txt"]);
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("--checkpoint"));
}

#[test]
fn solve_with_missing_checkpoint_file_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("g.txt");
    fs::write(&inst, "4 2 sparse\n0 1 1\n2 3 1\n").unwrap();
    let out = run(&[
        "solve",
        "--method",
        "marco",
        "--checkpoint",
        tmp.path().join("missing.ckpt").to_str().unwrap(),
        "--instance",
        inst.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sparse_instances_need_an_explicit_problem_for_classical_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("g.txt");
    fs::write(&inst, "4 2 sparse\n0 1 1\n2 3 1\n").unwrap();
    let out = run(&["solve", "--method", "exact", "--instance", inst.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("--problem"));
}

#[test]
fn solve_exact_agrees_with_the_library_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("inst");
    let out = run(&[
        "generate",
        "--problem",
        "mc",
        "--n",
        "10",
        "--count",
        "2",
        "--seed",
        "11",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let results = tmp.path().join("results");
    let out = run(&[
        "solve",
        "--method",
        "exact",
        "--problem",
        "mc",
        "--instances-dir",
        dir.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    for i in 0..2 {
        let path = results.join(format!("mc_{i:04}.result.json"));
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let g = GraphInstance::load(&dir.join(format!("mc_{i:04}.txt"))).unwrap();
        let (_, oracle) = brute_force_mc(&g).unwrap();
        assert_eq!(v["problem"], "mc");
        assert_eq!(v["best_objective"].as_f64().unwrap(), oracle as f64);
        assert_eq!(v["best_bits"].as_array().unwrap().len(), 10);
    }
}

#[test]
fn greedy_is_mis_only_and_nn_is_tsp_only() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("g.txt");
    fs::write(&inst, "4 2 sparse\n0 1 1\n2 3 1\n").unwrap();
    let out = run(&[
        "solve",
        "--method",
        "greedy",
        "--problem",
        "mc",
        "--instance",
        inst.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "solve",
        "--method",
        "nn",
        "--problem",
        "mis",
        "--instance",
        inst.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_max_steps_spelling_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("g.txt");
    fs::write(&inst, "4 2 sparse\n0 1 1\n2 3 1\n").unwrap();
    let out = run(&[
        "solve",
        "--method",
        "exact",
        "--problem",
        "mc",
        "--max-steps",
        "0n",
        "--instance",
        inst.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bogus_thread_cap_env_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = marco_bin()
        .args([
            "generate",
            "--problem",
            "mc",
            "--out",
            tmp.path().join("x").to_str().unwrap(),
        ])
        .env("MARCO_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("MARCO_THREADS"));
}

/// Train a tiny model via the CLI into `dir`, returning the checkpoint
/// path. Budget is a few seconds.
fn train_tiny(dir: &Path, memory_mode: &str, seed: &str) -> std::path::PathBuf {
    let out = run(&[
        "train",
        "--problem",
        "mc",
        "--out",
        dir.to_str().unwrap(),
        "--seed",
        seed,
        "--set",
        &format!("memory_mode={memory_mode}"),
        "--set",
        "episodes=3",
        "--set",
        "batch=2",
        "--set",
        "t_ep=6",
        "--set",
        "n_min=8",
        "--set",
        "n_max=10",
        "--set",
        "threads=2",
    ]);
    assert_eq!(code(&out), 0, "training failed: {}", stderr_of(&out));
    dir.join("policy.ckpt")
}

#[test]
fn train_writes_metrics_and_resume_continues_episode_numbering() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let ckpt = train_tiny(&first, "shared", "5");
    let metrics = fs::read_to_string(first.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("episode,mean_reward,revisit_rate,loss"));
    let first_eps: Vec<u64> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(first_eps.len(), 3);

    let second = tmp.path().join("second");
    let out = run(&[
        "train",
        "--problem",
        "mc",
        "--resume",
        ckpt.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--seed",
        "6",
        "--set",
        "memory_mode=shared",
        "--set",
        "episodes=2",
        "--set",
        "batch=2",
        "--set",
        "t_ep=6",
        "--set",
        "n_min=8",
        "--set",
        "n_max=10",
    ]);
    assert_eq!(code(&out), 0, "resume failed: {}", stderr_of(&out));
    let metrics = fs::read_to_string(second.join("metrics.csv")).unwrap();
    let resumed: Vec<u64> = metrics
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(resumed.len(), 2);
    assert_eq!(resumed[0], first_eps[2] + 1, "episode numbering continues across resume");
}

#[test]
fn ablate_writes_a_four_row_report_from_cli_trained_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let nim = train_tiny(&tmp.path().join("nim"), "none", "5");
    let op = train_tiny(&tmp.path().join("op"), "op-based", "5");
    let marco = train_tiny(&tmp.path().join("marco"), "shared", "5");

    let inst = tmp.path().join("inst");
    let out = run(&[
        "generate",
        "--problem",
        "mc",
        "--n",
        "10",
        "--count",
        "2",
        "--seed",
        "21",
        "--out",
        inst.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    let report_dir = tmp.path().join("report");
    let out = run(&[
        "ablate",
        "--instances-dir",
        inst.to_str().unwrap(),
        "--nim",
        nim.to_str().unwrap(),
        "--op-nim",
        op.to_str().unwrap(),
        "--marco",
        marco.to_str().unwrap(),
        "--label",
        "er10",
        "--out",
        report_dir.to_str().unwrap(),
        "--set",
        "threads=4",
        "--set",
        "max_steps=10",
    ]);
    assert_eq!(code(&out), 0, "ablate failed: {}", stderr_of(&out));
    let csv = fs::read_to_string(report_dir.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,set,mean_objective,mean_gap,stddev,mean_wall_s,revisit_rate");
    assert_eq!(lines.len(), 5, "header plus nim/op-nim/marco-ind/marco:\n{csv}");
    for (row, method) in lines[1..].iter().zip(["nim", "op-nim", "marco-ind", "marco"]) {
        assert!(row.starts_with(&format!("{method},er10,")), "row `{row}`");
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn bench_growth_writes_the_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("growth");
    let out = run(&[
        "bench",
        "--sweep",
        "growth",
        "--problem",
        "mc",
        "--steps",
        "5",
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "threads=4",
        "--set",
        "n=10",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_of(&out));
    let csv = fs::read_to_string(dir.join("growth.csv")).unwrap();
    assert!(csv.starts_with("step,entries,bytes"));
    assert!(csv.lines().count() >= 6, "a row per profiled step:\n{csv}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("growth.json")).unwrap()).unwrap();
    assert!(json.as_array().unwrap().len() >= 5);
}

#[test]
fn bench_unknown_sweep_is_a_usage_error() {
    let out = run(&["bench", "--sweep", "volume"]);
    assert_eq!(code(&out), 2);
    assert!(stderr_of(&out).contains("k|penalty|growth"));
}
