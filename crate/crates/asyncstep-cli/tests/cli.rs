//! End-to-end tests driving the compiled binary: exit codes, report text,
//! CSV determinism, and the documented usage invariants.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asyncstep"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

#[test]
fn counterexample_confirms_divergence_and_rescue() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["counterexample"]);
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.contains("2.59"), "{text}");
    assert!(text.contains("divergence predicted"), "{text}");
    assert!(text.contains("result: PASS"), "{text}");
}

#[test]
fn counterexample_below_threshold_makes_no_divergence_claim() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["counterexample", "--period", "2"]);
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.contains("no divergence claim"), "{text}");
}

#[test]
fn naive_cyclic_run_flags_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--algo",
            "piag",
            "--policy",
            "naive",
            "--problem",
            "quadratic",
            "--delay",
            "cyclic:7",
            "--kmax",
            "700",
        ],
    );
    let text = stdout(&out);
    assert_eq!(code(&out), 1, "{text}");
    assert!(text.contains("objective exploded"), "{text}");
    assert!(text.contains("overall: FAIL"), "{text}");
}

#[test]
fn adaptive_burst_run_passes_every_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--algo",
            "piag",
            "--policy",
            "adaptive2",
            "--delay",
            "burst:5",
            "--kmax",
            "2000",
        ],
    );
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.contains("overall: PASS"), "{text}");
    assert!(text.contains("convergence certificate"), "{text}");
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn backend_delay_invariants_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["run", "--backend", "threads", "--delay", "constant:3"],
    );
    assert_eq!(code(&out), 2);
    let out = run_in(dir.path(), &["run", "--backend", "sim"]);
    assert_eq!(code(&out), 2);
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--algo",
            "piag",
            "--backend",
            "threads",
            "--workers",
            "3",
            "--batches",
            "5",
        ],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn identical_configs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "run".to_string(),
            "--algo".into(),
            "piag".into(),
            "--policy".into(),
            "adaptive1".into(),
            "--delay".into(),
            "uniform:8:5".into(),
            "--kmax".into(),
            "1200".into(),
            "--out".into(),
            out.into(),
        ]
    };
    for name in ["a.csv", "b.csv"] {
        let argv = args(name);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        assert_eq!(code(&run_in(dir.path(), &argv)), 0);
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    let b = fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b, "same config + seeds must produce identical CSV bytes");
}

#[test]
fn verify_accepts_fresh_traces_and_rejects_tampered_ones() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--algo",
            "piag",
            "--policy",
            "adaptive2",
            "--problem",
            "quadratic",
            "--delay",
            "constant:3",
            "--kmax",
            "300",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let out = run_in(dir.path(), &["verify", "trace.csv"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));

    // Inflate one recorded step-size beyond the window budget.
    let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let target = lines
        .iter()
        .position(|l| l.starts_with("250,"))
        .expect("row for k=250");
    let mut fields: Vec<&str> = lines[target].split(',').collect();
    let inflated = "9.0000000000000002e-1";
    fields[3] = inflated;
    lines[target] = fields.join(",");
    fs::write(dir.path().join("tampered.csv"), lines.join("\n") + "\n").unwrap();

    let out = run_in(dir.path(), &["verify", "tampered.csv"]);
    let text = stdout(&out);
    assert_eq!(code(&out), 1, "{text}");
    assert!(text.contains("overall: FAIL"), "{text}");

    // Structurally broken files are usage errors, not check failures.
    fs::write(dir.path().join("garbage.csv"), "not,a,trace\n1,2\n").unwrap();
    let out = run_in(dir.path(), &["verify", "garbage.csv"]);
    assert_eq!(code(&out), 2);
    let out = run_in(dir.path(), &["verify", "missing.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn stepsize_sim_reproduces_the_burst_integral_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["stepsize-sim", "--kmax", "5000", "--out-dir", "sched"],
    );
    assert_eq!(code(&out), 0, "{}", stdout(&out));

    let total = |name: &str| -> f64 {
        let text = fs::read_to_string(dir.path().join("sched").join(name)).unwrap();
        let last = text.lines().last().expect("rows");
        last.split(',').nth(3).unwrap().parse().unwrap()
    };
    // Long-run integrals under a delay burst: the adaptive policies keep
    // alpha*(tau+1) and (tau+1) times the declared-bound baseline's budget.
    let fixed = total("stepsize_fixed_burst-5.csv");
    let a1 = total("stepsize_adaptive1_burst-5.csv") / fixed;
    let a2 = total("stepsize_adaptive2_burst-5.csv") / fixed;
    assert!((a1 - 5.4).abs() < 0.05 * 5.4, "adaptive1 ratio {a1}");
    assert!((a2 - 6.0).abs() < 0.05 * 6.0, "adaptive2 ratio {a2}");

    // Same config, second directory: identical bytes.
    let out = run_in(
        dir.path(),
        &["stepsize-sim", "--kmax", "5000", "--out-dir", "sched2"],
    );
    assert_eq!(code(&out), 0);
    for file in [
        "stepsize_adaptive2_burst-5.csv",
        "stepsize_fixed_uniform-5.csv",
    ] {
        let a = fs::read(dir.path().join("sched").join(file)).unwrap();
        let b = fs::read(dir.path().join("sched2").join(file)).unwrap();
        assert_eq!(a, b, "{file} must be deterministic");
    }
}

#[test]
fn threaded_backends_pass_their_audits() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--algo",
            "bcd",
            "--backend",
            "threads",
            "--workers",
            "8",
            "--blocks",
            "20",
            "--kmax",
            "2000",
            "--out",
            "bcd.csv",
        ],
    );
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.contains("event-log delay reconstruction"), "{text}");
    assert!(text.contains("windowed step-size principle"), "{text}");

    let out = run_in(
        dir.path(),
        &[
            "run",
            "--algo",
            "piag",
            "--backend",
            "threads",
            "--workers",
            "4",
            "--kmax",
            "1500",
            "--out",
            "piag.csv",
        ],
    );
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.contains("convergence certificate"), "{text}");
}

#[test]
fn bcd_ensembles_run_the_statistical_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--algo",
            "bcd",
            "--delay",
            "uniform:3:40",
            "--seeds",
            "6",
            "--overlap",
            "0.5",
            "--kmax",
            "300",
            "--out",
            "ens.csv",
        ],
    );
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.contains("statistical"), "{text}");
    for seed in 0..6 {
        assert!(dir.path().join(format!("ens-seed{seed}.csv")).exists());
    }
    // Ensembles need reseedable randomness with a shared schedule.
    let out = run_in(
        dir.path(),
        &[
            "run",
            "--algo",
            "piag",
            "--delay",
            "constant:2",
            "--seeds",
            "4",
        ],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn config_files_fill_defaults_but_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "# profile used by the schedule experiments\npolicy=adaptive1\ndelay=constant:2\nkmax=400\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["run", "--config", "run.cfg", "--kmax", "200"]);
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.contains("policy=adaptive1"), "{text}");
    assert!(text.contains("kmax=200"), "{text}");
    assert!(text.contains("(200 steps)"), "{text}");
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_in(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run_in(dir.path(), &["--version"])), 0);
    assert_eq!(code(&run_in(dir.path(), &["run", "--help"])), 0);
}
