//! Black-box tests of the command-line interface: exit codes, config
//! layering, claims files, and artifact behavior.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rpauth")
}

fn rpauth(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn rpauth")
}

fn assert_exit(args: &[&str], want: i32, stderr_needle: &str) {
    let out = rpauth(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(
        out.status.code(),
        Some(want),
        "rpauth {args:?}: expected exit {want}, got {:?}; stderr: {stderr}",
        out.status.code()
    );
    assert!(
        stderr.contains(stderr_needle),
        "rpauth {args:?}: stderr {stderr:?} does not mention {stderr_needle:?}"
    );
}

/// Fast flag set shared by the functional tests: tiny dataset, projection
/// on, oversampling off, three epochs.
fn tiny(out: &Path) -> Vec<String> {
    [
        "--out",
        out.to_str().unwrap(),
        "--synth.n_users",
        "6",
        "--synth.d",
        "16",
        "--synth.m_per_user",
        "60",
        "--projection.k",
        "12",
        "--smote.target",
        "0",
        "--train.epochs",
        "3",
        "--verify.wrong_matrix_rounds",
        "2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_ok(flags: &[String], tail: &[&str]) {
    let args: Vec<&str> = flags.iter().map(|s| s.as_str()).chain(tail.iter().copied()).collect();
    let out = rpauth(&args);
    assert!(
        out.status.success(),
        "rpauth {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn help_exits_zero() {
    let out = rpauth(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"), "help text missing: {text}");
    assert!(text.contains("enroll"), "help text lists subcommands");
}

#[test]
fn missing_subcommand_is_a_config_error() {
    let out = rpauth(&[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_a_config_error() {
    assert_exit(&["--no.such.key", "1", "generate"], 1, "");
}

#[test]
fn bad_values_are_config_errors() {
    assert_exit(&["--policy.tau", "1.5", "generate"], 1, "config");
    assert_exit(&["--seed", "abc", "generate"], 1, "config");
    assert_exit(&["--split.train_fraction", "1.0", "generate"], 1, "config");
}

#[test]
fn projected_dimension_must_stay_below_feature_count() {
    assert_exit(&["--projection.k", "24", "generate"], 1, "config");
}

#[test]
fn generate_requires_the_synthetic_source() {
    let dir = tempfile::tempdir().unwrap();
    assert_exit(
        &[
            "--data.source",
            "csv",
            "--data.csv_dir",
            dir.path().to_str().unwrap(),
            "generate",
        ],
        1,
        "config",
    );
}

#[test]
fn wrong_matrix_check_requires_projection() {
    let dir = tempfile::tempdir().unwrap();
    assert_exit(
        &[
            "--out",
            dir.path().to_str().unwrap(),
            "--projection.enabled",
            "false",
            "verify",
            "--wrong-matrix",
        ],
        1,
        "config",
    );
}

#[test]
fn verify_before_enroll_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_exit(
        &["--out", dir.path().to_str().unwrap(), "verify"],
        2,
        "runtime",
    );
}

#[test]
fn report_with_no_artifacts_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_exit(
        &["--out", dir.path().to_str().unwrap(), "report"],
        2,
        "runtime",
    );
}

#[test]
fn unknown_key_in_config_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.conf");
    std::fs::write(&cfg, "no_such_key = 3\n").unwrap();
    assert_exit(
        &["--config", cfg.to_str().unwrap(), "generate"],
        1,
        "config",
    );
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("pipeline.conf");
    std::fs::write(
        &cfg,
        "# pipeline settings\nsynth.n_users = 6\nsynth.d = 16\nsynth.m_per_user = 60\nprojection.k = 12\n",
    )
    .unwrap();

    let from_file = dir.path().join("from_file");
    let out = rpauth(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        from_file.to_str().unwrap(),
        "generate",
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(from_file.join("dataset")).unwrap().count(), 6);

    let overridden = dir.path().join("overridden");
    let out = rpauth(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        overridden.to_str().unwrap(),
        "--synth.n_users",
        "4",
        "generate",
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(overridden.join("dataset")).unwrap().count(), 4);
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let flags = tiny(out);
        run_ok(&flags, &["generate"]);
    }
    for entry in std::fs::read_dir(a.join("dataset")).unwrap() {
        let pa = entry.unwrap().path();
        let pb = b.join("dataset").join(pa.file_name().unwrap());
        assert_eq!(
            std::fs::read(&pa).unwrap(),
            std::fs::read(&pb).unwrap(),
            "{} differs between seeded runs",
            pa.display()
        );
    }
}

#[test]
fn claims_file_drives_verification() {
    let dir = tempfile::tempdir().unwrap();
    let flags = tiny(dir.path());
    run_ok(&flags, &["enroll"]);

    let claims = dir.path().join("claims.csv");
    std::fs::write(
        &claims,
        "claimant,claimed\nuser_00,user_00\nuser_01,user_02\n",
    )
    .unwrap();
    run_ok(&flags, &["verify", "--claims", claims.to_str().unwrap()]);

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("verify_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["valid"]["claims"], 1, "one self claim");
    assert_eq!(report["invalid"]["claims"], 1, "one impostor claim");
}

#[test]
fn malformed_claims_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let flags = tiny(dir.path());
    run_ok(&flags, &["enroll"]);

    let claims = dir.path().join("claims.csv");
    std::fs::write(&claims, "who,whom\nuser_00,user_00\n").unwrap();
    let args: Vec<&str> = flags
        .iter()
        .map(|s| s.as_str())
        .chain(["verify", "--claims", claims.to_str().unwrap()])
        .collect();
    let out = rpauth(&args);
    assert_eq!(
        out.status.code(),
        Some(1),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn enroll_then_verify_produces_the_advertised_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let flags = tiny(dir.path());
    run_ok(&flags, &["enroll"]);
    run_ok(&flags, &["verify"]);
    run_ok(&flags, &["report"]);
    for f in [
        "model.json",
        "label_map.json",
        "bounds.json",
        "history.json",
        "enroll_report.json",
        "enroll_report.txt",
        "verify_report.json",
        "verify_report.txt",
        "summary.json",
        "summary.txt",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing after the chain");
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(
        summary.contains("enroll.") && summary.contains("verify."),
        "summary table lists both sections: {summary}"
    );
}
