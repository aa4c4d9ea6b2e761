//! End-to-end checks of the command-line interface.

use std::fs;
use std::process::Command;

fn pride() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pride"))
}

const TINY_CONFIG: &str = r#"
[dataset]
kind = "synthetic"

[dataset.synthetic]
grid_side = 8
n = 100
n_confound_pairs = 5
n_signal_pcs = 5

[partition]
parties = 2

[sweep]
tau_subs_fractions = [0.2]
epsilon_grid = [1.0]
include_no_privacy = true

[model]
lambda = { kind = "fixed", value = 0.1 }

[run]
n_seeds = 1
master_seed = 5
output_dir = "OUTDIR"
"#;

#[test]
fn sigma_subcommand_matches_published_value() {
    let output = pride()
        .args([
            "sigma",
            "--epsilon",
            "1",
            "--delta",
            "0.05",
            "--theta",
            "8.51",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let value: f64 = text
        .trim()
        .strip_prefix("sigma = ")
        .unwrap()
        .parse()
        .unwrap();
    assert!((value - 21.88).abs() / 21.88 < 0.005, "{text}");
}

#[test]
fn sigma_subcommand_rejects_bad_delta() {
    let output = pride()
        .args(["sigma", "--epsilon", "1", "--delta", "0.6", "--theta", "1"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = String::from_utf8(output.stderr).unwrap();
    assert!(err.contains("delta"), "{err}");
}

#[test]
fn bound_subcommand_reports_terms_and_vacuous_branch() {
    let output = pride()
        .args([
            "bound",
            "--rank",
            "100",
            "--tau-k",
            "10000",
            "--sigma",
            "0",
            "--d-min",
            "1",
            "--beta-star-norm",
            "2",
            "--parties",
            "4",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let rho: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("rho = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((rho - 0.2880).abs() < 5e-4, "{text}");
    assert!(text.contains("term_ii = 0"), "{text}");

    let output = pride()
        .args([
            "bound",
            "--rank",
            "100",
            "--tau-k",
            "100",
            "--sigma",
            "1",
            "--d-min",
            "1",
            "--beta-star-norm",
            "2",
            "--parties",
            "4",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("vacuous"), "{text}");
}

#[test]
fn generate_then_run_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    fs::write(
        &config_path,
        TINY_CONFIG.replace("OUTDIR", out_a.to_str().unwrap()),
    )
    .unwrap();

    // Generate a dataset from the same config.
    let gen_out = dir.path().join("data");
    let output = pride()
        .args([
            "generate",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            gen_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(gen_out.join("synthetic.csv").exists());
    assert!(gen_out.join("true_beta.csv").exists());

    // Run the sweep; exit code 0 and the three artifacts.
    let output = pride()
        .args([
            "run",
            "--config",
            config_path.to_str().unwrap(),
            "--jobs",
            "2",
        ])
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(out_a.join("detail.csv").exists());
    assert!(out_a.join("summary.json").exists());
    assert!(out_a.join("timings.csv").exists());

    // Rerunning into another directory reproduces the detail CSV exactly.
    let output = pride()
        .args([
            "run",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out_b.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(
        fs::read(out_a.join("detail.csv")).unwrap(),
        fs::read(out_b.join("detail.csv")).unwrap()
    );

    // The detail CSV carries the provenance columns.
    let detail = fs::read_to_string(out_a.join("detail.csv")).unwrap();
    let header = detail.lines().next().unwrap();
    for column in ["method", "epsilon", "delta", "tau_subs", "lambda", "seed"] {
        assert!(header.split(',').any(|c| c == column), "missing {column}");
    }
    // One pride row at epsilon 1, one no-privacy pride row, one dual-loco
    // row, one NB row, one single-machine row.
    assert_eq!(detail.trim().lines().count(), 6, "{detail}");
}

#[test]
fn run_rejects_missing_config() {
    let output = pride()
        .args(["run", "--config", "/nonexistent/config.toml"])
        .output()
        .unwrap();
    assert!(!output.status.success());
}
