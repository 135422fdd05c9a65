//! CLI behavior: exit codes, artifacts, manifests and contamination checks.

use std::path::Path;
use std::process::Command;

fn smforge() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smforge"))
}

fn run_in(dir: &Path, args: &[&str]) -> std::process::Output {
    smforge().current_dir(dir).args(args).output().expect("spawn smforge")
}

fn assert_ok(out: &std::process::Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small simulation args shared by the tests.
fn sim_args<'a>(out: &'a str) -> Vec<&'a str> {
    vec![
        "simulate",
        "--set",
        "sim.grid={\"nx\":8,\"ny\":8,\"fov_x\":32.0,\"fov_y\":32.0}",
        "--set",
        "sim.samples_per_period=60",
        "--set",
        "sim.bins_per_channel=10",
        "--set",
        "sim.mixing_order=6",
        "--set",
        "split.modulus=5",
        "--set",
        "split.val_residue=2",
        "--set",
        "split.test_residue=4",
        "--out",
        out,
    ]
}

#[test]
fn unknown_flags_and_commands_exit_2() {
    let out = smforge().args(["simulate", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = smforge().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = smforge().args(["--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn domain_errors_exit_1_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    // Nyquist violation.
    let out = run_in(
        dir.path(),
        &["simulate", "--set", "sim.samples_per_period=2", "--out", "x"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
    // Unknown baseline.
    let out = run_in(dir.path(), &["baseline", "--method", "magic", "--in", "nope.smf", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_succeeds() {
    let out = smforge().args(["gradcheck", "--seed", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["l1", "l2", "ssim", "ssim_ad", "fsc"] {
        assert!(text.contains(name), "missing {name} in:\n{text}");
    }
}

#[test]
fn evaluate_of_identical_files_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_in(dir.path(), &sim_args("sim")));
    let out = run_in(
        dir.path(),
        &["evaluate", "--pred", "sim/sm_hr.smf", "--gt", "sim/sm_hr.smf", "--out", "eval"],
    );
    assert_ok(&out);
    let metrics = std::fs::read_to_string(dir.path().join("eval/metrics.jsonl")).unwrap();
    assert!(metrics.contains("\"value\":0.0"), "{metrics}");
    assert!(dir.path().join("eval/error_maps/err_0000.pgm").exists());
    assert!(dir.path().join("eval/nrmse_per_frequency.csv").exists());
}

#[test]
fn full_pipeline_trains_recovers_and_checks_contamination() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_in(dir.path(), &sim_args("sim")));

    // Tiny training budget; scale 2 on the 8x8 grid.
    let out = run_in(
        dir.path(),
        &[
            "train",
            "--set",
            "scale=2",
            "--set",
            "model.channels=8",
            "--set",
            "model.blocks=1",
            "--set",
            "model.heads=2",
            "--set",
            "train.iterations=20",
            "--set",
            "train.batch_size=4",
            "--set",
            "train.val_interval=10",
            "--set",
            "train.checkpoint_interval=10",
            "--data",
            "sim",
            "--out",
            "run",
        ],
    );
    assert_ok(&out);
    for f in ["checkpoint_final.smck", "curves.csv", "report.jsonl", "manifest.json"] {
        assert!(dir.path().join("run").join(f).exists(), "missing {f}");
    }

    assert_ok(&run_in(dir.path(), &["downsample", "--in", "sim/sm_hr.smf", "--scale", "2", "--out", "lr"]));
    assert_ok(&run_in(
        dir.path(),
        &["recover", "--checkpoint", "run/checkpoint_final.smck", "--in", "lr/sm_lr.smf", "--out", "rec"],
    ));
    assert!(dir.path().join("rec/sm_recovered.smf").exists());

    // Evaluation restricted to the declared test split walks the manifest
    // chain rec -> lr -> sim and the train manifest.
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--pred",
            "rec/sm_recovered.smf",
            "--gt",
            "sim/sm_hr.smf",
            "--split",
            "test",
            "--search-dir",
            "run",
            "--search-dir",
            "sim",
            "--out",
            "eval_test",
        ],
    );
    assert_ok(&out);
    let csv = std::fs::read_to_string(dir.path().join("eval_test/nrmse_per_frequency.csv")).unwrap();
    // 20 rows, stride-5 split: 4 test rows plus the header.
    assert_eq!(csv.lines().count(), 5, "{csv}");

    // Contaminate the training manifest: claim a test row was trained on.
    let manifest_path = dir.path().join("run/manifest.json");
    let mut manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    let test0 = manifest["splits"]["test"][0].clone();
    manifest["splits"]["train"].as_array_mut().unwrap().push(test0);
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    let out = run_in(
        dir.path(),
        &[
            "evaluate",
            "--pred",
            "rec/sm_recovered.smf",
            "--gt",
            "sim/sm_hr.smf",
            "--split",
            "test",
            "--search-dir",
            "run",
            "--out",
            "eval_bad",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    // Either the overlap is caught as contamination or the tampered
    // manifest fails its own disjointness validation.
    assert!(err.contains("contamination") || err.contains("split"), "{err}");
}

#[test]
fn reconstruct_writes_images_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    assert_ok(&run_in(dir.path(), &sim_args("sim")));
    let out = run_in(
        dir.path(),
        &["reconstruct", "--sm", "sim/sm_hr.smf", "--phantom", "two_point", "--out", "rec"],
    );
    assert_ok(&out);
    for f in ["recon.pgm", "recon.csv", "phantom.pgm", "metrics.jsonl"] {
        assert!(dir.path().join("rec").join(f).exists());
    }
    let out = run_in(dir.path(), &["reconstruct", "--sm", "sim/sm_hr.smf", "--phantom", "blob", "--out", "z"]);
    assert_eq!(out.status.code(), Some(1));
}
