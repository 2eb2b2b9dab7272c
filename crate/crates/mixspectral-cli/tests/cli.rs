//! Process-level tests of the `mixspectral` binary: exit codes, artifact
//! chaining across stage subcommands, and agreement between the staged
//! route and the one-shot pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixspectral"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary launches")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Two planted groups, numerical blobs plus two aligned categoricals —
/// small enough that every subcommand finishes in well under a second.
fn write_workspace(dir: &Path) -> PathBuf {
    let mut csv = String::from("x1,x2,shape,tone,class\n");
    // deterministic pseudo-noise, no RNG dependency needed in the test
    let mut state = 11u64;
    let mut noise = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 0.5
    };
    for group in 0..2 {
        let center = if group == 0 { -1.5 } else { 1.5 };
        for _ in 0..12 {
            let x1 = center + noise();
            let x2 = -center + noise();
            let shape = if group == 0 { "round" } else { "square" };
            let tone = if group == 0 { "dark" } else { "light" };
            csv.push_str(&format!("{x1},{x2},{shape},{tone},c{group}\n"));
        }
    }
    std::fs::write(dir.join("data.csv"), csv).unwrap();
    std::fs::write(
        dir.join("schema.toml"),
        r#"
[[column]]
name = "x1"
kind = "numerical"

[[column]]
name = "x2"
kind = "numerical"

[[column]]
name = "shape"
kind = "categorical"
categories = ["round", "square"]

[[column]]
name = "tone"
kind = "categorical"
categories = ["dark", "light"]

[[column]]
name = "class"
label = true
"#,
    )
    .unwrap();
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        r#"
[data]
csv = "data.csv"
schema = "schema.toml"

[factorization]
epochs = 120

[fit]
max_iters = 300

[clustering]
cluster_counts = [2]
restarts = 3

[sweeps]
l_grid = [2, 3]
cluster_grid = [2, 3]
"#,
    )
    .unwrap();
    config
}

#[test]
fn help_exits_zero_and_documents_the_config_keys() {
    let out = run(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for key in ["data.csv", "[factorization]", "epsilon", "cluster_counts", "drop_constant"] {
        assert!(text.contains(key), "--help misses {key}");
    }
    // every subcommand's help carries the same reference
    let sub = run(&["pipeline", "--help"]);
    assert_eq!(code(&sub), 0);
    assert!(stdout(&sub).contains("[clustering]"));
}

#[test]
fn usage_errors_exit_one_with_usage_text() {
    let unknown = run(&["frobnicate"]);
    assert_eq!(code(&unknown), 1);
    assert!(stderr(&unknown).contains("Usage"), "{}", stderr(&unknown));

    let missing_config = run(&["pipeline"]);
    assert_eq!(code(&missing_config), 1);
    assert!(stderr(&missing_config).contains("--config"));
}

#[test]
fn malformed_overrides_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let out = run(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "no-equals-sign",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no-equals-sign"));
}

#[test]
fn invalid_configs_fail_stage_tagged_with_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let out = run(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "similarity.epsilon=2.0",
        "--set",
        "fit.learning_rate=-1",
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("error: config:"), "{err}");
    assert!(err.contains("similarity.epsilon"), "{err}");
    assert!(err.contains("fit.learning_rate"), "{err}");
    // a diagnostic, not a panic
    assert!(!err.contains("panicked"), "{err}");
}

#[test]
fn an_oversized_latent_dimension_is_named_in_the_violation() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let out = run(&[
        "factorize",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "factorization.k=99",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("below p1 + p2"), "{}", stderr(&out));
}

#[test]
fn stage_subcommands_chain_through_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let cfg = config.to_str().unwrap();
    let out_dir = dir.path().join("staged");
    let out_arg = out_dir.to_str().unwrap();

    for stage in ["ingest", "factorize", "fit-graph", "embed", "cluster", "evaluate"] {
        let out = run(&[stage, "--config", cfg, "--out", out_arg]);
        assert_eq!(code(&out), 0, "{stage}: {}", stderr(&out));
    }
    for artifact in [
        "mixed_matrix.txt",
        "factor_model.txt",
        "similarity.txt",
        "edge_weights.txt",
        "fit_trace.csv",
        "spectral_basis.txt",
        "embedding.csv",
        "assignments_se-kmeans_L2.csv",
        "assignments_pc-kmeans_L2.csv",
        "assignments_kprototype_L2.csv",
        "assignments_kmedoid_L2.csv",
        "metrics.json",
    ] {
        assert!(out_dir.join(artifact).exists(), "{artifact} missing");
    }

    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("metrics.json")).unwrap())
            .unwrap();
    let rows = metrics.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    // the planted partition is easy: the spectral route should score high
    let se = rows
        .iter()
        .find(|r| r["method"] == "se-kmeans")
        .expect("se-kmeans row");
    assert!(se["rand_index"].as_f64().unwrap() > 0.8);
    assert_eq!(se["cluster_count"], 2);
}

#[test]
fn the_staged_route_reproduces_the_pipeline_embedding_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let cfg = config.to_str().unwrap();

    let staged = dir.path().join("staged");
    for stage in ["ingest", "factorize", "fit-graph", "embed"] {
        let out = run(&[stage, "--config", cfg, "--out", staged.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{stage}: {}", stderr(&out));
    }
    let oneshot = dir.path().join("oneshot");
    let out = run(&["pipeline", "--config", cfg, "--out", oneshot.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // byte-for-byte: the staged artifacts reload with full precision, so
    // the split run continues to identical numbers
    let a = std::fs::read(staged.join("embedding.csv")).unwrap();
    let b = std::fs::read(oneshot.join("embedding.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn running_a_stage_before_its_inputs_exist_points_at_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let out = run(&[
        "factorize",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("empty").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("error: factorize:"), "{err}");
    assert!(err.contains("run the ingest stage first"), "{err}");
}

#[test]
fn pipeline_writes_the_five_outputs_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let out_dir = dir.path().join("results");
    let out = run(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["report.json", "tables.csv", "fig2.csv", "fig3.csv", "embedding.csv"] {
        assert!(out_dir.join(name).exists(), "{name} missing");
    }
}

#[test]
fn seed_and_set_overrides_land_in_the_report_echo() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let out_dir = dir.path().join("results");
    let out = run(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "400",
        "--set",
        "clustering.restarts=2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["factorization"]["seed"], 400);
    assert_eq!(report["config"]["fit"]["seed"], 401);
    assert_eq!(report["config"]["clustering"]["seed"], 402);
    assert_eq!(report["config"]["clustering"]["restarts"], 2);
}

#[test]
fn a_report_reproduces_the_run_that_emitted_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let first_dir = dir.path().join("first");
    let out = run(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--out",
        first_dir.to_str().unwrap(),
        "--seed",
        "77",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // Re-run from the resolved config embedded in the report; data paths in
    // the echo are already absolute, and the seeds are pinned.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first_dir.join("report.json")).unwrap())
            .unwrap();
    let echoed = toml::to_string(&report["config"]).unwrap();
    let echo_path = dir.path().join("echoed.toml");
    std::fs::write(&echo_path, echoed).unwrap();
    let second_dir = dir.path().join("second");
    let out = run(&[
        "pipeline",
        "--config",
        echo_path.to_str().unwrap(),
        "--out",
        second_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let strip = |dir: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap())
                .unwrap();
        v.as_object_mut().unwrap().remove("timings");
        v
    };
    assert_eq!(strip(&first_dir), strip(&second_dir));
}

#[test]
fn benchmark_runs_each_listed_config_into_its_own_directory() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path());
    // two "datasets" sharing the CSV under different names
    for name in ["alpha", "beta"] {
        std::fs::write(
            dir.path().join(format!("{name}.toml")),
            format!(
                r#"
[data]
csv = "data.csv"
schema = "schema.toml"
name = "{name}"

[factorization]
epochs = 120

[fit]
max_iters = 200

[clustering]
cluster_counts = [2]
restarts = 2

[sweeps]
l_grid = [2]
cluster_grid = [2]
"#
            ),
        )
        .unwrap();
    }
    std::fs::write(
        dir.path().join("bench.toml"),
        "configs = [\"alpha.toml\", \"beta.toml\"]\n",
    )
    .unwrap();

    let out_dir = dir.path().join("bench_out");
    let out = run(&[
        "benchmark",
        "--config",
        dir.path().join("bench.toml").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for name in ["alpha", "beta"] {
        let tables = out_dir.join(name).join("tables.csv");
        assert!(tables.exists(), "{name} tables.csv missing");
        let text = std::fs::read_to_string(tables).unwrap();
        assert!(text.starts_with("dataset,method,clusters,"));
        assert!(text.lines().nth(1).unwrap().starts_with(&format!("{name},")));
        assert!(out_dir.join(name).join("report.json").exists());
    }
}

#[test]
fn threads_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_workspace(dir.path());
    let out = run(&[
        "pipeline",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("t").to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}
