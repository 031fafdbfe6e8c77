//! CLI flow contracts: exit codes, upstream checks, manifest counts, and
//! stage resumability against a small synthetic corpus.

use haven_core::evaluate::{synth_corpus, SynthSpec};
use std::path::{Path, PathBuf};
use std::process::Command;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    out: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus = synth_corpus(&SynthSpec::planted(3, 40, 5)).unwrap();
    let posts = root.join("posts.jsonl");
    haven_core::corpus::write_posts(&corpus.posts, &posts).unwrap();

    let labels = root.join("labels.jsonl");
    let mut lines = String::new();
    for (id, value) in &corpus.labels {
        lines.push_str(&format!("{{\"id\":\"{id}\",\"label\":\"{}\"}}\n", value.as_yes_no()));
    }
    std::fs::write(&labels, lines).unwrap();

    let config = root.join("pipeline.conf");
    std::fs::write(
        &config,
        format!(
            "input.posts = {}\ninput.labels = {}\nseed = 3\n\
             cluster.min_cluster_size = 8\ncluster.min_samples = 8\n",
            posts.display(),
            labels.display()
        ),
    )
    .unwrap();

    let out = root.join("out");
    Fixture {
        _dir: dir,
        root,
        config,
        out,
    }
}

fn haven(fixture: &Fixture, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_haven"))
        .arg("--config")
        .arg(&fixture.config)
        .arg("--out")
        .arg(&fixture.out)
        .arg("--mock")
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn haven")
}

fn exit_code(output: &std::process::Output) -> i32 {
    output.status.code().unwrap_or(-1)
}

#[test]
fn stage_before_upstream_exits_with_missing_upstream() {
    let fx = fixture();
    let output = haven(&fx, &["cluster"]);
    assert_eq!(exit_code(&output), 3, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    assert!(String::from_utf8_lossy(&output.stderr).contains("reduce"));
}

#[test]
fn report_before_support_exits_with_missing_upstream() {
    let fx = fixture();
    let output = haven(&fx, &["report"]);
    assert_eq!(exit_code(&output), 3);
}

#[test]
fn config_errors_exit_with_two() {
    let fx = fixture();
    std::fs::write(&fx.config, "input.posts = x.jsonl\nmin_clstr = 3\n").unwrap();
    let output = haven(&fx, &["ingest"]);
    assert_eq!(exit_code(&output), 2, "stderr: {}", String::from_utf8_lossy(&output.stderr));

    std::fs::write(&fx.config, "input.posts = x.jsonl\nevaluate.folds = 1\n").unwrap();
    let output = haven(&fx, &["ingest"]);
    assert_eq!(exit_code(&output), 2);
}

#[test]
fn missing_chat_endpoint_without_mock_is_config_error() {
    let fx = fixture();
    // Ingest first so detect's upstream exists.
    assert_eq!(exit_code(&haven(&fx, &["ingest"])), 0);
    let output = Command::new(env!("CARGO_BIN_EXE_haven"))
        .arg("--config")
        .arg(&fx.config)
        .arg("--out")
        .arg(&fx.out)
        .arg("detect")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("backend.chat.endpoint"));
}

#[test]
fn full_run_leaves_eight_manifests_and_resumes_as_noop() {
    let fx = fixture();
    let output = haven(&fx, &["run-all"]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));

    let manifests: Vec<String> = std::fs::read_dir(&fx.out)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().to_string_lossy().into_owned();
            name.ends_with(".manifest.json").then_some(name)
        })
        .collect();
    assert_eq!(manifests.len(), 8, "manifests: {manifests:?}");
    assert!(fx.out.join("report.md").exists());

    // Individual stage re-run is a no-op: artifacts keep their bytes.
    let before = std::fs::read(fx.out.join("layout.emb1")).unwrap();
    let summary_before = std::fs::read_to_string(fx.out.join("reduce.manifest.json")).unwrap();
    assert_eq!(exit_code(&haven(&fx, &["reduce"])), 0);
    assert_eq!(std::fs::read(fx.out.join("layout.emb1")).unwrap(), before);
    assert_eq!(
        std::fs::read_to_string(fx.out.join("reduce.manifest.json")).unwrap(),
        summary_before
    );

    // --force re-executes: same bytes (deterministic) but a fresh manifest
    // is written.
    assert_eq!(exit_code(&haven(&fx, &["--force", "reduce"])), 0);
    assert_eq!(std::fs::read(fx.out.join("layout.emb1")).unwrap(), before);
}

#[test]
fn upstream_edit_invalidates_downstream_stage() {
    let fx = fixture();
    assert_eq!(exit_code(&haven(&fx, &["run-all"])), 0);

    // Tampering with an upstream artifact makes dependents re-run; the
    // stale manifest no longer matches and the stage is treated as missing.
    let layout = fx.out.join("layout.emb1");
    let mut bytes = std::fs::read(&layout).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xFF;
    std::fs::write(&layout, bytes).unwrap();

    let output = haven(&fx, &["cluster"]);
    assert_eq!(exit_code(&output), 3, "stderr: {}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn lock_file_blocks_concurrent_runs() {
    let fx = fixture();
    std::fs::create_dir_all(&fx.out).unwrap();
    std::fs::write(fx.out.join(".lock"), b"").unwrap();
    let output = haven(&fx, &["ingest"]);
    assert_eq!(exit_code(&output), 1);
    assert!(String::from_utf8_lossy(&output.stderr).contains("locked"));
    let _ = &fx.root;
}
