use std::path::{Path, PathBuf};

use pathrepo_core::pipeline::{hash_path, run_pipeline, RunOptions, StageStatus, MANIFEST};
use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap();
        if name == "out" {
            continue;
        }
        if path.is_dir() {
            copy_dir(&path, &to.join(name));
        } else {
            std::fs::copy(&path, to.join(name)).unwrap();
        }
    }
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixtures(), dir.path());
    dir
}

fn statuses(summary: &pathrepo_core::pipeline::RunSummary) -> Vec<(&str, StageStatus)> {
    summary.stages.iter().map(|s| (s.stage, s.status)).collect()
}

fn opts() -> RunOptions {
    RunOptions {
        threads: Some(2),
        ..RunOptions::default()
    }
}

#[test]
fn rerun_skips_everything() {
    let ws = workspace();
    let config = ws.path().join("config.toml");
    let first = run_pipeline(&config, &opts()).unwrap();
    assert!(first.stages.iter().all(|s| s.status == StageStatus::Ran));
    let second = run_pipeline(&config, &opts()).unwrap();
    assert!(second.stages.iter().all(|s| s.status == StageStatus::Skipped), "{:?}", statuses(&second));
}

#[test]
fn window_change_reruns_from_mining() {
    let ws = workspace();
    let config = ws.path().join("config.toml");
    run_pipeline(&config, &opts()).unwrap();
    let text = std::fs::read_to_string(&config).unwrap().replace("window = 30", "window = 12");
    std::fs::write(&config, text).unwrap();
    let summary = run_pipeline(&config, &opts()).unwrap();
    use StageStatus::*;
    assert_eq!(
        statuses(&summary),
        vec![
            ("ingest", Skipped),
            ("extract", Skipped),
            ("validate", Skipped),
            ("mine", Ran),
            ("evidence", Ran),
            ("reports", Ran),
        ]
    );
}

#[test]
fn changed_input_and_missing_output_trigger_reruns() {
    let ws = workspace();
    let config = ws.path().join("config.toml");
    run_pipeline(&config, &opts()).unwrap();
    std::fs::write(ws.path().join("fda_snapshot.txt"), "tamoxifen\n").unwrap();
    let s = run_pipeline(&config, &opts()).unwrap();
    assert_eq!(statuses(&s)[2], ("validate", StageStatus::Ran));
    assert_eq!(statuses(&s)[1], ("extract", StageStatus::Skipped));

    std::fs::remove_file(ws.path().join("out/abstracts.tsv")).unwrap();
    let s = run_pipeline(&config, &opts()).unwrap();
    assert_eq!(statuses(&s)[0], ("ingest", StageStatus::Ran));
}

#[test]
fn manifest_hashes_match_inputs() {
    let ws = workspace();
    let config = ws.path().join("config.toml");
    run_pipeline(&config, &opts()).unwrap();
    let out = ws.path().join("out");
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST)).unwrap()).unwrap();
    for (key, file) in [
        ("inputs.trials", "trials"),
        ("inputs.medline", "medline.txt"),
        ("inputs.kgml", "hsa05224.xml"),
        ("inputs.drugs", "drugs.txt"),
        ("inputs.fda", "fda_snapshot.txt"),
        ("inputs.shots", "shots.txt"),
    ] {
        assert_eq!(
            manifest["inputs"][key]["sha256"].as_str().unwrap(),
            hash_path(&ws.path().join(file)).unwrap(),
            "{key}"
        );
    }
    for (name, digest) in manifest["artifacts"].as_object().unwrap() {
        assert_eq!(digest.as_str().unwrap(), hash_path(&out.join(name)).unwrap(), "{name}");
    }
    let text = std::fs::read_to_string(out.join(MANIFEST)).unwrap();
    assert!(!text.contains(&ws.path().display().to_string()), "manifest leaks absolute paths");
}

#[test]
fn map_mode_uses_canned_responses() {
    let ws = workspace();
    std::fs::write(
        ws.path().join("responses.json"),
        r#"{"NCT00000101": "NCT00000101 | tamoxifen | anastrozole\nnot a valid line", "NCT00000110": "NCT00000110 | neratinib | trastuzumab"}"#,
    )
    .unwrap();
    let config = ws.path().join("config.toml");
    let text = std::fs::read_to_string(&config)
        .unwrap()
        .replace("mock_mode = \"rule\"", "mock_mode = \"map\"\nmock_responses = \"responses.json\"");
    std::fs::write(&config, text).unwrap();
    run_pipeline(&config, &opts()).unwrap();
    let triples = std::fs::read_to_string(ws.path().join("out/triples.tsv")).unwrap();
    assert_eq!(
        triples,
        "NCT00000101\tanastrozole\ttamoxifen\tplus\nNCT00000110\tneratinib\ttrastuzumab\tco-occurrence\n"
    );
    let rejects = std::fs::read_to_string(ws.path().join("out/extract_rejects.tsv")).unwrap();
    assert_eq!(rejects, "NCT00000101\t2\ttoo few fields\tnot a valid line\n");
}

#[test]
fn config_errors_name_the_field() {
    let ws = workspace();
    let config = ws.path().join("config.toml");
    let text = std::fs::read_to_string(&config).unwrap().replace("kgml = \"hsa05224.xml\"", "");
    std::fs::write(&config, text).unwrap();
    let err = run_pipeline(&config, &opts()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("inputs.kgml"), "{err}");
}

#[test]
fn stage_failure_names_the_stage() {
    let ws = workspace();
    std::fs::write(ws.path().join("medline.txt"), "PMID- 1\n!! broken\n").unwrap();
    let err = run_pipeline(&ws.path().join("config.toml"), &opts()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("stage ingest"), "{err}");
}
