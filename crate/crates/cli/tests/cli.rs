use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn pathrepo(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathrepo"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = pathrepo(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// The subcommands chained by hand produce the same artifacts as `run`.
#[test]
fn subcommand_chain_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let w = tmp.path();
    let fx = fixtures();
    let f = |name: &str| fx.join(name).to_string_lossy().into_owned();

    ok(&["run", &f("config.toml"), "--out", "run"], w);
    let run = w.join("run");

    ok(&["ingest", "trials", &f("trials"), "--out", "trials.tsv"], w);
    ok(&["ingest", "medline", &f("medline.txt"), "--out", "abstracts.tsv"], w);
    ok(&["ingest", "kgml", &f("hsa05224.xml"), "--disease", "breast cancer", "--out", "pathways.tsv"], w);
    for name in ["trials.tsv", "abstracts.tsv", "pathways.tsv"] {
        assert_eq!(read(w, name), read(&run, name), "{name}");
    }

    ok(
        &["extract", "--trials", "trials.tsv", "--shots", &f("shots.txt"), "--drugs", &f("drugs.txt"), "--out", "triples.tsv", "--rejects", "rejects.tsv"],
        w,
    );
    assert_eq!(read(w, "triples.tsv"), read(&run, "triples.tsv"));

    let stats = ok(&["graph", "combos", "--in", "triples.tsv", "--out", "combos.tsv", "--stats", "--shots", &f("shots.txt")], w);
    let stats: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert!(stats["nodes"].as_u64().unwrap() > 0);
    assert_eq!(read(w, "combos.tsv"), read(&run, "combos.tsv"));

    ok(&["validate", "--graph", "combos.tsv", "--fda", &f("fda_snapshot.txt"), "--out", "combos.valid.tsv", "--report", "validation.json"], w);
    assert_eq!(read(w, "combos.valid.tsv"), read(&run, "combos.valid.tsv"));
    let report: serde_json::Value = serde_json::from_str(&read(w, "validation.json")).unwrap();
    assert!(report["nodes_validated"].as_u64() <= report["nodes_total"].as_u64());

    ok(&["mine", "--medline", "abstracts.tsv", "--drugs", &f("drugs.txt"), "--kgml", "pathways.tsv", "--window", "30", "--out", "dt.tsv"], w);
    assert_eq!(read(w, "dt.tsv"), read(&run, "dt.tsv"));
    ok(&["mine", "--medline", "abstracts.tsv", "--drugs", &f("drugs.txt"), "--kgml", "pathways.tsv", "--windows", "10,50", "--out", "dt.tsv"], w);
    assert_eq!(read(w, "dt_w50.tsv"), read(&run, "dt_w50.tsv"));

    ok(&["evidence", "--dt", "dt.tsv", "--combos", "combos.valid.tsv", "--kgml", "pathways.tsv", "--out", "evidence.tsv", "--pairs", "pairs.tsv"], w);
    assert_eq!(read(w, "evidence.tsv"), read(&run, "evidence.tsv"));
    assert_eq!(read(w, "pairs.tsv"), read(&run, "pairs.tsv"));

    ok(&["report", "coverage", "--evidence", "evidence.tsv", "--kgml", "pathways.tsv", "--out", "reports"], w);
    assert_eq!(read(&w.join("reports"), "coverage.csv"), read(&run, "coverage.csv"));
    ok(&["report", "sweep", "--dt", "dt_w50.tsv", "--kgml", "pathways.tsv", "--out", "reports"], w);
    assert_eq!(read(&w.join("reports"), "summary.csv"), read(&run, "summary.csv"));
}

/// Copies the fixture inputs into a fresh directory.
fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["config.toml", "drugs.txt", "fda_snapshot.txt", "shots.txt", "hsa05224.xml", "medline.txt"] {
        std::fs::copy(fixtures().join(name), tmp.path().join(name)).unwrap();
    }
    std::fs::create_dir(tmp.path().join("trials")).unwrap();
    for entry in std::fs::read_dir(fixtures().join("trials")).unwrap() {
        let path = entry.unwrap().path();
        std::fs::copy(&path, tmp.path().join("trials").join(path.file_name().unwrap())).unwrap();
    }
    tmp
}

#[test]
fn config_error_exits_2() {
    let ws = workspace();
    let text = read(ws.path(), "config.toml").replace("window = 30", "window = 0");
    std::fs::write(ws.path().join("config.toml"), text).unwrap();
    let out = pathrepo(&["run", "config.toml"], ws.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mining.window"));
}

#[test]
fn stage_failure_exits_1() {
    let ws = workspace();
    std::fs::write(ws.path().join("trials/bad.json"), "{ not json").unwrap();
    let out = pathrepo(&["run", "config.toml"], ws.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage ingest failed"));
}

#[test]
fn bad_subcommand_input_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pathrepo(&["ingest", "kgml", "missing.xml", "--disease", "x"], tmp.path());
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
