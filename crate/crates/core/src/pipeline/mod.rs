//! End-to-end orchestration: ingest → extract → validate → mine → evidence
//! → reports, with per-stage resumability and a provenance manifest.
//!
//! A stage is skipped when all of its outputs exist and its fingerprint
//! (the config keys it reads plus the SHA-256 of every input) matches the
//! one recorded after its last successful run in `.stages/<stage>.json`.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{BackendKind, Config, ConfigError, MockMode, ResolvedInputs};

use crate::combos::{build_combination_graph, graph_stats, write_triples_tsv};
use crate::evidence::{build_evidence_graph, candidate_pairs, write_pairs_tsv, EvidenceGraph};
use crate::fda::{load_fda_snapshot, validate_graph};
use crate::ingest::{
    load_abstracts, load_trials, read_abstracts_tsv, read_trials_tsv, write_abstracts_tsv,
    write_trials_tsv,
};
use crate::kgml::{parse_kgml, unique_target_count, PathwayModule};
use crate::lexicon::{load_drug_lexicon, PhraseLexicon};
use crate::miner::{build_drug_target_layer, DrugTargetGraph};
use crate::model::CombinationGraph;
use crate::prompt::{
    extract_all, parse_shots_file, ChatCompletionsBackend, ExtractConfig, LlmBackend, MockBackend,
    OutputExamples, RateLimited, RetryPolicy,
};
use crate::reports::{
    coverage_report, export_figure_data, summary_stats, sweep_from_layer, write_coverage_csv,
    write_summary_csv, write_sweep_csv,
};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

pub const MANIFEST: &str = "manifest.json";
pub const RUN_LOG: &str = "run_log.json";
const STAGE_DIR: &str = ".stages";

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    /// Process exit code: 2 for configuration errors, 1 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Stage { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub status: StageStatus,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<StageOutcome>,
    /// Non-fatal problems, e.g. trials whose extraction failed.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.dir`.
    pub out_dir: Option<PathBuf>,
    /// Worker threads for intra-stage parallelism; `None` uses all cores.
    pub threads: Option<usize>,
    /// Re-run every stage regardless of recorded fingerprints.
    pub force: bool,
}

/// SHA-256 of a file, or of a directory's sorted `name\0digest\n` listing.
pub fn hash_path(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            let name = e.file_name().unwrap_or_default().to_string_lossy().into_owned();
            hasher.update(name.as_bytes());
            hasher.update(b"\0");
            hasher.update(hash_path(&e)?.as_bytes());
            hasher.update(b"\n");
        }
    } else {
        let mut f = File::open(path)?;
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

fn create(path: &Path) -> Result<BufWriter<File>, BoxError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("{}: {e}", path.display()).into())
}

fn open(path: &Path) -> Result<BufReader<File>, BoxError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BoxError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn finish(mut w: BufWriter<File>) -> Result<(), BoxError> {
    w.flush()?;
    Ok(())
}

fn is_kgml_xml(path: &Path) -> bool {
    path.extension()
        .and_then(|x| x.to_str())
        .is_some_and(|x| x.eq_ignore_ascii_case("xml") || x.eq_ignore_ascii_case("kgml"))
}

/// Loads a pathway module from KGML XML or from a pathways TSV.
pub fn load_pathway_module(path: &Path, disease: &str) -> Result<PathwayModule, BoxError> {
    if is_kgml_xml(path) {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(parse_kgml(&bytes, disease)?)
    } else {
        Ok(PathwayModule::read_tsv(open(path)?)?)
    }
}

/// One input of a stage: a label stable across machines (a config key or
/// an artifact name) and its location.
struct StageInput {
    label: String,
    path: PathBuf,
}

struct Stage {
    name: &'static str,
    inputs: Vec<StageInput>,
    config: Value,
    outputs: Vec<String>,
}

impl Stage {
    fn fingerprint(&self) -> Result<Value, BoxError> {
        let mut inputs = BTreeMap::new();
        for i in &self.inputs {
            let digest = hash_path(&i.path).map_err(|e| format!("{}: {e}", i.path.display()))?;
            inputs.insert(i.label.clone(), digest);
        }
        Ok(json!({ "stage": self.name, "config": self.config, "inputs": inputs }))
    }

    fn record_path(&self, out: &Path) -> PathBuf {
        out.join(STAGE_DIR).join(format!("{}.json", self.name))
    }

    fn is_fresh(&self, out: &Path, fingerprint: &Value) -> bool {
        if !self.outputs.iter().all(|o| out.join(o).is_file()) {
            return false;
        }
        std::fs::read_to_string(self.record_path(out))
            .ok()
            .and_then(|s| serde_json::from_str::<Value>(&s).ok())
            .is_some_and(|v| &v == fingerprint)
    }
}

struct Runner<'a> {
    config: &'a Config,
    inputs: &'a ResolvedInputs,
    out: PathBuf,
    force: bool,
    summary: RunSummary,
}

impl Runner<'_> {
    fn external(&self, key: &str, path: &Path) -> StageInput {
        StageInput {
            label: format!("inputs.{key}"),
            path: path.to_path_buf(),
        }
    }

    fn artifact(&self, name: &str) -> StageInput {
        StageInput {
            label: name.to_string(),
            path: self.out.join(name),
        }
    }

    fn stage(
        &mut self,
        stage: Stage,
        body: impl FnOnce(&Path) -> Result<Vec<String>, BoxError>,
    ) -> Result<(), PipelineError> {
        let name = stage.name;
        let fail = |source: BoxError| PipelineError::Stage {
            stage: name,
            source,
        };
        let started = Instant::now();
        let fingerprint = stage.fingerprint().map_err(fail)?;
        if !self.force && stage.is_fresh(&self.out, &fingerprint) {
            tracing::info!(stage = name, "up to date, skipping");
            self.summary.stages.push(StageOutcome {
                stage: name,
                status: StageStatus::Skipped,
                seconds: 0.0,
            });
            return Ok(());
        }
        tracing::info!(stage = name, "running");
        // a stale record must not survive a failed run
        let record = stage.record_path(&self.out);
        let _ = std::fs::remove_file(&record);
        let warnings = body(&self.out).map_err(fail)?;
        write_json(&record, &fingerprint).map_err(fail)?;
        for w in &warnings {
            tracing::warn!(stage = name, "{w}");
        }
        self.summary.warnings.extend(warnings);
        self.summary.stages.push(StageOutcome {
            stage: name,
            status: StageStatus::Ran,
            seconds: started.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

/// Builds the configured extraction backend.
pub fn make_backend(
    config: &Config,
    inputs: &ResolvedInputs,
    shots: &[crate::prompt::AnnotatedShot],
) -> Result<Box<dyn LlmBackend>, BoxError> {
    let llm = &config.llm;
    let backend: Box<dyn LlmBackend> = match llm.backend {
        BackendKind::Mock => match llm.mock_mode {
            MockMode::Rule => Box::new(MockBackend::rule(load_drug_lexicon(&inputs.drugs)?, shots)),
            MockMode::Map => {
                let path = inputs
                    .mock_responses
                    .as_ref()
                    .ok_or("llm.mock_responses is required for mock_mode = \"map\"")?;
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("{}: {e}", path.display()))?;
                Box::new(MockBackend::map_from_json(&text)?)
            }
        },
        BackendKind::Live => {
            let live = ChatCompletionsBackend::from_env(
                llm.base_url.as_deref().unwrap_or_default(),
                llm.model.as_deref().unwrap_or_default(),
                Duration::from_secs(llm.timeout_secs),
            );
            if llm.min_interval_ms > 0 {
                Box::new(RateLimited::new(live, Duration::from_millis(llm.min_interval_ms)))
            } else {
                Box::new(live)
            }
        }
    };
    Ok(backend)
}

fn extract_config(config: &Config, shots: Vec<crate::prompt::AnnotatedShot>) -> ExtractConfig {
    let mut ec = ExtractConfig::new(shots);
    if let Some([a, b]) = &config.llm.output_examples {
        ec.output_examples = OutputExamples(a.clone(), b.clone());
    }
    ec.retry = RetryPolicy {
        max_retries: config.llm.retries,
        base_delay: Duration::from_millis(config.llm.retry_base_ms),
    };
    ec
}

/// Windows the miner must cover: the evidence window and every sweep window.
fn widest_window(config: &Config) -> u32 {
    config
        .mining
        .windows
        .iter()
        .copied()
        .chain([config.mining.window])
        .max()
        .unwrap_or(config.mining.window)
}

fn sweep_file(w: u32) -> String {
    format!("dt_w{w}.tsv")
}

/// Runs the full pipeline from a config file.
pub fn run_pipeline(config_path: &Path, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    let config = Config::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let inputs = config.resolve(base)?;
    let out = match &opts.out_dir {
        Some(d) => d.clone(),
        None => base.join(&config.output.dir),
    };
    let stage_dir = out.join(STAGE_DIR);
    std::fs::create_dir_all(&stage_dir).map_err(|e| {
        ConfigError {
            field: "output.dir".into(),
            msg: format!("{}: {e}", stage_dir.display()),
        }
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Stage {
            stage: "setup",
            source: e.into(),
        })?;
    let started = SystemTime::now();
    let mut runner = Runner {
        config: &config,
        inputs: &inputs,
        out: out.clone(),
        force: opts.force,
        summary: RunSummary {
            out_dir: out.clone(),
            ..RunSummary::default()
        },
    };
    pool.install(|| run_stages(&mut runner))?;
    let summary = runner.summary;
    write_manifest(&config, &inputs, &out).map_err(|source| PipelineError::Stage {
        stage: "manifest",
        source,
    })?;
    let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let log = json!({
        "started_unix": secs(started),
        "finished_unix": secs(SystemTime::now()),
        "threads": pool.current_num_threads(),
        "stages": summary.stages,
        "warnings": summary.warnings,
    });
    write_json(&out.join(RUN_LOG), &log).map_err(|source| PipelineError::Stage {
        stage: "manifest",
        source,
    })?;
    Ok(summary)
}

fn run_stages(r: &mut Runner) -> Result<(), PipelineError> {
    let config = r.config;
    let inputs = r.inputs;

    // ingest
    let stage = Stage {
        name: "ingest",
        inputs: vec![
            r.external("trials", &inputs.trials),
            r.external("medline", &inputs.medline),
            r.external("kgml", &inputs.kgml),
        ],
        config: json!({ "ingest": config.ingest, "disease": inputs.disease }),
        outputs: ["trials.tsv", "abstracts.tsv", "pathways.tsv", "ingest.json"]
            .map(String::from)
            .to_vec(),
    };
    r.stage(stage, |out| {
        let mut warnings = Vec::new();
        let trials = load_trials(&inputs.trials)?;
        let medline = load_abstracts(&inputs.medline)?;
        if medline.skipped > 0 {
            if !config.ingest.skip_missing_abstract {
                return Err(format!(
                    "{} record(s) without an abstract and ingest.skip_missing_abstract = false",
                    medline.skipped
                )
                .into());
            }
            warnings.push(format!("skipped {} record(s) without an abstract", medline.skipped));
        }
        let module = load_pathway_module(&inputs.kgml, &inputs.disease)?;
        warnings.extend(module.warnings.iter().cloned());
        let mut w = create(&out.join("trials.tsv"))?;
        write_trials_tsv(&trials, &mut w)?;
        finish(w)?;
        let mut w = create(&out.join("abstracts.tsv"))?;
        write_abstracts_tsv(&medline.docs, &mut w)?;
        finish(w)?;
        let mut w = create(&out.join("pathways.tsv"))?;
        module.write_tsv(&mut w)?;
        finish(w)?;
        write_json(
            &out.join("ingest.json"),
            &json!({
                "trials": trials.len(),
                "abstracts": medline.docs.len(),
                "skipped_abstracts": medline.skipped,
                "pathways": module.pathways.len(),
                "unique_targets": unique_target_count(&module),
            }),
        )?;
        Ok(warnings)
    })?;

    // extract
    let mut extract_inputs = vec![r.artifact("trials.tsv"), r.external("shots", &inputs.shots)];
    if config.llm.backend == BackendKind::Mock {
        match &inputs.mock_responses {
            Some(p) => extract_inputs.push(r.external("mock_responses", p)),
            None => extract_inputs.push(r.external("drugs", &inputs.drugs)),
        }
    }
    let llm = &config.llm;
    let stage = Stage {
        name: "extract",
        inputs: extract_inputs,
        // workers, pacing and timeouts change speed, not results
        config: json!({
            "backend": llm.backend,
            "mock_mode": llm.mock_mode,
            "base_url": llm.base_url,
            "model": llm.model,
            "retries": llm.retries,
            "output_examples": llm.output_examples,
        }),
        outputs: [
            "triples.tsv",
            "extract_rejects.tsv",
            "extract_errors.tsv",
            "combos.tsv",
            "combos_stats.json",
        ]
        .map(String::from)
        .to_vec(),
    };
    r.stage(stage, |out| {
        let trials = read_trials_tsv(open(&out.join("trials.tsv"))?, "trials.tsv")?;
        let shots_text = std::fs::read_to_string(&inputs.shots)
            .map_err(|e| format!("{}: {e}", inputs.shots.display()))?;
        let shots = parse_shots_file(&shots_text)?;
        let backend = make_backend(config, inputs, &shots)?;
        let ec = extract_config(config, shots);
        let run = extract_all(&trials, backend.as_ref(), &ec, config.llm.workers);
        let mut w = create(&out.join("triples.tsv"))?;
        write_triples_tsv(&run.triples, &mut w)?;
        finish(w)?;
        let mut w = create(&out.join("extract_rejects.tsv"))?;
        for (nct, rej) in &run.rejects {
            writeln!(w, "{nct}\t{}\t{}\t{}", rej.line_no, rej.reason, rej.line.replace('\t', " "))?;
        }
        finish(w)?;
        let mut w = create(&out.join("extract_errors.tsv"))?;
        for e in &run.errors {
            writeln!(w, "{}\t{}\t{}", e.nct_id, e.attempts, e.message.replace(['\t', '\n'], " "))?;
        }
        finish(w)?;
        let graph = build_combination_graph(&run.triples);
        let mut w = create(&out.join("combos.tsv"))?;
        graph.write_tsv(&mut w)?;
        finish(w)?;
        write_json(&out.join("combos_stats.json"), &graph_stats(&graph, &ec.keywords))?;
        Ok(run.errors.iter().map(|e| e.to_string()).collect())
    })?;

    // validate
    let stage = Stage {
        name: "validate",
        inputs: vec![r.artifact("combos.tsv"), r.external("fda", &inputs.fda)],
        config: Value::Null,
        outputs: ["combos.valid.tsv", "validation_report.json"]
            .map(String::from)
            .to_vec(),
    };
    r.stage(stage, |out| {
        let graph = CombinationGraph::read_tsv(open(&out.join("combos.tsv"))?)?;
        let snapshot = load_fda_snapshot(&inputs.fda)?;
        let (valid, report) = validate_graph(&graph, &snapshot);
        let mut w = create(&out.join("combos.valid.tsv"))?;
        valid.write_tsv(&mut w)?;
        finish(w)?;
        write_json(&out.join("validation_report.json"), &report)?;
        Ok(Vec::new())
    })?;

    // mine
    let widest = widest_window(config);
    let mut mine_outputs: Vec<String> = config.mining.windows.iter().map(|&w| sweep_file(w)).collect();
    mine_outputs.extend(["dt.tsv".to_string(), "mine.json".to_string()]);
    let stage = Stage {
        name: "mine",
        inputs: vec![
            r.artifact("abstracts.tsv"),
            r.artifact("pathways.tsv"),
            r.external("drugs", &inputs.drugs),
        ],
        config: json!({ "mining": config.mining }),
        outputs: mine_outputs,
    };
    r.stage(stage, |out| {
        let corpus = read_abstracts_tsv(open(&out.join("abstracts.tsv"))?, "abstracts.tsv")?;
        let module = PathwayModule::read_tsv(open(&out.join("pathways.tsv"))?)?;
        let drugs = load_drug_lexicon(&inputs.drugs)?;
        let proteins = PhraseLexicon::from_pathway_module(&module);
        let full = build_drug_target_layer(&corpus, &drugs, &proteins, widest)?;
        let mut counts = BTreeMap::new();
        let windows = config.mining.windows.iter().map(|&w| (w, sweep_file(w)));
        for (w, file) in windows.chain([(config.mining.window, "dt.tsv".to_string())]) {
            let layer = full.restrict(w);
            let mut f = create(&out.join(&file))?;
            layer.write_tsv(&mut f)?;
            finish(f)?;
            counts.insert(
                file,
                json!({ "window": w, "pairs": layer.pair_count(), "edges": layer.edge_count() }),
            );
        }
        write_json(&out.join("mine.json"), &counts)?;
        Ok(Vec::new())
    })?;

    // evidence
    let stage = Stage {
        name: "evidence",
        inputs: vec![
            r.artifact("dt.tsv"),
            r.artifact("combos.valid.tsv"),
            r.artifact("pathways.tsv"),
        ],
        config: Value::Null,
        outputs: ["evidence.tsv", "pairs.tsv"].map(String::from).to_vec(),
    };
    r.stage(stage, |out| {
        let dt = DrugTargetGraph::read_tsv(open(&out.join("dt.tsv"))?, Some(config.mining.window))?;
        let combos = CombinationGraph::read_tsv(open(&out.join("combos.valid.tsv"))?)?;
        let module = PathwayModule::read_tsv(open(&out.join("pathways.tsv"))?)?;
        let ev = build_evidence_graph(&dt, &combos, &module);
        let mut w = create(&out.join("evidence.tsv"))?;
        ev.write_tsv(&mut w)?;
        finish(w)?;
        let mut w = create(&out.join("pairs.tsv"))?;
        write_pairs_tsv(&candidate_pairs(&ev, &combos), &mut w)?;
        finish(w)?;
        Ok(Vec::new())
    })?;

    // reports
    let sweep_input = sweep_file(*config.mining.windows.last().expect("validated non-empty"));
    let mut report_outputs: Vec<String> = ["sweep.csv", "summary.csv", "coverage.csv", "coverage.json"]
        .map(String::from)
        .to_vec();
    if config.report.figures {
        report_outputs.extend(
            [crate::reports::HEATMAP_DRUGS, crate::reports::HEATMAP_PROTEINS, crate::reports::VIOLIN_PMIDS]
                .map(String::from),
        );
    }
    let stage = Stage {
        name: "reports",
        inputs: vec![
            r.artifact(&sweep_input),
            r.artifact("pathways.tsv"),
            r.artifact("evidence.tsv"),
        ],
        config: json!({ "windows": config.mining.windows, "report": config.report }),
        outputs: report_outputs,
    };
    r.stage(stage, |out| {
        let module = PathwayModule::read_tsv(open(&out.join("pathways.tsv"))?)?;
        let widest_sweep = *config.mining.windows.last().expect("validated non-empty");
        let layer = DrugTargetGraph::read_tsv(open(&out.join(&sweep_input))?, Some(widest_sweep))?;
        let sweep = sweep_from_layer(&layer, &module, &config.mining.windows)?;
        let mut warnings = Vec::new();
        write_sweep_csv(&sweep, create(&out.join("sweep.csv"))?)?;
        match summary_stats(&sweep) {
            Ok(summary) => write_summary_csv(&summary, create(&out.join("summary.csv"))?)?,
            Err(e) => {
                warnings.push(format!("summary statistics unavailable: {e}"));
                write_summary_csv(&[], create(&out.join("summary.csv"))?)?;
            }
        }
        let ev = EvidenceGraph::read_tsv(open(&out.join("evidence.tsv"))?)?;
        let coverage = coverage_report(&ev, &module);
        write_coverage_csv(&coverage, create(&out.join("coverage.csv"))?)?;
        write_json(
            &out.join("coverage.json"),
            &json!({ "header": coverage.header(), "report": coverage }),
        )?;
        if config.report.figures {
            export_figure_data(&sweep, out)?;
        }
        Ok(warnings)
    })?;
    Ok(())
}

/// Writes `manifest.json`: config, crate version and the SHA-256 of every
/// consumed input and produced artifact. Contains no timestamps or
/// machine-specific paths, so identical runs give identical manifests.
fn write_manifest(config: &Config, inputs: &ResolvedInputs, out: &Path) -> Result<(), BoxError> {
    let mut consumed = BTreeMap::new();
    let mut add = |key: &str, declared: &Option<String>, path: &Path| -> Result<(), BoxError> {
        consumed.insert(
            format!("inputs.{key}"),
            json!({ "path": declared, "sha256": hash_path(path)? }),
        );
        Ok(())
    };
    let i = &config.inputs;
    add("trials", &i.trials, &inputs.trials)?;
    add("medline", &i.medline, &inputs.medline)?;
    add("kgml", &i.kgml, &inputs.kgml)?;
    add("drugs", &i.drugs, &inputs.drugs)?;
    add("fda", &i.fda, &inputs.fda)?;
    add("shots", &i.shots, &inputs.shots)?;
    if let Some(p) = &inputs.mock_responses {
        add("mock_responses", &config.llm.mock_responses, p)?;
    }
    let mut artifacts = BTreeMap::new();
    for entry in std::fs::read_dir(out)? {
        let path = entry?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if path.is_file() && name != MANIFEST && name != RUN_LOG {
            artifacts.insert(name, hash_path(&path)?);
        }
    }
    write_json(
        &out.join(MANIFEST),
        &json!({
            "tool": "pathrepo",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "inputs": consumed,
            "artifacts": artifacts,
        }),
    )
}
