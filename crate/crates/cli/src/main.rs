use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pathrepo_core::combos::{build_combination_graph, graph_stats, read_triples_tsv, write_triples_tsv};
use pathrepo_core::evidence::{build_evidence_graph, candidate_pairs, write_pairs_tsv, EvidenceGraph};
use pathrepo_core::fda::{fetch_snapshot, load_fda_snapshot, validate_graph, OPENFDA_DRUGSFDA_URL};
use pathrepo_core::ingest::{load_abstracts, load_trials, parse_medline, write_abstracts_tsv, write_trials_tsv};
use pathrepo_core::kgml::unique_target_count;
use pathrepo_core::lexicon::{load_drug_lexicon, PhraseLexicon};
use pathrepo_core::miner::{build_drug_target_layer, DrugTargetGraph, DEFAULT_WINDOW, DEFAULT_WINDOWS};
use pathrepo_core::model::CombinationGraph;
use pathrepo_core::pipeline::{load_pathway_module, run_pipeline, RunOptions};
use pathrepo_core::prompt::{
    extract_all, keyword_set, parse_shots_file, ChatCompletionsBackend, ExtractConfig, LlmBackend,
    MockBackend, RateLimited,
};
use pathrepo_core::reports::{
    coverage_report, export_figure_data, summary_stats, sweep_from_layer, write_coverage_csv,
    write_summary_csv, write_sweep_csv,
};

#[derive(Parser)]
#[command(name = "pathrepo", version, about = "Drug-combination evidence from trials, abstracts and pathways")]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize raw inputs into corpus files.
    #[command(subcommand)]
    Ingest(IngestCmd),
    /// Extract drug-combination triples from trial descriptions.
    Extract(ExtractArgs),
    /// Build graphs from extracted triples.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Validate combination-layer drugs against an FDA name snapshot.
    Validate(ValidateArgs),
    /// Mine drug-target proximity edges from abstracts.
    Mine(MineArgs),
    /// Join the layers against pathways into the evidence graph.
    Evidence(EvidenceArgs),
    /// Result tables and figure data.
    #[command(subcommand)]
    Report(ReportCmd),
    /// OpenFDA snapshot tools.
    #[command(subcommand)]
    Fda(FdaCmd),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum IngestCmd {
    /// Directory of trial JSON files → `nct_id \t description` TSV.
    Trials {
        dir: PathBuf,
        #[arg(long, default_value = "trials.tsv")]
        out: PathBuf,
    },
    /// MEDLINE file → `pmid \t title \t abstract` TSV.
    Medline {
        file: PathBuf,
        #[arg(long, default_value = "abstracts.tsv")]
        out: PathBuf,
        /// Fail instead of skipping records without an abstract.
        #[arg(long)]
        strict: bool,
    },
    /// KGML XML → pathways TSV.
    Kgml {
        file: PathBuf,
        #[arg(long)]
        disease: String,
        #[arg(long, default_value = "pathways.tsv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Live,
}

#[derive(Args)]
struct ExtractArgs {
    /// Trial JSON directory or trials TSV.
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    shots: PathBuf,
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendArg,
    /// Drug term list for the rule-based mock.
    #[arg(long)]
    drugs: Option<PathBuf>,
    /// JSON map of canned responses; switches the mock to map mode.
    #[arg(long)]
    mock_responses: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Minimum spacing between live requests, in milliseconds.
    #[arg(long, default_value_t = 0)]
    min_interval_ms: u64,
    #[arg(long, default_value = "triples.tsv")]
    out: PathBuf,
    /// Where to write rejected response lines.
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GraphCmd {
    /// Triples TSV → combination multigraph TSV.
    Combos {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print node/edge counts as JSON.
        #[arg(long)]
        stats: bool,
        /// Shots file whose relation annotations count as combination keywords.
        #[arg(long)]
        shots: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    fda: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    /// Abstracts TSV or MEDLINE file.
    #[arg(long)]
    medline: PathBuf,
    #[arg(long)]
    drugs: PathBuf,
    /// Pathways TSV or KGML XML.
    #[arg(long)]
    kgml: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW, conflicts_with = "windows")]
    window: u32,
    /// Sweep mode: writes one file per window, `<out stem>_w<window>.<ext>`.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<u32>>,
    #[arg(long, default_value = "dt.tsv")]
    out: PathBuf,
}

#[derive(Args)]
struct EvidenceArgs {
    #[arg(long)]
    dt: PathBuf,
    #[arg(long)]
    combos: PathBuf,
    #[arg(long)]
    kgml: PathBuf,
    #[arg(long, default_value = "evidence.tsv")]
    out: PathBuf,
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Args)]
struct SweepInputs {
    /// Drug-target edges mined at (at least) the widest window.
    #[arg(long)]
    dt: PathBuf,
    #[arg(long)]
    kgml: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_WINDOWS)]
    windows: Vec<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// `sweep.csv` and `summary.csv`.
    Sweep(SweepInputs),
    /// `coverage.csv` and `coverage.json`.
    Coverage {
        #[arg(long)]
        evidence: PathBuf,
        #[arg(long)]
        kgml: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heatmap and violin CSVs.
    Figures(SweepInputs),
}

#[derive(Subcommand)]
enum FdaCmd {
    /// Download generic and brand names from OpenFDA into a snapshot file.
    Fetch {
        #[arg(long, default_value = "fda_snapshot.txt")]
        out: PathBuf,
        #[arg(long, default_value = OPENFDA_DRUGSFDA_URL)]
        url: String,
        #[arg(long, default_value_t = 1000)]
        page_size: usize,
        #[arg(long, default_value_t = 30_000)]
        max_records: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Re-run every stage even when its outputs are up to date.
    #[arg(long)]
    force: bool,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_module(path: &Path) -> Result<pathrepo_core::kgml::PathwayModule> {
    let disease = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    load_pathway_module(path, &disease).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

/// `dt.tsv` + 10 → `dt_w10.tsv`.
fn window_path(out: &Path, window: u32) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    let name = match out.extension() {
        Some(ext) => format!("{stem}_w{window}.{}", ext.to_string_lossy()),
        None => format!("{stem}_w{window}"),
    };
    out.with_file_name(name)
}

fn ingest(cmd: IngestCmd) -> Result<()> {
    match cmd {
        IngestCmd::Trials { dir, out } => {
            let trials = load_trials(&dir)?;
            let mut w = create(&out)?;
            write_trials_tsv(&trials, &mut w)?;
            w.flush()?;
            eprintln!("{} trials → {}", trials.len(), out.display());
        }
        IngestCmd::Medline { file, out, strict } => {
            let parsed = parse_medline(&read_text(&file)?, &file.display().to_string())?;
            if strict && parsed.skipped > 0 {
                bail!("{} record(s) without an abstract", parsed.skipped);
            }
            let mut w = create(&out)?;
            write_abstracts_tsv(&parsed.docs, &mut w)?;
            w.flush()?;
            eprintln!(
                "{} abstracts ({} skipped without abstract) → {}",
                parsed.docs.len(),
                parsed.skipped,
                out.display()
            );
        }
        IngestCmd::Kgml { file, disease, out } => {
            let module = load_pathway_module(&file, &disease)
                .map_err(|e| anyhow::anyhow!("{}: {e}", file.display()))?;
            for w in &module.warnings {
                tracing::warn!("{w}");
            }
            let mut w = create(&out)?;
            module.write_tsv(&mut w)?;
            w.flush()?;
            eprintln!(
                "{} pathways, {} unique targets → {}",
                module.pathways.len(),
                unique_target_count(&module),
                out.display()
            );
        }
    }
    Ok(())
}

fn extract(args: ExtractArgs) -> Result<()> {
    let trials = load_trials(&args.trials)?;
    let shots = parse_shots_file(&read_text(&args.shots)?)?;
    let backend: Box<dyn LlmBackend> = match args.backend {
        BackendArg::Mock => match (&args.mock_responses, &args.drugs) {
            (Some(p), _) => Box::new(MockBackend::map_from_json(&read_text(p)?)?),
            (None, Some(d)) => Box::new(MockBackend::rule(load_drug_lexicon(d)?, &shots)),
            (None, None) => bail!("the mock backend needs --drugs or --mock-responses"),
        },
        BackendArg::Live => {
            let (Some(url), Some(model)) = (&args.base_url, &args.model) else {
                bail!("the live backend needs --base-url and --model");
            };
            let live = ChatCompletionsBackend::from_env(url, model, Duration::from_secs(60));
            Box::new(RateLimited::new(live, Duration::from_millis(args.min_interval_ms)))
        }
    };
    let config = ExtractConfig::new(shots);
    let run = extract_all(&trials, backend.as_ref(), &config, args.workers);
    let mut w = create(&args.out)?;
    write_triples_tsv(&run.triples, &mut w)?;
    w.flush()?;
    if let Some(path) = &args.rejects {
        let mut w = create(path)?;
        for (nct, r) in &run.rejects {
            writeln!(w, "{nct}\t{}\t{}\t{}", r.line_no, r.reason, r.line.replace('\t', " "))?;
        }
        w.flush()?;
    }
    for e in &run.errors {
        eprintln!("warning: {e}");
    }
    eprintln!(
        "{} triples from {} trials ({} rejected lines, {} failed trials) → {}",
        run.triples.len(),
        trials.len(),
        run.rejects.len(),
        run.errors.len(),
        args.out.display()
    );
    Ok(())
}

fn graph(cmd: GraphCmd) -> Result<()> {
    let GraphCmd::Combos {
        input,
        out,
        stats,
        shots,
    } = cmd;
    let triples = read_triples_tsv(open(&input)?)?;
    let graph = build_combination_graph(&triples);
    let mut w = create(&out)?;
    graph.write_tsv(&mut w)?;
    w.flush()?;
    if stats {
        let shots = match shots {
            Some(p) => parse_shots_file(&read_text(&p)?)?,
            None => Vec::new(),
        };
        println!("{}", serde_json::to_string_pretty(&graph_stats(&graph, &keyword_set(&shots)))?);
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<()> {
    let graph = CombinationGraph::read_tsv(open(&args.graph)?)?;
    let snapshot = load_fda_snapshot(&args.fda)?;
    let (valid, report) = validate_graph(&graph, &snapshot);
    let mut w = create(&args.out)?;
    valid.write_tsv(&mut w)?;
    w.flush()?;
    write_json(&args.report, &serde_json::to_value(&report)?)?;
    eprintln!(
        "nodes {}/{} validated, edges {}/{} validated",
        report.nodes_validated, report.nodes_total, report.edges_validated, report.edges_total
    );
    Ok(())
}

fn mine(args: MineArgs) -> Result<()> {
    let corpus = load_abstracts(&args.medline)?.docs;
    let drugs = load_drug_lexicon(&args.drugs)?;
    let module = load_module(&args.kgml)?;
    let proteins = PhraseLexicon::from_pathway_module(&module);
    let targets: Vec<(u32, PathBuf)> = match &args.windows {
        Some(ws) => ws.iter().map(|&w| (w, window_path(&args.out, w))).collect(),
        None => vec![(args.window, args.out.clone())],
    };
    let widest = targets.iter().map(|t| t.0).max().unwrap_or(args.window);
    let full = build_drug_target_layer(&corpus, &drugs, &proteins, widest)?;
    for (w, path) in targets {
        let layer = full.restrict(w);
        let mut f = create(&path)?;
        layer.write_tsv(&mut f)?;
        f.flush()?;
        eprintln!(
            "window {w}: {} pairs, {} edges → {}",
            layer.pair_count(),
            layer.edge_count(),
            path.display()
        );
    }
    Ok(())
}

fn evidence(args: EvidenceArgs) -> Result<()> {
    let dt = DrugTargetGraph::read_tsv(open(&args.dt)?, None)?;
    let combos = CombinationGraph::read_tsv(open(&args.combos)?)?;
    let module = load_module(&args.kgml)?;
    let ev = build_evidence_graph(&dt, &combos, &module);
    let mut w = create(&args.out)?;
    ev.write_tsv(&mut w)?;
    w.flush()?;
    if let Some(path) = &args.pairs {
        let mut w = create(path)?;
        write_pairs_tsv(&candidate_pairs(&ev, &combos), &mut w)?;
        w.flush()?;
    }
    eprintln!("{} evidence records → {}", ev.records.len(), args.out.display());
    Ok(())
}

fn load_sweep(args: &SweepInputs) -> Result<pathrepo_core::reports::SweepTable> {
    let module = load_module(&args.kgml)?;
    let layer = DrugTargetGraph::read_tsv(open(&args.dt)?, None)?;
    Ok(sweep_from_layer(&layer, &module, &args.windows)?)
}

fn report(cmd: ReportCmd) -> Result<()> {
    match cmd {
        ReportCmd::Sweep(args) => {
            let sweep = load_sweep(&args)?;
            std::fs::create_dir_all(&args.out)?;
            write_sweep_csv(&sweep, create(&args.out.join("sweep.csv"))?)?;
            write_summary_csv(&summary_stats(&sweep)?, create(&args.out.join("summary.csv"))?)?;
        }
        ReportCmd::Coverage {
            evidence,
            kgml,
            out,
        } => {
            let ev = EvidenceGraph::read_tsv(open(&evidence)?)?;
            let coverage = coverage_report(&ev, &load_module(&kgml)?);
            std::fs::create_dir_all(&out)?;
            write_coverage_csv(&coverage, create(&out.join("coverage.csv"))?)?;
            write_json(
                &out.join("coverage.json"),
                &serde_json::json!({ "header": coverage.header(), "report": coverage }),
            )?;
            println!("{}", coverage.header());
        }
        ReportCmd::Figures(args) => {
            let sweep = load_sweep(&args)?;
            for path in export_figure_data(&sweep, &args.out)? {
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn fda(cmd: FdaCmd) -> Result<()> {
    let FdaCmd::Fetch {
        out,
        url,
        page_size,
        max_records,
    } = cmd;
    let snapshot = fetch_snapshot(&url, page_size, max_records)?;
    std::fs::write(&out, snapshot.to_text()).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("{} names → {}", snapshot.len(), out.display());
    Ok(())
}

fn run(args: RunArgs) -> ExitCode {
    let opts = RunOptions {
        out_dir: args.out,
        threads: args.threads,
        force: args.force,
    };
    match run_pipeline(&args.config, &opts) {
        Ok(summary) => {
            for s in &summary.stages {
                eprintln!("{:<9} {:?}", s.stage, s.status);
            }
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("artifacts in {}", summary.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match cli.command {
        Command::Run(args) => return run(args),
        Command::Ingest(cmd) => ingest(cmd),
        Command::Extract(args) => extract(args),
        Command::Graph(cmd) => graph(cmd),
        Command::Validate(args) => validate(args),
        Command::Mine(args) => mine(args),
        Command::Evidence(args) => evidence(args),
        Command::Report(cmd) => report(cmd),
        Command::Fda(cmd) => fda(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
