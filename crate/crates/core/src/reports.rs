//! Result tables and figure data: the proximity sweep per pathway, its
//! summary statistics, pathway coverage, and heatmap/violin CSVs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::evidence::EvidenceGraph;
use crate::kgml::PathwayModule;
use crate::lexicon::PhraseLexicon;
use crate::miner::{mine_sweep, DrugTargetGraph, MinerError};
use crate::model::AbstractDoc;

#[derive(Error, Debug)]
pub enum ReportError {
    #[error("window list must be non-empty and strictly ascending: {0:?}")]
    Windows(Vec<u32>),
    #[error("sweep has no rows or no windows")]
    EmptySweep,
    #[error(transparent)]
    Miner(#[from] MinerError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SweepCell {
    pub pmids: usize,
    pub drugs: usize,
    pub proteins: usize,
}

/// Per pathway, one cell per window. Every pathway of the module has a
/// row, zero-filled when nothing links to it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepTable {
    pub windows: Vec<u32>,
    pub rows: BTreeMap<String, Vec<SweepCell>>,
}

impl SweepTable {
    pub fn cell(&self, pathway: &str, window: u32) -> Option<SweepCell> {
        let col = self.windows.iter().position(|&w| w == window)?;
        self.rows.get(pathway).map(|r| r[col])
    }
}

fn check_windows(windows: &[u32]) -> Result<(), ReportError> {
    if windows.is_empty() || windows[0] == 0 || windows.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ReportError::Windows(windows.to_vec()));
    }
    Ok(())
}

/// Mines the corpus at the widest window and tabulates every window.
pub fn proximity_sweep(
    corpus: &[AbstractDoc],
    drug_lex: &PhraseLexicon,
    protein_lex: &PhraseLexicon,
    module: &PathwayModule,
    windows: &[u32],
) -> Result<SweepTable, ReportError> {
    check_windows(windows)?;
    let layers = mine_sweep(corpus, drug_lex, protein_lex, windows)?;
    let widest = &layers[windows.last().expect("checked non-empty")];
    sweep_from_layer(widest, module, windows)
}

/// Tabulates the sweep from a layer mined at (at least) the widest window.
pub fn sweep_from_layer(
    layer: &DrugTargetGraph,
    module: &PathwayModule,
    windows: &[u32],
) -> Result<SweepTable, ReportError> {
    check_windows(windows)?;
    let protein_index = module.protein_index();
    // pathway -> window column -> (pmids, drugs, proteins)
    type Sets<'a> = (BTreeSet<&'a str>, BTreeSet<&'a str>, BTreeSet<&'a str>);
    let mut acc: BTreeMap<&str, Vec<Sets>> = module
        .pathways
        .iter()
        .map(|p| (p.id.as_str(), vec![Sets::default(); windows.len()]))
        .collect();
    for (drug, protein, pmids) in layer.pairs() {
        let Some(pathways) = protein_index.get(protein) else {
            continue;
        };
        for (pmid, &dist) in pmids {
            let first = windows.partition_point(|&w| w < dist);
            for pw in pathways {
                let cols = acc.get_mut(pw).expect("index built from module");
                for sets in &mut cols[first..] {
                    sets.0.insert(pmid.as_str());
                    sets.1.insert(drug);
                    sets.2.insert(protein);
                }
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|(p, cols)| {
            let cells = cols
                .into_iter()
                .map(|(pm, d, pr)| SweepCell {
                    pmids: pm.len(),
                    drugs: d.len(),
                    proteins: pr.len(),
                })
                .collect();
            (p.to_string(), cells)
        })
        .collect();
    Ok(SweepTable {
        windows: windows.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub max: usize,
    pub mean_over_max: f64,
}

impl Stat {
    /// Mean and max over the non-zero counts; `None` when all are zero.
    pub fn over(counts: impl IntoIterator<Item = usize>) -> Option<Self> {
        let nonzero: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
        let max = *nonzero.iter().max()?;
        let mean = nonzero.iter().sum::<usize>() as f64 / nonzero.len() as f64;
        Some(Self {
            mean,
            max,
            mean_over_max: mean / max as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSummary {
    pub window: u32,
    pub drugs: Option<Stat>,
    pub proteins: Option<Stat>,
    pub pmids: Option<Stat>,
}

/// Mean, max and mean/max per window for drugs, proteins and PMIDs, taken
/// over pathways with a non-zero count.
pub fn summary_stats(sweep: &SweepTable) -> Result<Vec<WindowSummary>, ReportError> {
    if sweep.rows.is_empty() || sweep.windows.is_empty() {
        return Err(ReportError::EmptySweep);
    }
    Ok(sweep
        .windows
        .iter()
        .enumerate()
        .map(|(col, &window)| {
            let column = || sweep.rows.values().map(move |r| r[col]);
            WindowSummary {
                window,
                drugs: Stat::over(column().map(|c| c.drugs)),
                proteins: Stat::over(column().map(|c| c.proteins)),
                pmids: Stat::over(column().map(|c| c.pmids)),
            }
        })
        .collect())
}

/// Rounds to two decimals for reporting.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageRow {
    pub pathway_id: String,
    pub drug_count: usize,
    /// Covering drugs that also appear in the combination layer.
    pub combo_layer_drugs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageReport {
    /// Pathways covered by at least two drugs, by count descending.
    pub rows: Vec<CoverageRow>,
    /// Pathways covered by exactly one drug.
    pub under_covered: Vec<String>,
    /// Pathways with no covering drug.
    pub uncovered: Vec<String>,
    pub total_pathways: usize,
}

impl CoverageReport {
    pub fn header(&self) -> String {
        format!("{}/{} covered", self.rows.len(), self.total_pathways)
    }
}

pub fn coverage_report(ev: &EvidenceGraph, module: &PathwayModule) -> CoverageReport {
    let mut combo_drugs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in ev.records.iter().filter(|r| r.trial_id.is_some()) {
        combo_drugs
            .entry(r.pathway_id.as_str())
            .or_default()
            .insert(r.drug.as_str());
    }
    let mut rows = Vec::new();
    let mut under_covered = Vec::new();
    let mut uncovered = Vec::new();
    let mut ids: BTreeSet<&str> = module.pathways.iter().map(|p| p.id.as_str()).collect();
    ids.extend(ev.by_pathway.keys().map(String::as_str));
    for id in &ids {
        let count = ev.by_pathway.get(*id).map_or(0, BTreeSet::len);
        match count {
            0 => uncovered.push(id.to_string()),
            1 => under_covered.push(id.to_string()),
            _ => rows.push(CoverageRow {
                pathway_id: id.to_string(),
                drug_count: count,
                combo_layer_drugs: combo_drugs.get(id).map_or(0, BTreeSet::len),
            }),
        }
    }
    rows.sort_by(|a, b| {
        b.drug_count
            .cmp(&a.drug_count)
            .then_with(|| a.pathway_id.cmp(&b.pathway_id))
    });
    CoverageReport {
        rows,
        under_covered,
        uncovered,
        total_pathways: ids.len(),
    }
}

pub fn write_coverage_csv<W: Write>(report: &CoverageReport, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pathway_id", "drug_count", "combo_layer_drugs", "status"])?;
    for r in &report.rows {
        w.write_record([
            r.pathway_id.as_str(),
            &r.drug_count.to_string(),
            &r.combo_layer_drugs.to_string(),
            "covered",
        ])?;
    }
    for id in &report.under_covered {
        w.write_record([id.as_str(), "1", "", "under-covered"])?;
    }
    for id in &report.uncovered {
        w.write_record([id.as_str(), "0", "", "uncovered"])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Long format: `pathway_id,window,pmids,drugs,proteins`.
pub fn write_sweep_csv<W: Write>(sweep: &SweepTable, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pathway_id", "window", "pmids", "drugs", "proteins"])?;
    for (p, cells) in &sweep.rows {
        for (window, c) in sweep.windows.iter().zip(cells) {
            w.write_record([
                p.as_str(),
                &window.to_string(),
                &c.pmids.to_string(),
                &c.drugs.to_string(),
                &c.proteins.to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(summary: &[WindowSummary], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window", "measure", "mean", "max", "mean_over_max"])?;
    for s in summary {
        for (measure, stat) in [("drugs", s.drugs), ("proteins", s.proteins), ("pmids", s.pmids)] {
            let (mean, max, ratio) = match stat {
                Some(st) => (
                    format!("{:.2}", st.mean),
                    st.max.to_string(),
                    format!("{:.2}", round2(st.mean_over_max)),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([s.window.to_string().as_str(), measure, &mean, &max, &ratio])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Drugs,
    Proteins,
    Pmids,
}

impl Measure {
    fn of(self, c: &SweepCell) -> usize {
        match self {
            Self::Drugs => c.drugs,
            Self::Proteins => c.proteins,
            Self::Pmids => c.pmids,
        }
    }
}

/// Dense matrix: one row per pathway, one column per window.
pub fn write_heatmap_csv<W: Write>(
    sweep: &SweepTable,
    measure: Measure,
    out: W,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["pathway_id".to_string()];
    header.extend(sweep.windows.iter().map(|w| format!("w{w}")));
    w.write_record(&header)?;
    for (p, cells) in &sweep.rows {
        let mut rec = vec![p.clone()];
        rec.extend(cells.iter().map(|c| measure.of(c).to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Parses a heatmap CSV back into (windows, pathway → counts).
pub fn read_heatmap_csv<R: Read>(input: R) -> Result<(Vec<u32>, BTreeMap<String, Vec<usize>>), ReportError> {
    let mut r = csv::Reader::from_reader(input);
    let bad = |msg: &str| {
        ReportError::Csv(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            msg.to_string(),
        )))
    };
    let windows = r
        .headers()?
        .iter()
        .skip(1)
        .map(|h| h.trim_start_matches('w').parse::<u32>().map_err(|_| bad("bad window header")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let id = rec.get(0).ok_or_else(|| bad("missing pathway id"))?.to_string();
        let counts = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<usize>().map_err(|_| bad("bad count")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.insert(id, counts);
    }
    Ok((windows, rows))
}

/// Long format for violin plots: `window,pathway_id,pmid_count`.
pub fn write_violin_csv<W: Write>(sweep: &SweepTable, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["window", "pathway_id", "pmid_count"])?;
    for (col, window) in sweep.windows.iter().enumerate() {
        for (p, cells) in &sweep.rows {
            w.write_record([window.to_string().as_str(), p, &cells[col].pmids.to_string()])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub const HEATMAP_DRUGS: &str = "heatmap_drugs.csv";
pub const HEATMAP_PROTEINS: &str = "heatmap_proteins.csv";
pub const VIOLIN_PMIDS: &str = "violin_pmids.csv";

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, ReportError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| ReportError::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

/// Writes the two heatmaps and the violin data into `dir`.
pub fn export_figure_data(sweep: &SweepTable, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir).map_err(|e| ReportError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let drugs = dir.join(HEATMAP_DRUGS);
    let proteins = dir.join(HEATMAP_PROTEINS);
    let violin = dir.join(VIOLIN_PMIDS);
    write_heatmap_csv(sweep, Measure::Drugs, create(&drugs)?)?;
    write_heatmap_csv(sweep, Measure::Proteins, create(&proteins)?)?;
    write_violin_csv(sweep, create(&violin)?)?;
    Ok(vec![drugs, proteins, violin])
}
