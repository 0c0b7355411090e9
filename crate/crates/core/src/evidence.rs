//! Joins the drug-target layer, the combination layer and the pathway
//! module into evidence records, then derives pathway coverage and
//! candidate drug pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::kgml::PathwayModule;
use crate::miner::DrugTargetGraph;
use crate::model::{CombinationGraph, EvidenceRecord};

#[derive(Error, Debug)]
pub enum EvidenceError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvidenceGraph {
    /// Sorted and de-duplicated.
    pub records: Vec<EvidenceRecord>,
    /// Distinct drugs with at least one record per pathway.
    pub by_pathway: BTreeMap<String, BTreeSet<String>>,
}

impl EvidenceGraph {
    pub fn from_records(mut records: Vec<EvidenceRecord>) -> Self {
        records.sort();
        records.dedup();
        let mut by_pathway: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for r in &records {
            by_pathway
                .entry(r.pathway_id.clone())
                .or_default()
                .insert(r.drug.clone());
        }
        Self {
            records,
            by_pathway,
        }
    }

    /// Writes `drug \t target \t pathway_id \t trial_id \t pmid|pmid|...`;
    /// the trial column is empty for records without a trial.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            let pmids: Vec<&str> = r.pmids.iter().map(String::as_str).collect();
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.drug,
                r.target,
                r.pathway_id,
                r.trial_id.as_deref().unwrap_or(""),
                pmids.join("|")
            )?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, EvidenceError> {
        let mut records = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [drug, target, pathway, trial, pmids] = fields.as_slice() else {
                return Err(EvidenceError::Format {
                    line: idx + 1,
                    msg: "expected 5 tab-separated fields".into(),
                });
            };
            records.push(EvidenceRecord {
                drug: drug.to_string(),
                target: target.to_string(),
                pathway_id: pathway.to_string(),
                trial_id: (!trial.is_empty()).then(|| trial.to_string()),
                pmids: pmids
                    .split('|')
                    .filter(|p| !p.is_empty())
                    .map(str::to_string)
                    .collect(),
            });
        }
        Ok(Self::from_records(records))
    }
}

/// For every drug-target pair and every pathway containing the target, one
/// record per trial the drug appears in within the combination layer, or a
/// single trial-less record when it appears in none.
pub fn build_evidence_graph(
    dt: &DrugTargetGraph,
    combos: &CombinationGraph,
    module: &PathwayModule,
) -> EvidenceGraph {
    let protein_index = module.protein_index();
    let trial_index = combos.trial_index();
    let pairs: Vec<_> = dt.pairs().collect();
    let records: Vec<EvidenceRecord> = pairs
        .par_iter()
        .flat_map_iter(|&(drug, target, pmids)| {
            let pmids: BTreeSet<String> = pmids.keys().cloned().collect();
            let trials: Vec<Option<String>> = match trial_index.get(drug) {
                Some(ts) if !ts.is_empty() => ts.iter().cloned().map(Some).collect(),
                _ => vec![None],
            };
            let mut records = Vec::new();
            for pathway in protein_index.get(target).into_iter().flatten() {
                for trial_id in &trials {
                    records.push(EvidenceRecord {
                        drug: drug.to_string(),
                        target: target.to_string(),
                        pathway_id: pathway.to_string(),
                        trial_id: trial_id.clone(),
                        pmids: pmids.clone(),
                    });
                }
            }
            records
        })
        .collect();
    EvidenceGraph::from_records(records)
}

/// Distinct covering drugs per pathway. Pathways without records are absent.
pub fn pathway_coverage(ev: &EvidenceGraph) -> BTreeMap<String, usize> {
    ev.by_pathway
        .iter()
        .map(|(p, drugs)| (p.clone(), drugs.len()))
        .collect()
}

/// Pathways covered by at least `min_drugs` distinct drugs.
pub fn covered_pathways(ev: &EvidenceGraph, min_drugs: usize) -> BTreeSet<String> {
    pathway_coverage(ev)
        .into_iter()
        .filter(|&(_, n)| n >= min_drugs)
        .map(|(p, _)| p)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairStatus {
    TrialSupported,
    Hypothesis,
}

impl fmt::Display for PairStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TrialSupported => "trial-supported",
            Self::Hypothesis => "hypothesis",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CandidatePair {
    pub pathway_id: String,
    pub drug_a: String,
    pub drug_b: String,
    pub status: PairStatus,
    pub trial_ids: BTreeSet<String>,
    pub pmids: BTreeSet<String>,
}

/// Every unordered pair of drugs covering the same pathway. A pair is
/// trial-supported when it is itself an edge of the combination layer.
pub fn candidate_pairs(ev: &EvidenceGraph, combos: &CombinationGraph) -> Vec<CandidatePair> {
    let mut pmids: BTreeMap<(&str, &str), BTreeSet<String>> = BTreeMap::new();
    for r in &ev.records {
        pmids
            .entry((r.pathway_id.as_str(), r.drug.as_str()))
            .or_default()
            .extend(r.pmids.iter().cloned());
    }
    let mut out = Vec::new();
    for (pathway, drugs) in &ev.by_pathway {
        let drugs: Vec<&String> = drugs.iter().collect();
        for (i, a) in drugs.iter().enumerate() {
            for b in &drugs[i + 1..] {
                let trial_ids = combos.trials_for_pair(a, b);
                let status = if trial_ids.is_empty() {
                    PairStatus::Hypothesis
                } else {
                    PairStatus::TrialSupported
                };
                let mut union = pmids[&(pathway.as_str(), a.as_str())].clone();
                union.extend(pmids[&(pathway.as_str(), b.as_str())].iter().cloned());
                out.push(CandidatePair {
                    pathway_id: pathway.clone(),
                    drug_a: (*a).clone(),
                    drug_b: (*b).clone(),
                    status,
                    trial_ids,
                    pmids: union,
                });
            }
        }
    }
    out
}

/// Writes `pathway_id \t drug_a \t drug_b \t status \t trials \t pmids`
/// with `|`-joined list columns.
pub fn write_pairs_tsv<W: Write>(pairs: &[CandidatePair], mut out: W) -> std::io::Result<()> {
    let join = |s: &BTreeSet<String>| s.iter().map(String::as_str).collect::<Vec<_>>().join("|");
    for p in pairs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            p.pathway_id,
            p.drug_a,
            p.drug_b,
            p.status,
            join(&p.trial_ids),
            join(&p.pmids)
        )?;
    }
    Ok(())
}
