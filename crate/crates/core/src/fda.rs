//! Validation of combination-layer drugs against an OpenFDA name snapshot.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{normalize_term, CombinationGraph};

/// Sponsor initials, optional dash, digits: AZD6738, BMS-791325, TAK-491,
/// JNJ-42847922.
static INVESTIGATIONAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[a-z]{2,4}-?[0-9]{3,8}$").expect("valid regex"));

pub const OPENFDA_DRUGSFDA_URL: &str = "https://api.fda.gov/drug/drugsfda.json";

#[derive(Error, Debug)]
pub enum ValidationError {
    #[error("FDA snapshot {0} is empty")]
    EmptySnapshot(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("fetch failed: {0}")]
    Fetch(String),
}

/// Lowercase generic and brand names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FdaSnapshot {
    names: BTreeSet<String>,
}

impl FdaSnapshot {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            names: names
                .into_iter()
                .map(|n| normalize_term(n.as_ref()))
                .filter(|n| !n.is_empty())
                .collect(),
        }
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self, ValidationError> {
        let snap = Self::from_names(text.lines());
        if snap.names.is_empty() {
            return Err(ValidationError::EmptySnapshot(source_name.to_string()));
        }
        Ok(snap)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &BTreeSet<String> {
        &self.names
    }

    pub fn without(&self, name: &str) -> Self {
        let mut names = self.names.clone();
        names.remove(name);
        Self { names }
    }

    /// One name per line, sorted.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for n in &self.names {
            s.push_str(n);
            s.push('\n');
        }
        s
    }
}

pub fn load_fda_snapshot(path: &Path) -> Result<FdaSnapshot, ValidationError> {
    let text = std::fs::read_to_string(path).map_err(|e| ValidationError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    FdaSnapshot::parse(&text, &path.display().to_string())
}

pub fn is_investigational_code(term: &str) -> bool {
    INVESTIGATIONAL.is_match(term)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RejectedTerm {
    pub term: String,
    pub reason: String,
}

/// Node and edge totals before and after validation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub nodes_total: usize,
    pub edges_total: usize,
    pub nodes_validated: usize,
    pub edges_validated: usize,
    pub rejected_terms: Vec<RejectedTerm>,
    pub investigational: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Approved,
    Investigational,
    Rejected,
}

/// Keeps nodes found in the snapshot or shaped like an investigational
/// code (kept and flagged), and edges whose endpoints are both kept.
pub fn validate_graph(
    graph: &CombinationGraph,
    snapshot: &FdaSnapshot,
) -> (CombinationGraph, ValidationReport) {
    let verdicts: Vec<(&String, Verdict)> = graph
        .nodes()
        .par_iter()
        .map(|n| {
            let v = if snapshot.contains(n) {
                Verdict::Approved
            } else if is_investigational_code(n) {
                Verdict::Investigational
            } else {
                Verdict::Rejected
            };
            (n, v)
        })
        .collect();
    let kept: BTreeSet<&str> = verdicts
        .iter()
        .filter(|(_, v)| *v != Verdict::Rejected)
        .map(|(n, _)| n.as_str())
        .collect();
    let validated = graph.retain_nodes(|n| kept.contains(n));
    let report = ValidationReport {
        nodes_total: graph.node_count(),
        edges_total: graph.edge_count(),
        nodes_validated: validated.node_count(),
        edges_validated: validated.edge_count(),
        rejected_terms: verdicts
            .iter()
            .filter(|(_, v)| *v == Verdict::Rejected)
            .map(|(n, _)| RejectedTerm {
                term: (*n).clone(),
                reason: "not in snapshot".into(),
            })
            .collect(),
        investigational: verdicts
            .iter()
            .filter(|(_, v)| *v == Verdict::Investigational)
            .map(|(n, _)| (*n).clone())
            .collect(),
    };
    (validated, report)
}

/// Collects `openfda.generic_name` and `openfda.brand_name` values from one
/// page of the drugsfda endpoint.
pub fn names_from_openfda_page(page: &Value) -> Vec<String> {
    let mut names = Vec::new();
    for result in page
        .get("results")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
    {
        for key in ["generic_name", "brand_name"] {
            let values = result
                .pointer(&format!("/openfda/{key}"))
                .and_then(Value::as_array);
            for v in values.into_iter().flatten().filter_map(Value::as_str) {
                names.push(v.to_string());
            }
        }
    }
    names
}

/// Downloads generic and brand names from OpenFDA, `page_size` records per
/// request, until `max_records` or the end of the result set.
pub fn fetch_snapshot(
    base_url: &str,
    page_size: usize,
    max_records: usize,
) -> Result<FdaSnapshot, ValidationError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(std::time::Duration::from_secs(60)))
        .build()
        .into();
    let mut names = Vec::new();
    let mut skip = 0;
    while skip < max_records {
        let url = format!("{base_url}?limit={page_size}&skip={skip}");
        let page: Value = match agent.get(&url).call() {
            Ok(mut resp) => resp
                .body_mut()
                .read_json()
                .map_err(|e| ValidationError::Fetch(e.to_string()))?,
            // OpenFDA answers 404 once skip runs past the last record
            Err(ureq::Error::StatusCode(404)) => break,
            Err(e) => return Err(ValidationError::Fetch(e.to_string())),
        };
        let batch = names_from_openfda_page(&page);
        let returned = page
            .get("results")
            .and_then(Value::as_array)
            .map_or(0, Vec::len);
        names.extend(batch);
        if returned < page_size {
            break;
        }
        skip += page_size;
    }
    let snap = FdaSnapshot::from_names(names);
    if snap.is_empty() {
        return Err(ValidationError::EmptySnapshot(base_url.to_string()));
    }
    Ok(snap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CombinationTriple, CO_OCCURRENCE};
    use serde_json::json;

    fn graph(edges: &[(&str, &str, &str)]) -> CombinationGraph {
        let mut g = CombinationGraph::new();
        for (n, a, b) in edges {
            g.insert(&CombinationTriple::new(n, a, b, CO_OCCURRENCE).unwrap())
                .unwrap();
        }
        g
    }

    #[test]
    fn snapshot_lowercases_and_dedups() {
        let s = FdaSnapshot::parse("Tamoxifen\nANASTROZOLE\ntamoxifen\n\n", "s").unwrap();
        assert_eq!(
            s.names().iter().map(String::as_str).collect::<Vec<_>>(),
            vec!["anastrozole", "tamoxifen"]
        );
        assert!(matches!(
            FdaSnapshot::parse("\n  \n", "s"),
            Err(ValidationError::EmptySnapshot(_))
        ));
    }

    #[test]
    fn investigational_pattern() {
        for code in ["azd6738", "bms-791325", "jnj-42847922", "tak-491", "sot102"] {
            assert!(is_investigational_code(code), "{code}");
        }
        for term in ["tamoxifen", "hiv infection", "a-12", "abcde-1234", "gw642444m"] {
            assert!(!is_investigational_code(term), "{term}");
        }
    }

    #[test]
    fn noise_terms_rejected() {
        let g = graph(&[("N1", "tamoxifen", "hiv infection")]);
        let snap = FdaSnapshot::from_names(["tamoxifen"]);
        let (valid, report) = validate_graph(&g, &snap);
        assert_eq!(valid.node_count(), 1);
        assert_eq!(valid.edge_count(), 0);
        assert_eq!(
            report.rejected_terms,
            vec![RejectedTerm {
                term: "hiv infection".into(),
                reason: "not in snapshot".into()
            }]
        );
        assert_eq!((report.nodes_total, report.nodes_validated), (2, 1));
        assert_eq!((report.edges_total, report.edges_validated), (1, 0));
    }

    #[test]
    fn investigational_codes_kept_and_flagged() {
        let g = graph(&[("N1", "azd6738", "olaparib")]);
        let snap = FdaSnapshot::from_names(["olaparib"]);
        let (valid, report) = validate_graph(&g, &snap);
        assert_eq!(valid.edge_count(), 1);
        assert_eq!(report.investigational, vec!["azd6738"]);
        assert!(report.rejected_terms.is_empty());
    }

    #[test]
    fn all_validated_keeps_all_edges() {
        let g = graph(&[("N1", "a", "b"), ("N2", "a", "b"), ("N2", "b", "c")]);
        let snap = FdaSnapshot::from_names(["a", "b", "c"]);
        let (valid, report) = validate_graph(&g, &snap);
        assert_eq!(valid, g);
        assert_eq!(report.edges_validated, report.edges_total);
    }

    #[test]
    fn validation_is_idempotent() {
        let g = graph(&[("N1", "a", "x"), ("N2", "a", "tak-491"), ("N3", "b", "y")]);
        let snap = FdaSnapshot::from_names(["a", "b"]);
        let (once, _) = validate_graph(&g, &snap);
        let (twice, _) = validate_graph(&once, &snap);
        assert_eq!(once, twice);
    }

    #[test]
    fn openfda_page_names() {
        let page = json!({"results": [
            {"openfda": {"generic_name": ["TAMOXIFEN CITRATE"], "brand_name": ["SOLTAMOX"]}},
            {"products": []}
        ]});
        assert_eq!(
            names_from_openfda_page(&page),
            vec!["TAMOXIFEN CITRATE", "SOLTAMOX"]
        );
    }
}
