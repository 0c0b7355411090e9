//! Shared domain types: lexicon terms, corpus documents, and the
//! trial-labeled combination multigraph.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relation label used when a response line carries no combination keyword.
pub const CO_OCCURRENCE: &str = "co-occurrence";

/// Label for edges whose relation is one of the configured combination keywords.
pub const COMBINATION_THERAPY: &str = "combination therapy";

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("self pair: '{0}' cannot be combined with itself")]
    SelfPair(String),
    #[error("empty term")]
    EmptyTerm,
    #[error("invalid KEGG entry '{0}', expected hsa:<digits>")]
    InvalidKeggEntry(String),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn normalize_term(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Collapses whitespace runs to single spaces without changing case.
pub fn normalize_whitespace(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True for `hsa:` followed by one or more ASCII digits.
pub fn is_kegg_gene_id(id: &str) -> bool {
    id.strip_prefix("hsa:")
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermSource {
    ChebiLexicon,
    LlmExtracted,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DrugTerm {
    canonical: String,
    aliases: BTreeSet<String>,
    source: TermSource,
}

impl DrugTerm {
    pub fn new(name: &str, source: TermSource) -> Result<Self, ModelError> {
        let canonical = normalize_term(name);
        if canonical.is_empty() {
            return Err(ModelError::EmptyTerm);
        }
        let aliases = BTreeSet::from([canonical.clone()]);
        Ok(Self {
            canonical,
            aliases,
            source,
        })
    }

    /// Adds an alias; blank aliases are ignored.
    pub fn with_alias(mut self, alias: &str) -> Self {
        let alias = normalize_term(alias);
        if !alias.is_empty() {
            self.aliases.insert(alias);
        }
        self
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn aliases(&self) -> &BTreeSet<String> {
        &self.aliases
    }

    pub fn source(&self) -> TermSource {
        self.source
    }
}

impl fmt::Display for DrugTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProteinTerm {
    canonical: String,
    aliases: BTreeSet<String>,
    kegg_entry: String,
}

impl ProteinTerm {
    pub fn new(name: &str, kegg_entry: &str) -> Result<Self, ModelError> {
        let canonical = normalize_term(name);
        if canonical.is_empty() {
            return Err(ModelError::EmptyTerm);
        }
        if !is_kegg_gene_id(kegg_entry) {
            return Err(ModelError::InvalidKeggEntry(kegg_entry.to_string()));
        }
        Ok(Self {
            aliases: BTreeSet::from([canonical.clone()]),
            canonical,
            kegg_entry: kegg_entry.to_string(),
        })
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn aliases(&self) -> &BTreeSet<String> {
        &self.aliases
    }

    pub fn kegg_entry(&self) -> &str {
        &self.kegg_entry
    }
}

/// A KEGG gene branch and the protein labels attached to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pathway {
    pub id: String,
    /// First graphics label of the entry.
    pub label: String,
    /// Additional `hsa:` ids listed on the same entry.
    pub extra_ids: BTreeSet<String>,
    /// Keyed by canonical protein name.
    pub proteins: BTreeMap<String, ProteinTerm>,
}

impl Pathway {
    pub fn contains(&self, protein: &str) -> bool {
        self.proteins.contains_key(protein)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialDoc {
    pub nct_id: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractDoc {
    pub pmid: String,
    pub title: String,
    pub abstract_text: String,
}

/// One (trial, drug, drug) record extracted from a trial description.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CombinationTriple {
    pub nct_id: String,
    pub drug_a: String,
    pub drug_b: String,
    pub relation: String,
}

impl CombinationTriple {
    /// Builds a triple with its drug pair in canonical order.
    pub fn new(nct_id: &str, a: &str, b: &str, relation: &str) -> Result<Self, ModelError> {
        let (drug_a, drug_b) = canonical_name_pair(a, b)?;
        Ok(Self {
            nct_id: nct_id.to_string(),
            drug_a,
            drug_b,
            relation: relation.to_string(),
        })
    }
}

/// Orders two drugs by canonical name. Swapping the arguments yields the same pair.
pub fn canonical_pair<'a>(
    a: &'a DrugTerm,
    b: &'a DrugTerm,
) -> Result<(&'a DrugTerm, &'a DrugTerm), ModelError> {
    match a.canonical.cmp(&b.canonical) {
        std::cmp::Ordering::Less => Ok((a, b)),
        std::cmp::Ordering::Greater => Ok((b, a)),
        std::cmp::Ordering::Equal => Err(ModelError::SelfPair(a.canonical.clone())),
    }
}

/// Name-level variant of [`canonical_pair`]; inputs are normalized first.
pub fn canonical_name_pair(a: &str, b: &str) -> Result<(String, String), ModelError> {
    let (a, b) = (normalize_term(a), normalize_term(b));
    if a.is_empty() || b.is_empty() {
        return Err(ModelError::EmptyTerm);
    }
    match a.cmp(&b) {
        std::cmp::Ordering::Less => Ok((a, b)),
        std::cmp::Ordering::Greater => Ok((b, a)),
        std::cmp::Ordering::Equal => Err(ModelError::SelfPair(a)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComboEdge {
    pub drug_a: String,
    pub drug_b: String,
    pub nct_id: String,
    pub relation: String,
}

/// Trial-labeled multigraph over drugs. Parallel edges between the same pair
/// are kept when they come from different trials; the same (pair, trial)
/// collapses to a single edge.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CombinationGraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String, String), String>,
}

impl CombinationGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a triple. Returns `Ok(false)` when the (pair, trial) edge
    /// already existed.
    pub fn insert(&mut self, triple: &CombinationTriple) -> Result<bool, ModelError> {
        let (a, b) = canonical_name_pair(&triple.drug_a, &triple.drug_b)?;
        self.nodes.insert(a.clone());
        self.nodes.insert(b.clone());
        let key = (a, b, triple.nct_id.clone());
        match self.edges.get_mut(&key) {
            Some(existing) => {
                if prefer_relation(&triple.relation, existing) {
                    *existing = triple.relation.clone();
                }
                Ok(false)
            }
            None => {
                self.edges.insert(key, triple.relation.clone());
                Ok(true)
            }
        }
    }

    /// Adds a node without edges.
    pub fn insert_node(&mut self, drug: &str) -> Result<(), ModelError> {
        let drug = normalize_term(drug);
        if drug.is_empty() {
            return Err(ModelError::EmptyTerm);
        }
        self.nodes.insert(drug);
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_node(&self, drug: &str) -> bool {
        self.nodes.contains(drug)
    }

    /// Edges in (drug_a, drug_b, nct_id) order.
    pub fn edges(&self) -> impl Iterator<Item = ComboEdge> + '_ {
        self.edges.iter().map(|((a, b, n), r)| ComboEdge {
            drug_a: a.clone(),
            drug_b: b.clone(),
            nct_id: n.clone(),
            relation: r.clone(),
        })
    }

    /// Trial ids labeling edges between `a` and `b`, in either argument order.
    pub fn trials_for_pair(&self, a: &str, b: &str) -> BTreeSet<String> {
        let Ok((a, b)) = canonical_name_pair(a, b) else {
            return BTreeSet::new();
        };
        let lo = (a.clone(), b.clone(), String::new());
        self.edges
            .range(lo..)
            .take_while(|((x, y, _), _)| *x == a && *y == b)
            .map(|((_, _, n), _)| n.clone())
            .collect()
    }

    /// Trial ids of every edge touching `drug`.
    pub fn trials_for_drug(&self, drug: &str) -> BTreeSet<String> {
        self.edges
            .keys()
            .filter(|(a, b, _)| a == drug || b == drug)
            .map(|(_, _, n)| n.clone())
            .collect()
    }

    /// Map from drug to the trial ids of its edges.
    pub fn trial_index(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (a, b, n) in self.edges.keys() {
            index.entry(a.clone()).or_default().insert(n.clone());
            index.entry(b.clone()).or_default().insert(n.clone());
        }
        index
    }

    /// Keeps nodes satisfying `keep` and the edges whose endpoints both survive.
    pub fn retain_nodes(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let nodes: BTreeSet<String> = self.nodes.iter().filter(|n| keep(n)).cloned().collect();
        let edges = self
            .edges
            .iter()
            .filter(|((a, b, _), _)| nodes.contains(a) && nodes.contains(b))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Self { nodes, edges }
    }

    /// Edge list as TSV: `drug_a \t drug_b \t nct_id \t relation`. Nodes
    /// without edges follow as single-field lines so the node set survives
    /// a round trip.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<(), ModelError> {
        let mut touched = BTreeSet::new();
        for ((a, b, n), r) in &self.edges {
            writeln!(out, "{a}\t{b}\t{n}\t{r}")?;
            touched.insert(a.as_str());
            touched.insert(b.as_str());
        }
        for node in &self.nodes {
            if !touched.contains(node.as_str()) {
                writeln!(out, "{node}")?;
            }
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, ModelError> {
        let mut graph = Self::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |msg: &str| ModelError::Format {
                line: idx + 1,
                msg: msg.to_string(),
            };
            match fields.as_slice() {
                [node] => graph.insert_node(node).map_err(|e| bad(&e.to_string()))?,
                [a, b, n, r] => {
                    let triple =
                        CombinationTriple::new(n, a, b, r).map_err(|e| bad(&e.to_string()))?;
                    graph.insert(&triple)?;
                }
                _ => return Err(bad("expected 4 tab-separated fields")),
            }
        }
        Ok(graph)
    }
}

/// `true` when `candidate` should replace `current` as the relation label of
/// a collapsed edge. Keyword labels beat the default; ties go to the
/// lexicographically smaller label so insertion order does not matter.
fn prefer_relation(candidate: &str, current: &str) -> bool {
    match (candidate == CO_OCCURRENCE, current == CO_OCCURRENCE) {
        (false, true) => true,
        (true, false) => false,
        _ => candidate < current,
    }
}

/// A drug-protein link found within a token window in one abstract.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProximityEdge {
    pub drug: String,
    pub protein: String,
    pub pmid: String,
    pub distance: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub drug: String,
    pub target: String,
    pub pathway_id: String,
    pub trial_id: Option<String>,
    pub pmids: BTreeSet<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drug(name: &str) -> DrugTerm {
        DrugTerm::new(name, TermSource::ChebiLexicon).unwrap()
    }

    #[test]
    fn canonical_pair_orders_lexicographically() {
        let (z, o) = (drug("zanamivir"), drug("oseltamivir"));
        let (a, b) = canonical_pair(&z, &o).unwrap();
        assert_eq!((a.canonical(), b.canonical()), ("oseltamivir", "zanamivir"));
        let (a2, b2) = canonical_pair(&o, &z).unwrap();
        assert_eq!((a, b), (a2, b2));

        let (t, an) = (drug("tamoxifen"), drug("anastrozole"));
        let (a, b) = canonical_pair(&t, &an).unwrap();
        assert_eq!((a.canonical(), b.canonical()), ("anastrozole", "tamoxifen"));
    }

    #[test]
    fn canonical_pair_rejects_self() {
        let a = drug("a");
        assert!(matches!(canonical_pair(&a, &a), Err(ModelError::SelfPair(_))));
        assert!(matches!(
            canonical_name_pair("A", " a "),
            Err(ModelError::SelfPair(_))
        ));
    }

    #[test]
    fn drug_term_invariants() {
        let d = DrugTerm::new("  All-Trans   Retinoic ACID ", TermSource::ChebiLexicon)
            .unwrap()
            .with_alias("ATRA");
        assert_eq!(d.canonical(), "all-trans retinoic acid");
        assert!(d.aliases().contains(d.canonical()));
        assert!(d.aliases().contains("atra"));
        assert!(DrugTerm::new("   ", TermSource::LlmExtracted).is_err());
    }

    #[test]
    fn protein_term_requires_kegg_id() {
        assert!(ProteinTerm::new("ERBB2", "hsa:2064").is_ok());
        assert!(ProteinTerm::new("ERBB2", "hsa:").is_err());
        assert!(ProteinTerm::new("ERBB2", "ko:K0001").is_err());
    }

    #[test]
    fn parallel_edges_and_dedup() {
        let mut g = CombinationGraph::new();
        let t = |n: &str| CombinationTriple::new(n, "b", "a", CO_OCCURRENCE).unwrap();
        assert!(g.insert(&t("N1")).unwrap());
        assert!(g.insert(&t("N2")).unwrap());
        assert!(!g.insert(&t("N1")).unwrap());
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(
            g.trials_for_pair("b", "a"),
            BTreeSet::from(["N1".to_string(), "N2".to_string()])
        );
    }

    #[test]
    fn collapsed_edge_keeps_keyword_relation() {
        let mut g = CombinationGraph::new();
        g.insert(&CombinationTriple::new("N1", "a", "b", CO_OCCURRENCE).unwrap())
            .unwrap();
        g.insert(&CombinationTriple::new("N1", "a", "b", "plus").unwrap())
            .unwrap();
        assert_eq!(g.edges().next().unwrap().relation, "plus");
    }

    #[test]
    fn tsv_round_trip_keeps_isolated_nodes() {
        let mut g = CombinationGraph::new();
        g.insert(&CombinationTriple::new("N1", "tamoxifen", "anastrozole", "plus").unwrap())
            .unwrap();
        g.insert_node("letrozole").unwrap();
        let mut buf = Vec::new();
        g.write_tsv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "anastrozole\ttamoxifen\tN1\tplus\nletrozole\n"
        );
        let back = CombinationGraph::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn read_tsv_reports_line() {
        let err = CombinationGraph::read_tsv("a\tb\tN1\tplus\na\tb\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ModelError::Format { line: 2, .. }));
    }
}
