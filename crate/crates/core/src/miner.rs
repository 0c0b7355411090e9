//! Drug-target proximity mining over abstracts.
//!
//! Every abstract is tokenized and scanned with the drug and protein
//! lexicons. A (drug, protein) pair whose closest mentions lie within the
//! token window becomes a proximity edge for that PMID, carrying the
//! minimum distance over all mention pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::tokenize;
use crate::lexicon::{Mention, PhraseLexicon, TermId};
use crate::model::{AbstractDoc, ProximityEdge};

/// Window used when none is configured.
pub const DEFAULT_WINDOW: u32 = 30;

/// Proximity sweep windows, in tokens.
pub const DEFAULT_WINDOWS: [u32; 5] = [10, 20, 30, 40, 50];

#[derive(Error, Debug)]
pub enum MinerError {
    #[error("mentions share the span [{0}, {1}]")]
    DegenerateSpan(usize, usize),
    #[error("window must be at least 1 token")]
    InvalidWindow,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Token distance between two mentions: the start of the later span minus
/// the end of the earlier one, floored at 1 for touching or overlapping
/// spans. Identical spans have no distance.
pub fn calc_distance(a: &Mention, b: &Mention) -> Result<u32, MinerError> {
    if (a.start, a.end) == (b.start, b.end) {
        return Err(MinerError::DegenerateSpan(a.start, a.end));
    }
    let (first, second) = if (a.start, a.end) <= (b.start, b.end) {
        (a, b)
    } else {
        (b, a)
    };
    let gap = second.start as i64 - first.end as i64;
    Ok(gap.max(1) as u32)
}

/// Minimum distance per (drug term, protein term) over all mention pairs in
/// one token sequence, without any window.
fn min_distances(
    drug_mentions: &[Mention],
    protein_mentions: &[Mention],
) -> BTreeMap<(TermId, TermId), u32> {
    let mut best: BTreeMap<(TermId, TermId), u32> = BTreeMap::new();
    for d in drug_mentions {
        for p in protein_mentions {
            let Ok(dist) = calc_distance(d, p) else {
                continue;
            };
            best.entry((d.term, p.term))
                .and_modify(|cur| *cur = (*cur).min(dist))
                .or_insert(dist);
        }
    }
    best
}

/// Proximity edges for one abstract, one per (drug, protein) within
/// `max_distance`, sorted by (drug, protein).
pub fn mine_abstract(
    doc: &AbstractDoc,
    drug_lex: &PhraseLexicon,
    protein_lex: &PhraseLexicon,
    max_distance: u32,
) -> Vec<ProximityEdge> {
    let tokens = tokenize(&doc.abstract_text);
    let drugs = drug_lex.find_mentions(&tokens);
    if drugs.is_empty() {
        return Vec::new();
    }
    let proteins = protein_lex.find_mentions(&tokens);
    let mut edges: Vec<ProximityEdge> = min_distances(&drugs, &proteins)
        .into_iter()
        .filter(|&(_, dist)| dist <= max_distance)
        .map(|((d, p), distance)| ProximityEdge {
            drug: drug_lex.term_name(d).to_string(),
            protein: protein_lex.term_name(p).to_string(),
            pmid: doc.pmid.clone(),
            distance,
        })
        .collect();
    edges.sort();
    edges
}

/// The drug-target layer: proximity edges grouped by (drug, protein) with
/// the per-PMID minimum distance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DrugTargetGraph {
    max_distance: u32,
    edges: BTreeMap<(String, String), BTreeMap<String, u32>>,
}

impl DrugTargetGraph {
    pub fn new(max_distance: u32) -> Self {
        Self {
            max_distance,
            edges: BTreeMap::new(),
        }
    }

    /// Adds an edge, keeping the smaller distance if (drug, protein, pmid)
    /// is already present. Edges beyond the window are ignored.
    pub fn insert(&mut self, edge: ProximityEdge) {
        if edge.distance > self.max_distance || edge.distance == 0 {
            return;
        }
        self.edges
            .entry((edge.drug, edge.protein))
            .or_default()
            .entry(edge.pmid)
            .and_modify(|d| *d = (*d).min(edge.distance))
            .or_insert(edge.distance);
    }

    pub fn max_distance(&self) -> u32 {
        self.max_distance
    }

    /// Number of distinct (drug, protein) pairs.
    pub fn pair_count(&self) -> usize {
        self.edges.len()
    }

    /// Number of (drug, protein, pmid) edges.
    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn drugs(&self) -> BTreeSet<&str> {
        self.edges.keys().map(|(d, _)| d.as_str()).collect()
    }

    pub fn proteins(&self) -> BTreeSet<&str> {
        self.edges.keys().map(|(_, p)| p.as_str()).collect()
    }

    /// (drug, protein) pairs with their PMID → distance evidence.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, &BTreeMap<String, u32>)> {
        self.edges
            .iter()
            .map(|((d, p), pmids)| (d.as_str(), p.as_str(), pmids))
    }

    pub fn pmids(&self, drug: &str, protein: &str) -> Option<&BTreeMap<String, u32>> {
        self.edges.get(&(drug.to_string(), protein.to_string()))
    }

    /// All edges in (drug, protein, pmid) order.
    pub fn proximity_edges(&self) -> impl Iterator<Item = ProximityEdge> + '_ {
        self.edges.iter().flat_map(|((d, p), pmids)| {
            pmids.iter().map(move |(pmid, &distance)| ProximityEdge {
                drug: d.clone(),
                protein: p.clone(),
                pmid: pmid.clone(),
                distance,
            })
        })
    }

    /// The sub-layer of edges within `window` tokens.
    pub fn restrict(&self, window: u32) -> Self {
        let window = window.min(self.max_distance);
        let mut out = Self::new(window);
        for ((d, p), pmids) in &self.edges {
            let kept: BTreeMap<String, u32> = pmids
                .iter()
                .filter(|&(_, &dist)| dist <= window)
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            if !kept.is_empty() {
                out.edges.insert((d.clone(), p.clone()), kept);
            }
        }
        out
    }

    /// Writes `drug \t protein \t pmid \t distance`, one line per edge.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in self.proximity_edges() {
            writeln!(out, "{}\t{}\t{}\t{}", e.drug, e.protein, e.pmid, e.distance)?;
        }
        Ok(())
    }

    /// Reads an edge TSV. The window is taken as the largest distance seen,
    /// or `max_distance` when given.
    pub fn read_tsv<R: BufRead>(input: R, max_distance: Option<u32>) -> Result<Self, MinerError> {
        let mut edges = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| MinerError::Format {
                line: idx + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [drug, protein, pmid, distance] = fields.as_slice() else {
                return Err(bad("expected 'drug \\t protein \\t pmid \\t distance'"));
            };
            let distance: u32 = distance.parse().map_err(|_| bad("distance is not an integer"))?;
            if distance == 0 {
                return Err(bad("distance must be at least 1"));
            }
            edges.push(ProximityEdge {
                drug: drug.to_string(),
                protein: protein.to_string(),
                pmid: pmid.to_string(),
                distance,
            });
        }
        let window = max_distance
            .unwrap_or_else(|| edges.iter().map(|e| e.distance).max().unwrap_or(0));
        let mut graph = Self::new(window);
        for e in edges {
            graph.insert(e);
        }
        Ok(graph)
    }
}

/// Mines every abstract in parallel and merges the results deterministically.
pub fn build_drug_target_layer(
    corpus: &[AbstractDoc],
    drug_lex: &PhraseLexicon,
    protein_lex: &PhraseLexicon,
    max_distance: u32,
) -> Result<DrugTargetGraph, MinerError> {
    if max_distance == 0 {
        return Err(MinerError::InvalidWindow);
    }
    if corpus.is_empty() {
        return Err(MinerError::EmptyCorpus);
    }
    let per_doc: Vec<Vec<ProximityEdge>> = corpus
        .par_iter()
        .map(|doc| mine_abstract(doc, drug_lex, protein_lex, max_distance))
        .collect();
    let mut graph = DrugTargetGraph::new(max_distance);
    for edge in per_doc.into_iter().flatten() {
        graph.insert(edge);
    }
    Ok(graph)
}

/// Mines once at the widest window and restricts to each requested window.
pub fn mine_sweep(
    corpus: &[AbstractDoc],
    drug_lex: &PhraseLexicon,
    protein_lex: &PhraseLexicon,
    windows: &[u32],
) -> Result<BTreeMap<u32, DrugTargetGraph>, MinerError> {
    let widest = windows.iter().copied().max().ok_or(MinerError::InvalidWindow)?;
    let full = build_drug_target_layer(corpus, drug_lex, protein_lex, widest)?;
    Ok(windows.iter().map(|&w| (w, full.restrict(w))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(start: usize, end: usize) -> Mention {
        Mention {
            term: 0,
            start,
            end,
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(calc_distance(&m(0, 0), &m(2, 2)).unwrap(), 2);
        assert_eq!(calc_distance(&m(0, 1), &m(2, 2)).unwrap(), 1);
        assert_eq!(calc_distance(&m(2, 2), &m(0, 1)).unwrap(), 1);
        assert!(matches!(
            calc_distance(&m(5, 5), &m(5, 5)),
            Err(MinerError::DegenerateSpan(5, 5))
        ));
        // overlapping distinct spans floor at 1
        assert_eq!(calc_distance(&m(0, 3), &m(1, 1)).unwrap(), 1);
    }

    fn lexicons() -> (PhraseLexicon, PhraseLexicon) {
        (
            PhraseLexicon::from_term_list("tamoxifen\naspirin\n", "d").unwrap(),
            PhraseLexicon::from_term_list("esr1\nerbb2\n", "p").unwrap(),
        )
    }

    fn doc(pmid: &str, text: &str) -> AbstractDoc {
        AbstractDoc {
            pmid: pmid.into(),
            title: String::new(),
            abstract_text: text.into(),
        }
    }

    #[test]
    fn single_pair() {
        let (d, p) = lexicons();
        let edges = mine_abstract(&doc("1", "tamoxifen binds esr1"), &d, &p, 10);
        assert_eq!(
            edges,
            vec![ProximityEdge {
                drug: "tamoxifen".into(),
                protein: "esr1".into(),
                pmid: "1".into(),
                distance: 2
            }]
        );
    }

    #[test]
    fn minimum_over_occurrences() {
        // drug at 1 and 40, protein at 5: distances 4 and 35
        let mut words = vec!["w"; 45];
        words[1] = "tamoxifen";
        words[40] = "tamoxifen";
        words[5] = "esr1";
        let (d, p) = lexicons();
        let edges = mine_abstract(&doc("1", &words.join(" ")), &d, &p, 10);
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].distance, 4);
    }

    #[test]
    fn window_filter() {
        let mut words = vec!["w"; 20];
        words[0] = "aspirin";
        words[12] = "erbb2";
        let (d, p) = lexicons();
        assert!(mine_abstract(&doc("1", &words.join(" ")), &d, &p, 10).is_empty());
        assert_eq!(mine_abstract(&doc("1", &words.join(" ")), &d, &p, 12).len(), 1);
    }

    #[test]
    fn aggregation_across_abstracts() {
        let (d, p) = lexicons();
        let corpus = vec![
            doc("1", "tamoxifen and esr1"),
            doc("2", "esr1 is hit by tamoxifen"),
        ];
        let g = build_drug_target_layer(&corpus, &d, &p, 10).unwrap();
        assert_eq!(g.pair_count(), 1);
        let pmids: Vec<&str> = g
            .pmids("tamoxifen", "esr1")
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        assert_eq!(pmids, vec!["1", "2"]);
        assert_eq!(g.drugs(), BTreeSet::from(["tamoxifen"]));
        assert_eq!(g.proteins(), BTreeSet::from(["esr1"]));
    }

    #[test]
    fn window_containment() {
        let (d, p) = lexicons();
        let filler = vec!["w"; 25].join(" ");
        let corpus = vec![
            doc("1", &format!("tamoxifen {filler} esr1 aspirin erbb2")),
            doc("2", "aspirin esr1"),
        ];
        let narrow = build_drug_target_layer(&corpus, &d, &p, 10).unwrap();
        let wide = build_drug_target_layer(&corpus, &d, &p, 50).unwrap();
        let n: BTreeSet<_> = narrow.proximity_edges().collect();
        let w: BTreeSet<_> = wide.proximity_edges().collect();
        assert!(n.is_subset(&w));
        assert!(n.len() < w.len());
        assert_eq!(wide.restrict(10), narrow);
    }

    #[test]
    fn preconditions() {
        let (d, p) = lexicons();
        assert!(matches!(
            build_drug_target_layer(&[doc("1", "x")], &d, &p, 0),
            Err(MinerError::InvalidWindow)
        ));
        assert!(matches!(
            build_drug_target_layer(&[], &d, &p, 10),
            Err(MinerError::EmptyCorpus)
        ));
    }

    #[test]
    fn identical_span_cross_type_is_skipped() {
        let d = PhraseLexicon::from_term_list("her2\n", "d").unwrap();
        let p = PhraseLexicon::from_term_list("her2\n", "p").unwrap();
        assert!(mine_abstract(&doc("1", "her2 only"), &d, &p, 10).is_empty());
    }

    #[test]
    fn tsv_round_trip() {
        let (d, p) = lexicons();
        let corpus = vec![doc("7", "tamoxifen esr1 then aspirin w w erbb2")];
        let g = build_drug_target_layer(&corpus, &d, &p, 30).unwrap();
        let mut buf = Vec::new();
        g.write_tsv(&mut buf).unwrap();
        let back = DrugTargetGraph::read_tsv(buf.as_slice(), Some(30)).unwrap();
        assert_eq!(back, g);
        assert!(DrugTargetGraph::read_tsv("a\tb\tc\t0\n".as_bytes(), None).is_err());
    }
}
