//! The drug-combination layer: a trial-labeled multigraph built from
//! extracted triples.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::model::{CombinationGraph, CombinationTriple, ModelError, COMBINATION_THERAPY};
use crate::prompt::relation_class;

/// Builds the multigraph: one node per drug, one edge per distinct
/// (canonical pair, trial). Self-pairs are dropped.
pub fn build_combination_graph(triples: &[CombinationTriple]) -> CombinationGraph {
    let mut graph = CombinationGraph::new();
    for t in triples {
        if let Err(e) = graph.insert(t) {
            tracing::warn!(nct = %t.nct_id, error = %e, "dropping triple");
        }
    }
    graph
}

pub fn drugs_in_layer(graph: &CombinationGraph) -> &BTreeSet<String> {
    graph.nodes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub combination_therapy_edges: usize,
}

pub fn graph_stats(graph: &CombinationGraph, keywords: &[String]) -> GraphStats {
    GraphStats {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        combination_therapy_edges: graph
            .edges()
            .filter(|e| relation_class(&e.relation, keywords) == COMBINATION_THERAPY)
            .count(),
    }
}

/// Writes triples as `nct_id \t drug_a \t drug_b \t relation`.
pub fn write_triples_tsv<W: Write>(triples: &[CombinationTriple], mut out: W) -> std::io::Result<()> {
    for t in triples {
        writeln!(out, "{}\t{}\t{}\t{}", t.nct_id, t.drug_a, t.drug_b, t.relation)?;
    }
    Ok(())
}

pub fn read_triples_tsv<R: BufRead>(input: R) -> Result<Vec<CombinationTriple>, ModelError> {
    let mut triples = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [nct, a, b, relation] = fields.as_slice() else {
            return Err(ModelError::Format {
                line: idx + 1,
                msg: "expected 'nct_id \\t drug_a \\t drug_b \\t relation'".into(),
            });
        };
        // self-pairs are kept here and dropped by the graph builder
        let (drug_a, drug_b) = if a <= b { (a, b) } else { (b, a) };
        triples.push(CombinationTriple {
            nct_id: nct.to_string(),
            drug_a: drug_a.to_string(),
            drug_b: drug_b.to_string(),
            relation: relation.to_string(),
        });
    }
    Ok(triples)
}
