use std::time::Instant;

use pathrepo_core::fda::{validate_graph, FdaSnapshot};
use pathrepo_core::model::{CombinationGraph, CombinationTriple, CO_OCCURRENCE};
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = CombinationGraph> {
    let node = prop::sample::select(vec![
        "tamoxifen", "anastrozole", "letrozole", "azd6738", "bms-791325", "hiv infection",
        "placebo", "docetaxel", "tak-491", "saline",
    ]);
    prop::collection::vec((node.clone(), node, 0..6u8), 0..30).prop_map(|v| {
        let mut g = CombinationGraph::new();
        for (a, b, n) in v {
            if let Ok(t) = CombinationTriple::new(&format!("N{n}"), a, b, CO_OCCURRENCE) {
                g.insert(&t).unwrap();
            }
        }
        g
    })
}

fn snapshot_strategy() -> impl Strategy<Value = FdaSnapshot> {
    prop::sample::subsequence(vec!["tamoxifen", "anastrozole", "letrozole", "docetaxel", "placebo"], 0..=5)
        .prop_map(FdaSnapshot::from_names)
}

proptest! {
    #[test]
    fn report_arithmetic(g in graph_strategy(), snap in snapshot_strategy()) {
        let (valid, report) = validate_graph(&g, &snap);
        prop_assert!(report.nodes_validated <= report.nodes_total);
        prop_assert!(report.edges_validated <= report.edges_total);
        let rejected: Vec<&str> = report.rejected_terms.iter().map(|r| r.term.as_str()).collect();
        let touching = g
            .edges()
            .filter(|e| rejected.contains(&e.drug_a.as_str()) || rejected.contains(&e.drug_b.as_str()))
            .count();
        prop_assert_eq!(report.edges_total - report.edges_validated, touching);
        prop_assert_eq!(report.nodes_total - report.nodes_validated, rejected.len());
        prop_assert_eq!(valid.edge_count(), report.edges_validated);
    }

    #[test]
    fn removing_a_name_never_adds_nodes(g in graph_strategy(), snap in snapshot_strategy(), pick in 0usize..5) {
        let (_, full) = validate_graph(&g, &snap);
        if let Some(name) = snap.names().iter().nth(pick % snap.len().max(1)).cloned() {
            let (_, fewer) = validate_graph(&g, &snap.without(&name));
            prop_assert!(fewer.nodes_validated <= full.nodes_validated);
        }
    }

    #[test]
    fn idempotent(g in graph_strategy(), snap in snapshot_strategy()) {
        let (once, _) = validate_graph(&g, &snap);
        let (twice, report) = validate_graph(&once, &snap);
        prop_assert_eq!(&once, &twice);
        prop_assert!(report.rejected_terms.is_empty());
    }
}

#[test]
fn large_snapshot_loads_quickly() {
    let text: String = (0..30_000).map(|i| format!("Drug Name {i}\n")).collect();
    let start = Instant::now();
    let snap = FdaSnapshot::parse(&text, "gen").unwrap();
    assert_eq!(snap.len(), 30_000);
    assert!(start.elapsed().as_secs_f64() < 1.0, "{:?}", start.elapsed());
}
