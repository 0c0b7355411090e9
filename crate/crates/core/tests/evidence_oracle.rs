use std::collections::{BTreeMap, BTreeSet};

use pathrepo_core::evidence::{build_evidence_graph, candidate_pairs, PairStatus};
use pathrepo_core::kgml::PathwayModule;
use pathrepo_core::miner::DrugTargetGraph;
use pathrepo_core::model::{
    CombinationGraph, CombinationTriple, EvidenceRecord, Pathway, ProteinTerm, ProximityEdge,
    CO_OCCURRENCE,
};
use pathrepo_core::reports::coverage_report;
use proptest::prelude::*;

type Fixture = (Vec<ProximityEdge>, Vec<(String, String, String)>, Vec<(String, Vec<String>)>);

fn fixture() -> impl Strategy<Value = Fixture> {
    let drug = (0..8u8).prop_map(|i| format!("d{i}"));
    let protein = (0..10u8).prop_map(|i| format!("p{i}"));
    let edges = prop::collection::vec(
        (drug.clone(), protein.clone(), (0..6u8).prop_map(|i| i.to_string()), 1u32..30),
        0..40,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(drug, protein, pmid, distance)| ProximityEdge { drug, protein, pmid, distance })
            .collect()
    });
    let triples = prop::collection::vec((drug.clone(), drug, (0..5u8).prop_map(|i| format!("N{i}"))), 0..15);
    let pathways = prop::collection::btree_map(
        (1..7u16).prop_map(|i| format!("hsa:{i}")),
        prop::collection::btree_set(protein, 1..4),
        1..6,
    )
    .prop_map(|m| m.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect());
    (edges, triples, pathways)
}

fn build(f: &Fixture) -> (DrugTargetGraph, CombinationGraph, PathwayModule) {
    let mut dt = DrugTargetGraph::new(30);
    for e in &f.0 {
        dt.insert(e.clone());
    }
    let mut combos = CombinationGraph::new();
    for (a, b, n) in &f.1 {
        if let Ok(t) = CombinationTriple::new(n, a, b, CO_OCCURRENCE) {
            combos.insert(&t).unwrap();
        }
    }
    let module = PathwayModule::from_pathways(
        "t",
        f.2.iter().map(|(id, ps)| Pathway {
            id: id.clone(),
            label: ps[0].clone(),
            extra_ids: BTreeSet::new(),
            proteins: ps.iter().map(|p| (p.clone(), ProteinTerm::new(p, id).unwrap())).collect(),
        }),
    );
    (dt, combos, module)
}

/// The join as a plain triple loop over the raw fixture lists.
fn brute_force(f: &Fixture) -> Vec<EvidenceRecord> {
    let mut pmids: BTreeMap<(&str, &str), BTreeSet<String>> = BTreeMap::new();
    for e in &f.0 {
        pmids.entry((&e.drug, &e.protein)).or_default().insert(e.pmid.clone());
    }
    let mut trials: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (a, b, n) in &f.1 {
        if a != b {
            trials.entry(a).or_default().insert(n);
            trials.entry(b).or_default().insert(n);
        }
    }
    let mut out = BTreeSet::new();
    for ((drug, protein), ids) in &pmids {
        for (pathway, proteins) in &f.2 {
            if !proteins.iter().any(|p| p == protein) {
                continue;
            }
            let ts: Vec<Option<String>> = match trials.get(drug) {
                Some(ts) => ts.iter().map(|t| Some(t.to_string())).collect(),
                None => vec![None],
            };
            for trial_id in ts {
                out.insert(EvidenceRecord {
                    drug: drug.to_string(),
                    target: protein.to_string(),
                    pathway_id: pathway.clone(),
                    trial_id,
                    pmids: ids.clone(),
                });
            }
        }
    }
    out.into_iter().collect()
}

proptest! {
    #[test]
    fn join_equals_brute_force(f in fixture()) {
        let (dt, combos, module) = build(&f);
        let ev = build_evidence_graph(&dt, &combos, &module);
        prop_assert_eq!(&ev.records, &brute_force(&f));
        // coverage report agrees with the per-pathway drug sets
        let cov = coverage_report(&ev, &module);
        for row in &cov.rows {
            prop_assert_eq!(row.drug_count, ev.by_pathway[&row.pathway_id].len());
        }
        prop_assert_eq!(
            cov.rows.len() + cov.under_covered.len() + cov.uncovered.len(),
            cov.total_pathways
        );
    }

    #[test]
    fn input_order_does_not_matter(f in fixture()) {
        let (dt, combos, module) = build(&f);
        let reversed = (
            f.0.iter().rev().cloned().collect(),
            f.1.iter().rev().cloned().collect(),
            f.2.iter().rev().cloned().collect(),
        );
        let (dt2, combos2, module2) = build(&reversed);
        prop_assert_eq!(
            build_evidence_graph(&dt, &combos, &module),
            build_evidence_graph(&dt2, &combos2, &module2)
        );
    }

    #[test]
    fn pair_status_follows_combo_edges(f in fixture()) {
        let (dt, combos, module) = build(&f);
        let ev = build_evidence_graph(&dt, &combos, &module);
        for p in candidate_pairs(&ev, &combos) {
            let direct = f.1.iter().any(|(a, b, _)| {
                (a == &p.drug_a && b == &p.drug_b) || (a == &p.drug_b && b == &p.drug_a)
            });
            prop_assert_eq!(p.status == PairStatus::TrialSupported, direct);
            prop_assert!(p.drug_a < p.drug_b);
        }
    }
}
