//! Corpus-to-evidence pipeline for drug-combination discovery.
//!
//! Three layers are built and joined: drug combinations extracted from
//! clinical-trial descriptions, drug-target proximity edges mined from
//! PubMed abstracts, and the protein sets of disease signaling pathways
//! parsed from KEGG KGML.

pub mod ingest;
pub mod kgml;
pub mod lexicon;
pub mod model;
pub mod prompt;
pub mod combos;
pub mod evidence;
pub mod miner;
pub mod fda;
pub mod reports;
pub mod pipeline;
