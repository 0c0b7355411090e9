//! KEGG KGML parsing. Only `entry` elements of type `gene` are read; each
//! becomes a pathway keyed by its first `hsa:` id, with the comma-separated
//! graphics label supplying the protein names.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{is_kegg_gene_id, normalize_term, Pathway, ProteinTerm};

#[derive(Error, Debug)]
pub enum KgmlError {
    #[error("malformed KGML at byte {position}: {msg}")]
    Xml { position: u64, msg: String },
    #[error("pathway TSV line {line}: {msg}")]
    Tsv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathwayModule {
    pub disease_name: String,
    /// Sorted by id.
    pub pathways: Vec<Pathway>,
    /// Union of all pathway proteins, keyed by canonical name. A protein
    /// listed under several pathways keeps the smallest pathway id as its
    /// `kegg_entry`.
    pub unique_proteins: BTreeMap<String, ProteinTerm>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

impl PathwayModule {
    pub fn from_pathways(disease_name: &str, pathways: impl IntoIterator<Item = Pathway>) -> Self {
        let mut merged: BTreeMap<String, Pathway> = BTreeMap::new();
        for p in pathways {
            match merged.get_mut(&p.id) {
                Some(existing) => merge_into(existing, p),
                None => {
                    merged.insert(p.id.clone(), p);
                }
            }
        }
        let mut unique_proteins = BTreeMap::new();
        for p in merged.values() {
            for (name, term) in &p.proteins {
                unique_proteins.entry(name.clone()).or_insert_with(|| term.clone());
            }
        }
        Self {
            disease_name: disease_name.to_string(),
            pathways: merged.into_values().collect(),
            unique_proteins,
            warnings: Vec::new(),
        }
    }

    pub fn pathway(&self, id: &str) -> Option<&Pathway> {
        self.pathways
            .binary_search_by(|p| p.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.pathways[i])
    }

    /// Pathway ids containing each protein.
    pub fn protein_index(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut index: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for p in &self.pathways {
            for name in p.proteins.keys() {
                index.entry(name.as_str()).or_default().push(p.id.as_str());
            }
        }
        index
    }

    /// Writes `pathway_id \t label \t alias1|alias2|...`, with a fourth
    /// column of space-separated extra ids when the entry carried any. The
    /// disease name goes on a leading `#disease` comment line.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#disease\t{}", self.disease_name)?;
        for p in &self.pathways {
            let aliases: Vec<&str> = p.proteins.keys().map(String::as_str).collect();
            write!(out, "{}\t{}\t{}", p.id, p.label, aliases.join("|"))?;
            if !p.extra_ids.is_empty() {
                let extra: Vec<&str> = p.extra_ids.iter().map(String::as_str).collect();
                write!(out, "\t{}", extra.join(" "))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self, KgmlError> {
        let mut disease = String::new();
        let mut pathways = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let bad = |msg: &str| KgmlError::Tsv {
                line: idx + 1,
                msg: msg.to_string(),
            };
            if let Some(rest) = line.strip_prefix("#disease\t") {
                disease = rest.to_string();
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 3 || fields.len() > 4 {
                return Err(bad("expected 3 or 4 tab-separated fields"));
            }
            let id = fields[0];
            if !is_kegg_gene_id(id) {
                return Err(bad("pathway id must be hsa:<digits>"));
            }
            let mut proteins = BTreeMap::new();
            for alias in fields[2].split('|').map(normalize_term).filter(|a| !a.is_empty()) {
                let term = ProteinTerm::new(&alias, id).map_err(|e| bad(&e.to_string()))?;
                proteins.insert(alias, term);
            }
            if proteins.is_empty() {
                return Err(bad("pathway has no proteins"));
            }
            let extra_ids = fields
                .get(3)
                .map(|s| s.split_whitespace().map(str::to_string).collect())
                .unwrap_or_default();
            pathways.push(Pathway {
                id: id.to_string(),
                label: normalize_term(fields[1]),
                extra_ids,
                proteins,
            });
        }
        Ok(Self::from_pathways(&disease, pathways))
    }
}

fn merge_into(existing: &mut Pathway, other: Pathway) {
    if other.label < existing.label {
        existing.label = other.label;
    }
    existing.extra_ids.extend(other.extra_ids);
    existing.proteins.extend(other.proteins);
}

#[derive(Default)]
struct PendingEntry {
    is_gene: bool,
    name: String,
    graphics: Option<String>,
}

fn attr_value(e: &BytesStart<'_>, key: &[u8]) -> Result<Option<String>, String> {
    for attr in e.attributes() {
        let attr = attr.map_err(|err| err.to_string())?;
        if attr.key.as_ref() == key {
            let v = attr.unescape_value().map_err(|err| err.to_string())?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

/// Splits a graphics label on ", " into normalized aliases, dropping
/// trailing "..." truncation markers and empty pieces.
pub fn split_graphics_name(label: &str) -> Vec<String> {
    label
        .split(',')
        .map(|a| normalize_term(a.trim().trim_end_matches("...")))
        .filter(|a| !a.is_empty())
        .collect()
}

/// Parses a KGML document into a [`PathwayModule`]. Gene entries with an
/// empty or missing graphics label, or with no `hsa:` id, are skipped and
/// noted in `warnings`.
pub fn parse_kgml(xml_doc: &[u8], disease_name: &str) -> Result<PathwayModule, KgmlError> {
    let mut reader = Reader::from_reader(xml_doc);
    reader.config_mut().trim_text(true);
    let mut pending: Option<PendingEntry> = None;
    let mut pathways = Vec::new();
    let mut warnings = Vec::new();
    let mut buf = Vec::new();

    loop {
        let position = reader.buffer_position();
        let xml_err = |msg: String| KgmlError::Xml { position, msg };
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| xml_err(e.to_string()))?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) if e.name().as_ref() == b"entry" => {
                let ty = attr_value(e, b"type").map_err(xml_err)?.unwrap_or_default();
                let entry = PendingEntry {
                    is_gene: ty.eq_ignore_ascii_case("gene"),
                    name: attr_value(e, b"name").map_err(xml_err)?.unwrap_or_default(),
                    graphics: None,
                };
                if matches!(event, Event::Empty(_)) {
                    finish_entry(entry, &mut pathways, &mut warnings);
                } else {
                    pending = Some(entry);
                }
            }
            Event::Start(ref e) | Event::Empty(ref e) if e.name().as_ref() == b"graphics" => {
                if let Some(entry) = pending.as_mut() {
                    if entry.graphics.is_none() {
                        entry.graphics = attr_value(e, b"name").map_err(xml_err)?;
                    }
                }
            }
            Event::End(ref e) if e.name().as_ref() == b"entry" => {
                if let Some(entry) = pending.take() {
                    finish_entry(entry, &mut pathways, &mut warnings);
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if pending.is_some() {
        return Err(KgmlError::Xml {
            position: reader.buffer_position(),
            msg: "unclosed entry element".into(),
        });
    }
    let mut module = PathwayModule::from_pathways(disease_name, pathways);
    module.warnings = warnings;
    Ok(module)
}

fn finish_entry(entry: PendingEntry, pathways: &mut Vec<Pathway>, warnings: &mut Vec<String>) {
    if !entry.is_gene {
        return;
    }
    let ids: Vec<&str> = entry.name.split_whitespace().collect();
    let Some(pos) = ids.iter().position(|id| is_kegg_gene_id(id)) else {
        warnings.push(format!("gene entry '{}' has no hsa id; skipped", entry.name));
        return;
    };
    let id = ids[pos];
    let aliases = split_graphics_name(entry.graphics.as_deref().unwrap_or(""));
    if aliases.is_empty() {
        warnings.push(format!("gene entry {id} has an empty graphics name; skipped"));
        return;
    }
    let proteins = aliases
        .iter()
        .map(|a| {
            let term = ProteinTerm::new(a, id).expect("alias and id already validated");
            (a.clone(), term)
        })
        .collect();
    pathways.push(Pathway {
        id: id.to_string(),
        label: aliases[0].clone(),
        extra_ids: ids
            .iter()
            .enumerate()
            .filter(|&(i, s)| i != pos && is_kegg_gene_id(s))
            .map(|(_, s)| s.to_string())
            .collect::<BTreeSet<_>>(),
        proteins,
    });
}

/// Number of distinct proteins across the module.
pub fn unique_target_count(module: &PathwayModule) -> usize {
    module.unique_proteins.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kgml(entries: &str) -> Vec<u8> {
        format!(
            r#"<?xml version="1.0"?>
<!DOCTYPE pathway SYSTEM "https://www.kegg.jp/kegg/xml/KGML_v0.7.2_.dtd">
<pathway name="path:hsa05224" org="hsa" number="05224" title="Breast cancer">
{entries}
</pathway>"#
        )
        .into_bytes()
    }

    fn aliases(p: &Pathway) -> Vec<&str> {
        p.proteins.keys().map(String::as_str).collect()
    }

    #[test]
    fn gene_entry_becomes_pathway() {
        let doc = kgml(
            r#"<entry id="1" name="hsa:2064" type="gene">
                 <graphics name="ERBB2, HER2" type="rectangle"/>
               </entry>"#,
        );
        let m = parse_kgml(&doc, "breast cancer").unwrap();
        assert_eq!(m.pathways.len(), 1);
        assert_eq!(m.pathways[0].id, "hsa:2064");
        assert_eq!(m.pathways[0].label, "erbb2");
        assert_eq!(aliases(&m.pathways[0]), vec!["erbb2", "her2"]);
        assert!(m
            .pathways[0]
            .proteins
            .values()
            .all(|t| t.kegg_entry() == "hsa:2064"));
    }

    #[test]
    fn non_gene_entries_ignored() {
        let doc = kgml(
            r#"<entry id="2" name="cpd:C00076" type="compound"><graphics name="C00076"/></entry>
               <entry id="3" name="path:hsa04010" type="map"><graphics name="MAPK signaling"/></entry>"#,
        );
        let m = parse_kgml(&doc, "x").unwrap();
        assert!(m.pathways.is_empty());
        assert_eq!(unique_target_count(&m), 0);
    }

    #[test]
    fn duplicate_ids_merge_aliases() {
        let doc = kgml(
            r#"<entry id="1" name="hsa:1956" type="gene"><graphics name="EGFR, ERBB"/></entry>
               <entry id="9" name="hsa:1956" type="gene"><graphics name="EGFR, HER1, ERBB1"/></entry>"#,
        );
        let m = parse_kgml(&doc, "x").unwrap();
        assert_eq!(m.pathways.len(), 1);
        assert_eq!(aliases(&m.pathways[0]), vec!["egfr", "erbb", "erbb1", "her1"]);
    }

    #[test]
    fn ellipsis_stripped_and_multi_id_recorded() {
        let doc = kgml(
            r#"<entry id="4" name="hsa:2064 hsa:2065" type="Gene">
                 <graphics name="ERBB2, CD340, HER-2, TKR1..."/>
               </entry>"#,
        );
        let m = parse_kgml(&doc, "x").unwrap();
        let p = &m.pathways[0];
        assert_eq!(p.id, "hsa:2064");
        assert!(p.extra_ids.contains("hsa:2065"));
        assert_eq!(aliases(p), vec!["cd340", "erbb2", "her-2", "tkr1"]);
    }

    #[test]
    fn empty_graphics_name_warns() {
        let doc = kgml(r#"<entry id="4" name="hsa:7" type="gene"><graphics name=""/></entry>"#);
        let m = parse_kgml(&doc, "x").unwrap();
        assert!(m.pathways.is_empty());
        assert_eq!(m.warnings.len(), 1);
    }

    #[test]
    fn malformed_xml_errors() {
        let err = parse_kgml(b"<pathway><entry type=\"gene\"></pathway>", "x").unwrap_err();
        assert!(matches!(err, KgmlError::Xml { .. }));
    }

    #[test]
    fn unique_target_count_hand_fixture() {
        // aliases {a,b}, {b,c}, {d}: distinct names a, b, c, d
        let doc = kgml(
            r#"<entry id="1" name="hsa:1" type="gene"><graphics name="A, B"/></entry>
               <entry id="2" name="hsa:2" type="gene"><graphics name="B, C"/></entry>
               <entry id="3" name="hsa:3" type="gene"><graphics name="D"/></entry>"#,
        );
        let m = parse_kgml(&doc, "x").unwrap();
        assert_eq!(m.pathways.len(), 3);
        assert_eq!(unique_target_count(&m), 4);
        assert_eq!(m.unique_proteins["b"].kegg_entry(), "hsa:1");
    }

    #[test]
    fn tsv_round_trip() {
        let doc = kgml(
            r#"<entry id="1" name="hsa:2064 hsa:2065" type="gene"><graphics name="ERBB2, HER2"/></entry>
               <entry id="2" name="hsa:2099" type="gene"><graphics name="ESR1, ER, NR3A1"/></entry>"#,
        );
        let m = parse_kgml(&doc, "breast cancer").unwrap();
        let mut buf = Vec::new();
        m.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("hsa:2099\tesr1\ter|esr1|nr3a1\n"));
        let back = PathwayModule::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
