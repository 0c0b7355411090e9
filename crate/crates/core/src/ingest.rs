//! Corpus ingest: clinical-trial JSON documents, MEDLINE-tagged PubMed
//! records, and the positional tokenizer shared by every text consumer.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::Value;
use thiserror::Error;

use crate::model::{normalize_whitespace, AbstractDoc, TrialDoc};

#[derive(Error, Debug)]
pub enum IngestError {
    #[error("{source_name}: invalid JSON: {msg}")]
    Json { source_name: String, msg: String },
    #[error("{source_name}: missing {field}")]
    MissingField {
        source_name: String,
        field: &'static str,
    },
    #[error("{source_name}:{line}: {msg}")]
    Malformed {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("duplicate id {id} in {source_name}")]
    DuplicateId { source_name: String, id: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

const NCT_ID_POINTERS: &[&str] = &[
    "/nct_id",
    "/nctId",
    "/id",
    "/protocolSection/identificationModule/nctId",
];

const DESCRIPTION_POINTERS: &[&str] = &[
    "/description",
    "/detailed_description",
    "/detailedDescription",
    "/protocolSection/descriptionModule/detailedDescription",
    "/protocolSection/descriptionModule/briefSummary",
];

fn first_string<'a>(doc: &'a Value, pointers: &[&str]) -> Option<&'a str> {
    pointers
        .iter()
        .filter_map(|p| doc.pointer(p).and_then(Value::as_str))
        .find(|s| !s.trim().is_empty())
}

/// Parses one trial JSON document. Accepts flat documents
/// (`{"nct_id": .., "description": ..}`) and the nested ClinicalTrials.gov
/// layout (`protocolSection.descriptionModule.detailedDescription`).
pub fn parse_trial(json_doc: &[u8], source_name: &str) -> Result<TrialDoc, IngestError> {
    let doc: Value = serde_json::from_slice(json_doc).map_err(|e| IngestError::Json {
        source_name: source_name.to_string(),
        msg: e.to_string(),
    })?;
    let nct_id = first_string(&doc, NCT_ID_POINTERS).ok_or(IngestError::MissingField {
        source_name: source_name.to_string(),
        field: "nct id",
    })?;
    let description =
        first_string(&doc, DESCRIPTION_POINTERS).ok_or(IngestError::MissingField {
            source_name: source_name.to_string(),
            field: "description",
        })?;
    Ok(TrialDoc {
        nct_id: nct_id.trim().to_string(),
        description: normalize_whitespace(description),
    })
}

/// Reads every `*.json` file in `dir`, sorted by nct id. Duplicate ids are an error.
pub fn parse_trials_dir(dir: &Path) -> Result<Vec<TrialDoc>, IngestError> {
    let files = json_files(dir)?;
    let mut docs = files
        .par_iter()
        .map(|path| {
            let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
            parse_trial(&bytes, &path.display().to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    docs.sort_by(|a, b| a.nct_id.cmp(&b.nct_id));
    if let Some(w) = docs.windows(2).find(|w| w[0].nct_id == w[1].nct_id) {
        return Err(IngestError::DuplicateId {
            source_name: dir.display().to_string(),
            id: w[0].nct_id.clone(),
        });
    }
    Ok(docs)
}

/// Sorted list of `*.json` files directly under `dir`.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let entries = std::fs::read_dir(dir).map_err(|e| IngestError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| IngestError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("json")) && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MedlineParse {
    pub docs: Vec<AbstractDoc>,
    /// Records without an `AB` field.
    pub skipped: usize,
}

#[derive(Default)]
struct RecordBuilder {
    start_line: usize,
    pmid: Option<String>,
    title: Vec<String>,
    abstract_text: Vec<String>,
    current: Option<Field>,
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Pmid,
    Title,
    Abstract,
    Other,
}

impl RecordBuilder {
    fn push(&mut self, field: Field, text: &str) {
        let text = text.trim();
        match field {
            Field::Pmid => {
                if !text.is_empty() {
                    self.pmid = Some(text.to_string());
                }
            }
            Field::Title => self.title.push(text.to_string()),
            Field::Abstract => self.abstract_text.push(text.to_string()),
            Field::Other => {}
        }
    }

    fn is_empty(&self) -> bool {
        self.current.is_none()
    }
}

/// Parses MEDLINE-tagged text (`PMID- `, `TI  - `, `AB  - `, indented
/// continuation lines, blank line between records).
///
/// Records without an abstract are skipped and counted. A line that is
/// neither a tag line nor a continuation, or a record with no PMID, is an
/// error carrying the offending line number.
pub fn parse_medline(text: &str, source_name: &str) -> Result<MedlineParse, IngestError> {
    let malformed = |line: usize, msg: &str| IngestError::Malformed {
        source_name: source_name.to_string(),
        line,
        msg: msg.to_string(),
    };
    let mut out = MedlineParse::default();
    let mut seen = BTreeSet::new();
    let mut rec = RecordBuilder::default();

    let mut finish = |rec: RecordBuilder, out: &mut MedlineParse| -> Result<(), IngestError> {
        if rec.is_empty() {
            return Ok(());
        }
        let pmid = rec
            .pmid
            .ok_or_else(|| malformed(rec.start_line, "record has no PMID"))?;
        if !seen.insert(pmid.clone()) {
            return Err(IngestError::DuplicateId {
                source_name: source_name.to_string(),
                id: pmid,
            });
        }
        let abstract_text = normalize_whitespace(&rec.abstract_text.join(" "));
        if abstract_text.is_empty() {
            out.skipped += 1;
            return Ok(());
        }
        out.docs.push(AbstractDoc {
            pmid,
            title: normalize_whitespace(&rec.title.join(" ")),
            abstract_text,
        });
        Ok(())
    };

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            finish(std::mem::take(&mut rec), &mut out)?;
            continue;
        }
        if line.starts_with(' ') || line.starts_with('\t') {
            let field = rec
                .current
                .ok_or_else(|| malformed(lineno, "continuation line outside a field"))?;
            rec.push(field, line);
            continue;
        }
        let (tag, value) =
            split_tag(line).ok_or_else(|| malformed(lineno, "expected 'TAG - value'"))?;
        let field = match tag {
            "PMID" => Field::Pmid,
            "TI" => Field::Title,
            "AB" => Field::Abstract,
            _ => Field::Other,
        };
        if rec.is_empty() {
            rec.start_line = lineno;
        }
        if field == Field::Pmid && rec.pmid.is_some() {
            return Err(malformed(lineno, "second PMID without a blank line"));
        }
        rec.current = Some(field);
        rec.push(field, value);
    }
    finish(rec, &mut out)?;
    Ok(out)
}

/// Splits `"TI  - text"` into `("TI", "text")`. Tags are 2-4 uppercase
/// letters or digits, padded to four columns before the dash.
fn split_tag(line: &str) -> Option<(&str, &str)> {
    let head = line.get(..4)?;
    let tag = head.trim_end();
    if tag.len() < 2 || !tag.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit()) {
        return None;
    }
    if !head[tag.len()..].bytes().all(|b| b == b' ') {
        return None;
    }
    let rest = line[4..].strip_prefix('-')?;
    Some((tag, rest.strip_prefix(' ').unwrap_or(rest)))
}

/// Writes records in MEDLINE tag format, wrapping long fields onto
/// six-space continuation lines.
pub fn write_medline<W: Write>(docs: &[AbstractDoc], mut out: W) -> std::io::Result<()> {
    for (i, doc) in docs.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        writeln!(out, "PMID- {}", doc.pmid)?;
        if !doc.title.is_empty() {
            write_wrapped(&mut out, "TI  - ", &doc.title)?;
        }
        write_wrapped(&mut out, "AB  - ", &doc.abstract_text)?;
    }
    Ok(())
}

fn write_wrapped<W: Write>(out: &mut W, tag: &str, text: &str) -> std::io::Result<()> {
    const WIDTH: usize = 80;
    let mut line = String::from(tag);
    let mut fresh = true;
    for word in text.split_whitespace() {
        if !fresh && line.len() + 1 + word.len() > WIDTH {
            writeln!(out, "{line}")?;
            line = String::from("      ");
            fresh = true;
        }
        if !fresh {
            line.push(' ');
        }
        line.push_str(word);
        fresh = false;
    }
    writeln!(out, "{line}")
}

/// Writes trials as `nct_id \t description`.
pub fn write_trials_tsv<W: Write>(docs: &[TrialDoc], mut out: W) -> std::io::Result<()> {
    for d in docs {
        writeln!(out, "{}\t{}", d.nct_id, normalize_whitespace(&d.description))?;
    }
    Ok(())
}

pub fn read_trials_tsv<R: BufRead>(input: R, source_name: &str) -> Result<Vec<TrialDoc>, IngestError> {
    let mut docs = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(Path::new(source_name), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| IngestError::Malformed {
            source_name: source_name.to_string(),
            line: idx + 1,
            msg: "expected 'id \\t text'".into(),
        })?;
        docs.push(TrialDoc {
            nct_id: id.to_string(),
            description: text.to_string(),
        });
    }
    Ok(docs)
}

/// Writes abstracts as `pmid \t title \t abstract`.
pub fn write_abstracts_tsv<W: Write>(docs: &[AbstractDoc], mut out: W) -> std::io::Result<()> {
    for d in docs {
        writeln!(
            out,
            "{}\t{}\t{}",
            d.pmid,
            normalize_whitespace(&d.title),
            normalize_whitespace(&d.abstract_text)
        )?;
    }
    Ok(())
}

/// Reads `pmid \t title \t abstract` lines; two-column `pmid \t abstract`
/// lines are accepted with an empty title.
pub fn read_abstracts_tsv<R: BufRead>(
    input: R,
    source_name: &str,
) -> Result<Vec<AbstractDoc>, IngestError> {
    let mut docs = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(Path::new(source_name), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        let doc = match fields.as_slice() {
            [pmid, title, text] => AbstractDoc {
                pmid: pmid.to_string(),
                title: title.to_string(),
                abstract_text: text.to_string(),
            },
            [pmid, text] => AbstractDoc {
                pmid: pmid.to_string(),
                title: String::new(),
                abstract_text: text.to_string(),
            },
            _ => {
                return Err(IngestError::Malformed {
                    source_name: source_name.to_string(),
                    line: idx + 1,
                    msg: "expected 'pmid \\t title \\t abstract'".into(),
                })
            }
        };
        docs.push(doc);
    }
    Ok(docs)
}

/// Loads abstracts from either a corpus TSV (`.tsv`) or a raw MEDLINE file.
pub fn load_abstracts(path: &Path) -> Result<MedlineParse, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let name = path.display().to_string();
    if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("tsv")) {
        Ok(MedlineParse {
            docs: read_abstracts_tsv(text.as_bytes(), &name)?,
            skipped: 0,
        })
    } else {
        parse_medline(&text, &name)
    }
}

/// Loads trials from a directory of JSON files or a `nct_id \t description` TSV.
pub fn load_trials(path: &Path) -> Result<Vec<TrialDoc>, IngestError> {
    if path.is_dir() {
        return parse_trials_dir(path);
    }
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    read_trials_tsv(text.as_bytes(), &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub index: usize,
}

/// Lowercased tokens with global 0-based indices and the sentence ranges
/// (half-open, over token indices) partitioning them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub sentence_bounds: Vec<Range<usize>>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Token texts of sentence `i`.
    pub fn sentence(&self, i: usize) -> &[Token] {
        &self.tokens[self.sentence_bounds[i].clone()]
    }
}

/// Splits text into lowercase word and punctuation tokens.
///
/// Alphanumeric runs form words; a `-` between two alphanumerics joins them
/// into one token ("BMS-791325"). Every other non-space character is a
/// token of its own, so "AZT/ddI" yields `azt`, `/`, `ddi`. A sentence ends
/// at `.`, `?` or `!` followed by whitespace or end of text.
pub fn tokenize(text: &str) -> TokenStream {
    let chars: Vec<char> = text.chars().collect();
    let mut stream = TokenStream::default();
    let mut sentence_start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_alphanumeric() {
            i += 1;
            while i < chars.len() {
                if chars[i].is_alphanumeric() {
                    i += 1;
                } else if chars[i] == '-'
                    && i + 1 < chars.len()
                    && chars[i + 1].is_alphanumeric()
                {
                    i += 2;
                } else {
                    break;
                }
            }
        } else {
            i += 1;
        }
        let word: String = chars[start..i].iter().collect::<String>().to_lowercase();
        let index = stream.tokens.len();
        stream.tokens.push(Token { text: word, index });
        let terminal = matches!(c, '.' | '?' | '!') && i - start == 1;
        if terminal && chars.get(i).is_none_or(|n| n.is_whitespace()) {
            stream.sentence_bounds.push(sentence_start..index + 1);
            sentence_start = index + 1;
        }
    }
    if sentence_start < stream.tokens.len() {
        stream.sentence_bounds.push(sentence_start..stream.tokens.len());
    }
    stream
}
