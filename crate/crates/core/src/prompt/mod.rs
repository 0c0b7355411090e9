//! Few-shot prompting for drug-combination extraction from trial
//! descriptions, and parsing of the pipe-delimited responses.

mod backend;
mod live;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use backend::{BackendError, LlmBackend, MockBackend, RateLimited};
pub use live::{parse_chat_completion, ChatCompletionsBackend, API_KEY_ENV};

use crate::ingest::tokenize;
use crate::model::{
    canonical_name_pair, normalize_term, CombinationTriple, TrialDoc, COMBINATION_THERAPY,
    CO_OCCURRENCE,
};

pub const ROLE_INSTRUCTION: &str = "You are a specialized drug annotator, detect drugs if annotated/marked using < and > and relationship if it is annotated/marked using [ and ]";
pub const SHOTS_HEADER: &str = "Your task is to learn from the following few shots:";
pub const TRIAL_HEADER: &str = "Now you need to analyze the description of this clinical trial";
pub const TRIAL_HEADER_TAIL: &str = "to identify drugs and potential combinations:";
pub const OUTPUT_HEADER: &str = "Your response will be combinations discovered in pipe-delimited format that follows the following examples:";
pub const SINGLE_LINE_INSTRUCTION: &str =
    "Write each combination found in a single line and no other messages should be written";

/// Default number of few-shot examples.
pub const DEFAULT_SHOT_COUNT: usize = 7;

/// Combination keywords that upgrade a relation to "combination therapy".
pub const DEFAULT_KEYWORDS: &[&str] = &["combination", "plus", "+", "combined", "co-administered"];

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("annotation error at byte {offset}: {msg}")]
    Annotation { offset: usize, msg: String },
    #[error("prompt needs at least one shot")]
    NoShots,
    #[error("trial {0} has an empty description")]
    EmptyDescription(String),
}

/// An annotated training sentence: drugs in angle brackets, combination
/// keywords in square brackets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedShot {
    pub raw: String,
    pub drugs: Vec<String>,
    pub relations: Vec<String>,
}

impl AnnotatedShot {
    /// The sentence with every marker character removed.
    pub fn plain(&self) -> String {
        self.raw
            .chars()
            .filter(|c| !matches!(c, '⟨' | '⟩' | '<' | '>' | '[' | ']'))
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Marker {
    Drug,
    Relation,
}

/// Extracts the marked drugs and relations in textual order. Both `⟨…⟩`
/// and `<…>` mark drugs. Markers may not nest.
pub fn parse_shot(annotated: &str) -> Result<AnnotatedShot, PromptError> {
    let err = |offset: usize, msg: &str| PromptError::Annotation {
        offset,
        msg: msg.to_string(),
    };
    let mut drugs = Vec::new();
    let mut relations = Vec::new();
    let mut open: Option<(Marker, usize, usize)> = None;
    for (offset, c) in annotated.char_indices() {
        let (marker, opening) = match c {
            '⟨' | '<' => (Marker::Drug, true),
            '⟩' | '>' => (Marker::Drug, false),
            '[' => (Marker::Relation, true),
            ']' => (Marker::Relation, false),
            _ => continue,
        };
        match (open, opening) {
            (None, true) => open = Some((marker, offset, offset + c.len_utf8())),
            (Some(_), true) => return Err(err(offset, "nested marker")),
            (None, false) => return Err(err(offset, "closing marker without opening")),
            (Some((m, _, start)), false) => {
                if m != marker {
                    return Err(err(offset, "mismatched closing marker"));
                }
                let content = annotated[start..offset].to_string();
                match m {
                    Marker::Drug => drugs.push(content),
                    Marker::Relation => relations.push(content),
                }
                open = None;
            }
        }
    }
    if let Some((_, at, _)) = open {
        return Err(err(at, "unclosed marker"));
    }
    Ok(AnnotatedShot {
        raw: annotated.to_string(),
        drugs,
        relations,
    })
}

/// Parses a shots file: one annotated example per non-blank line.
pub fn parse_shots_file(text: &str) -> Result<Vec<AnnotatedShot>, PromptError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(parse_shot)
        .collect()
}

/// The two output-format examples. `{nct_id}` in either string is replaced
/// with the trial id when the prompt is built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputExamples(pub String, pub String);

impl Default for OutputExamples {
    fn default() -> Self {
        Self(
            "{nct_id} | tamoxifen | anastrozole".into(),
            "{nct_id} | docetaxel | capecitabine".into(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptInstance {
    pub nct_id: String,
    pub text: String,
    pub shot_count: usize,
}

/// Assembles the extraction prompt: role instruction, shots, the trial
/// description, the two output examples, then the single-line instruction.
pub fn build_prompt(
    trial: &TrialDoc,
    shots: &[AnnotatedShot],
    output_examples: &OutputExamples,
) -> Result<PromptInstance, PromptError> {
    if shots.is_empty() {
        return Err(PromptError::NoShots);
    }
    if trial.description.trim().is_empty() {
        return Err(PromptError::EmptyDescription(trial.nct_id.clone()));
    }
    let mut text = String::new();
    text.push_str(ROLE_INSTRUCTION);
    text.push_str("\n\n");
    text.push_str(SHOTS_HEADER);
    text.push('\n');
    for shot in shots {
        text.push_str("    ");
        text.push_str(&shot.raw);
        text.push('\n');
    }
    text.push('\n');
    text.push_str(&format!("{TRIAL_HEADER} {} {TRIAL_HEADER_TAIL}\n", trial.nct_id));
    text.push_str("    ");
    text.push_str(&trial.description);
    text.push_str("\n\n");
    text.push_str(OUTPUT_HEADER);
    text.push('\n');
    for ex in [&output_examples.0, &output_examples.1] {
        text.push_str("    ");
        text.push_str(&ex.replace("{nct_id}", &trial.nct_id));
        text.push('\n');
    }
    text.push('\n');
    text.push_str(SINGLE_LINE_INSTRUCTION);
    text.push('\n');
    Ok(PromptInstance {
        nct_id: trial.nct_id.clone(),
        text,
        shot_count: shots.len(),
    })
}

/// Recovers the trial id and description embedded by [`build_prompt`].
pub fn embedded_trial(prompt: &str) -> Option<(String, String)> {
    let mut lines = prompt.lines();
    while let Some(line) = lines.next() {
        if let Some(rest) = line.strip_prefix(TRIAL_HEADER) {
            let nct = rest.strip_suffix(TRIAL_HEADER_TAIL)?.trim().to_string();
            let description = lines.next()?.trim().to_string();
            return Some((nct, description));
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooFewFields,
    NctMismatch { found: String },
    TooFewDrugs,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooFewFields => f.write_str("too few fields"),
            Self::NctMismatch { found } => write!(f, "nct id mismatch: {found}"),
            Self::TooFewDrugs => f.write_str("fewer than two distinct drugs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectLine {
    pub line_no: usize,
    pub line: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedResponse {
    pub triples: Vec<CombinationTriple>,
    pub rejects: Vec<RejectLine>,
}

/// Parses `nct | drug | drug [| drug ...]` lines. A line listing k ≥ 2
/// drugs expands into all k·(k−1)/2 pairs. A field written `[keyword]`
/// sets the relation; otherwise it is "co-occurrence". Blank lines are
/// ignored; any other unusable line becomes a [`RejectLine`].
pub fn parse_response(nct_id: &str, response: &str) -> ParsedResponse {
    let expected = nct_id.trim().to_lowercase();
    let mut pairs: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut rejects = Vec::new();
    for (idx, raw) in response.lines().enumerate() {
        let line = raw
            .trim()
            .trim_start_matches(['-', '*', '•'])
            .trim()
            .trim_start_matches('{')
            .trim_end_matches('}')
            .trim();
        if line.is_empty() {
            continue;
        }
        let reject = |reason| RejectLine {
            line_no: idx + 1,
            line: raw.to_string(),
            reason,
        };
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() < 3 {
            rejects.push(reject(RejectReason::TooFewFields));
            continue;
        }
        let found = fields[0].to_lowercase();
        if found != expected {
            rejects.push(reject(RejectReason::NctMismatch { found }));
            continue;
        }
        let mut relation: Option<String> = None;
        let mut drugs: Vec<String> = Vec::new();
        for field in &fields[1..] {
            if let Some(kw) = field.strip_prefix('[').and_then(|f| f.strip_suffix(']')) {
                let kw = normalize_term(kw);
                if relation.is_none() && !kw.is_empty() {
                    relation = Some(kw);
                }
                continue;
            }
            let cleaned: String = field
                .chars()
                .filter(|c| !matches!(c, '⟨' | '⟩' | '<' | '>'))
                .collect();
            let drug = normalize_term(&cleaned);
            if !drug.is_empty() && !drugs.contains(&drug) {
                drugs.push(drug);
            }
        }
        if drugs.len() < 2 {
            rejects.push(reject(RejectReason::TooFewDrugs));
            continue;
        }
        let relation = relation.unwrap_or_else(|| CO_OCCURRENCE.to_string());
        for i in 0..drugs.len() {
            for j in i + 1..drugs.len() {
                let pair = canonical_name_pair(&drugs[i], &drugs[j])
                    .expect("drugs are distinct and non-empty");
                pairs
                    .entry(pair)
                    .and_modify(|r| {
                        if r == CO_OCCURRENCE {
                            *r = relation.clone();
                        }
                    })
                    .or_insert_with(|| relation.clone());
            }
        }
    }
    let nct = nct_id.trim().to_string();
    let triples = pairs
        .into_iter()
        .map(|((a, b), relation)| CombinationTriple {
            nct_id: nct.clone(),
            drug_a: a,
            drug_b: b,
            relation,
        })
        .collect();
    ParsedResponse { triples, rejects }
}

/// Keyword set: the defaults plus every relation annotated in the shots.
pub fn keyword_set(shots: &[AnnotatedShot]) -> Vec<String> {
    let mut kws: Vec<String> = DEFAULT_KEYWORDS.iter().map(|k| k.to_string()).collect();
    kws.extend(shots.iter().flat_map(|s| s.relations.iter().map(|r| normalize_term(r))));
    kws.retain(|k| !k.is_empty());
    kws.sort();
    kws.dedup();
    kws
}

/// "combination therapy" when `relation` is one of `keywords`, else "co-occurrence".
pub fn relation_class(relation: &str, keywords: &[String]) -> &'static str {
    if keywords.iter().any(|k| k == relation) {
        COMBINATION_THERAPY
    } else {
        CO_OCCURRENCE
    }
}

fn first_position(hay: &[&str], needle: &[String]) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    hay.windows(needle.len())
        .position(|w| w.iter().zip(needle).all(|(a, b)| *a == b))
}

/// Gives "co-occurrence" triples the first keyword found in a description
/// sentence that mentions both drugs.
pub fn label_relations(description: &str, triples: &mut [CombinationTriple], keywords: &[String]) {
    let stream = tokenize(description);
    let sentences: Vec<Vec<&str>> = (0..stream.sentence_bounds.len())
        .map(|i| stream.sentence(i).iter().map(|t| t.text.as_str()).collect())
        .collect();
    let tok = |s: &str| -> Vec<String> { tokenize(s).tokens.into_iter().map(|t| t.text).collect() };
    let kw_tokens: Vec<(String, Vec<String>)> =
        keywords.iter().map(|k| (k.clone(), tok(k))).collect();
    for triple in triples.iter_mut().filter(|t| t.relation == CO_OCCURRENCE) {
        let (a, b) = (tok(&triple.drug_a), tok(&triple.drug_b));
        let found = sentences
            .iter()
            .filter(|s| first_position(s, &a).is_some() && first_position(s, &b).is_some())
            .find_map(|s| {
                kw_tokens
                    .iter()
                    .filter_map(|(kw, seq)| first_position(s, seq).map(|pos| (pos, kw)))
                    .min()
            });
        if let Some((_, kw)) = found {
            triple.relation = kw.clone();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): base · 2^attempt.
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1 << attempt.min(16))
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
#[error("extraction failed for {nct_id} after {attempts} attempt(s): {message}")]
pub struct ExtractionError {
    pub nct_id: String,
    pub attempts: u32,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub shots: Vec<AnnotatedShot>,
    pub output_examples: OutputExamples,
    pub retry: RetryPolicy,
    pub keywords: Vec<String>,
}

impl ExtractConfig {
    pub fn new(shots: Vec<AnnotatedShot>) -> Self {
        let keywords = keyword_set(&shots);
        Self {
            shots,
            output_examples: OutputExamples::default(),
            retry: RetryPolicy::default(),
            keywords,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrialExtraction {
    pub triples: Vec<CombinationTriple>,
    pub rejects: Vec<RejectLine>,
}

/// Prompts the backend for one trial and parses its answer. Transient
/// backend failures are retried with exponential backoff.
pub fn extract_trial(
    trial: &TrialDoc,
    backend: &dyn LlmBackend,
    config: &ExtractConfig,
) -> Result<TrialExtraction, ExtractionError> {
    let fail = |attempts, message: String| ExtractionError {
        nct_id: trial.nct_id.clone(),
        attempts,
        message,
    };
    let prompt = build_prompt(trial, &config.shots, &config.output_examples)
        .map_err(|e| fail(0, e.to_string()))?;
    let mut attempt = 0;
    let response = loop {
        match backend.complete(&prompt.text) {
            Ok(r) => break r,
            Err(e) if e.is_transient() && attempt < config.retry.max_retries => {
                tracing::debug!(nct = %trial.nct_id, attempt, error = %e, "retrying backend call");
                std::thread::sleep(config.retry.delay(attempt));
                attempt += 1;
            }
            Err(e) => return Err(fail(attempt + 1, e.to_string())),
        }
    };
    let parsed = parse_response(&trial.nct_id, &response);
    let mut triples = parsed.triples;
    label_relations(&trial.description, &mut triples, &config.keywords);
    Ok(TrialExtraction {
        triples,
        rejects: parsed.rejects,
    })
}

#[derive(Debug, Clone, Default)]
pub struct ExtractionRun {
    /// Sorted by (nct_id, drug_a, drug_b).
    pub triples: Vec<CombinationTriple>,
    pub rejects: Vec<(String, RejectLine)>,
    pub errors: Vec<ExtractionError>,
}

/// Runs [`extract_trial`] over all trials on a pool of `workers` threads.
/// Failed trials are collected in `errors`; the rest still complete.
pub fn extract_all(
    trials: &[TrialDoc],
    backend: &dyn LlmBackend,
    config: &ExtractConfig,
    workers: usize,
) -> ExtractionRun {
    let run = || {
        trials
            .par_iter()
            .map(|t| (t.nct_id.clone(), extract_trial(t, backend, config)))
            .collect::<Vec<_>>()
    };
    let results = match rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    let mut out = ExtractionRun::default();
    for (nct, result) in results {
        match result {
            Ok(ex) => {
                out.triples.extend(ex.triples);
                out.rejects
                    .extend(ex.rejects.into_iter().map(|r| (nct.clone(), r)));
            }
            Err(e) => {
                tracing::warn!(error = %e, "trial extraction failed");
                out.errors.push(e);
            }
        }
    }
    out.triples.sort();
    out.rejects.sort_by(|a, b| (&a.0, a.1.line_no).cmp(&(&b.0, b.1.line_no)));
    out.errors.sort_by(|a, b| a.nct_id.cmp(&b.nct_id));
    out
}
