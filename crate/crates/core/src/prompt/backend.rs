use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::{embedded_trial, AnnotatedShot};
use crate::ingest::tokenize;
use crate::lexicon::PhraseLexicon;
use crate::model::{canonical_name_pair, normalize_term};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Connection failures, rate limiting and server errors are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Status { code, .. } => *code == 429 || *code >= 500,
            Self::Protocol(_) => false,
        }
    }
}

/// A chat-completion style text generator. Implementations must not carry
/// state between calls that changes their answers.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
    fn model_name(&self) -> &str;
}

/// Deterministic stand-in for a live model.
#[derive(Debug, Clone)]
pub enum MockBackend {
    /// Canned response per trial id; unknown trials get an empty response.
    Map(BTreeMap<String, String>),
    /// Emits a line for every drug pair found in one sentence of the trial
    /// description together with a combination keyword.
    Rule {
        lexicon: PhraseLexicon,
        keywords: Vec<Vec<String>>,
    },
}

impl MockBackend {
    pub fn map(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        Self::Map(entries.into_iter().collect())
    }

    /// Parses a JSON object `{"NCT…": "response text", …}`.
    pub fn map_from_json(json: &str) -> Result<Self, serde_json::Error> {
        let entries: BTreeMap<String, String> = serde_json::from_str(json)?;
        Ok(Self::Map(entries))
    }

    /// Rule mode with the relation keywords annotated in `shots`.
    pub fn rule(lexicon: PhraseLexicon, shots: &[AnnotatedShot]) -> Self {
        let keywords: Vec<String> = shots
            .iter()
            .flat_map(|s| s.relations.iter().map(|r| normalize_term(r)))
            .collect();
        Self::rule_with_keywords(lexicon, &keywords)
    }

    pub fn rule_with_keywords<S: AsRef<str>>(lexicon: PhraseLexicon, keywords: &[S]) -> Self {
        let keywords: BTreeSet<Vec<String>> = keywords
            .iter()
            .map(|k| {
                tokenize(k.as_ref())
                    .tokens
                    .into_iter()
                    .map(|t| t.text)
                    .collect::<Vec<_>>()
            })
            .filter(|k| !k.is_empty())
            .collect();
        Self::Rule {
            lexicon,
            keywords: keywords.into_iter().collect(),
        }
    }

    fn rule_response(
        lexicon: &PhraseLexicon,
        keywords: &[Vec<String>],
        nct: &str,
        description: &str,
    ) -> String {
        let stream = tokenize(description);
        let mut pairs = BTreeSet::new();
        for i in 0..stream.sentence_bounds.len() {
            let sentence = stream.sentence(i);
            let words: Vec<&str> = sentence.iter().map(|t| t.text.as_str()).collect();
            let has_keyword = keywords
                .iter()
                .any(|k| words.windows(k.len()).any(|w| w == k.as_slice()));
            if !has_keyword {
                continue;
            }
            let drugs: BTreeSet<&str> = lexicon
                .find_mentions_in(sentence)
                .iter()
                .map(|m| lexicon.term_name(m.term))
                .collect();
            for a in &drugs {
                for b in &drugs {
                    if let Ok(pair) = canonical_name_pair(a, b) {
                        pairs.insert(pair);
                    }
                }
            }
        }
        pairs
            .into_iter()
            .map(|(a, b)| format!("{nct} | {a} | {b}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let Some((nct, description)) = embedded_trial(prompt) else {
            return Ok(String::new());
        };
        Ok(match self {
            Self::Map(map) => map.get(&nct).cloned().unwrap_or_default(),
            Self::Rule { lexicon, keywords } => {
                Self::rule_response(lexicon, keywords, &nct, &description)
            }
        })
    }

    fn model_name(&self) -> &str {
        match self {
            Self::Map(_) => "mock-map",
            Self::Rule { .. } => "mock-rule",
        }
    }
}

/// Spaces consecutive calls to the wrapped backend at least `min_interval` apart.
pub struct RateLimited<B> {
    inner: B,
    min_interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl<B: LlmBackend> RateLimited<B> {
    pub fn new(inner: B, min_interval: Duration) -> Self {
        Self {
            inner,
            min_interval,
            next_slot: Mutex::new(None),
        }
    }
}

impl<B: LlmBackend> LlmBackend for RateLimited<B> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        if !self.min_interval.is_zero() {
            let wait = {
                let mut slot = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
                let now = Instant::now();
                let at = slot.map_or(now, |s| s.max(now));
                *slot = Some(at + self.min_interval);
                at - now
            };
            std::thread::sleep(wait);
        }
        self.inner.complete(prompt)
    }

    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrialDoc;
    use crate::prompt::{build_prompt, parse_shot, OutputExamples};

    fn prompt_for(nct: &str, description: &str) -> String {
        let shots = vec![parse_shot("⟨a⟩ [combined] with ⟨b⟩").unwrap()];
        let trial = TrialDoc {
            nct_id: nct.into(),
            description: description.into(),
        };
        build_prompt(&trial, &shots, &OutputExamples::default())
            .unwrap()
            .text
    }

    #[test]
    fn map_mode_echoes_canned_response() {
        let m = MockBackend::map([("NCT1".to_string(), "NCT1 | a | b".to_string())]);
        assert_eq!(m.complete(&prompt_for("NCT1", "x")).unwrap(), "NCT1 | a | b");
        assert_eq!(m.complete(&prompt_for("NCT9", "x")).unwrap(), "");
    }

    #[test]
    fn map_from_json() {
        let m = MockBackend::map_from_json(r#"{"NCT1": "NCT1 | a | b"}"#).unwrap();
        assert_eq!(m.complete(&prompt_for("NCT1", "x")).unwrap(), "NCT1 | a | b");
    }

    #[test]
    fn rule_mode_pairs_drugs_with_keyword() {
        let lex = PhraseLexicon::from_term_list("a\nb\n", "t").unwrap();
        let shots = vec![parse_shot("⟨a⟩ [combined] with ⟨b⟩").unwrap()];
        let m = MockBackend::rule(lex, &shots);
        assert_eq!(
            m.complete(&prompt_for("NCT1", "a combined with b")).unwrap(),
            "NCT1 | a | b"
        );
        assert_eq!(m.complete(&prompt_for("NCT1", "a versus b")).unwrap(), "");
        // keyword and drugs must share a sentence
        assert_eq!(
            m.complete(&prompt_for("NCT1", "a then b. Combined later.")).unwrap(),
            ""
        );
    }

    #[test]
    fn rule_mode_is_deterministic() {
        let lex = PhraseLexicon::from_term_list("x\ny\nz\n", "t").unwrap();
        let m = MockBackend::rule_with_keywords(lex, &["plus"]);
        let p = prompt_for("NCT7", "z plus y plus x.");
        let first = m.complete(&p).unwrap();
        assert_eq!(first, "NCT7 | x | y\nNCT7 | x | z\nNCT7 | y | z");
        assert_eq!(m.complete(&p).unwrap(), first);
    }

    #[test]
    fn transient_classification() {
        assert!(BackendError::Transport("x".into()).is_transient());
        assert!(BackendError::Status { code: 503, body: String::new() }.is_transient());
        assert!(BackendError::Status { code: 429, body: String::new() }.is_transient());
        assert!(!BackendError::Status { code: 400, body: String::new() }.is_transient());
        assert!(!BackendError::Protocol("x".into()).is_transient());
    }

    #[test]
    fn rate_limiter_spaces_calls() {
        let inner = MockBackend::map(std::iter::empty());
        let limited = RateLimited::new(inner, Duration::from_millis(20));
        let start = Instant::now();
        for _ in 0..3 {
            limited.complete("no trial here").unwrap();
        }
        assert!(start.elapsed() >= Duration::from_millis(40));
    }
}
