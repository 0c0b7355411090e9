//! Phrase lexicons and greedy longest-match mention finding over token streams.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use thiserror::Error;

use crate::ingest::{tokenize, Token, TokenStream};
use crate::kgml::PathwayModule;
use crate::model::normalize_term;

#[derive(Error, Debug)]
pub enum LexiconError {
    #[error("lexicon {0} contains no terms")]
    Empty(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type TermId = u32;

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Default, Clone)]
struct TrieNode {
    children: HashMap<String, u32>,
    term: Option<TermId>,
}

/// Immutable map from lowercase token sequences to canonical terms.
#[derive(Debug, Clone)]
pub struct PhraseLexicon {
    terms: Vec<String>,
    entries: BTreeMap<Vec<String>, TermId>,
    max_phrase_len: usize,
    nodes: Vec<TrieNode>,
}

/// A lexicon hit covering tokens `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mention {
    pub term: TermId,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Default)]
pub struct LexiconBuilder {
    keys: BTreeMap<Vec<String>, String>,
}

impl LexiconBuilder {
    /// Registers `alias` as a surface form of `canonical`. The alias is
    /// tokenized with the corpus tokenizer; when it contains hyphenated
    /// tokens, the hyphen-split spelling ("all trans") is registered too.
    pub fn add(&mut self, alias: &str, canonical: &str) -> &mut Self {
        let canonical = normalize_term(canonical);
        if canonical.is_empty() {
            return self;
        }
        let key: Vec<String> = tokenize(alias).tokens.into_iter().map(|t| t.text).collect();
        if key.is_empty() {
            return self;
        }
        let split: Vec<String> = key
            .iter()
            .flat_map(|t| t.split('-').filter(|p| !p.is_empty()).map(str::to_string))
            .collect();
        if split != key {
            self.insert(split, &canonical);
        }
        self.insert(key, &canonical);
        self
    }

    pub fn add_term(&mut self, term: &str) -> &mut Self {
        self.add(term, term)
    }

    fn insert(&mut self, key: Vec<String>, canonical: &str) {
        // a key shared by two terms resolves to the smaller canonical name
        self.keys
            .entry(key)
            .and_modify(|c| {
                if canonical < c.as_str() {
                    *c = canonical.to_string();
                }
            })
            .or_insert_with(|| canonical.to_string());
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn build(self) -> PhraseLexicon {
        let mut terms: Vec<String> = self.keys.values().cloned().collect();
        terms.sort();
        terms.dedup();
        let id_of: HashMap<&str, TermId> = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as TermId))
            .collect();
        let entries: BTreeMap<Vec<String>, TermId> = self
            .keys
            .iter()
            .map(|(k, c)| (k.clone(), id_of[c.as_str()]))
            .collect();
        let mut nodes = vec![TrieNode::default()];
        for (key, &id) in &entries {
            let mut at = 0usize;
            for tok in key {
                at = match nodes[at].children.get(tok) {
                    Some(&next) => next as usize,
                    None => {
                        let next = nodes.len();
                        nodes.push(TrieNode::default());
                        nodes[at].children.insert(tok.clone(), next as u32);
                        next
                    }
                };
            }
            nodes[at].term = Some(id);
        }
        let max_phrase_len = entries.keys().map(Vec::len).max().unwrap_or(0);
        PhraseLexicon {
            terms,
            entries,
            max_phrase_len,
            nodes,
        }
    }
}

impl PhraseLexicon {
    pub fn builder() -> LexiconBuilder {
        LexiconBuilder::default()
    }

    /// Parses a term list: one term per line, or `synonym \t canonical`.
    /// Blank lines and `#` comments are skipped.
    pub fn from_term_list(text: &str, source_name: &str) -> Result<Self, LexiconError> {
        let mut builder = Self::builder();
        for line in text.lines() {
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            match line.split_once('\t') {
                Some((alias, canonical)) => builder.add(alias, canonical),
                None => builder.add_term(line),
            };
        }
        if builder.is_empty() {
            return Err(LexiconError::Empty(source_name.to_string()));
        }
        Ok(builder.build())
    }

    /// Protein lexicon over every alias in the module.
    pub fn from_pathway_module(module: &PathwayModule) -> Self {
        let mut builder = Self::builder();
        for name in module.unique_proteins.keys() {
            builder.add_term(name);
        }
        builder.build()
    }

    /// Number of distinct canonical terms.
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Number of token-sequence keys, counting alternate spellings.
    pub fn key_count(&self) -> usize {
        self.entries.len()
    }

    pub fn max_phrase_len(&self) -> usize {
        self.max_phrase_len
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn term_name(&self, id: TermId) -> &str {
        &self.terms[id as usize]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn entries(&self) -> &BTreeMap<Vec<String>, TermId> {
        &self.entries
    }

    pub fn lookup<S: AsRef<str>>(&self, key: &[S]) -> Option<TermId> {
        let mut at = 0usize;
        for tok in key {
            at = *self.nodes[at].children.get(tok.as_ref())? as usize;
        }
        self.nodes[at].term
    }

    /// Greedy left-to-right longest match. Mentions never overlap and come
    /// out sorted by start index.
    pub fn find_mentions_in<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Mention> {
        let mut mentions = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut at = 0usize;
            let mut best: Option<(TermId, usize)> = None;
            for (j, tok) in tokens[i..].iter().enumerate() {
                match self.nodes[at].children.get(tok.as_ref()) {
                    Some(&next) => {
                        at = next as usize;
                        if let Some(term) = self.nodes[at].term {
                            best = Some((term, i + j));
                        }
                    }
                    None => break,
                }
            }
            match best {
                Some((term, end)) => {
                    mentions.push(Mention {
                        term,
                        start: i,
                        end,
                    });
                    i = end + 1;
                }
                None => i += 1,
            }
        }
        mentions
    }

    pub fn find_mentions(&self, tokens: &TokenStream) -> Vec<Mention> {
        self.find_mentions_in(&tokens.tokens)
    }
}

/// Loads a drug term list from disk.
pub fn load_drug_lexicon(path: &Path) -> Result<PhraseLexicon, LexiconError> {
    let text = std::fs::read_to_string(path).map_err(|e| LexiconError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    PhraseLexicon::from_term_list(&text, &path.display().to_string())
}
