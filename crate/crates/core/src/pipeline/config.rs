//! TOML run configuration. Relative paths resolve against the directory
//! holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::miner::{DEFAULT_WINDOW, DEFAULT_WINDOWS};

#[derive(Error, Debug)]
#[error("config {field}: {msg}")]
pub struct ConfigError {
    /// Dotted path of the offending key, e.g. `inputs.kgml`.
    pub field: String,
    pub msg: String,
}

impl ConfigError {
    fn new(field: &str, msg: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// Directory of trial JSON files, or a `nct_id \t description` TSV.
    pub trials: Option<String>,
    /// MEDLINE file, or a `pmid \t title \t abstract` TSV.
    pub medline: Option<String>,
    /// KGML XML (`.xml`/`.kgml`) or a pathways TSV.
    pub kgml: Option<String>,
    /// Disease name recorded with the pathway module; defaults to the KGML
    /// file stem.
    pub disease: Option<String>,
    /// Drug term list (`term` or `synonym \t canonical` per line).
    pub drugs: Option<String>,
    /// FDA name snapshot, one name per line.
    pub fda: Option<String>,
    /// Annotated few-shot examples, one per line.
    pub shots: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ingest {
    pub skip_missing_abstract: bool,
}

impl Default for Ingest {
    fn default() -> Self {
        Self {
            skip_missing_abstract: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockMode {
    /// Pairs lexicon drugs sharing a sentence with a combination keyword.
    Rule,
    /// Canned responses keyed by trial id.
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Llm {
    pub backend: BackendKind,
    pub mock_mode: MockMode,
    /// JSON object `{ "<nct id>": "<response>" }` for `mock_mode = "map"`.
    pub mock_responses: Option<String>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub workers: usize,
    pub retries: u32,
    pub retry_base_ms: u64,
    pub min_interval_ms: u64,
    pub timeout_secs: u64,
    /// The two output-format examples shown in the prompt.
    pub output_examples: Option<[String; 2]>,
}

impl Default for Llm {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            mock_mode: MockMode::Rule,
            mock_responses: None,
            base_url: None,
            model: None,
            workers: 4,
            retries: 3,
            retry_base_ms: 500,
            min_interval_ms: 0,
            timeout_secs: 60,
            output_examples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Mining {
    /// Window for the drug-target layer used by the evidence join.
    pub window: u32,
    /// Sweep windows, strictly ascending.
    pub windows: Vec<u32>,
}

impl Default for Mining {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            windows: DEFAULT_WINDOWS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Report {
    /// Write heatmap and violin CSVs.
    pub figures: bool,
}

impl Default for Report {
    fn default() -> Self {
        Self { figures: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub dir: String,
}

impl Default for Output {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub ingest: Ingest,
    #[serde(default)]
    pub llm: Llm,
    #[serde(default)]
    pub mining: Mining,
    #[serde(default)]
    pub report: Report,
    #[serde(default)]
    pub output: Output,
}

/// Validated input paths, resolved against the config directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedInputs {
    pub trials: PathBuf,
    pub medline: PathBuf,
    pub kgml: PathBuf,
    pub disease: String,
    pub drugs: PathBuf,
    pub fda: PathBuf,
    pub shots: PathBuf,
    pub mock_responses: Option<PathBuf>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // unknown keys and type errors carry the key in the message;
            // the span is more useful than "config" as a field
            let field = e
                .span()
                .and_then(|s| text.get(s))
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty() && s.len() < 64)
                .unwrap_or_else(|| "config".into());
            ConfigError::new(&field, msg)
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks every key and resolves input paths against `base`.
    pub fn resolve(&self, base: &Path) -> Result<ResolvedInputs, ConfigError> {
        let path = |field: &str, value: &Option<String>| -> Result<PathBuf, ConfigError> {
            let v = value
                .as_deref()
                .ok_or_else(|| ConfigError::new(field, "missing"))?;
            let p = base.join(v);
            if !p.exists() {
                return Err(ConfigError::new(field, format!("not found: {}", p.display())));
            }
            Ok(p)
        };
        let i = &self.inputs;
        let kgml = path("inputs.kgml", &i.kgml)?;
        let resolved = ResolvedInputs {
            trials: path("inputs.trials", &i.trials)?,
            medline: path("inputs.medline", &i.medline)?,
            disease: match &i.disease {
                Some(d) => d.clone(),
                None => kgml
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            },
            kgml,
            drugs: path("inputs.drugs", &i.drugs)?,
            fda: path("inputs.fda", &i.fda)?,
            shots: path("inputs.shots", &i.shots)?,
            mock_responses: match (self.llm.backend, self.llm.mock_mode) {
                (BackendKind::Mock, MockMode::Map) => {
                    Some(path("llm.mock_responses", &self.llm.mock_responses)?)
                }
                _ => None,
            },
        };
        if self.llm.backend == BackendKind::Live {
            for (field, v) in [("llm.base_url", &self.llm.base_url), ("llm.model", &self.llm.model)] {
                if v.as_deref().is_none_or(str::is_empty) {
                    return Err(ConfigError::new(field, "required for the live backend"));
                }
            }
        }
        if self.llm.workers == 0 {
            return Err(ConfigError::new("llm.workers", "must be at least 1"));
        }
        if self.mining.window == 0 {
            return Err(ConfigError::new("mining.window", "must be at least 1"));
        }
        let w = &self.mining.windows;
        if w.is_empty() || w[0] == 0 || w.windows(2).any(|p| p[0] >= p[1]) {
            return Err(ConfigError::new(
                "mining.windows",
                "must be non-empty, positive and strictly ascending",
            ));
        }
        Ok(resolved)
    }
}
