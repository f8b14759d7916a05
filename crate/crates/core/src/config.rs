//! Declarative run configuration.
//!
//! A run is described by a TOML file whose tables mirror the pipeline stages.
//! Every key is optional; CLI flags override file values. Relative paths in a file
//! are resolved against the file's directory.
//!
//! ```toml
//! [data]
//! data = "data.tsv"
//! gold = "gold.txt"
//! embeddings = ["embeddings.jsonl"]
//! captions = "captions.jsonl"
//!
//! [retrieval]
//! model = "clip-l"
//! measure = "cosine"
//! penalty = true
//! lambda = 1.0
//!
//! [llm]
//! model = "gpt-3.5-turbo"
//! cache_dir = "cache"
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::captions::CaptionStrategy;
use crate::enhancer::EnhancementTemplate;
use crate::evaluator::RunKind;
use crate::gateway::GenerationParams;
use crate::qa::{QaTemplate, SelectionStrategy};
use crate::vector_store::SimilarityMeasure;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing setting: {0}")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub data: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub embeddings: Vec<PathBuf>,
    pub captions: Option<PathBuf>,
    /// Enhanced phrases to rank instead of the full phrases.
    pub enhanced: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Embedding model whose text and image vectors are compared.
    pub model: String,
    pub measure: SimilarityMeasure,
    pub penalty: bool,
    pub lambda: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            model: "clip-l".into(),
            measure: SimilarityMeasure::Cosine,
            penalty: false,
            lambda: 1.0,
        }
    }
}

impl RetrievalConfig {
    /// Penalty weight actually applied; `None` when the penalty is off or `λ = 0`.
    pub fn effective_lambda(&self) -> Option<f64> {
        (self.penalty && self.lambda != 0.0).then_some(self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhancementConfig {
    pub template: String,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        Self {
            template: EnhancementTemplate::MeaningOf.name().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    /// Full template name, or a family name combined with `strategy`.
    pub template: String,
    pub captioner: String,
    pub strategy: CaptionStrategy,
    pub shots: usize,
    pub selection: SelectionStrategy,
    pub seed: u64,
    /// Text embedding model for `top` / `inverse-top`; defaults to the retrieval model.
    pub embedding_model: Option<String>,
}

impl Default for QaConfig {
    fn default() -> Self {
        Self {
            template: "no_cot".into(),
            captioner: "git-l".into(),
            strategy: CaptionStrategy::Greedy,
            shots: 0,
            selection: SelectionStrategy::Random,
            seed: 0,
            embedding_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub rpm: Option<u32>,
    pub cache_dir: PathBuf,
    pub offline: bool,
    /// Overrides `VWSD_LLM_BASE_URL`.
    pub base_url: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let p = GenerationParams::new("gpt-3.5-turbo");
        Self {
            model: p.model,
            temperature: p.temperature,
            max_tokens: p.max_tokens,
            rpm: None,
            cache_dir: PathBuf::from("cache"),
            offline: false,
            base_url: None,
        }
    }
}

impl LlmConfig {
    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            ..GenerationParams::new(self.model.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    pub run_id: Option<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            run_id: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub retrieval: RetrievalConfig,
    pub enhancement: EnhancementConfig,
    pub qa: QaConfig,
    pub llm: LlmConfig,
    pub output: OutputConfig,
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Loads a config file and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let d = &mut cfg.data;
        for p in d
            .data
            .iter_mut()
            .chain(d.gold.iter_mut())
            .chain(d.embeddings.iter_mut())
            .chain(d.captions.iter_mut())
            .chain(d.enhanced.iter_mut())
        {
            rebase(base, p);
        }
        rebase(base, &mut cfg.llm.cache_dir);
        rebase(base, &mut cfg.output.out_dir);
        Ok(cfg)
    }

    pub fn dataset_paths(&self) -> Result<(&Path, &Path), ConfigError> {
        let data = self.data.data.as_deref().ok_or(ConfigError::Missing("data.data (--data)"))?;
        let gold = self.data.gold.as_deref().ok_or(ConfigError::Missing("data.gold (--gold)"))?;
        Ok((data, gold))
    }

    pub fn enhancement_template(&self) -> Result<EnhancementTemplate, ConfigError> {
        self.enhancement.template.parse().map_err(ConfigError::Invalid)
    }

    pub fn qa_template(&self) -> Result<QaTemplate, ConfigError> {
        let t = QaTemplate::resolve(&self.qa.template, self.qa.strategy).map_err(ConfigError::Invalid)?;
        if let Some(s) = t.strategy() {
            if s != self.qa.strategy {
                return Err(ConfigError::Invalid(format!(
                    "template {t} needs {s} captions but the caption strategy is {}",
                    self.qa.strategy
                )));
            }
        }
        Ok(t)
    }

    pub fn selection_model(&self) -> &str {
        self.qa.embedding_model.as_deref().unwrap_or(&self.retrieval.model)
    }

    /// Settings that determine a run's results, as recorded in its report.
    pub fn snapshot(&self, kind: RunKind) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        match kind {
            RunKind::Ranking => {
                put("embedding_model", self.retrieval.model.clone());
                put("measure", self.retrieval.measure.to_string());
                match self.retrieval.effective_lambda() {
                    Some(l) => {
                        put("penalty", "on".into());
                        put("lambda", l.to_string());
                    }
                    None => put("penalty", "off".into()),
                }
            }
            RunKind::Qa => {
                let template = self
                    .qa_template()
                    .map(|t| t.to_string())
                    .unwrap_or_else(|_| self.qa.template.clone());
                put("qa_template", template);
                put("captioner", self.qa.captioner.clone());
                put("strategy", self.qa.strategy.to_string());
                put("shots", self.qa.shots.to_string());
                if self.qa.shots > 0 {
                    put("selection", self.qa.selection.to_string());
                    match self.qa.selection {
                        SelectionStrategy::Random => put("seed", self.qa.seed.to_string()),
                        _ => put("selection_model", self.selection_model().to_string()),
                    }
                }
                put("llm_model", self.llm.model.clone());
                put("temperature", self.llm.temperature.to_string());
                put("max_tokens", self.llm.max_tokens.to_string());
            }
        }
        m
    }

    /// Explicit run id, or one derived from the kind and the snapshot so identical
    /// settings always get the same id.
    pub fn run_id(&self, kind: RunKind, snapshot: &BTreeMap<String, String>) -> String {
        if let Some(id) = &self.output.run_id {
            return id.clone();
        }
        let json = serde_json::to_string(snapshot).expect("string map serializes");
        let digest = hex::encode(Sha256::digest(json.as_bytes()));
        format!("{}-{}", kind.as_str(), &digest[..12])
    }
}
