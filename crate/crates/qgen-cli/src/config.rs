//! One self-contained JSON config drives the whole pipeline; every knob
//! has a default so a minimal file only names its inputs. All randomness
//! derives from the single global seed via per-stage derived seeds.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use qgen_core::corpus::TableFormat;
use qgen_core::labels::{GainTransform, LabelError, LabelSpace};
use qgen_core::pipeline::GenerationMode;
use qgen_core::templates::TemplateConfig;

/// Preset names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 6] = [
    "zero-shot-eval",
    "vanilla-finetune",
    "vanilla-prompt",
    "labelcond-finetune",
    "labelcond-prompt",
    "random-baseline",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset {0:?}; valid names: zero-shot-eval, vanilla-finetune, vanilla-prompt, labelcond-finetune, labelcond-prompt, random-baseline")]
    UnknownPreset(String),
    #[error("config validation failed: {0}")]
    Invalid(String),
    #[error("failed to read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// One source table to ingest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableInput {
    pub path: PathBuf,
    pub format: TableFormat,
    /// role -> column map; see the corpus schema documentation.
    pub schema: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_tag: Option<String>,
}

/// Builtin space name or a custom-space JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSpaceRef {
    Builtin(String),
    File { file: PathBuf },
}

impl LabelSpaceRef {
    pub fn resolve(&self) -> Result<LabelSpace, LabelError> {
        match self {
            LabelSpaceRef::Builtin(name) => LabelSpace::builtin(name),
            LabelSpaceRef::File { file } => LabelSpace::from_config_file(file),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub inputs: Vec<TableInput>,
    pub label_space: LabelSpaceRef,
    #[serde(default)]
    pub strict: bool,
}

fn default_queries_per_cell() -> u32 {
    1
}

fn default_max_output_chars() -> usize {
    150
}

fn default_max_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub mode: GenerationMode,
    /// `finetune` (single formatted input) or `prompt` (few-shot prompt).
    #[serde(default = "GenerationConfig::default_input_style")]
    pub input_style: String,
    #[serde(default = "default_queries_per_cell")]
    pub queries_per_cell: u32,
    /// `mock-template` or `http`.
    #[serde(default = "GenerationConfig::default_backend")]
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Exemplar JSONL (`{label, title, description, query}`) for prompt style.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<PathBuf>,
    #[serde(default = "default_max_output_chars")]
    pub max_output_chars: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl GenerationConfig {
    fn default_input_style() -> String {
        "finetune".to_string()
    }
    fn default_backend() -> String {
        "mock-template".to_string()
    }
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            mode: GenerationMode::LabelCond,
            input_style: Self::default_input_style(),
            queries_per_cell: default_queries_per_cell(),
            backend: Self::default_backend(),
            endpoint: None,
            exemplars: None,
            max_output_chars: default_max_output_chars(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub dedup: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { dedup: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelabelConfig {
    #[serde(default)]
    pub enabled: bool,
    /// `mock-overlap` or `http`.
    #[serde(default = "RelabelConfig::default_scorer")]
    pub scorer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl RelabelConfig {
    fn default_scorer() -> String {
        "mock-overlap".to_string()
    }
}

impl Default for RelabelConfig {
    fn default() -> Self {
        RelabelConfig {
            enabled: false,
            scorer: Self::default_scorer(),
            endpoint: None,
        }
    }
}

fn default_ratio() -> f64 {
    0.9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default = "default_ratio")]
    pub ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratio: default_ratio(),
        }
    }
}

fn default_k() -> usize {
    35
}

fn default_k1() -> f64 {
    1.2
}

fn default_b() -> f64 {
    0.75
}

fn default_fields() -> Vec<String> {
    vec!["title".to_string(), "description".to_string()]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_fields")]
    pub fields: Vec<String>,
    /// `bm25` or `http`.
    #[serde(default = "RetrievalConfig::default_retriever")]
    pub retriever: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl RetrievalConfig {
    fn default_retriever() -> String {
        "bm25".to_string()
    }
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k: default_k(),
            k1: default_k1(),
            b: default_b(),
            fields: default_fields(),
            retriever: Self::default_retriever(),
            endpoint: None,
        }
    }
}

fn default_ks() -> Vec<usize> {
    vec![5, 10, 20]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    /// `mock-overlap`, `random`, `http` (distribution) or `http-scalar`.
    #[serde(default = "EvalConfig::default_scorer")]
    pub scorer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub gain_transform: GainTransform,
}

impl EvalConfig {
    fn default_scorer() -> String {
        "mock-overlap".to_string()
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: default_ks(),
            scorer: Self::default_scorer(),
            endpoint: None,
            gain_transform: GainTransform::Linear,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub template: TemplateConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub relabel: RelabelConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// The recipe's stage order, used by `--stage all`.
    pub stages: Vec<String>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Check every invariant that can be checked before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.corpus.inputs.is_empty() {
            return invalid("corpus.inputs is empty".into());
        }
        for input in &self.corpus.inputs {
            if !input.path.exists() {
                return invalid(format!(
                    "input file {} does not exist",
                    input.path.display()
                ));
            }
            let schema = qgen_core::corpus::SchemaMap {
                columns: input.schema.clone(),
            };
            if let Err(e) = schema.validate() {
                return invalid(format!("schema for {}: {e}", input.path.display()));
            }
        }
        if let LabelSpaceRef::File { file } = &self.corpus.label_space {
            if !file.exists() {
                return invalid(format!(
                    "label space file {} does not exist",
                    file.display()
                ));
            }
        }
        self.corpus.label_space.resolve()?;
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return invalid(format!("split.ratio {} not in (0, 1)", self.split.ratio));
        }
        if self.retrieval.k < 1 {
            return invalid("retrieval.k must be >= 1".into());
        }
        if !self.retrieval.k1.is_finite() || self.retrieval.k1 <= 0.0 {
            return invalid("retrieval.k1 must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.retrieval.b) {
            return invalid("retrieval.b must be in [0, 1]".into());
        }
        if self.generation.queries_per_cell < 1 {
            return invalid("generation.queries_per_cell must be >= 1".into());
        }
        if self.generation.max_in_flight < 1 {
            return invalid("generation.max_in_flight must be >= 1".into());
        }
        if self.generation.max_output_chars < 1 {
            return invalid("generation.max_output_chars must be >= 1".into());
        }
        match self.generation.input_style.as_str() {
            "finetune" => {}
            "prompt" => match &self.generation.exemplars {
                None => return invalid("prompt input style requires generation.exemplars".into()),
                Some(path) if !path.exists() => {
                    return invalid(format!("exemplars file {} does not exist", path.display()))
                }
                Some(_) => {}
            },
            other => return invalid(format!("unknown input_style {other:?}")),
        }
        if !["mock-template", "http"].contains(&self.generation.backend.as_str()) {
            return invalid(format!("unknown backend {:?}", self.generation.backend));
        }
        if !["mock-overlap", "http"].contains(&self.relabel.scorer.as_str()) {
            return invalid(format!("unknown relabel scorer {:?}", self.relabel.scorer));
        }
        if !["mock-overlap", "random", "http", "http-scalar"].contains(&self.eval.scorer.as_str()) {
            return invalid(format!("unknown eval scorer {:?}", self.eval.scorer));
        }
        if !["bm25", "http"].contains(&self.retrieval.retriever.as_str()) {
            return invalid(format!("unknown retriever {:?}", self.retrieval.retriever));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return invalid("eval.ks must be non-empty with every k >= 1".into());
        }
        for stage in &self.stages {
            if crate::stages::Stage::parse(stage).is_none() {
                return invalid(format!("unknown stage {stage:?} in stages list"));
            }
        }
        Ok(())
    }

    /// Stable hash of the serialized config, recorded in every manifest.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        qgen_core::hashing::sha256_hex(&bytes)
    }
}

fn base_config() -> PipelineConfig {
    PipelineConfig {
        corpus: CorpusConfig {
            inputs: Vec::new(),
            label_space: LabelSpaceRef::Builtin("esci".to_string()),
            strict: false,
        },
        template: TemplateConfig::default(),
        generation: GenerationConfig::default(),
        filter: FilterConfig::default(),
        relabel: RelabelConfig::default(),
        split: SplitConfig::default(),
        retrieval: RetrievalConfig::default(),
        eval: EvalConfig::default(),
        out_dir: PathBuf::from("out"),
        seed: 0,
        stages: Vec::new(),
    }
}

/// A ready-made config for one of the model-variant recipes. Input paths
/// and schemas still have to be filled in.
pub fn preset(name: &str) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = base_config();
    match name {
        "zero-shot-eval" => {
            // Judged target corpus scored directly by a served model
            // (offline stand-in: the overlap mock).
            cfg.stages = vec!["ingest".into(), "eval".into()];
        }
        "vanilla-finetune" => {
            cfg.generation.mode = GenerationMode::Vanilla;
            cfg.filter.dedup = false;
            cfg.stages = vec![
                "ingest".into(),
                "gen".into(),
                "mine-negatives".into(),
                "eval".into(),
                "report".into(),
            ];
        }
        "vanilla-prompt" => {
            cfg.generation.mode = GenerationMode::Vanilla;
            cfg.generation.input_style = "prompt".into();
            cfg.filter.dedup = false;
            cfg.stages = vec![
                "ingest".into(),
                "gen".into(),
                "mine-negatives".into(),
                "eval".into(),
                "report".into(),
            ];
        }
        "labelcond-finetune" => {
            cfg.generation.mode = GenerationMode::LabelCond;
            cfg.filter.dedup = true;
            cfg.stages = vec![
                "ingest".into(),
                "gen".into(),
                "filter".into(),
                "split".into(),
                "eval".into(),
                "report".into(),
            ];
        }
        "labelcond-prompt" => {
            cfg.generation.mode = GenerationMode::LabelCond;
            cfg.generation.input_style = "prompt".into();
            cfg.filter.dedup = true;
            cfg.stages = vec![
                "ingest".into(),
                "gen".into(),
                "filter".into(),
                "split".into(),
                "eval".into(),
                "report".into(),
            ];
        }
        "random-baseline" => {
            cfg.eval.scorer = "random".into();
            cfg.stages = vec!["ingest".into(), "eval".into()];
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    }
    Ok(cfg)
}
