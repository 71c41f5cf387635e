//! Stage runner: ingest -> gen -> filter -> relabel -> split ->
//! mine-negatives -> eval -> report, each a pure function of (config,
//! upstream artifacts) with its outputs and a manifest on disk.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use qgen_core::backends::http::{
    HttpGenerator, HttpRetriever, HttpScalarScorer, HttpScorer, HttpTransport,
};
use qgen_core::backends::mock::{MockOverlapScorer, MockTemplateGenerator, RandomScorer};
use qgen_core::backends::{DistributionScorer, QueryGenerator};
use qgen_core::corpus::{
    ingest_table, load_corpus_jsonl, validate_corpus, write_judgments_jsonl, write_products_jsonl,
    Corpus, IngestOptions, IngestReport, SchemaMap, ValidationReport,
};
use qgen_core::hashing::derive_seed;
use qgen_core::labels::LabelSpace;
use qgen_core::metrics::{
    duplicate_stats, evaluate_scorer, label_distribution, EvalOptions, ScorerKind,
};
use qgen_core::pipeline::{
    dedup_filter, load_synthetic_jsonl, plan_generation, roundtrip_relabel, run_generation,
    split_train_val, upsample_balance_by, write_synthetic_jsonl, DedupReport, InputStyle,
    PipelineError, RelabelReport, SyntheticDataset,
};
use qgen_core::retrieval::{
    build_index, mine_hard_negatives, pairs_from_hard_negatives, Bm25Index, Bm25Params, Retriever,
};
use qgen_core::templates::Exemplar;

use crate::config::PipelineConfig;
use crate::manifest::StageManifest;

#[derive(Debug, Error)]
pub enum StageError {
    /// Exit code 2.
    #[error("validation error: {0}")]
    Validation(String),
    /// Exit code 3.
    #[error("missing upstream artifact: {0} (run the producing stage first)")]
    MissingUpstream(PathBuf),
    /// Exit code 4.
    #[error("backend failure: {0}")]
    Backend(String),
    /// Exit code 1.
    #[error("{0}")]
    Other(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Validation(_) => 2,
            StageError::MissingUpstream(_) => 3,
            StageError::Backend(_) => 4,
            StageError::Other(_) => 1,
        }
    }
}

impl From<std::io::Error> for StageError {
    fn from(e: std::io::Error) -> Self {
        StageError::Other(format!("io error: {e}"))
    }
}

impl From<crate::config::ConfigError> for StageError {
    fn from(e: crate::config::ConfigError) -> Self {
        StageError::Validation(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Gen,
    Filter,
    Relabel,
    Split,
    MineNegatives,
    Eval,
    Report,
}

impl Stage {
    pub fn parse(name: &str) -> Option<Stage> {
        match name {
            "ingest" => Some(Stage::Ingest),
            "gen" => Some(Stage::Gen),
            "filter" => Some(Stage::Filter),
            "relabel" => Some(Stage::Relabel),
            "split" => Some(Stage::Split),
            "mine-negatives" => Some(Stage::MineNegatives),
            "eval" => Some(Stage::Eval),
            "report" => Some(Stage::Report),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Gen => "gen",
            Stage::Filter => "filter",
            Stage::Relabel => "relabel",
            Stage::Split => "split",
            Stage::MineNegatives => "mine-negatives",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Artifact file names under the output directory.
pub mod artifacts {
    pub const PRODUCTS: &str = "products.jsonl";
    pub const JUDGMENTS: &str = "judgments.jsonl";
    pub const INGEST_REPORT: &str = "ingest_report.json";
    pub const GENERATED: &str = "generated.jsonl";
    pub const GEN_REPORT: &str = "gen_report.json";
    pub const FILTERED: &str = "filtered.jsonl";
    pub const DEDUP_REPORT: &str = "dedup_report.json";
    pub const RELABELED: &str = "relabeled.jsonl";
    pub const RELABEL_REPORT: &str = "relabel_report.json";
    pub const TRAIN: &str = "train.jsonl";
    pub const VAL: &str = "val.jsonl";
    pub const SPLIT_REPORT: &str = "split_report.json";
    pub const BM25_INDEX: &str = "bm25.idx";
    pub const HARD_NEGATIVES: &str = "hard_negatives.jsonl";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const MINE_REPORT: &str = "mine_report.json";
    pub const EVAL_JSON: &str = "eval.json";
    pub const EVAL_TEXT: &str = "eval.txt";
    pub const REPORT_JSON: &str = "report.json";
    pub const REPORT_TEXT: &str = "report.txt";
    pub const LOCK: &str = ".lock";
}

/// What a stage run produced.
#[derive(Debug)]
pub struct StageOutcome {
    pub stage: Stage,
    pub artifacts: Vec<PathBuf>,
    pub manifest_path: PathBuf,
}

/// One stage at a time per output directory.
struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    fn acquire(out_dir: &Path) -> Result<Self, StageError> {
        let path = out_dir.join(artifacts::LOCK);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StageError::Validation(format!(
                    "output directory is locked by another run ({})",
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Run one stage. Validates the config, takes the output-directory lock,
/// reads upstream artifacts, writes this stage's artifacts plus a
/// manifest, and releases the lock.
pub fn run_stage(config: &PipelineConfig, stage: Stage) -> Result<StageOutcome, StageError> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let _lock = LockGuard::acquire(&config.out_dir)?;
    let mut manifest = StageManifest::new(
        stage.name(),
        config.config_hash(),
        derive_seed(config.seed, stage.name()),
    );
    let artifacts = match stage {
        Stage::Ingest => stage_ingest(config, &mut manifest)?,
        Stage::Gen => stage_gen(config, &mut manifest)?,
        Stage::Filter => stage_filter(config, &mut manifest)?,
        Stage::Relabel => stage_relabel(config, &mut manifest)?,
        Stage::Split => stage_split(config, &mut manifest)?,
        Stage::MineNegatives => stage_mine(config, &mut manifest)?,
        Stage::Eval => stage_eval(config, &mut manifest)?,
        Stage::Report => stage_report(config, &mut manifest)?,
    };
    for path in &artifacts {
        manifest.record_output(path)?;
    }
    let manifest_path = manifest.write(&config.out_dir)?;
    Ok(StageOutcome {
        stage,
        artifacts,
        manifest_path,
    })
}

/// Run every stage in the config's `stages` list, in order.
pub fn run_all(config: &PipelineConfig) -> Result<Vec<StageOutcome>, StageError> {
    let mut outcomes = Vec::new();
    for name in &config.stages {
        let stage = Stage::parse(name)
            .ok_or_else(|| StageError::Validation(format!("unknown stage {name:?}")))?;
        outcomes.push(run_stage(config, stage)?);
    }
    Ok(outcomes)
}

fn out_path(config: &PipelineConfig, name: &str) -> PathBuf {
    config.out_dir.join(name)
}

fn require(path: PathBuf) -> Result<PathBuf, StageError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(StageError::MissingUpstream(path))
    }
}

fn space_of(config: &PipelineConfig) -> Result<LabelSpace, StageError> {
    config
        .corpus
        .label_space
        .resolve()
        .map_err(|e| StageError::Validation(e.to_string()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), StageError> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| StageError::Other(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, json.as_bytes())?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, StageError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| StageError::Other(format!("parse {}: {e}", path.display())))
}

fn load_products(config: &PipelineConfig) -> Result<(Corpus, PathBuf), StageError> {
    let products = require(out_path(config, artifacts::PRODUCTS))?;
    let corpus = load_corpus_jsonl(&products, None, space_of(config)?.name())
        .map_err(|e| StageError::Other(e.to_string()))?;
    Ok((corpus, products))
}

fn load_dataset(path: &Path, space: &LabelSpace) -> Result<SyntheticDataset, StageError> {
    let reader = BufReader::new(File::open(path)?);
    load_synthetic_jsonl(reader, space).map_err(|e| StageError::Other(e.to_string()))
}

fn write_dataset(path: &Path, dataset: &SyntheticDataset) -> Result<(), StageError> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_synthetic_jsonl(dataset, &mut writer).map_err(|e| StageError::Other(e.to_string()))?;
    writer.flush()?;
    Ok(())
}

/// The newest full dataset a stage should read, per the config's recipe
/// switches: relabeled if round-trip relabeling is enabled, else filtered
/// if dedup is enabled, else the raw generation output.
fn latest_dataset_name(config: &PipelineConfig, before_relabel: bool) -> &'static str {
    if !before_relabel && config.relabel.enabled {
        artifacts::RELABELED
    } else if config.filter.dedup {
        artifacts::FILTERED
    } else {
        artifacts::GENERATED
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct IngestSummary {
    reports: Vec<IngestReport>,
    validation: ValidationReport,
}

fn stage_ingest(
    config: &PipelineConfig,
    manifest: &mut StageManifest,
) -> Result<Vec<PathBuf>, StageError> {
    let space = space_of(config)?;
    let options = IngestOptions {
        strict: config.corpus.strict,
    };
    let mut merged: Option<Corpus> = None;
    let mut reports = Vec::new();
    for input in &config.corpus.inputs {
        manifest.record_input(&input.path)?;
        let schema = SchemaMap {
            columns: input.schema.clone(),
        };
        let tag = input
            .dataset_tag
            .clone()
            .or_else(|| {
                input
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
            })
            .unwrap_or_else(|| "unknown".to_string());
        let (corpus, report) =
            ingest_table(&input.path, input.format, &schema, &space, &tag, &options)
                .map_err(|e| StageError::Validation(e.to_string()))?;
        reports.push(report);
        merged = Some(match merged.take() {
            None => corpus,
            Some(mut acc) => {
                acc.merge(corpus);
                acc
            }
        });
    }
    let mut corpus = merged.expect("validated non-empty inputs");
    // Canonical artifact order, so outputs do not depend on source row order.
    corpus.sort_canonical();
    let validation = validate_corpus(&corpus, &space);

    let products_path = out_path(config, artifacts::PRODUCTS);
    let judgments_path = out_path(config, artifacts::JUDGMENTS);
    let report_path = out_path(config, artifacts::INGEST_REPORT);
    let mut w = BufWriter::new(File::create(&products_path)?);
    write_products_jsonl(&corpus, &mut w).map_err(|e| StageError::Other(e.to_string()))?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(&judgments_path)?);
    write_judgments_jsonl(&corpus, &mut w).map_err(|e| StageError::Other(e.to_string()))?;
    w.flush()?;
    write_json(
        &report_path,
        &IngestSummary {
            reports,
            validation,
        },
    )?;

    manifest.count("products", corpus.products().len() as u64);
    manifest.count("judgments", corpus.judgments().len() as u64);
    Ok(vec![products_path, judgments_path, report_path])
}

fn generation_backend(
    config: &PipelineConfig,
    space: &LabelSpace,
) -> Result<Box<dyn QueryGenerator>, StageError> {
    match config.generation.backend.as_str() {
        "mock-template" => Ok(Box::new(
            MockTemplateGenerator::new(derive_seed(config.seed, "gen"), space.clone())
                .map_err(|e| StageError::Validation(e.to_string()))?,
        )),
        "http" => {
            let endpoint =
                resolve_endpoint(config.generation.endpoint.as_deref(), "QGEN_GENERATOR_URL")?;
            Ok(Box::new(HttpGenerator::new(transport(endpoint))))
        }
        other => Err(StageError::Validation(format!("unknown backend {other:?}"))),
    }
}

fn resolve_endpoint(configured: Option<&str>, env_var: &str) -> Result<String, StageError> {
    if let Some(endpoint) = configured {
        return Ok(endpoint.to_string());
    }
    std::env::var(env_var).map_err(|_| {
        StageError::Validation(format!(
            "http backend selected but no endpoint configured and {env_var} is unset"
        ))
    })
}

fn transport(endpoint: String) -> HttpTransport {
    let transport = HttpTransport::new(endpoint);
    match std::env::var("QGEN_BEARER_TOKEN") {
        Ok(token) if !token.is_empty() => transport.with_bearer_token(token),
        _ => transport,
    }
}

fn load_exemplars(path: &Path, space: &LabelSpace) -> Result<Vec<Exemplar>, StageError> {
    #[derive(serde::Deserialize)]
    struct ExemplarWire {
        label: String,
        title: String,
        #[serde(default)]
        description: String,
        query: String,
    }
    use std::io::BufRead;
    let reader = BufReader::new(File::open(path)?);
    let mut exemplars = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let wire: ExemplarWire = serde_json::from_str(&text)
            .map_err(|e| StageError::Validation(format!("exemplar line {}: {e}", i + 1)))?;
        exemplars.push(Exemplar {
            label: space
                .parse(&wire.label)
                .map_err(|e| StageError::Validation(format!("exemplar line {}: {e}", i + 1)))?,
            product: qgen_core::corpus::ProductDoc {
                product_id: format!("exemplar-{i}"),
                title: wire.title,
                description: wire.description,
                extras: Default::default(),
            },
            query_text: wire.query,
        });
    }
    Ok(exemplars)
}

fn stage_gen(
    config: &PipelineConfig,
    manifest: &mut StageManifest,
) -> Result<Vec<PathBuf>, StageError> {
    let space = space_of(config)?;
    let (corpus, products_path) = load_products(config)?;
    manifest.record_input(&products_path)?;

    let plan = plan_generation(
        &corpus,
        &space,
        config.generation.mode,
        config.generation.queries_per_cell,
    )
    .map_err(|e| StageError::Validation(e.to_string()))?;
    let backend = generation_backend(config, &space)?;

    let exemplars;
    let style = match config.generation.input_style.as_str() {
        "prompt" => {
            let path =
                config.generation.exemplars.as_ref().ok_or_else(|| {
                    StageError::Validation("prompt style requires exemplars".into())
                })?;
            manifest.record_input(path)?;
            exemplars = load_exemplars(path, &space)?;
            InputStyle::Prompt {
                exemplars: &exemplars,
            }
        }
        _ => InputStyle::Finetune,
    };

    let (records, report) = run_generation(
        &corpus,
        &plan,
        config.generation.mode,
        &style,
        backend.as_ref(),
        &config.template,
        config.generation.max_output_chars,
        config.generation.max_in_flight,
    )
    .map_err(|e| match e {
        PipelineError::Template(t) => StageError::Validation(t.to_string()),
        other => StageError::Other(other.to_string()),
    })?;
    if report.succeeded == 0 && report.failed > 0 {
        return Err(StageError::Backend(format!(
            "all {} generation tasks failed; first failure: {}",
            report.failed,
            report
                .failures
                .first()
                .map(|f| f.message.as_str())
                .unwrap_or("unknown")
        )));
    }

    let mut dataset = SyntheticDataset::new(records, space);
    dataset.provenance = manifest.config_hash.clone();
    let generated_path = out_path(config, artifacts::GENERATED);
    let report_path = out_path(config, artifacts::GEN_REPORT);
    write_dataset(&generated_path, &dataset)?;
    write_json(&report_path, &report)?;
    manifest.count("tasks", report.tasks);
    manifest.count("generated", report.succeeded);
    manifest.count("failed", report.failed);
    Ok(vec![generated_path, report_path])
}

fn stage_filter(
    config: &PipelineConfig,
    manifest: &mut StageManifest,
) -> Result<Vec<PathBuf>, StageError> {
    let space = space_of(config)?;
    let generated_path = require(out_path(config, artifacts::GENERATED))?;
    manifest.record_input(&generated_path)?;
    let dataset = load_dataset(&generated_path, &space)?;
    let records_in = dataset.len() as u64;
    let (filtered, report) = dedup_filter(dataset.records, &space);

    let filtered_path = out_path(config, artifacts::FILTERED);
    let report_path = out_path(config, artifacts::DEDUP_REPORT);
    write_dataset(&filtered_path, &filtered)?;
    write_json(&report_path, &report)?;
    manifest.count("records_in", records_in);
    manifest.count("records_out", filtered.len() as u64);
    manifest.count("products_with_duplicates", report.products_with_duplicates);
    Ok(vec![filtered_path, report_path])
}

fn relabel_scorer(
    config: &PipelineConfig,
    space: &LabelSpace,
) -> Result<Box<dyn DistributionScorer>, StageError> {
    match config.relabel.scorer.as_str() {
        "mock-overlap" => Ok(Box::new(
            MockOverlapScorer::new(space.clone())
                .map_err(|e| StageError::Validation(e.to_string()))?,
        )),
        "http" => {
            let endpoint = resolve_endpoint(config.relabel.endpoint.as_deref(), "QGEN_SCORER_URL")?;
            Ok(Box::new(HttpScorer::new(
                transport(endpoint),
                space.clone(),
            )))
        }
        other => Err(StageError::Validation(format!(
            "unknown relabel scorer {other:?}"
        ))),
    }
}

fn stage_relabel(
    config: &PipelineConfig,
    manifest: &mut StageManifest,
) -> Result<Vec<PathBuf>, StageError> {
    let space = space_of(config)?;
    let input_path = require(out_path(config, latest_dataset_name(config, true)))?;
    manifest.record_input(&input_path)?;
    let (corpus, products_path) = load_products(config)?;
    manifest.record_input(&products_path)?;
    let dataset = load_dataset(&input_path, &space)?;
    let records_in = dataset.len() as u64;

    let scorer = relabel_scorer(config, &space)?;
    let (relabeled, report) = roundtrip_relabel(dataset, &corpus, scorer.as_ref())
        .map_err(|e| StageError::Other(e.to_string()))?;
    if records_in > 0 && report.scored == 0 {
        return Err(StageError::Backend(format!(
            "scorer failed on all {records_in} records"
        )));
    }

    let relabeled_path = out_path(config, artifacts::RELABELED);
    let report_path = out_path(config, artifacts::RELABEL_REPORT);
    write_dataset(&relabeled_path, &relabeled)?;
    write_json(&report_path, &report)?;
    manifest.count("scored", report.scored);
    manifest.count("mismatched", report.mismatched);
    manifest.count("dropped", report.dropped);
    Ok(vec![relabeled_path, report_path])
}

fn stage_split(
    config: &PipelineConfig,
    manifest: &mut StageManifest,
) -> Result<Vec<PathBuf>, StageError> {
    let space = space_of(config)?;
    let input_path = require(out_path(config, latest_dataset_name(config, false)))?;
    manifest.record_input(&input_path)?;
    let dataset = load_dataset(&input_path, &space)?;

    let (train, val, report) = split_train_val(
        &dataset,
        config.split.ratio,
        derive_seed(config.seed, "split"),
    )
    .map_err(|e| StageError::Other(e.to_string()))?;

    let train_path = out_path(config, artifacts::TRAIN);
    let val_path = out_path(config, artifacts::VAL);
    let report_path = out_path(config, artifacts::SPLIT_REPORT);
    write_dataset(&train_path, &train)?;
    write_dataset(&val_path, &val)?;
    write_json(&report_path, &report)?;
    manifest.count("train_records", report.train_records);
    manifest.count("val_records", report.val_records);
    Ok(vec![train_path, val_path, report_path])
}

fn stage_mine(
    config: &PipelineConfig,
    manifest: &mut StageManifest,
) -> Result<Vec<PathBuf>, StageError> {
    let space = space_of(config)?;
    let input_path = require(out_path(config, latest_dataset_name(config, false)))?;
    manifest.record_input(&input_path)?;
    let (corpus, products_path) = load_products(config)?;
    manifest.record_input(&products_path)?;
    let dataset = load_dataset(&input_path, &space)?;

    let mut written = Vec::new();
    let index: Option<Bm25Index>;
    let http_retriever: Option<HttpRetriever>;
    let retriever: &dyn Retriever = match config.retrieval.retriever.as_str() {
        "bm25" => {
            let built = build_index(
                &corpus,
                &config.retrieval.fields,
                Bm25Params {
                    k1: config.retrieval.k1,
                    b: config.retrieval.b,
                },
            )
            .map_err(|e| StageError::Validation(e.to_string()))?;
            let index_path = out_path(config, artifacts::BM25_INDEX);
            built
                .write_to(&index_path)
                .map_err(|e| StageError::Other(e.to_string()))?;
            written.push(index_path);
            index = Some(built);
            index.as_ref().expect("just set")
        }
        "http" => {
            let endpoint =
                resolve_endpoint(config.retrieval.endpoint.as_deref(), "QGEN_RETRIEVER_URL")?;
            http_retriever = Some(HttpRetriever::new(transport(endpoint)));
            http_retriever.as_ref().expect("just set")
        }
        other => {
            return Err(StageError::Validation(format!(
                "unknown retriever {other:?}"
            )))
        }
    };

    let (sets, report) = mine_hard_negatives(retriever, &dataset, config.retrieval.k)
        .map_err(|e| StageError::Backend(e.to_string()))?;
    let (pairs, binary_space) = pairs_from_hard_negatives(&sets);
    // Balancing needs both labels present; a corpus where retrieval came
    // back empty for every query yields positives only, which we keep
    // unbalanced rather than failing the stage.
    let labels = binary_space
        .labels()
        .expect("binary space is discrete")
        .to_vec();
    let both_labels_present = labels
        .iter()
        .all(|label| pairs.iter().any(|p| p.label == *label));
    let balanced = if pairs.is_empty() || !both_labels_present {
        manifest.count("balance_skipped", 1);
        pairs
    } else {
        upsample_balance_by(
            &pairs,
            &binary_space,
            |p| {
                labels
                    .iter()
                    .position(|l| *l == p.label)
                    .unwrap_or(labels.len())
            },
            derive_seed(config.seed, "mine-negatives"),
        )
        .map_err(|e| StageError::Other(e.to_string()))?
    };

    let negatives_path = out_path(config, artifacts::HARD_NEGATIVES);
    let pairs_path = out_path(config, artifacts::PAIRS);
    let report_path = out_path(config, artifacts::MINE_REPORT);
    let mut w = BufWriter::new(File::create(&negatives_path)?);
    for set in &sets {
        serde_json::to_writer(&mut w, set).map_err(|e| StageError::Other(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let mut w = BufWriter::new(File::create(&pairs_path)?);
    for pair in &balanced {
        serde_json::to_writer(&mut w, pair).map_err(|e| StageError::Other(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    write_json(&report_path, &report)?;
    manifest.count("queries_mined", report.queries_mined);
    manifest.count("empty_retrievals", report.empty_retrievals);
    manifest.count("pairs", balanced.len() as u64);
    written.extend([negatives_path, pairs_path, report_path]);
    Ok(written)
}

fn stage_eval(
    config: &PipelineConfig,
    manifest: &mut StageManifest,
) -> Result<Vec<PathBuf>, StageError> {
    let space = space_of(config)?;
    let products_path = require(out_path(config, artifacts::PRODUCTS))?;
    let judgments_path = require(out_path(config, artifacts::JUDGMENTS))?;
    manifest.record_input(&products_path)?;
    manifest.record_input(&judgments_path)?;
    let corpus = load_corpus_jsonl(&products_path, Some(&judgments_path), space.name())
        .map_err(|e| StageError::Other(e.to_string()))?;

    let options = EvalOptions {
        ks: config.eval.ks.clone(),
        gain_transform: config.eval.gain_transform,
    };
    let overlap;
    let random;
    let http_dist;
    let http_scalar;
    let scorer: ScorerKind = match config.eval.scorer.as_str() {
        "mock-overlap" => {
            overlap = MockOverlapScorer::new(space.clone())
                .map_err(|e| StageError::Validation(e.to_string()))?;
            ScorerKind::Distribution(&overlap)
        }
        "random" => {
            random = RandomScorer::new(derive_seed(config.seed, "eval"));
            ScorerKind::Scalar(&random)
        }
        "http" => {
            let endpoint = resolve_endpoint(config.eval.endpoint.as_deref(), "QGEN_SCORER_URL")?;
            http_dist = HttpScorer::new(transport(endpoint), space.clone());
            ScorerKind::Distribution(&http_dist)
        }
        "http-scalar" => {
            let endpoint = resolve_endpoint(config.eval.endpoint.as_deref(), "QGEN_SCORER_URL")?;
            http_scalar = HttpScalarScorer::new(transport(endpoint));
            ScorerKind::Scalar(&http_scalar)
        }
        other => {
            return Err(StageError::Validation(format!(
                "unknown eval scorer {other:?}"
            )))
        }
    };

    let result = evaluate_scorer(&corpus, &space, &scorer, &options)
        .map_err(|e| StageError::Validation(e.to_string()))?;
    if result.evaluated_queries == 0 && result.failed_queries > 0 {
        return Err(StageError::Backend(format!(
            "scorer failed on all {} queries",
            result.failed_queries
        )));
    }

    let json_path = out_path(config, artifacts::EVAL_JSON);
    let text_path = out_path(config, artifacts::EVAL_TEXT);
    write_json(&json_path, &result)?;
    std::fs::write(&text_path, result.render_text())?;
    manifest.count("evaluated_queries", result.evaluated_queries);
    manifest.count("skipped_queries", result.skipped_queries);
    manifest.count("failed_queries", result.failed_queries);
    Ok(vec![json_path, text_path])
}

#[derive(serde::Serialize)]
struct ReportDocument {
    label_distribution: qgen_core::metrics::LabelDistribution,
    #[serde(skip_serializing_if = "Option::is_none")]
    duplicate_stats: Option<qgen_core::metrics::DuplicateStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    relabel: Option<RelabelReport>,
}

fn stage_report(
    config: &PipelineConfig,
    manifest: &mut StageManifest,
) -> Result<Vec<PathBuf>, StageError> {
    let space = space_of(config)?;
    let dataset_path = require(out_path(config, latest_dataset_name(config, false)))?;
    manifest.record_input(&dataset_path)?;
    let dataset = load_dataset(&dataset_path, &space)?;
    let distribution = label_distribution(&dataset);

    let mut text = distribution.render_text();
    let stats = if config.filter.dedup {
        let report_path = require(out_path(config, artifacts::DEDUP_REPORT))?;
        manifest.record_input(&report_path)?;
        let dedup: DedupReport = read_json(&report_path)?;
        let stats = duplicate_stats(&dedup, &space);
        text.push('\n');
        text.push_str(&stats.render_text());
        Some(stats)
    } else {
        None
    };
    let relabel = if config.relabel.enabled {
        let report_path = require(out_path(config, artifacts::RELABEL_REPORT))?;
        manifest.record_input(&report_path)?;
        let report: RelabelReport = read_json(&report_path)?;
        text.push_str(&format!(
            "\nRound-trip consistency\nrelabeled: {}  mismatched: {}  mismatch_rate: {:.4}\n",
            report.scored, report.mismatched, report.mismatch_rate
        ));
        Some(report)
    } else {
        None
    };

    let document = ReportDocument {
        label_distribution: distribution,
        duplicate_stats: stats,
        relabel,
    };
    let json_path = out_path(config, artifacts::REPORT_JSON);
    let text_path = out_path(config, artifacts::REPORT_TEXT);
    write_json(&json_path, &document)?;
    std::fs::write(&text_path, text)?;
    manifest.count("records", dataset.len() as u64);
    Ok(vec![json_path, text_path])
}
