//! `qgen` — run query-generation pipeline stages from a JSON config.
//!
//! Exit codes: 0 success, 2 validation error, 3 missing upstream
//! artifact, 4 backend failure, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qgen_cli::config::{preset, PipelineConfig};
use qgen_cli::stages::{run_all, run_stage, Stage, StageError};

#[derive(Parser)]
#[command(
    name = "qgen",
    about = "Synthetic query generation pipeline: ingest, generate, filter, relabel, split, mine negatives, evaluate, report",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Pipeline config JSON. Either this or --preset is required.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a ready-made recipe instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Replace the config's corpus inputs with this one table.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Table format for --input (csv | tsv | jsonl). Default: csv.
    #[arg(long)]
    format: Option<String>,
    /// Column-role map for --input: product_id=colA,title=colB,...
    #[arg(long)]
    schema: Option<String>,
    /// Dataset tag for --input. Default: the file stem.
    #[arg(long)]
    dataset_tag: Option<String>,
    /// Label space for the corpus (builtin name).
    #[arg(long)]
    label_space: Option<String>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the generation backend (mock-template | http).
    #[arg(long)]
    backend: Option<String>,
    /// Override the eval scorer (mock-overlap | random | http | http-scalar).
    #[arg(long)]
    scorer: Option<String>,
    /// Override the number of hard negatives per query.
    #[arg(long)]
    k: Option<usize>,
    /// Override the train/val split ratio.
    #[arg(long)]
    ratio: Option<f64>,
    /// Override the maximum in-flight generation requests.
    #[arg(long)]
    max_in_flight: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print a ready-made config for one of the model-variant recipes.
    Preset {
        /// zero-shot-eval | vanilla-finetune | vanilla-prompt |
        /// labelcond-finetune | labelcond-prompt | random-baseline
        name: String,
    },
    /// Run one stage by name, or `all` for the config's full stage list.
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// ingest | gen | filter | relabel | split | mine-negatives |
        /// eval | report | all
        #[arg(long)]
        stage: String,
    },
    /// Ingest source tables into canonical products/judgments JSONL.
    Ingest(RunArgs),
    /// Generate queries for the planned (product, label) tasks.
    Gen(RunArgs),
    /// Remove duplicate queries, keeping the highest-probability record.
    Filter(RunArgs),
    /// Re-label generated queries with an independent scorer.
    Relabel(RunArgs),
    /// Product-disjoint train/validation split.
    Split(RunArgs),
    /// Mine hard negatives and emit balanced binary training pairs.
    #[command(name = "mine-negatives")]
    MineNegatives(RunArgs),
    /// Evaluate a scorer with graded NDCG over the judged corpus.
    Eval(RunArgs),
    /// Emit the label-distribution and duplicate-query diagnostic tables.
    Report(RunArgs),
}

fn load_base_config(args: &RunArgs) -> Result<PipelineConfig, StageError> {
    match (&args.config, &args.preset) {
        (Some(path), None) => Ok(PipelineConfig::load(path)?),
        (None, Some(name)) => preset(name).map_err(|e| StageError::Validation(e.to_string())),
        (Some(_), Some(_)) => Err(StageError::Validation(
            "pass either --config or --preset, not both".into(),
        )),
        (None, None) => Err(StageError::Validation(
            "one of --config or --preset is required".into(),
        )),
    }
}

fn apply_overrides(config: &mut PipelineConfig, args: &RunArgs) -> Result<(), StageError> {
    if let Some(input) = &args.input {
        let schema_flag = args.schema.as_deref().ok_or_else(|| {
            StageError::Validation("--input requires --schema role=column,...".into())
        })?;
        let schema = qgen_core::corpus::SchemaMap::parse_flag(schema_flag)
            .map_err(|e| StageError::Validation(e.to_string()))?;
        let format = args
            .format
            .as_deref()
            .unwrap_or("csv")
            .parse::<qgen_core::corpus::TableFormat>()
            .map_err(|e| StageError::Validation(e.to_string()))?;
        config.corpus.inputs = vec![qgen_cli::config::TableInput {
            path: input.clone(),
            format,
            schema: schema.columns,
            dataset_tag: args.dataset_tag.clone(),
        }];
    } else if args.schema.is_some() || args.format.is_some() || args.dataset_tag.is_some() {
        return Err(StageError::Validation(
            "--schema/--format/--dataset-tag only apply together with --input".into(),
        ));
    }
    if let Some(name) = &args.label_space {
        config.corpus.label_space = qgen_cli::config::LabelSpaceRef::Builtin(name.clone());
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(backend) = &args.backend {
        config.generation.backend = backend.clone();
    }
    if let Some(scorer) = &args.scorer {
        config.eval.scorer = scorer.clone();
    }
    if let Some(k) = args.k {
        config.retrieval.k = k;
    }
    if let Some(ratio) = args.ratio {
        config.split.ratio = ratio;
    }
    if let Some(max_in_flight) = args.max_in_flight {
        config.generation.max_in_flight = max_in_flight;
    }
    Ok(())
}

fn execute(args: &RunArgs, stage_name: &str) -> Result<(), StageError> {
    let mut config = load_base_config(args)?;
    apply_overrides(&mut config, args)?;
    if stage_name == "all" {
        let outcomes = run_all(&config)?;
        for outcome in outcomes {
            eprintln!(
                "stage {} ok ({} artifacts)",
                outcome.stage,
                outcome.artifacts.len()
            );
        }
        return Ok(());
    }
    let stage = Stage::parse(stage_name).ok_or_else(|| {
        StageError::Validation(format!(
            "unknown stage {stage_name:?}; valid: ingest, gen, filter, relabel, split, mine-negatives, eval, report, all"
        ))
    })?;
    let outcome = run_stage(&config, stage)?;
    for path in &outcome.artifacts {
        eprintln!("wrote {}", path.display());
    }
    // Evaluation results go to stdout as a table.
    if stage == Stage::Eval {
        if let Ok(text) = std::fs::read_to_string(config.out_dir.join("eval.txt")) {
            print!("{text}");
        }
    }
    if stage == Stage::Report {
        if let Ok(text) = std::fs::read_to_string(config.out_dir.join("report.txt")) {
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), StageError> = match &cli.command {
        Command::Preset { name } => match preset(name) {
            Ok(config) => {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&config).expect("config serializes")
                );
                Ok(())
            }
            Err(e) => Err(StageError::Validation(e.to_string())),
        },
        Command::Run { args, stage } => execute(args, stage),
        Command::Ingest(args) => execute(args, "ingest"),
        Command::Gen(args) => execute(args, "gen"),
        Command::Filter(args) => execute(args, "filter"),
        Command::Relabel(args) => execute(args, "relabel"),
        Command::Split(args) => execute(args, "split"),
        Command::MineNegatives(args) => execute(args, "mine-negatives"),
        Command::Eval(args) => execute(args, "eval"),
        Command::Report(args) => execute(args, "report"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
