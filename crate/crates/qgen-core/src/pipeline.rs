//! Generation planning and the data-shaping transforms applied to
//! synthetic query data: duplicate filtration, round-trip relabeling,
//! product-disjoint train/val splitting, and label balancing.
//!
//! All transforms are deterministic batch functions over immutable
//! inputs; randomness always flows through an explicit seed.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, DistributionScorer, GenRequest, QueryGenerator};
use crate::corpus::Corpus;
use crate::hashing::stable_hash64;
use crate::labels::{GradedLabel, LabelSpace};
use crate::templates::{
    assemble_prompt, format_labelcond_input, format_vanilla_input, Exemplar, PromptMode,
    TemplateConfig,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {0:?} has no records to balance from")]
    MissingLabel(String),
    #[error("scorer space {scorer:?} does not match dataset space {dataset:?}")]
    SpaceMismatch { scorer: String, dataset: String },
    #[error("vanilla generation needs a discrete label space with a top label")]
    NoTopLabel,
    #[error("split ratio {0} is not in (0, 1)")]
    BadRatio(f64),
    #[error("prompt generation requires exemplars")]
    MissingExemplars,
    #[error(transparent)]
    Template(#[from] crate::templates::TemplateError),
    #[error(transparent)]
    Label(#[from] crate::labels::LabelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset record at line {line}: {message}")]
    Record { line: u64, message: String },
}

/// One synthetic (product, desired label, query) record.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedQuery {
    pub product_id: String,
    pub desired_label: GradedLabel,
    /// Initially equal to `desired_label`; round-trip relabeling replaces it.
    pub final_label: GradedLabel,
    pub query_text: String,
    pub logprob: f64,
}

/// A collection of generated records over one label space.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub records: Vec<GeneratedQuery>,
    pub space: LabelSpace,
    /// Free-form provenance note (typically the config hash).
    pub provenance: String,
}

impl SyntheticDataset {
    pub fn new(records: Vec<GeneratedQuery>, space: LabelSpace) -> Self {
        SyntheticDataset {
            records,
            space,
            provenance: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Generation mode: queries for the top label only, or for every label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenerationMode {
    Vanilla,
    LabelCond,
}

/// One planned generation call.
#[derive(Debug, Clone, PartialEq)]
pub struct GenTask {
    pub product_id: String,
    pub label: GradedLabel,
    pub cell: u32,
}

impl GenTask {
    /// Stable request id: product, label, and cell index.
    pub fn request_id(&self) -> String {
        format!("{}#{}#{}", self.product_id, self.label.render(), self.cell)
    }
}

/// Plan generation tasks in canonical order: products sorted by id, then
/// label order, then cell index. Label-conditioned mode yields
/// `|products| * |labels| * queries_per_cell` tasks; vanilla mode fixes
/// the label to the top label.
pub fn plan_generation(
    corpus: &Corpus,
    space: &LabelSpace,
    mode: GenerationMode,
    queries_per_cell: u32,
) -> Result<Vec<GenTask>, PipelineError> {
    let labels: Vec<GradedLabel> = match mode {
        GenerationMode::Vanilla => vec![space.top_label().ok_or(PipelineError::NoTopLabel)?],
        GenerationMode::LabelCond => {
            let count = space.label_count().ok_or(PipelineError::NoTopLabel)?;
            (0..count)
                .map(|r| space.label_at(r).expect("in range"))
                .collect()
        }
    };
    let mut product_ids: Vec<&str> = corpus
        .products()
        .iter()
        .map(|p| p.product_id.as_str())
        .collect();
    product_ids.sort_unstable();
    product_ids.dedup();

    let mut tasks =
        Vec::with_capacity(product_ids.len() * labels.len() * queries_per_cell as usize);
    for pid in product_ids {
        for label in &labels {
            for cell in 0..queries_per_cell {
                tasks.push(GenTask {
                    product_id: pid.to_string(),
                    label: label.clone(),
                    cell,
                });
            }
        }
    }
    Ok(tasks)
}

/// How generation inputs are produced from a task.
pub enum InputStyle<'a> {
    /// Single formatted input per task (finetuned backends).
    Finetune,
    /// Few-shot prompt assembled from exemplars (prompted LLM backends).
    Prompt { exemplars: &'a [Exemplar] },
}

/// Per-task generation failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenFailure {
    pub request_id: String,
    pub message: String,
}

/// Outcome counters for a generation run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenReport {
    pub tasks: u64,
    pub succeeded: u64,
    pub failed: u64,
    pub failures: Vec<GenFailure>,
}

/// Drive a generation plan through a backend. Failed tasks are recorded
/// and skipped; the run continues.
#[allow(clippy::too_many_arguments)]
pub fn run_generation(
    corpus: &Corpus,
    plan: &[GenTask],
    mode: GenerationMode,
    style: &InputStyle,
    backend: &dyn QueryGenerator,
    template_cfg: &TemplateConfig,
    max_output_chars: usize,
    max_in_flight: usize,
) -> Result<(Vec<GeneratedQuery>, GenReport), PipelineError> {
    let mut requests = Vec::with_capacity(plan.len());
    for task in plan {
        let product = corpus
            .product(&task.product_id)
            .ok_or_else(|| PipelineError::Record {
                line: 0,
                message: format!("planned product {:?} missing from corpus", task.product_id),
            })?;
        let input = match style {
            InputStyle::Finetune => match mode {
                GenerationMode::Vanilla => format_vanilla_input(product, template_cfg),
                GenerationMode::LabelCond => {
                    format_labelcond_input(product, &task.label, template_cfg)
                }
            },
            InputStyle::Prompt { exemplars } => {
                let prompt_mode = match mode {
                    GenerationMode::Vanilla => PromptMode::Vanilla,
                    GenerationMode::LabelCond => PromptMode::LabelCond,
                };
                let target_label = match mode {
                    GenerationMode::Vanilla => None,
                    GenerationMode::LabelCond => Some(&task.label),
                };
                assemble_prompt(exemplars, product, prompt_mode, target_label, template_cfg)?
            }
        };
        requests.push(
            GenRequest::new(task.request_id(), input, max_output_chars).map_err(|e| {
                PipelineError::Record {
                    line: 0,
                    message: e.to_string(),
                }
            })?,
        );
    }

    let results = crate::backends::generate_batch(backend, &requests, max_in_flight);
    let mut records = Vec::with_capacity(plan.len());
    let mut report = GenReport {
        tasks: plan.len() as u64,
        ..GenReport::default()
    };
    for (task, result) in plan.iter().zip(results) {
        match result {
            Ok(response) => {
                report.succeeded += 1;
                records.push(GeneratedQuery {
                    product_id: task.product_id.clone(),
                    desired_label: task.label.clone(),
                    final_label: task.label.clone(),
                    query_text: response.query_text,
                    logprob: response.logprob,
                });
            }
            Err(e) => {
                report.failed += 1;
                report.failures.push(GenFailure {
                    request_id: task.request_id(),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok((records, report))
}

/// Duplicate-detection normalization: trim, collapse internal whitespace,
/// case-fold.
pub fn normalize_query(query: &str) -> String {
    query
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Products having a duplicate that spans a given label pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPairCount {
    pub label_a: String,
    pub label_b: String,
    pub products: u64,
}

/// What duplicate filtration found and removed.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DedupReport {
    pub records_in: u64,
    pub records_out: u64,
    /// Distinct products seen in the input.
    pub products_seen: u64,
    /// Products with at least one duplicated (product, query) group.
    pub products_with_duplicates: u64,
    /// Groups of size > 1 that were collapsed.
    pub duplicate_groups: u64,
    /// Per unordered label pair, the number of products having a duplicate
    /// spanning that pair; ordered by label rank.
    pub label_pairs: Vec<LabelPairCount>,
}

/// Remove duplicate queries: within each (product, normalized query)
/// group only the record with the highest model probability survives.
/// Ties break toward the more relevant label, then the lexicographically
/// smaller query text, then input order.
pub fn dedup_filter(
    records: Vec<GeneratedQuery>,
    space: &LabelSpace,
) -> (SyntheticDataset, DedupReport) {
    let records_in = records.len() as u64;
    let mut groups: HashMap<(String, String), Vec<usize>> = HashMap::new();
    for (i, record) in records.iter().enumerate() {
        let key = (
            record.product_id.clone(),
            normalize_query(&record.query_text),
        );
        groups.entry(key).or_default().push(i);
    }

    let label_count = space.label_count().unwrap_or(0);
    let mut survivors: Vec<usize> = Vec::with_capacity(groups.len());
    let mut products_seen: HashSet<&str> = HashSet::new();
    let mut dup_products: HashSet<&str> = HashSet::new();
    // product -> set of (rank_a, rank_b) pairs spanned by its duplicates
    let mut pair_products: HashMap<(usize, usize), HashSet<&str>> = HashMap::new();
    let mut duplicate_groups = 0u64;

    for record in &records {
        products_seen.insert(record.product_id.as_str());
    }
    for ((product_id, _), members) in &groups {
        let winner = *members
            .iter()
            .min_by(|&&a, &&b| {
                let (ra, rb) = (&records[a], &records[b]);
                rb.logprob
                    .partial_cmp(&ra.logprob)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| {
                        rank_or_last(&ra.desired_label, label_count)
                            .cmp(&rank_or_last(&rb.desired_label, label_count))
                    })
                    .then_with(|| ra.query_text.cmp(&rb.query_text))
                    .then_with(|| a.cmp(&b))
            })
            .expect("groups are non-empty");
        survivors.push(winner);
        if members.len() > 1 {
            duplicate_groups += 1;
            dup_products.insert(product_id.as_str());
            let mut ranks: Vec<usize> = members
                .iter()
                .map(|&i| rank_or_last(&records[i].desired_label, label_count))
                .collect();
            ranks.sort_unstable();
            ranks.dedup();
            for (i, &a) in ranks.iter().enumerate() {
                for &b in &ranks[i + 1..] {
                    pair_products
                        .entry((a, b))
                        .or_default()
                        .insert(product_id.as_str());
                }
            }
        }
    }
    survivors.sort_unstable();

    let mut label_pairs = Vec::new();
    for a in 0..label_count {
        for b in a + 1..label_count {
            let products = pair_products.get(&(a, b)).map_or(0, HashSet::len) as u64;
            label_pairs.push(LabelPairCount {
                label_a: space.label_at(a).expect("in range").render(),
                label_b: space.label_at(b).expect("in range").render(),
                products,
            });
        }
    }

    let report = DedupReport {
        records_in,
        records_out: survivors.len() as u64,
        products_seen: products_seen.len() as u64,
        products_with_duplicates: dup_products.len() as u64,
        duplicate_groups,
        label_pairs,
    };
    let kept: HashSet<usize> = survivors.iter().copied().collect();
    let records_out: Vec<GeneratedQuery> = records
        .into_iter()
        .enumerate()
        .filter(|(i, _)| kept.contains(i))
        .map(|(_, r)| r)
        .collect();
    (SyntheticDataset::new(records_out, space.clone()), report)
}

fn rank_or_last(label: &GradedLabel, label_count: usize) -> usize {
    label.rank().unwrap_or(label_count)
}

/// Round-trip relabeling outcome.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RelabelReport {
    pub scored: u64,
    pub mismatched: u64,
    /// Records dropped because the scorer failed on them.
    pub dropped: u64,
    pub mismatch_rate: f64,
}

/// Re-label every record with the argmax of an independent scorer's
/// distribution, keeping the desired label for analysis. Records the
/// scorer fails on are dropped and counted.
pub fn roundtrip_relabel(
    dataset: SyntheticDataset,
    corpus: &Corpus,
    scorer: &dyn DistributionScorer,
) -> Result<(SyntheticDataset, RelabelReport), PipelineError> {
    if !scorer.space().same_space(&dataset.space) {
        return Err(PipelineError::SpaceMismatch {
            scorer: scorer.space().name().to_string(),
            dataset: dataset.space.name().to_string(),
        });
    }
    let mut report = RelabelReport::default();
    let mut records = Vec::with_capacity(dataset.records.len());
    for mut record in dataset.records {
        let scored = corpus
            .product(&record.product_id)
            .ok_or_else(|| {
                BackendError::InvalidRequest(format!(
                    "product {:?} missing from corpus",
                    record.product_id
                ))
            })
            .and_then(|product| scorer.score(&record.query_text, product));
        match scored {
            Ok(dist) => {
                report.scored += 1;
                record.final_label = dist.argmax_label();
                if record.final_label != record.desired_label {
                    report.mismatched += 1;
                }
                records.push(record);
            }
            Err(_) => {
                report.dropped += 1;
            }
        }
    }
    report.mismatch_rate = if report.scored == 0 {
        0.0
    } else {
        report.mismatched as f64 / report.scored as f64
    };
    Ok((
        SyntheticDataset {
            records,
            space: dataset.space,
            provenance: dataset.provenance,
        },
        report,
    ))
}

/// Split outcome notes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SplitReport {
    pub train_products: u64,
    pub val_products: u64,
    pub train_records: u64,
    pub val_records: u64,
    pub warnings: Vec<String>,
}

/// Partition a dataset by product id with no product overlap: product ids
/// are shuffled with the seed and cut at the product boundary nearest to
/// `ratio`.
pub fn split_train_val(
    dataset: &SyntheticDataset,
    ratio: f64,
    seed: u64,
) -> Result<(SyntheticDataset, SyntheticDataset, SplitReport), PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PipelineError::BadRatio(ratio));
    }
    let mut product_ids: Vec<&str> = dataset
        .records
        .iter()
        .map(|r| r.product_id.as_str())
        .collect();
    product_ids.sort_unstable();
    product_ids.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    product_ids.shuffle(&mut rng);
    let n_train = ((ratio * product_ids.len() as f64).round() as usize).min(product_ids.len());
    let train_set: HashSet<&str> = product_ids[..n_train].iter().copied().collect();

    let mut train_records = Vec::new();
    let mut val_records = Vec::new();
    for record in &dataset.records {
        if train_set.contains(record.product_id.as_str()) {
            train_records.push(record.clone());
        } else {
            val_records.push(record.clone());
        }
    }
    let mut report = SplitReport {
        train_products: n_train as u64,
        val_products: (product_ids.len() - n_train) as u64,
        train_records: train_records.len() as u64,
        val_records: val_records.len() as u64,
        warnings: Vec::new(),
    };
    if val_records.is_empty() {
        report
            .warnings
            .push("validation split is empty".to_string());
    }
    if train_records.is_empty() {
        report.warnings.push("train split is empty".to_string());
    }
    let train = SyntheticDataset {
        records: train_records,
        space: dataset.space.clone(),
        provenance: dataset.provenance.clone(),
    };
    let val = SyntheticDataset {
        records: val_records,
        space: dataset.space.clone(),
        provenance: dataset.provenance.clone(),
    };
    Ok((train, val, report))
}

/// Upsample every label's pool to the maximum pre-balance count by
/// seeded resampling with replacement. Originals are all retained (as a
/// prefix of the output); resamples are appended grouped by label rank.
pub fn upsample_balance_by<T: Clone>(
    items: &[T],
    space: &LabelSpace,
    rank_of: impl Fn(&T) -> usize,
    seed: u64,
) -> Result<Vec<T>, PipelineError> {
    let label_count = space.label_count().ok_or(PipelineError::NoTopLabel)?;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); label_count];
    for (i, item) in items.iter().enumerate() {
        let rank = rank_of(item);
        if rank < label_count {
            pools[rank].push(i);
        }
    }
    for (rank, pool) in pools.iter().enumerate() {
        if pool.is_empty() {
            return Err(PipelineError::MissingLabel(
                space.label_at(rank).expect("in range").render(),
            ));
        }
    }
    let target = pools.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = items.to_vec();
    for (rank, pool) in pools.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64(&[
            &seed.to_le_bytes(),
            &(rank as u64).to_le_bytes(),
        ]));
        for _ in 0..target - pool.len() {
            let pick = pool[rng.random_range(0..pool.len())];
            out.push(items[pick].clone());
        }
    }
    Ok(out)
}

/// [`upsample_balance_by`] keyed on each record's final label.
pub fn upsample_balance(
    records: &[GeneratedQuery],
    space: &LabelSpace,
    seed: u64,
) -> Result<Vec<GeneratedQuery>, PipelineError> {
    let label_count = space.label_count().ok_or(PipelineError::NoTopLabel)?;
    upsample_balance_by(
        records,
        space,
        |r| rank_or_last(&r.final_label, label_count),
        seed,
    )
}

/// On-disk record shape for [`SyntheticDataset`] JSONL files.
#[derive(Debug, Serialize, Deserialize)]
struct RecordWire {
    product_id: String,
    desired_label: String,
    final_label: String,
    query: String,
    logprob: f64,
}

/// Write a dataset as JSONL, one record per line.
pub fn write_synthetic_jsonl<W: Write>(
    dataset: &SyntheticDataset,
    mut writer: W,
) -> Result<(), PipelineError> {
    for record in &dataset.records {
        let wire = RecordWire {
            product_id: record.product_id.clone(),
            desired_label: record.desired_label.render(),
            final_label: record.final_label.render(),
            query: record.query_text.clone(),
            logprob: record.logprob,
        };
        serde_json::to_writer(&mut writer, &wire)
            .map_err(|e| PipelineError::Io(std::io::Error::other(e)))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Load a dataset written by [`write_synthetic_jsonl`]; labels are parsed
/// in the given space.
pub fn load_synthetic_jsonl<R: BufRead>(
    reader: R,
    space: &LabelSpace,
) -> Result<SyntheticDataset, PipelineError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let wire: RecordWire = serde_json::from_str(&text).map_err(|e| PipelineError::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        let bad_label = |e: crate::labels::LabelError| PipelineError::Record {
            line: line_no,
            message: e.to_string(),
        };
        records.push(GeneratedQuery {
            product_id: wire.product_id,
            desired_label: space.parse(&wire.desired_label).map_err(bad_label)?,
            final_label: space.parse(&wire.final_label).map_err(bad_label)?,
            query_text: wire.query,
            logprob: wire.logprob,
        });
    }
    Ok(SyntheticDataset::new(records, space.clone()))
}
