//! Evaluation quantities: expected relevance score, graded NDCG@k, and
//! the duplicate/label-distribution diagnostic tables.
//!
//! NDCG uses log2 discounting with positions starting at 1 (discount
//! `log2(i+1)`), gains sorted descending for the ideal DCG, and excludes
//! all-zero-gain queries from the mean (reported as skipped). Reported
//! means are macro-averages over queries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{DistributionScorer, ScalarScorer, ScoreDistribution};
use crate::corpus::Corpus;
use crate::labels::{GainTransform, LabelSpace};
use crate::pipeline::{DedupReport, SyntheticDataset};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("k must be >= 1")]
    InvalidK,
    #[error("space {0:?} has no weights (continuous); expected score undefined")]
    NoWeights(String),
    #[error("judgment {query_id:?} has unparseable label {raw:?} in space {space:?}")]
    UnparseableLabel {
        query_id: String,
        raw: String,
        space: String,
    },
}

/// Expected relevance score: the dot product of the label distribution
/// with the space's label weights.
pub fn expected_score(dist: &ScoreDistribution) -> Result<f64, MetricsError> {
    let weights = dist
        .space()
        .weights()
        .map_err(|_| MetricsError::NoWeights(dist.space().name().to_string()))?;
    Ok(dist.probs().iter().zip(weights).map(|(p, w)| p * w).sum())
}

/// One judged document with its predicted score and gold gain.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub product_id: String,
    pub score: f64,
    pub gain: f64,
}

/// A query's judged documents, sorted by predicted score descending with
/// ties broken by ascending product id.
#[derive(Debug, Clone)]
pub struct RankedJudgedList {
    pub query_id: String,
    entries: Vec<RankedEntry>,
}

impl RankedJudgedList {
    pub fn new(query_id: impl Into<String>, mut entries: Vec<RankedEntry>) -> Self {
        entries.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.product_id.cmp(&b.product_id))
        });
        RankedJudgedList {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    /// Gains in ranked order.
    pub fn ranked_gains(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.gain).collect()
    }
}

fn dcg_at_k(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, gain)| gain / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of a ranked judged list; `None` marks an all-zero-gain query
/// that should be skipped rather than scored.
pub fn ndcg_at_k(list: &RankedJudgedList, k: usize) -> Result<Option<f64>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidK);
    }
    let gains = list.ranked_gains();
    if gains.iter().all(|&g| g == 0.0) {
        return Ok(None);
    }
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        // Nonzero gains exist but none within the cutoff of the ideal
        // ordering is impossible; guard anyway.
        return Ok(None);
    }
    Ok(Some(dcg_at_k(&gains, k) / idcg))
}

/// Which scoring interface a backend exposes.
pub enum ScorerKind<'a> {
    /// Label distribution, collapsed to a scalar via [`expected_score`].
    Distribution(&'a dyn DistributionScorer),
    /// Direct relevance scalar (ranking-style models, random baseline).
    Scalar(&'a dyn ScalarScorer),
}

/// Evaluation switches.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub gain_transform: GainTransform,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![5, 10, 20],
            gain_transform: GainTransform::Linear,
        }
    }
}

/// Per-k means plus per-query detail.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub ks: Vec<usize>,
    /// Macro-averaged NDCG@k over evaluated (non-skipped, non-failed) queries.
    pub mean_ndcg: BTreeMap<usize, f64>,
    pub evaluated_queries: u64,
    /// All-zero-gain queries excluded from the mean.
    pub skipped_queries: u64,
    /// Queries excluded because the scorer failed on one of their pairs.
    pub failed_queries: u64,
    pub per_query: BTreeMap<String, BTreeMap<usize, Option<f64>>>,
    /// Averaging convention used for `mean_ndcg`.
    pub averaging: String,
}

impl EvalResult {
    /// Render like the paper's results tables: one row of NDCG@k columns.
    pub fn render_text(&self) -> String {
        let mut header = String::new();
        let mut row = String::new();
        for k in &self.ks {
            header.push_str(&format!("{:>10}", format!("NDCG@{k}")));
            match self.mean_ndcg.get(k) {
                Some(v) => row.push_str(&format!("{v:>10.4}")),
                None => row.push_str(&format!("{:>10}", "-")),
            }
        }
        format!(
            "{header}\n{row}\nqueries evaluated: {} (skipped all-zero-gain: {}, failed: {})\naveraging: {}\n",
            self.evaluated_queries, self.skipped_queries, self.failed_queries, self.averaging
        )
    }
}

/// Score every judged (query, product) pair and macro-average NDCG@k over
/// queries. Judgments are grouped by query id in sorted order; queries
/// whose scorer calls fail are excluded and counted.
pub fn evaluate_scorer(
    corpus: &Corpus,
    space: &LabelSpace,
    scorer: &ScorerKind,
    options: &EvalOptions,
) -> Result<EvalResult, MetricsError> {
    if options.ks.contains(&0) {
        return Err(MetricsError::InvalidK);
    }
    let mut by_query: BTreeMap<&str, Vec<&crate::corpus::Judgment>> = BTreeMap::new();
    for judgment in corpus.judgments() {
        by_query
            .entry(&judgment.query_id)
            .or_default()
            .push(judgment);
    }

    let mut result = EvalResult {
        ks: options.ks.clone(),
        mean_ndcg: BTreeMap::new(),
        evaluated_queries: 0,
        skipped_queries: 0,
        failed_queries: 0,
        per_query: BTreeMap::new(),
        averaging: "macro".to_string(),
    };
    let mut sums: BTreeMap<usize, f64> = options.ks.iter().map(|&k| (k, 0.0)).collect();

    'queries: for (query_id, judgments) in by_query {
        let mut entries = Vec::with_capacity(judgments.len());
        for judgment in judgments {
            let label =
                space
                    .parse(&judgment.raw_label)
                    .map_err(|_| MetricsError::UnparseableLabel {
                        query_id: query_id.to_string(),
                        raw: judgment.raw_label.clone(),
                        space: space.name().to_string(),
                    })?;
            let gain = options.gain_transform.apply(label.gain());
            let Some(product) = corpus.product(&judgment.product_id) else {
                result.failed_queries += 1;
                continue 'queries;
            };
            let scored = match scorer {
                ScorerKind::Distribution(backend) => backend
                    .score(&judgment.query_text, product)
                    .map_err(|e| e.to_string())
                    .and_then(|dist| expected_score(&dist).map_err(|e| e.to_string())),
                ScorerKind::Scalar(backend) => backend
                    .score_scalar(&judgment.query_text, product)
                    .map_err(|e| e.to_string()),
            };
            match scored {
                Ok(score) => entries.push(RankedEntry {
                    product_id: judgment.product_id.clone(),
                    score,
                    gain,
                }),
                Err(_) => {
                    result.failed_queries += 1;
                    continue 'queries;
                }
            }
        }
        let list = RankedJudgedList::new(query_id, entries);
        let mut per_k = BTreeMap::new();
        let mut skipped = false;
        for &k in &options.ks {
            let value = ndcg_at_k(&list, k)?;
            if value.is_none() {
                skipped = true;
            }
            per_k.insert(k, value);
        }
        if skipped {
            result.skipped_queries += 1;
        } else {
            result.evaluated_queries += 1;
            for (&k, value) in &per_k {
                *sums.get_mut(&k).expect("k present") += value.expect("not skipped");
            }
        }
        result.per_query.insert(query_id.to_string(), per_k);
    }

    if result.evaluated_queries > 0 {
        for (&k, &sum) in &sums {
            result
                .mean_ndcg
                .insert(k, sum / result.evaluated_queries as f64);
        }
    }
    Ok(result)
}

/// The duplicate-query diagnostic table: products with at least one
/// duplicate, then per adjacent label pair the products with a duplicate
/// spanning that pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DuplicateStats {
    pub rows: Vec<(String, u64)>,
    pub products_total: u64,
}

/// Shape a dedup report into the diagnostic table.
pub fn duplicate_stats(report: &DedupReport, space: &LabelSpace) -> DuplicateStats {
    let mut rows = vec![(
        "at least 1 duplicate".to_string(),
        report.products_with_duplicates,
    )];
    for (a, b) in space.adjacent_pairs() {
        let count = report
            .label_pairs
            .iter()
            .find(|p| p.label_a == a && p.label_b == b)
            .map_or(0, |p| p.products);
        rows.push((format!("duplicate query for {a} and {b}"), count));
    }
    DuplicateStats {
        rows,
        products_total: report.products_seen,
    }
}

impl DuplicateStats {
    pub fn render_text(&self) -> String {
        let mut out = String::from("Number of Products\n");
        let width = self
            .rows
            .iter()
            .map(|(name, _)| name.len())
            .max()
            .unwrap_or(0);
        for (name, count) in &self.rows {
            out.push_str(&format!("{name:<width$}  {count}\n"));
        }
        out.push_str(&format!(
            "{:<width$}  {}\n",
            "total products", self.products_total
        ));
        out
    }
}

/// Per-label record counts of a synthetic dataset (by desired label).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub rows: Vec<(String, u64)>,
    pub total: u64,
}

pub fn label_distribution(dataset: &SyntheticDataset) -> LabelDistribution {
    let label_count = dataset.space.label_count().unwrap_or(0);
    let mut counts = vec![0u64; label_count];
    let mut numeric = 0u64;
    for record in &dataset.records {
        match record.desired_label.rank() {
            Some(rank) if rank < label_count => counts[rank] += 1,
            _ => numeric += 1,
        }
    }
    let mut rows: Vec<(String, u64)> = (0..label_count)
        .map(|rank| {
            (
                dataset.space.label_at(rank).expect("in range").render(),
                counts[rank],
            )
        })
        .collect();
    if numeric > 0 {
        rows.push(("numeric".to_string(), numeric));
    }
    LabelDistribution {
        rows,
        total: dataset.records.len() as u64,
    }
}

impl LabelDistribution {
    pub fn render_text(&self) -> String {
        let mut out = String::from("Generated Query Distribution\n");
        for (label, count) in &self.rows {
            out.push_str(&format!("Label: {label:<12} {count}\n"));
        }
        out.push_str(&format!("{:<19} {}\n", "All", self.total));
        out
    }
}
