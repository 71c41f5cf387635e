//! Acceptance suite: one test per shipping criterion, each checked at its
//! stated tolerance and runtime budget. Every expected value is either
//! exact arithmetic, an independently implemented oracle, or a frozen
//! observation of the deterministic mocks.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::prelude::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qgen_cli::config::{preset, LabelSpaceRef, TableInput};
use qgen_cli::stages::run_all;
use qgen_core::backends::mock::{MockOverlapScorer, MockTemplateGenerator, RandomScorer};
use qgen_core::backends::{BackendError, DistributionScorer, ScalarScorer, ScoreDistribution};
use qgen_core::corpus::{Corpus, ProductDoc, TableFormat};
use qgen_core::labels::LabelSpace;
use qgen_core::metrics::{expected_score, ndcg_at_k, RankedEntry, RankedJudgedList};
use qgen_core::pipeline::{
    dedup_filter, normalize_query, plan_generation, roundtrip_relabel, run_generation,
    split_train_val, upsample_balance, GeneratedQuery, GenerationMode, InputStyle,
    SyntheticDataset,
};
use qgen_core::retrieval::{build_index, mine_hard_negatives, tokenize, Bm25Params};
use qgen_core::templates::TemplateConfig;

fn esci() -> LabelSpace {
    LabelSpace::builtin("esci").unwrap()
}

fn assert_within_budget(start: Instant, budget: Duration, what: &str) {
    let elapsed = start.elapsed();
    assert!(
        elapsed < budget,
        "{what} took {elapsed:?}, budget {budget:?}"
    );
}

/// Criterion 1: expected-score formula against direct dot-product evaluation.
#[test]
fn criterion_01_expected_score_formula() {
    let start = Instant::now();
    let space = esci();
    let weights = [3.0, 2.0, 1.0, 0.0];

    // Point masses and the uniform case, exact.
    for (rank, expected) in [(0, 3.0), (1, 2.0), (2, 1.0), (3, 0.0)] {
        let mut probs = vec![0.0; 4];
        probs[rank] = 1.0;
        let dist = ScoreDistribution::new(space.clone(), probs).unwrap();
        assert_eq!(expected_score(&dist).unwrap(), expected);
    }
    let uniform = ScoreDistribution::new(space.clone(), vec![0.25; 4]).unwrap();
    assert_eq!(expected_score(&uniform).unwrap(), 1.5);

    // 10,000 random valid distributions vs the direct dot product.
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..10_000 {
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.001..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let direct: f64 = probs[0] * weights[0]
            + probs[1] * weights[1]
            + probs[2] * weights[2]
            + probs[3] * weights[3];
        let dist = ScoreDistribution::new(space.clone(), probs).unwrap();
        let got = expected_score(&dist).unwrap();
        assert!((got - direct).abs() <= 1e-12, "got {got}, direct {direct}");
    }
    assert_within_budget(start, Duration::from_secs(1), "expected-score check");
}

/// Exhaustive max-DCG oracle: enumerate every distinct gain ordering up to
/// depth k (orderings beyond the cutoff cannot change DCG@k).
fn exhaustive_max_dcg(gains: &[f64], k: usize) -> f64 {
    fn descend(
        counts: &mut HashMap<u64, usize>,
        values: &[f64],
        depth: usize,
        k: usize,
        acc: f64,
        best: &mut f64,
    ) {
        if depth == k || counts.values().all(|&c| c == 0) {
            if acc > *best {
                *best = acc;
            }
            return;
        }
        for &value in values {
            let key = value.to_bits();
            if counts[&key] == 0 {
                continue;
            }
            *counts.get_mut(&key).unwrap() -= 1;
            let gain = value / ((depth + 2) as f64).log2();
            descend(counts, values, depth + 1, k, acc + gain, best);
            *counts.get_mut(&key).unwrap() += 1;
        }
    }
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for &g in gains {
        *counts.entry(g.to_bits()).or_insert(0) += 1;
    }
    let values: Vec<f64> = counts.keys().map(|&bits| f64::from_bits(bits)).collect();
    let mut best = f64::NEG_INFINITY;
    descend(&mut counts, &values, 0, k.min(gains.len()), 0.0, &mut best);
    best
}

fn oracle_ndcg(ranked_gains: &[f64], k: usize) -> Option<f64> {
    if ranked_gains.iter().all(|&g| g == 0.0) {
        return None;
    }
    let dcg: f64 = ranked_gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum();
    Some(dcg / exhaustive_max_dcg(ranked_gains, k))
}

/// Criterion 2: NDCG equals an independent exhaustive implementation.
#[test]
fn criterion_02_ndcg_oracle_equivalence() {
    let start = Instant::now();

    // Oracle scorer: ranked order equals ideal order -> 1.0.
    let ideal = RankedJudgedList::new(
        "q",
        (0..4)
            .map(|i| RankedEntry {
                product_id: format!("p{i}"),
                score: 4.0 - i as f64,
                gain: (3 - i) as f64,
            })
            .collect(),
    );
    for k in [5, 10, 20] {
        assert_eq!(ndcg_at_k(&ideal, k).unwrap(), Some(1.0));
    }

    // Derived case: ranked gains [0, 2, 3] at k=3 -> 0.6480 +/- 1e-4.
    let derived = RankedJudgedList::new(
        "q",
        [(0.0, 0), (2.0, 1), (3.0, 2)]
            .iter()
            .map(|&(gain, i)| RankedEntry {
                product_id: format!("p{i}"),
                score: -(i as f64),
                gain,
            })
            .collect(),
    );
    let got = ndcg_at_k(&derived, 3).unwrap().unwrap();
    assert!((got - 0.6480).abs() <= 1e-4, "derived case: {got}");

    // 1,000 random judged lists vs the exhaustive oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..1_000 {
        let n = rng.random_range(1..=8);
        let entries: Vec<RankedEntry> = (0..n)
            .map(|i| RankedEntry {
                product_id: format!("p{i}"),
                score: rng.random_range(-5.0..5.0),
                gain: rng.random_range(0..4) as f64,
            })
            .collect();
        let list = RankedJudgedList::new("q", entries);
        let ranked_gains = list.ranked_gains();
        for k in [5usize, 10, 20] {
            let got = ndcg_at_k(&list, k).unwrap();
            let want = oracle_ndcg(&ranked_gains, k);
            match (got, want) {
                (None, None) => {}
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() <= 1e-9, "k={k}: got {a}, oracle {b}")
                }
                other => panic!("skip-marker disagreement: {other:?}"),
            }
        }
    }
    assert_within_budget(start, Duration::from_secs(5), "ndcg oracle check");
}

/// Criterion 3: random-baseline mean NDCG matches the exact permutation average.
#[test]
fn criterion_03_random_baseline_expectation() {
    let start = Instant::now();
    let gains = [2.0, 1.0, 0.0];
    let products: Vec<ProductDoc> = (0..3)
        .map(|i| ProductDoc {
            product_id: format!("p{i}"),
            title: format!("product {i}"),
            description: String::new(),
            extras: IndexMap::new(),
        })
        .collect();

    // Exact expectation over all 6 orderings of the three gains.
    let orderings = [
        [0usize, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let exact: f64 = orderings
        .iter()
        .map(|perm| {
            let ranked: Vec<f64> = perm.iter().map(|&i| gains[i]).collect();
            oracle_ndcg(&ranked, 3).unwrap()
        })
        .sum::<f64>()
        / 6.0;

    let mut total = 0.0;
    for seed in 0..1_000u64 {
        let scorer = RandomScorer::new(seed);
        let entries: Vec<RankedEntry> = products
            .iter()
            .zip(gains)
            .map(|(p, gain)| RankedEntry {
                product_id: p.product_id.clone(),
                score: scorer.score_scalar("fixed query", p).unwrap(),
                gain,
            })
            .collect();
        let list = RankedJudgedList::new("q", entries);
        total += ndcg_at_k(&list, 3).unwrap().unwrap();
    }
    let mean = total / 1_000.0;
    assert!(
        (mean - exact).abs() <= 0.02,
        "mean {mean} vs exact {exact} (diff {})",
        (mean - exact).abs()
    );
    assert_within_budget(start, Duration::from_secs(1), "random baseline check");
}

/// Criterion 4: dedup retains exactly the max-logprob record per group, is
/// idempotent, and its report matches a brute-force grouper.
#[test]
fn criterion_04_dedup_contract() {
    let start = Instant::now();
    let space = esci();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let query_variants = [
        "red chair",
        "Red Chair",
        "  red   chair ",
        "oak desk",
        "oak  desk",
        "lamp",
        "reading lamp",
        "sofa",
        "velvet sofa",
        "bed frame",
    ];
    let records: Vec<GeneratedQuery> = (0..10_000)
        .map(|_| {
            let rank = rng.random_range(0..4);
            let label = space.label_at(rank).unwrap();
            GeneratedQuery {
                product_id: format!("p{:03}", rng.random_range(0..200)),
                desired_label: label.clone(),
                final_label: label,
                query_text: query_variants.choose(&mut rng).unwrap().to_string(),
                logprob: -(rng.random_range(0..1000) as f64) / 1000.0,
            }
        })
        .collect();

    let (filtered, report) = dedup_filter(records.clone(), &space);

    // Brute-force grouper.
    let mut groups: HashMap<(String, String), Vec<&GeneratedQuery>> = HashMap::new();
    for r in &records {
        groups
            .entry((r.product_id.clone(), normalize_query(&r.query_text)))
            .or_default()
            .push(r);
    }
    assert_eq!(filtered.records.len(), groups.len());
    let mut survivors: HashMap<(String, String), &GeneratedQuery> = HashMap::new();
    for r in &filtered.records {
        let key = (r.product_id.clone(), normalize_query(&r.query_text));
        assert!(
            survivors.insert(key.clone(), r).is_none(),
            "two survivors in one group"
        );
        let max_logprob = groups[&key]
            .iter()
            .map(|m| m.logprob)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.logprob, max_logprob, "survivor is not max-logprob");
    }

    // Report's "at least 1 duplicate" equals the brute-force product count.
    let brute_dup_products: HashSet<&str> = groups
        .iter()
        .filter(|(_, members)| members.len() > 1)
        .map(|((pid, _), _)| pid.as_str())
        .collect();
    assert_eq!(
        report.products_with_duplicates,
        brute_dup_products.len() as u64
    );
    let stats = qgen_core::metrics::duplicate_stats(&report, &space);
    assert_eq!(stats.rows[0].1, brute_dup_products.len() as u64);

    // Idempotence.
    let (again, second_report) = dedup_filter(filtered.records.clone(), &space);
    assert_eq!(again.records, filtered.records);
    assert_eq!(second_report.products_with_duplicates, 0);

    assert_within_budget(start, Duration::from_secs(5), "dedup contract check");
}

fn corpus_of_n(n: usize) -> Corpus {
    let products = (0..n)
        .map(|i| ProductDoc {
            product_id: format!("p{i:06}"),
            title: format!("product {i}"),
            description: String::new(),
            extras: IndexMap::new(),
        })
        .collect();
    Corpus::new(products, Vec::new(), "esci")
}

/// Criterion 5: plan counts for the 42,994-product corpus.
#[test]
fn criterion_05_plan_counts() {
    let start = Instant::now();
    let corpus = corpus_of_n(42_994);
    let esci_plan = plan_generation(&corpus, &esci(), GenerationMode::LabelCond, 1).unwrap();
    assert_eq!(esci_plan.len(), 171_976);
    let binary = LabelSpace::builtin("msmarco-binary").unwrap();
    let binary_plan = plan_generation(&corpus, &binary, GenerationMode::LabelCond, 1).unwrap();
    assert_eq!(binary_plan.len(), 85_988);
    assert_within_budget(start, Duration::from_secs(5), "plan count check");
}

/// Criterion 6: split — disjoint, exhaustive, nearest product boundary to 0.9.
#[test]
fn criterion_06_split_contract() {
    let start = Instant::now();
    let space = esci();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for trial in 0..200 {
        let products = rng.random_range(1..60);
        let records: Vec<GeneratedQuery> = (0..products)
            .flat_map(|p| {
                let label = space.label_at(0).unwrap();
                (0..rng.random_range(1..4)).map(move |c| GeneratedQuery {
                    product_id: format!("p{p:03}"),
                    desired_label: label.clone(),
                    final_label: label.clone(),
                    query_text: format!("query {p} {c}"),
                    logprob: -0.1,
                })
            })
            .collect();
        let dataset = SyntheticDataset::new(records, space.clone());
        let seed = rng.random_range(0..10_000);
        let (train, val, report) = split_train_val(&dataset, 0.9, seed).unwrap();

        let train_products: HashSet<&str> = train
            .records
            .iter()
            .map(|r| r.product_id.as_str())
            .collect();
        let val_products: HashSet<&str> =
            val.records.iter().map(|r| r.product_id.as_str()).collect();
        assert!(train_products.is_disjoint(&val_products), "trial {trial}");
        assert_eq!(
            train.records.len() + val.records.len(),
            dataset.records.len(),
            "trial {trial}"
        );
        // Nearest product boundary to 0.9.
        let expected_train = ((0.9 * products as f64).round() as usize).min(products);
        assert_eq!(
            report.train_products as usize, expected_train,
            "trial {trial}"
        );
        assert_eq!(
            report.train_products + report.val_products,
            products as u64,
            "trial {trial}"
        );
    }
    assert_within_budget(start, Duration::from_secs(5), "split contract check");
}

/// Criterion 7: balance — equal per-label counts at the pre-balance maximum;
/// removing resamples recovers the input multiset.
#[test]
fn criterion_07_balance_contract() {
    let start = Instant::now();
    let space = esci();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for trial in 0..200 {
        let counts: Vec<usize> = (0..4).map(|_| rng.random_range(1..25)).collect();
        let mut records = Vec::new();
        for (rank, &count) in counts.iter().enumerate() {
            let label = space.label_at(rank).unwrap();
            for i in 0..count {
                records.push(GeneratedQuery {
                    product_id: format!("p{rank}_{i}"),
                    desired_label: label.clone(),
                    final_label: label.clone(),
                    query_text: format!("query {rank} {i}"),
                    logprob: -0.1,
                });
            }
        }
        let balanced = upsample_balance(&records, &space, rng.random_range(0..10_000)).unwrap();
        let max = *counts.iter().max().unwrap();
        for rank in 0..4 {
            let n = balanced
                .iter()
                .filter(|r| r.final_label.rank() == Some(rank))
                .count();
            assert_eq!(n, max, "trial {trial} rank {rank}");
        }
        // Originals first, so dropping the appended resamples recovers the
        // input multiset exactly.
        assert_eq!(&balanced[..records.len()], &records[..], "trial {trial}");
        for extra in &balanced[records.len()..] {
            assert!(
                records.contains(extra),
                "trial {trial}: resample not from input"
            );
        }
    }
    assert_within_budget(start, Duration::from_secs(5), "balance contract check");
}

/// Independent brute-force BM25: recompute df/tf/lengths from the raw
/// docs and rank all matching docs, mirroring the scoring definition.
fn brute_force_bm25(
    docs: &[(String, String)],
    query: &str,
    k: usize,
    k1: f64,
    b: f64,
) -> Vec<(String, f64)> {
    let tokenized: Vec<(String, Vec<String>)> = docs
        .iter()
        .map(|(id, text)| (id.clone(), tokenize(text)))
        .collect();
    let n = tokenized.len() as f64;
    let avg = tokenized.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let query_tokens = tokenize(query);
    let mut ranked: Vec<(String, f64)> = tokenized
        .iter()
        .map(|(id, tokens)| {
            let len = tokens.len() as f64;
            let mut score = 0.0;
            for term in &query_tokens {
                let tf = tokens.iter().filter(|t| *t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = tokenized
                    .iter()
                    .filter(|(_, other)| other.contains(term))
                    .count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln().max(0.0);
                let norm = 1.0 - b + b * len / avg;
                score += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
            (id.clone(), score)
        })
        .filter(|(_, score)| *score > 0.0)
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.truncate(k);
    ranked
}

/// Criterion 8: BM25 equals exhaustive brute-force ranking, including tie order.
#[test]
fn criterion_08_bm25_oracle_equivalence() {
    let start = Instant::now();

    // Hand-derived 3-doc case: lengths {3,3,3}, query terms with df=1 and
    // tf=1 each; per-term tf part is exactly 1, so score = 2*idf.
    let corpus = Corpus::new(
        vec![
            ProductDoc {
                product_id: "p1".into(),
                title: "red chair seat".into(),
                description: String::new(),
                extras: IndexMap::new(),
            },
            ProductDoc {
                product_id: "p2".into(),
                title: "blue table lamp".into(),
                description: String::new(),
                extras: IndexMap::new(),
            },
            ProductDoc {
                product_id: "p3".into(),
                title: "green sofa cushion".into(),
                description: String::new(),
                extras: IndexMap::new(),
            },
        ],
        Vec::new(),
        "esci",
    );
    let index = build_index(&corpus, &["title".to_string()], Bm25Params::default()).unwrap();
    let hand_derived = 2.0 * (1.0f64 + (3.0 - 1.0 + 0.5) / (1.0 + 0.5)).ln();
    let got = index.score("red chair", "p1").unwrap();
    assert!(
        (got - hand_derived).abs() <= 1e-9,
        "got {got}, hand {hand_derived}"
    );

    // 100 random corpora of up to 200 docs vs the brute-force oracle.
    let vocabulary = [
        "red", "blue", "green", "oak", "pine", "walnut", "chair", "table", "lamp", "sofa", "bed",
        "desk", "frame", "cushion", "seat", "kitchen", "office", "garden", "steel", "wood",
        "velvet", "linen", "marble", "glass", "modern", "classic", "small", "large", "folding",
        "storage",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for trial in 0..100 {
        let doc_count = rng.random_range(1..=200);
        let docs: Vec<(String, String)> = (0..doc_count)
            .map(|i| {
                let words: Vec<&str> = (0..rng.random_range(1..9))
                    .map(|_| *vocabulary.choose(&mut rng).unwrap())
                    .collect();
                (format!("d{i:03}"), words.join(" "))
            })
            .collect();
        let products: Vec<ProductDoc> = docs
            .iter()
            .map(|(id, text)| ProductDoc {
                product_id: id.clone(),
                title: text.clone(),
                description: String::new(),
                extras: IndexMap::new(),
            })
            .collect();
        let corpus = Corpus::new(products, Vec::new(), "esci");
        let index = build_index(&corpus, &["title".to_string()], Bm25Params::default()).unwrap();

        for _ in 0..3 {
            let query: Vec<&str> = (0..rng.random_range(1..5))
                .map(|_| *vocabulary.choose(&mut rng).unwrap())
                .collect();
            let query = query.join(" ");
            for k in [1usize, 5, 35] {
                let got = index.retrieve_topk(&query, k, None);
                let want = brute_force_bm25(&docs, &query, k, 1.2, 0.75);
                let got_ids: Vec<&str> = got.iter().map(|(id, _)| id.as_str()).collect();
                let want_ids: Vec<&str> = want.iter().map(|(id, _)| id.as_str()).collect();
                assert_eq!(got_ids, want_ids, "trial {trial} k={k} query {query:?}");
                for (a, b) in got.iter().zip(&want) {
                    assert!(
                        (a.1 - b.1).abs() <= 1e-9,
                        "trial {trial}: score {} vs oracle {}",
                        a.1,
                        b.1
                    );
                }
            }
        }
    }

    // Hard negatives: exactly 35 when the corpus allows.
    let big: Vec<ProductDoc> = (0..40)
        .map(|i| ProductDoc {
            product_id: format!("p{i:02}"),
            title: format!("red chair variant {i}"),
            description: String::new(),
            extras: IndexMap::new(),
        })
        .collect();
    let corpus = Corpus::new(big, Vec::new(), "esci");
    let index = build_index(&corpus, &["title".to_string()], Bm25Params::default()).unwrap();
    let space = esci();
    let dataset = SyntheticDataset::new(
        vec![GeneratedQuery {
            product_id: "p00".into(),
            desired_label: space.top_label().unwrap(),
            final_label: space.top_label().unwrap(),
            query_text: "red chair".into(),
            logprob: -0.1,
        }],
        space,
    );
    let (sets, _) = mine_hard_negatives(&index, &dataset, 35).unwrap();
    assert_eq!(sets[0].negatives.len(), 35);

    assert_within_budget(start, Duration::from_secs(30), "bm25 oracle check");
}

const E2E_LABELS: [&str; 4] = ["E", "S", "C", "I"];

fn write_e2e_corpus(path: &Path, reverse: bool) {
    let mut rows: Vec<String> = (0..1_000u64)
        .map(|i| {
            let h = qgen_core::hashing::stable_hash64(&[&i.to_le_bytes()]);
            let label = E2E_LABELS[(h % 4) as usize];
            format!(
                "p{i:04},product number {i} variant {h_short},well made item {i} for the home,query about item {i},{label}",
                h_short = h % 97
            )
        })
        .collect();
    if reverse {
        rows.reverse();
    }
    let mut text = String::from("product_id,title,description,query,label\n");
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn snapshot_dir(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut files = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            files.insert(
                entry.file_name().to_string_lossy().to_string(),
                std::fs::read(entry.path()).unwrap(),
            );
        }
    }
    files
}

fn e2e_config(input: &Path, out_dir: &Path) -> qgen_cli::config::PipelineConfig {
    let mut cfg = preset("labelcond-finetune").unwrap();
    cfg.corpus.inputs.push(TableInput {
        path: input.to_path_buf(),
        format: TableFormat::Csv,
        schema: [
            ("product_id", "product_id"),
            ("title", "title"),
            ("description", "description"),
            ("query", "query"),
            ("label", "label"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect(),
        dataset_tag: Some("e2e".to_string()),
    });
    cfg.corpus.label_space = LabelSpaceRef::Builtin("esci".to_string());
    cfg.relabel.enabled = true;
    cfg.stages = [
        "ingest", "gen", "filter", "relabel", "split", "eval", "report",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cfg.out_dir = out_dir.to_path_buf();
    cfg.seed = 7;
    // Offline backends only.
    assert_eq!(cfg.generation.backend, "mock-template");
    assert_eq!(cfg.relabel.scorer, "mock-overlap");
    assert_eq!(cfg.eval.scorer, "mock-overlap");
    cfg
}

/// Criterion 9: full mock pipeline — byte-identical artifacts across reruns and
/// across input row reorderings, no network access.
#[test]
fn criterion_09_end_to_end_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("corpus.csv");
    write_e2e_corpus(&input, false);

    // Run 1 and run 2: identical config, identical out_dir, wiped between.
    let out = dir.path().join("out");
    let cfg = e2e_config(&input, &out);
    run_all(&cfg).unwrap();
    let first = snapshot_dir(&out);
    std::fs::remove_dir_all(&out).unwrap();
    run_all(&cfg).unwrap();
    let second = snapshot_dir(&out);
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        second.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &first {
        assert_eq!(bytes, &second[name], "rerun artifact {name} differs");
    }

    // Run 3: the same rows in reverse order. Data artifacts must be
    // byte-identical; manifests differ by design (they hash the raw
    // reordered input file).
    let reordered = dir.path().join("reordered.csv");
    write_e2e_corpus(&reordered, true);
    let out_reordered = dir.path().join("out_reordered");
    let cfg_reordered = e2e_config(&reordered, &out_reordered);
    run_all(&cfg_reordered).unwrap();
    let third = snapshot_dir(&out_reordered);
    for (name, bytes) in &first {
        if name.starts_with("manifest_") {
            continue;
        }
        assert_eq!(
            bytes,
            third
                .get(name)
                .unwrap_or_else(|| panic!("{name} missing in reordered run")),
            "reordered-input artifact {name} differs"
        );
    }

    // Sanity on the artifacts themselves.
    assert!(first.contains_key("generated.jsonl"));
    assert!(first.contains_key("eval.json"));
    assert!(first.contains_key("report.txt"));
    let generated = String::from_utf8(first["generated.jsonl"].clone()).unwrap();
    assert_eq!(generated.lines().count(), 4_000);

    assert_within_budget(
        start,
        Duration::from_secs(120),
        "end-to-end determinism check",
    );
}

struct EchoScorer {
    space: LabelSpace,
    by_key: HashMap<(String, String), usize>,
}

impl DistributionScorer for EchoScorer {
    fn space(&self) -> &LabelSpace {
        &self.space
    }
    fn score(
        &self,
        query_text: &str,
        product: &ProductDoc,
    ) -> Result<ScoreDistribution, BackendError> {
        let rank = self.by_key[&(product.product_id.clone(), query_text.to_string())];
        let mut probs = vec![0.0; 4];
        probs[rank] = 1.0;
        ScoreDistribution::new(self.space.clone(), probs)
    }
}

struct LeastScorer {
    space: LabelSpace,
}

impl DistributionScorer for LeastScorer {
    fn space(&self) -> &LabelSpace {
        &self.space
    }
    fn score(&self, _q: &str, _p: &ProductDoc) -> Result<ScoreDistribution, BackendError> {
        ScoreDistribution::new(self.space.clone(), vec![0.0, 0.0, 0.0, 1.0])
    }
}

/// Criterion 10: round-trip relabeling — identity -> 0, constant-least on uniform
/// 4-label data -> 0.75 exactly, mock/mock pinned as a regression value.
#[test]
fn criterion_10_roundtrip_relabeling() {
    let start = Instant::now();
    let space = esci();

    // Uniformly planned 4-label data over a synthetic corpus.
    let corpus = corpus_of_n(50);
    let records: Vec<GeneratedQuery> = (0..50)
        .flat_map(|i| {
            (0..4).map(move |rank| GeneratedQuery {
                product_id: format!("p{i:06}"),
                desired_label: esci().label_at(rank).unwrap(),
                final_label: esci().label_at(rank).unwrap(),
                query_text: format!("query {i} {rank}"),
                logprob: -0.1,
            })
        })
        .collect();
    let dataset = SyntheticDataset::new(records, space.clone());

    // Identity scorer: mismatch rate exactly 0.
    let echo = EchoScorer {
        space: space.clone(),
        by_key: dataset
            .records
            .iter()
            .map(|r| {
                (
                    (r.product_id.clone(), r.query_text.clone()),
                    r.desired_label.rank().unwrap(),
                )
            })
            .collect(),
    };
    let (_, report) = roundtrip_relabel(dataset.clone(), &corpus, &echo).unwrap();
    assert_eq!(report.mismatch_rate, 0.0);
    assert_eq!(report.mismatched, 0);

    // Constant-least scorer on uniform labels: exactly 0.75.
    let least = LeastScorer {
        space: space.clone(),
    };
    let (_, report) = roundtrip_relabel(dataset, &corpus, &least).unwrap();
    assert_eq!(report.mismatch_rate, 0.75);

    // Mock-template data relabeled by the mock-overlap scorer: frozen
    // regression values (observed once from the deterministic mocks).
    let titles = [
        "solid wood platform bed",
        "ergonomic mesh office chair",
        "stainless steel faucet",
        "mid century walnut dresser",
        "velvet loveseat sofa",
        "oak writing desk",
        "marble coffee table",
        "linen curtain panel",
        "adjustable standing desk",
        "rattan accent chair",
    ];
    let products: Vec<ProductDoc> = titles
        .iter()
        .enumerate()
        .map(|(i, title)| ProductDoc {
            product_id: format!("m{i:02}"),
            title: title.to_string(),
            description: format!("a fine {title} for the home"),
            extras: IndexMap::new(),
        })
        .collect();
    let mock_corpus = Corpus::new(products, Vec::new(), "esci");
    let plan = plan_generation(&mock_corpus, &space, GenerationMode::LabelCond, 1).unwrap();
    let backend = MockTemplateGenerator::new(7, space.clone()).unwrap();
    let (records, _) = run_generation(
        &mock_corpus,
        &plan,
        GenerationMode::LabelCond,
        &InputStyle::Finetune,
        &backend,
        &TemplateConfig::default(),
        150,
        4,
    )
    .unwrap();
    let (filtered, _) = dedup_filter(records, &space);
    let scorer = MockOverlapScorer::new(space.clone()).unwrap();
    let (_, report) = roundtrip_relabel(filtered, &mock_corpus, &scorer).unwrap();
    assert!((0.0..=1.0).contains(&report.mismatch_rate));
    assert_eq!(
        (report.scored, report.mismatched),
        PINNED_MOCK_RELABEL,
        "mock relabel regression moved: rate {}",
        report.mismatch_rate
    );

    assert_within_budget(start, Duration::from_secs(30), "roundtrip relabel check");
}

/// Observed once from the deterministic mocks (seed 7, the 10 titles
/// above) and frozen: (records scored, records whose label flipped).
/// 40 planned records collapse to 31 after dedup; 17 of those 31 flip,
/// a 54.8% mismatch rate.
const PINNED_MOCK_RELABEL: (u64, u64) = (31, 17);
