//! Deterministic offline backends.
//!
//! The mocks are pure functions of (input bytes, seed), so every
//! downstream pipeline stage can run and be regression-tested without a
//! serving stack.

use crate::corpus::ProductDoc;
use crate::hashing::stable_hash64;
use crate::labels::LabelSpace;
use crate::retrieval::tokenize;

use super::{
    BackendError, DistributionScorer, GenRequest, GenResponse, QueryGenerator, ScalarScorer,
    ScoreDistribution,
};

/// Echoes salient title tokens, degraded per label step.
///
/// The top label keeps the four most salient title tokens verbatim; each
/// step down the label order applies one seeded edit — drop the least
/// salient remaining token, replace it with a noise token, or leave the
/// query unchanged. The unchanged branch deliberately lets adjacent
/// labels collide on the same query so the duplicate-filtration path has
/// realistic work to do.
pub struct MockTemplateGenerator {
    seed: u64,
    space: LabelSpace,
}

/// Tokens kept for a top-label query.
const TOP_LABEL_TOKENS: usize = 4;

impl MockTemplateGenerator {
    pub fn new(seed: u64, space: LabelSpace) -> Result<Self, BackendError> {
        if !space.is_discrete() {
            return Err(BackendError::InvalidRequest(format!(
                "mock-template generator needs a discrete label space, got {:?}",
                space.name()
            )));
        }
        Ok(MockTemplateGenerator { seed, space })
    }

    /// Desired-label rank parsed from the last `Label:` marker, or the top
    /// label when the input is a vanilla (unlabeled) scaffold.
    fn desired_rank(&self, input: &str) -> usize {
        let Some(pos) = input.rfind("Label: ") else {
            return 0;
        };
        let rest = &input[pos + "Label: ".len()..];
        let name = rest.split_whitespace().next().unwrap_or("");
        self.space
            .parse(name)
            .ok()
            .and_then(|l| l.rank())
            .unwrap_or(0)
    }

    /// Title of the generation target: the text after the last `Product:`
    /// marker, up to the next field marker (prompts end with ` Query:`).
    fn target_title(input: &str) -> &str {
        let start = match input.rfind("Product: ") {
            Some(pos) => pos + "Product: ".len(),
            None => 0,
        };
        let tail = &input[start..];
        let mut end = tail.len();
        for marker in [" Description: ", " Query:"] {
            if let Some(pos) = tail.find(marker) {
                end = end.min(pos);
            }
        }
        &tail[..end]
    }
}

/// Most salient first: longer tokens win, earlier position breaks ties.
fn salience_order(tokens: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(tokens[i].chars().count()), i));
    order
}

impl QueryGenerator for MockTemplateGenerator {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let input = req.input_text.as_str();
        let rank = self.desired_rank(input);
        let tokens = tokenize(Self::target_title(input));

        // Selected token indices, kept in title order.
        let mut selected: Vec<usize> = salience_order(&tokens)
            .into_iter()
            .take(TOP_LABEL_TOKENS)
            .collect();
        selected.sort_unstable();
        let mut words: Vec<String> = selected.iter().map(|&i| tokens[i].clone()).collect();

        for step in 1..=rank {
            let h = stable_hash64(&[
                &self.seed.to_le_bytes(),
                input.as_bytes(),
                &(step as u64).to_le_bytes(),
            ]);
            if words.is_empty() {
                break;
            }
            // The least salient selected word sits last in salience order.
            let victim = salience_order(&words).last().copied().unwrap_or(0);
            match h % 3 {
                0 if words.len() > 1 => {
                    words.remove(victim);
                }
                1 => words[victim] = format!("x{:03x}", h % 4096),
                _ => {}
            }
        }

        let mut query = words.join(" ");
        if query.is_empty() {
            query = format!("x{:03x}", stable_hash64(&[input.as_bytes()]) % 4096);
        }
        if query.chars().count() > req.max_output_chars {
            query = query.chars().take(req.max_output_chars).collect();
            query = query.trim_end().to_string();
            if query.is_empty() {
                query = "x".to_string();
            }
        }

        let logprob = -((stable_hash64(&[&self.seed.to_le_bytes(), input.as_bytes()]) % 1000)
            as f64)
            / 1000.0;
        GenResponse {
            request_id: req.request_id.clone(),
            query_text: query,
            logprob,
        }
        .validate()
    }
}

/// Distribution from the token overlap between query and title+description.
///
/// Each label gets a target overlap evenly spaced from 1.0 (top label)
/// down to 0.0 (least label); probabilities are a softmax over the
/// negated distance between the observed overlap coefficient and each
/// target, so mass concentrates on the label whose grade matches the
/// overlap.
pub struct MockOverlapScorer {
    space: LabelSpace,
}

/// Softmax sharpness.
const OVERLAP_ALPHA: f64 = 8.0;

impl MockOverlapScorer {
    pub fn new(space: LabelSpace) -> Result<Self, BackendError> {
        if !space.is_discrete() {
            return Err(BackendError::InvalidRequest(format!(
                "mock-overlap scorer needs a discrete label space, got {:?}",
                space.name()
            )));
        }
        Ok(MockOverlapScorer { space })
    }
}

/// |A ∩ B| / min(|A|, |B|) over token sets; 0 when either side is empty.
fn overlap_coefficient(query: &str, doc_text: &str) -> f64 {
    let q: std::collections::HashSet<String> = tokenize(query).into_iter().collect();
    let d: std::collections::HashSet<String> = tokenize(doc_text).into_iter().collect();
    if q.is_empty() || d.is_empty() {
        return 0.0;
    }
    let common = q.iter().filter(|t| d.contains(*t)).count();
    common as f64 / q.len().min(d.len()) as f64
}

impl DistributionScorer for MockOverlapScorer {
    fn space(&self) -> &LabelSpace {
        &self.space
    }

    fn score(
        &self,
        query_text: &str,
        product: &ProductDoc,
    ) -> Result<ScoreDistribution, BackendError> {
        let doc_text = format!("{} {}", product.title, product.description);
        let overlap = overlap_coefficient(query_text, &doc_text);
        let n = self.space.label_count().expect("discrete");
        let logits: Vec<f64> = (0..n)
            .map(|rank| {
                let target = if n == 1 {
                    1.0
                } else {
                    (n - 1 - rank) as f64 / (n - 1) as f64
                };
                -OVERLAP_ALPHA * (overlap - target).abs()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        ScoreDistribution::new(self.space.clone(), exps.iter().map(|e| e / sum).collect())
    }
}

/// Seeded uniform scores in [0, 1): the paper's random-ranking baseline.
pub struct RandomScorer {
    seed: u64,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        RandomScorer { seed }
    }
}

impl ScalarScorer for RandomScorer {
    fn score_scalar(&self, query_text: &str, product: &ProductDoc) -> Result<f64, BackendError> {
        let h = stable_hash64(&[
            &self.seed.to_le_bytes(),
            query_text.as_bytes(),
            product.product_id.as_bytes(),
        ]);
        Ok(h as f64 / (u64::MAX as f64 + 1.0))
    }
}
