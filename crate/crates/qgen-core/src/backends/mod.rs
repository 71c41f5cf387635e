//! Uniform interface to generator and scorer backends.
//!
//! A generator turns a formatted input text into a query plus a
//! log-probability; a scorer turns a (query, product) pair into either a
//! label probability distribution or a scalar relevance score. Backends
//! are HTTP services speaking a small JSON protocol (see [`http`]) or the
//! deterministic offline mocks in [`mock`].

pub mod http;
pub mod mock;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use thiserror::Error;

use crate::corpus::ProductDoc;
use crate::labels::{GradedLabel, LabelSpace};
use crate::templates::TemplateError;

/// Tolerance on Σ probs = 1 for scorer distributions.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s) to {url}: {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("backend at {url} returned HTTP {status} after {attempts} attempt(s)")]
    Status {
        url: String,
        status: u16,
        attempts: u32,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid score distribution: {0}")]
    InvalidDistribution(String),
    #[error("generation output unusable: {0}")]
    GenerationParse(#[from] TemplateError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// One generation request.
#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub request_id: String,
    pub input_text: String,
    pub max_output_chars: usize,
}

impl GenRequest {
    pub fn new(
        request_id: impl Into<String>,
        input_text: impl Into<String>,
        max_output_chars: usize,
    ) -> Result<Self, BackendError> {
        let request_id = request_id.into();
        let input_text = input_text.into();
        if input_text.is_empty() {
            return Err(BackendError::InvalidRequest("empty input_text".into()));
        }
        if max_output_chars == 0 {
            return Err(BackendError::InvalidRequest(
                "max_output_chars must be positive".into(),
            ));
        }
        Ok(GenRequest {
            request_id,
            input_text,
            max_output_chars,
        })
    }
}

/// One generation response; `query_text` is already parsed (no `Query:` marker).
#[derive(Debug, Clone, PartialEq)]
pub struct GenResponse {
    pub request_id: String,
    pub query_text: String,
    pub logprob: f64,
}

impl GenResponse {
    fn validate(self) -> Result<Self, BackendError> {
        if self.query_text.is_empty() {
            return Err(BackendError::Protocol("empty query in response".into()));
        }
        if !self.logprob.is_finite() || self.logprob > 0.0 {
            return Err(BackendError::Protocol(format!(
                "logprob must be finite and <= 0, got {}",
                self.logprob
            )));
        }
        Ok(self)
    }
}

/// A validated probability distribution over a discrete label space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    space: LabelSpace,
    probs: Vec<f64>,
}

impl ScoreDistribution {
    /// Probabilities indexed by label rank (most relevant first).
    pub fn new(space: LabelSpace, probs: Vec<f64>) -> Result<Self, BackendError> {
        let labels = space.labels().ok_or_else(|| {
            BackendError::InvalidDistribution(format!(
                "space {:?} is continuous; distributions need discrete labels",
                space.name()
            ))
        })?;
        if probs.len() != labels.len() {
            return Err(BackendError::InvalidDistribution(format!(
                "{} probabilities for {} labels",
                probs.len(),
                labels.len()
            )));
        }
        for (i, p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(p) {
                return Err(BackendError::InvalidDistribution(format!(
                    "probability for {:?} out of [0,1]: {p}",
                    labels[i]
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(BackendError::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ScoreDistribution { space, probs })
    }

    /// Build from a label-name -> probability map; every space label must
    /// be present and no extra keys are allowed.
    pub fn from_named(
        space: LabelSpace,
        named: &HashMap<String, f64>,
    ) -> Result<Self, BackendError> {
        let labels = space.labels().ok_or_else(|| {
            BackendError::InvalidDistribution("continuous space has no labels".into())
        })?;
        if named.len() != labels.len() {
            let unknown: Vec<&String> = named.keys().filter(|k| !labels.contains(k)).collect();
            return Err(BackendError::InvalidDistribution(format!(
                "expected {} labels, got {} (unknown: {unknown:?})",
                labels.len(),
                named.len()
            )));
        }
        let mut probs = Vec::with_capacity(labels.len());
        for label in labels {
            match named.get(label) {
                Some(p) => probs.push(*p),
                None => {
                    return Err(BackendError::InvalidDistribution(format!(
                        "missing probability for label {label:?}"
                    )))
                }
            }
        }
        Self::new(space, probs)
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// The argmax label; ties resolve toward the more relevant label.
    pub fn argmax_label(&self) -> GradedLabel {
        let mut best = 0;
        for (rank, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = rank;
            }
        }
        self.space.label_at(best).expect("rank within space")
    }
}

/// Produces a query and a log-probability for a formatted input text.
pub trait QueryGenerator: Send + Sync {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError>;
}

/// Produces a label probability distribution for a (query, product) pair.
pub trait DistributionScorer: Send + Sync {
    fn space(&self) -> &LabelSpace;
    fn score(
        &self,
        query_text: &str,
        product: &ProductDoc,
    ) -> Result<ScoreDistribution, BackendError>;
}

/// Produces a scalar relevance score (higher = more relevant).
pub trait ScalarScorer: Send + Sync {
    fn score_scalar(&self, query_text: &str, product: &ProductDoc) -> Result<f64, BackendError>;
}

/// Adapts a distribution scorer into a scalar one by taking the
/// expectation of the prediction probabilities under the label weights.
pub struct ExpectedScoreAdapter<S>(pub S);

impl<S: DistributionScorer> ScalarScorer for ExpectedScoreAdapter<S> {
    fn score_scalar(&self, query_text: &str, product: &ProductDoc) -> Result<f64, BackendError> {
        let dist = self.0.score(query_text, product)?;
        crate::metrics::expected_score(&dist)
            .map_err(|e| BackendError::InvalidDistribution(e.to_string()))
    }
}

/// Issue a batch of generation requests with at most `max_in_flight`
/// outstanding at once. Responses come back in request order regardless
/// of completion order; per-request failures are reported positionally.
pub fn generate_batch(
    backend: &dyn QueryGenerator,
    requests: &[GenRequest],
    max_in_flight: usize,
) -> Vec<Result<GenResponse, BackendError>> {
    assert!(max_in_flight >= 1, "max_in_flight must be >= 1");
    let workers = max_in_flight.min(requests.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<GenResponse, BackendError>)>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= requests.len() {
                    break;
                }
                let result = backend.generate(&requests[i]);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut results: Vec<Option<Result<GenResponse, BackendError>>> =
            (0..requests.len()).map(|_| None).collect();
        for (i, result) in rx {
            results[i] = Some(result);
        }
        results
            .into_iter()
            .map(|slot| slot.expect("every request produces a result"))
            .collect()
    })
}
