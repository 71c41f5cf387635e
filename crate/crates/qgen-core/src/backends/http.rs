//! HTTP JSON wire protocol for generator, scorer, and retriever backends.
//!
//! All calls are `POST <endpoint>` with a JSON body. Field names are part
//! of the protocol:
//!
//! - generator request `{id, input_text, max_output_chars}`,
//!   response `{id, query, logprob}`
//! - scorer request `{id, query, title, description}`,
//!   response `{id, probs: {label: p}}` (distribution) or `{id, score}` (scalar)
//! - retriever request `{id, query, k, exclude}`, response `{id, product_ids}`
//!
//! Transport failures and 5xx responses are retried up to 3 attempts with
//! exponential backoff starting at 200 ms; other statuses fail immediately.
//! An optional bearer token is passed through as `Authorization: Bearer <t>`.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::ProductDoc;
use crate::labels::LabelSpace;
use crate::retrieval::{RetrievalError, Retriever};
use crate::templates::parse_query_output;

use super::{
    BackendError, DistributionScorer, GenRequest, GenResponse, QueryGenerator, ScalarScorer,
    ScoreDistribution,
};

pub const DEFAULT_ATTEMPTS: u32 = 3;
pub const DEFAULT_INITIAL_BACKOFF: Duration = Duration::from_millis(200);

/// Shared transport: endpoint, retries, optional bearer token.
#[derive(Clone)]
pub struct HttpTransport {
    endpoint: String,
    client: reqwest::blocking::Client,
    bearer_token: Option<String>,
    attempts: u32,
    initial_backoff: Duration,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpTransport {
            endpoint: endpoint.into(),
            client: reqwest::blocking::Client::new(),
            bearer_token: None,
            attempts: DEFAULT_ATTEMPTS,
            initial_backoff: DEFAULT_INITIAL_BACKOFF,
        }
    }

    pub fn with_bearer_token(mut self, token: impl Into<String>) -> Self {
        self.bearer_token = Some(token.into());
        self
    }

    /// Shrink or stretch the retry schedule (used by tests).
    pub fn with_retry_schedule(mut self, attempts: u32, initial_backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.initial_backoff = initial_backoff;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let mut backoff = self.initial_backoff;
        let mut last_error = None;
        for attempt in 1..=self.attempts {
            if attempt > 1 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            let mut request = self.client.post(&self.endpoint).json(body);
            if let Some(token) = &self.bearer_token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Err(e) => {
                    last_error = Some(BackendError::Transport {
                        url: self.endpoint.clone(),
                        attempts: attempt,
                        message: e.to_string(),
                    });
                }
                Ok(response) => {
                    let status = response.status();
                    if status.is_server_error() {
                        last_error = Some(BackendError::Status {
                            url: self.endpoint.clone(),
                            status: status.as_u16(),
                            attempts: attempt,
                        });
                        continue;
                    }
                    if !status.is_success() {
                        return Err(BackendError::Status {
                            url: self.endpoint.clone(),
                            status: status.as_u16(),
                            attempts: attempt,
                        });
                    }
                    return response
                        .json::<Resp>()
                        .map_err(|e| BackendError::Protocol(format!("bad response body: {e}")));
                }
            }
        }
        Err(last_error.expect("at least one attempt"))
    }
}

#[derive(Serialize)]
struct GeneratorRequestWire<'a> {
    id: &'a str,
    input_text: &'a str,
    max_output_chars: usize,
}

#[derive(Deserialize)]
struct GeneratorResponseWire {
    id: String,
    query: String,
    logprob: f64,
}

/// Generator backend speaking the wire protocol above.
pub struct HttpGenerator {
    transport: HttpTransport,
}

impl HttpGenerator {
    pub fn new(transport: HttpTransport) -> Self {
        HttpGenerator { transport }
    }
}

impl QueryGenerator for HttpGenerator {
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, BackendError> {
        let wire: GeneratorResponseWire = self.transport.post(&GeneratorRequestWire {
            id: &req.request_id,
            input_text: &req.input_text,
            max_output_chars: req.max_output_chars,
        })?;
        if wire.id != req.request_id {
            return Err(BackendError::Protocol(format!(
                "response id {:?} does not match request id {:?}",
                wire.id, req.request_id
            )));
        }
        let query_text = parse_query_output(&wire.query)?;
        GenResponse {
            request_id: wire.id,
            query_text,
            logprob: wire.logprob,
        }
        .validate()
    }
}

#[derive(Serialize)]
struct ScorerRequestWire<'a> {
    id: &'a str,
    query: &'a str,
    title: &'a str,
    description: &'a str,
}

#[derive(Deserialize)]
struct DistributionResponseWire {
    id: String,
    probs: HashMap<String, f64>,
}

#[derive(Deserialize)]
struct ScalarResponseWire {
    id: String,
    score: f64,
}

fn check_id(got: &str, expected: &str) -> Result<(), BackendError> {
    if got != expected {
        return Err(BackendError::Protocol(format!(
            "response id {got:?} does not match request id {expected:?}"
        )));
    }
    Ok(())
}

/// Distribution scorer backend; responses are validated against `space`.
pub struct HttpScorer {
    transport: HttpTransport,
    space: LabelSpace,
    counter: std::sync::atomic::AtomicU64,
}

impl HttpScorer {
    pub fn new(transport: HttpTransport, space: LabelSpace) -> Self {
        HttpScorer {
            transport,
            space,
            counter: std::sync::atomic::AtomicU64::new(0),
        }
    }

    fn next_id(&self) -> String {
        let n = self
            .counter
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        format!("s{n}")
    }
}

impl DistributionScorer for HttpScorer {
    fn space(&self) -> &LabelSpace {
        &self.space
    }

    fn score(
        &self,
        query_text: &str,
        product: &ProductDoc,
    ) -> Result<ScoreDistribution, BackendError> {
        let id = self.next_id();
        let wire: DistributionResponseWire = self.transport.post(&ScorerRequestWire {
            id: &id,
            query: query_text,
            title: &product.title,
            description: &product.description,
        })?;
        check_id(&wire.id, &id)?;
        ScoreDistribution::from_named(self.space.clone(), &wire.probs)
    }
}

/// Scalar scorer backend for ranking-style models.
pub struct HttpScalarScorer {
    transport: HttpTransport,
    counter: std::sync::atomic::AtomicU64,
}

impl HttpScalarScorer {
    pub fn new(transport: HttpTransport) -> Self {
        HttpScalarScorer {
            transport,
            counter: std::sync::atomic::AtomicU64::new(0),
        }
    }
}

impl ScalarScorer for HttpScalarScorer {
    fn score_scalar(&self, query_text: &str, product: &ProductDoc) -> Result<f64, BackendError> {
        let n = self
            .counter
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let id = format!("r{n}");
        let wire: ScalarResponseWire = self.transport.post(&ScorerRequestWire {
            id: &id,
            query: query_text,
            title: &product.title,
            description: &product.description,
        })?;
        check_id(&wire.id, &id)?;
        if !wire.score.is_finite() {
            return Err(BackendError::Protocol(format!(
                "non-finite score {}",
                wire.score
            )));
        }
        Ok(wire.score)
    }
}

#[derive(Serialize)]
struct RetrieverRequestWire<'a> {
    id: &'a str,
    query: &'a str,
    k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    exclude: Option<&'a str>,
}

#[derive(Deserialize)]
struct RetrieverResponseWire {
    id: String,
    product_ids: Vec<String>,
}

/// External retriever client, so a served dual-encoder can replace the
/// built-in BM25 index behind the same interface.
pub struct HttpRetriever {
    transport: HttpTransport,
    counter: std::sync::atomic::AtomicU64,
}

impl HttpRetriever {
    pub fn new(transport: HttpTransport) -> Self {
        HttpRetriever {
            transport,
            counter: std::sync::atomic::AtomicU64::new(0),
        }
    }
}

impl Retriever for HttpRetriever {
    fn retrieve(
        &self,
        query_text: &str,
        k: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<String>, RetrievalError> {
        let n = self
            .counter
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let id = format!("t{n}");
        let wire: RetrieverResponseWire = self
            .transport
            .post(&RetrieverRequestWire {
                id: &id,
                query: query_text,
                k,
                exclude,
            })
            .map_err(RetrievalError::Backend)?;
        check_id(&wire.id, &id).map_err(RetrievalError::Backend)?;
        Ok(wire.product_ids.into_iter().take(k).collect())
    }
}
