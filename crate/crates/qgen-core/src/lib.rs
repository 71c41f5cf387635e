//! Toolkit for label-conditioned synthetic query generation and graded
//! relevance evaluation.
//!
//! The crate is organized around the lifecycle of a query-generation
//! experiment:
//!
//! - [`corpus`] ingests product/judgment tables (CSV, TSV, JSONL) into an
//!   immutable [`corpus::Corpus`].
//! - [`labels`] defines ordered, weighted relevance label spaces (ESCI,
//!   MS-MARCO binary, WANDS, HomeDepot) and raw-label parsing.
//! - [`templates`] renders generation inputs (`Label: E Product: ...`),
//!   assembles few-shot prompts, and parses generator output.
//! - [`backends`] is the uniform interface to generator/scorer backends:
//!   an HTTP JSON wire protocol plus deterministic offline mocks.
//! - [`pipeline`] holds the data-shaping transforms: generation planning,
//!   duplicate filtration, round-trip relabeling, product-disjoint
//!   splitting, and label balancing.
//! - [`retrieval`] is an Okapi BM25 inverted index used to mine hard
//!   negatives for generated relevant queries.
//! - [`metrics`] computes expected relevance scores, graded NDCG@k, and
//!   the duplicate/label-distribution diagnostics.

pub mod backends;
pub mod corpus;
pub mod hashing;
pub mod labels;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod templates;
