//! Okapi BM25 inverted index and hard-negative mining.
//!
//! Documents are the selected text fields of each product, tokenized by
//! Unicode-aware lowercasing and splitting on non-alphanumerics (no
//! stemming, no stopwords). Ordinals are assigned in sorted product-id
//! order so the index is invariant to corpus input order.
//!
//! Score of a document for a query:
//! `sum over query tokens of idf(t) * tf*(k1+1) / (tf + k1*(1-b+b*len/avglen))`
//! with `idf(t) = ln(1 + (N - df + 0.5)/(df + 0.5))`, clamped at 0.
//! Only documents matching at least one query term are retrieved.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::corpus::Corpus;
use crate::labels::LabelSpace;
use crate::pipeline::SyntheticDataset;

/// Magic bytes of the persisted index format.
pub const INDEX_MAGIC: &[u8; 7] = b"QGFIDX1";

/// Default number of hard negatives mined per generated query.
pub const DEFAULT_NEGATIVES: usize = 35;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("product {0:?} is not in the index")]
    UnknownProduct(String),
    #[error("index file is not QGFIDX1 (bad magic)")]
    BadMagic,
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Backend(BackendError),
    #[error("dataset space has no top label to restrict to")]
    NoTopLabel,
}

/// Lowercased alphanumeric tokens, Unicode-aware.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Okapi parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Immutable inverted index; safe for concurrent queries once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    /// Ordinal -> product id, sorted ascending.
    doc_ids: Vec<String>,
    ordinal_of: HashMap<String, u32>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    /// Term -> postings sorted by ordinal.
    postings: HashMap<String, Vec<(u32, u32)>>,
    indexed_fields: Vec<String>,
}

/// Build an index over the chosen product fields (`title`, `description`,
/// or an extra-field name). Products with no tokens are indexed with
/// length 0 and are never retrieved.
pub fn build_index(
    corpus: &Corpus,
    fields: &[String],
    params: Bm25Params,
) -> Result<Bm25Index, RetrievalError> {
    if corpus.products().is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut doc_ids: Vec<String> = corpus
        .products()
        .iter()
        .map(|p| p.product_id.clone())
        .collect();
    doc_ids.sort();
    doc_ids.dedup();

    let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
    let mut doc_lengths = Vec::with_capacity(doc_ids.len());
    for (ordinal, id) in doc_ids.iter().enumerate() {
        let product = corpus.product(id).expect("id came from the corpus");
        let mut text = String::new();
        for field in fields {
            let value = match field.as_str() {
                "title" => Some(product.title.as_str()),
                "description" => Some(product.description.as_str()),
                other => product.extras.get(other).map(String::as_str),
            };
            if let Some(value) = value {
                text.push_str(value);
                text.push(' ');
            }
        }
        let tokens = tokenize(&text);
        doc_lengths.push(tokens.len() as u32);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for token in tokens {
            *tf.entry(token).or_insert(0) += 1;
        }
        for (term, count) in tf {
            postings
                .entry(term)
                .or_default()
                .push((ordinal as u32, count));
        }
    }
    for list in postings.values_mut() {
        list.sort_by_key(|&(ordinal, _)| ordinal);
    }
    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    let avg_doc_length = total as f64 / doc_lengths.len() as f64;
    let ordinal_of = doc_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i as u32))
        .collect();
    Ok(Bm25Index {
        params,
        doc_ids,
        ordinal_of,
        doc_lengths,
        avg_doc_length,
        postings,
        indexed_fields: fields.to_vec(),
    })
}

impl Bm25Index {
    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn indexed_fields(&self) -> &[String] {
        &self.indexed_fields
    }

    fn idf(&self, term: &str) -> f64 {
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        if df == 0.0 {
            return 0.0;
        }
        let n = self.doc_count() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    fn term_score(&self, term: &str, ordinal: u32) -> f64 {
        let Some(list) = self.postings.get(term) else {
            return 0.0;
        };
        let Ok(pos) = list.binary_search_by_key(&ordinal, |&(o, _)| o) else {
            return 0.0;
        };
        let tf = list[pos].1 as f64;
        let len = self.doc_lengths[ordinal as usize] as f64;
        let Bm25Params { k1, b } = self.params;
        let norm = 1.0 - b + b * len / self.avg_doc_length;
        self.idf(term) * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one document for a query; 0 when no query term occurs.
    pub fn score(&self, query_text: &str, product_id: &str) -> Result<f64, RetrievalError> {
        let ordinal = *self
            .ordinal_of
            .get(product_id)
            .ok_or_else(|| RetrievalError::UnknownProduct(product_id.to_string()))?;
        Ok(tokenize(query_text)
            .iter()
            .map(|term| self.term_score(term, ordinal))
            .sum())
    }

    /// The `k` highest-scoring matching documents, score-descending with
    /// ties broken by ascending product id. Documents matching no query
    /// term are not retrieved; `exclude` removes one id before the cut.
    pub fn retrieve_topk(
        &self,
        query_text: &str,
        k: usize,
        exclude: Option<&str>,
    ) -> Vec<(String, f64)> {
        let tokens = tokenize(query_text);
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &tokens {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            let Bm25Params { k1, b } = self.params;
            for &(ordinal, tf) in list {
                let len = self.doc_lengths[ordinal as usize] as f64;
                let norm = 1.0 - b + b * len / self.avg_doc_length;
                let contribution = idf * tf as f64 * (k1 + 1.0) / (tf as f64 + k1 * norm);
                *scores.entry(ordinal).or_insert(0.0) += contribution;
            }
        }
        let mut ranked: Vec<(&str, f64)> = scores
            .into_iter()
            .filter(|&(_, score)| score > 0.0)
            .map(|(ordinal, score)| (self.doc_ids[ordinal as usize].as_str(), score))
            .filter(|&(id, _)| Some(id) != exclude)
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(b.0))
        });
        ranked.truncate(k);
        ranked
            .into_iter()
            .map(|(id, score)| (id.to_string(), score))
            .collect()
    }

    /// Persist to the versioned binary format (magic `QGFIDX1`,
    /// little-endian lengths, UTF-8 terms).
    pub fn write_to(&self, path: &Path) -> Result<(), RetrievalError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(INDEX_MAGIC)?;
        w.write_all(&self.params.k1.to_le_bytes())?;
        w.write_all(&self.params.b.to_le_bytes())?;
        write_u32(&mut w, self.indexed_fields.len() as u32)?;
        for field in &self.indexed_fields {
            write_str(&mut w, field)?;
        }
        write_u32(&mut w, self.doc_ids.len() as u32)?;
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lengths) {
            write_str(&mut w, id)?;
            write_u32(&mut w, *len)?;
        }
        let mut terms: Vec<&String> = self.postings.keys().collect();
        terms.sort();
        write_u32(&mut w, terms.len() as u32)?;
        for term in terms {
            write_str(&mut w, term)?;
            let list = &self.postings[term];
            write_u32(&mut w, list.len() as u32)?;
            for &(ordinal, tf) in list {
                write_u32(&mut w, ordinal)?;
                write_u32(&mut w, tf)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load an index persisted by [`Bm25Index::write_to`]. The average
    /// document length is recomputed so its invariant holds by
    /// construction.
    pub fn load_from(path: &Path) -> Result<Self, RetrievalError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)
            .map_err(|_| RetrievalError::BadMagic)?;
        if &magic != INDEX_MAGIC {
            return Err(RetrievalError::BadMagic);
        }
        let k1 = read_f64(&mut r)?;
        let b = read_f64(&mut r)?;
        let field_count = read_u32(&mut r)? as usize;
        let mut indexed_fields = Vec::with_capacity(field_count);
        for _ in 0..field_count {
            indexed_fields.push(read_str(&mut r)?);
        }
        let doc_count = read_u32(&mut r)? as usize;
        let mut doc_ids = Vec::with_capacity(doc_count);
        let mut doc_lengths = Vec::with_capacity(doc_count);
        for _ in 0..doc_count {
            doc_ids.push(read_str(&mut r)?);
            doc_lengths.push(read_u32(&mut r)?);
        }
        if doc_count == 0 {
            return Err(RetrievalError::Corrupt("zero documents".into()));
        }
        let term_count = read_u32(&mut r)? as usize;
        let mut postings = HashMap::with_capacity(term_count);
        for _ in 0..term_count {
            let term = read_str(&mut r)?;
            let len = read_u32(&mut r)? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let ordinal = read_u32(&mut r)?;
                let tf = read_u32(&mut r)?;
                if ordinal as usize >= doc_count {
                    return Err(RetrievalError::Corrupt(format!(
                        "posting ordinal {ordinal} out of range"
                    )));
                }
                list.push((ordinal, tf));
            }
            postings.insert(term, list);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_count as f64;
        let ordinal_of = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(Bm25Index {
            params: Bm25Params { k1, b },
            doc_ids,
            ordinal_of,
            doc_lengths,
            avg_doc_length,
            postings,
            indexed_fields,
        })
    }
}

fn write_u32<W: Write>(w: &mut W, value: u32) -> std::io::Result<()> {
    w.write_all(&value.to_le_bytes())
}

fn write_str<W: Write>(w: &mut W, value: &str) -> std::io::Result<()> {
    write_u32(w, value.len() as u32)?;
    w.write_all(value.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, RetrievalError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, RetrievalError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, RetrievalError> {
    let len = read_u32(r)? as usize;
    if len > 64 * 1024 * 1024 {
        return Err(RetrievalError::Corrupt(format!(
            "string length {len} too large"
        )));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| RetrievalError::Corrupt(e.to_string()))
}

/// Anything that can fetch top-k product ids for a query. Implemented by
/// [`Bm25Index`] and by the external HTTP client in
/// [`crate::backends::http::HttpRetriever`].
pub trait Retriever: Send + Sync {
    fn retrieve(
        &self,
        query_text: &str,
        k: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<String>, RetrievalError>;
}

impl Retriever for Bm25Index {
    fn retrieve(
        &self,
        query_text: &str,
        k: usize,
        exclude: Option<&str>,
    ) -> Result<Vec<String>, RetrievalError> {
        Ok(self
            .retrieve_topk(query_text, k, exclude)
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }
}

/// One generated relevant query with its mined negative documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegativeSet {
    #[serde(rename = "query")]
    pub query_text: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

/// Mining outcome counters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MineReport {
    pub queries_mined: u64,
    /// Queries whose retrieval came back empty.
    pub empty_retrievals: u64,
    pub negatives_total: u64,
}

/// Mine hard negatives for the top-label records of a dataset: retrieve
/// the top `k` documents for each generated query, excluding the positive
/// product. Queries with empty retrievals are kept (with no negatives)
/// and counted.
pub fn mine_hard_negatives(
    retriever: &dyn Retriever,
    dataset: &SyntheticDataset,
    k: usize,
) -> Result<(Vec<HardNegativeSet>, MineReport), RetrievalError> {
    let top = dataset
        .space
        .top_label()
        .ok_or(RetrievalError::NoTopLabel)?;
    let mut sets = Vec::new();
    let mut report = MineReport::default();
    for record in &dataset.records {
        if record.final_label != top {
            continue;
        }
        let negatives = retriever.retrieve(&record.query_text, k, Some(&record.product_id))?;
        report.queries_mined += 1;
        report.negatives_total += negatives.len() as u64;
        if negatives.is_empty() {
            report.empty_retrievals += 1;
        }
        sets.push(HardNegativeSet {
            query_text: record.query_text.clone(),
            positive: record.product_id.clone(),
            negatives,
        });
    }
    Ok((sets, report))
}

/// One binary training pair derived from a [`HardNegativeSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    #[serde(rename = "query")]
    pub query_text: String,
    pub product_id: String,
    pub label: String,
}

/// Flatten hard-negative sets into binary (Relevant/Irrelevant) pairs,
/// ready for label balancing. The binary space used for the labels is
/// returned alongside.
pub fn pairs_from_hard_negatives(sets: &[HardNegativeSet]) -> (Vec<TrainingPair>, LabelSpace) {
    let space = LabelSpace::builtin("msmarco-binary").expect("builtin");
    let labels = space.labels().expect("discrete");
    let (relevant, irrelevant) = (labels[0].clone(), labels[1].clone());
    let mut pairs = Vec::new();
    for set in sets {
        pairs.push(TrainingPair {
            query_text: set.query_text.clone(),
            product_id: set.positive.clone(),
            label: relevant.clone(),
        });
        for negative in &set.negatives {
            pairs.push(TrainingPair {
                query_text: set.query_text.clone(),
                product_id: negative.clone(),
                label: irrelevant.clone(),
            });
        }
    }
    (pairs, space)
}
