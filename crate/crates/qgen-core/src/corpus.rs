//! Graded-relevance corpus ingestion and validation.
//!
//! A [`Corpus`] holds a product catalog plus optional gold judgments,
//! ingested from CSV/TSV/JSONL tables through a user-declared
//! [`SchemaMap`] that assigns roles to columns. Ingestion streams rows
//! and never buffers the raw file; text fields are stored verbatim
//! (normalization is the consumer's job).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::stable_hash64;
use crate::labels::LabelSpace;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing required column {column:?}")]
    MissingColumn { column: String },
    #[error("schema must map at least product_id and title")]
    IncompleteSchema,
    #[error("schema maps {role:?} but not {requires:?}, which it requires")]
    DependentRole {
        role: &'static str,
        requires: &'static str,
    },
    #[error("unreadable row at line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("unknown table format {0:?}; valid: csv, tsv, jsonl")]
    UnknownFormat(String),
    #[error("duplicate product_id {0:?} in canonical input")]
    DuplicateProduct(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed JSONL at line {line}: {source}")]
    Jsonl {
        line: u64,
        source: serde_json::Error,
    },
}

/// One catalog item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDoc {
    pub product_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub extras: IndexMap<String, String>,
}

/// A gold (query, product, label) triple from a source table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub query_id: String,
    #[serde(rename = "query")]
    pub query_text: String,
    pub product_id: String,
    #[serde(rename = "label")]
    pub raw_label: String,
    #[serde(rename = "dataset")]
    pub dataset_tag: String,
}

/// Immutable product catalog plus judgments; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    products: Vec<ProductDoc>,
    by_id: HashMap<String, usize>,
    judgments: Vec<Judgment>,
    label_space_name: String,
}

impl Corpus {
    /// Assemble a corpus from parts. Duplicate product ids are kept in the
    /// product list (so [`validate_corpus`] can report them); lookups
    /// resolve to the first occurrence.
    pub fn new(
        products: Vec<ProductDoc>,
        judgments: Vec<Judgment>,
        label_space_name: &str,
    ) -> Self {
        let mut by_id = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            by_id.entry(p.product_id.clone()).or_insert(i);
        }
        Corpus {
            products,
            by_id,
            judgments,
            label_space_name: label_space_name.to_string(),
        }
    }

    pub fn products(&self) -> &[ProductDoc] {
        &self.products
    }

    pub fn judgments(&self) -> &[Judgment] {
        &self.judgments
    }

    pub fn label_space_name(&self) -> &str {
        &self.label_space_name
    }

    pub fn product(&self, product_id: &str) -> Option<&ProductDoc> {
        self.by_id.get(product_id).map(|&i| &self.products[i])
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty() && self.judgments.is_empty()
    }

    /// Absorb another corpus: products union (first occurrence wins),
    /// judgments concatenated.
    pub fn merge(&mut self, other: Corpus) {
        for p in other.products {
            if !self.by_id.contains_key(&p.product_id) {
                self.by_id.insert(p.product_id.clone(), self.products.len());
                self.products.push(p);
            }
        }
        self.judgments.extend(other.judgments);
    }

    /// Sort products by id and judgments by (query_id, product_id, label)
    /// so downstream artifacts do not depend on source row order.
    pub fn sort_canonical(&mut self) {
        self.products
            .sort_by(|a, b| a.product_id.cmp(&b.product_id));
        self.by_id = self
            .products
            .iter()
            .enumerate()
            .map(|(i, p)| (p.product_id.clone(), i))
            .collect();
        self.judgments.sort_by(|a, b| {
            (&a.query_id, &a.product_id, &a.raw_label, &a.query_text).cmp(&(
                &b.query_id,
                &b.product_id,
                &b.raw_label,
                &b.query_text,
            ))
        });
    }
}

/// Source table format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Tsv,
    Jsonl,
}

impl FromStr for TableFormat {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "tsv" => Ok(TableFormat::Tsv),
            "jsonl" => Ok(TableFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

/// Column-role map. Keys are roles, values are source column names
/// (CSV/TSV headers or JSONL keys). Recognized roles: `product_id`,
/// `title`, `description`, `query_id`, `query`, `label`. Any other key
/// maps an extra product field of that name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchemaMap {
    pub columns: IndexMap<String, String>,
}

impl SchemaMap {
    /// Parse the CLI form `role=column,role=column,...`.
    pub fn parse_flag(flag: &str) -> Result<Self, CorpusError> {
        let mut columns = IndexMap::new();
        for pair in flag.split(',').filter(|p| !p.trim().is_empty()) {
            let (role, column) = pair.split_once('=').ok_or_else(|| CorpusError::Row {
                line: 0,
                message: format!("schema entry {pair:?} is not role=column"),
            })?;
            columns.insert(role.trim().to_string(), column.trim().to_string());
        }
        let schema = SchemaMap { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if !self.columns.contains_key("product_id") || !self.columns.contains_key("title") {
            return Err(CorpusError::IncompleteSchema);
        }
        if self.columns.contains_key("query") && !self.columns.contains_key("label") {
            return Err(CorpusError::DependentRole {
                role: "query",
                requires: "label",
            });
        }
        if self.columns.contains_key("label") && !self.columns.contains_key("query") {
            return Err(CorpusError::DependentRole {
                role: "label",
                requires: "query",
            });
        }
        Ok(())
    }

    fn role(&self, role: &str) -> Option<&str> {
        self.columns.get(role).map(String::as_str)
    }

    fn has_judgments(&self) -> bool {
        self.columns.contains_key("query")
    }

    fn extras(&self) -> impl Iterator<Item = (&str, &str)> {
        const ROLES: [&str; 6] = [
            "product_id",
            "title",
            "description",
            "query_id",
            "query",
            "label",
        ];
        self.columns
            .iter()
            .filter(|(role, _)| !ROLES.contains(&role.as_str()))
            .map(|(role, col)| (role.as_str(), col.as_str()))
    }
}

/// Ingestion behavior switches.
#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Abort on the first unreadable row instead of skipping it.
    pub strict: bool,
}

/// One skipped source row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

/// What happened during one [`ingest_table`] call.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_ok: u64,
    pub rows_skipped: u64,
    pub products_added: u64,
    pub judgments_added: u64,
    /// Rows whose product_id was already present with different fields.
    pub conflicting_product_rows: u64,
    pub row_errors: Vec<RowError>,
    pub warnings: Vec<String>,
}

struct RowSink<'a> {
    schema: &'a SchemaMap,
    space: &'a LabelSpace,
    dataset_tag: &'a str,
    strict: bool,
    products: Vec<ProductDoc>,
    by_id: HashMap<String, usize>,
    judgments: Vec<Judgment>,
    report: IngestReport,
}

impl<'a> RowSink<'a> {
    fn new(
        schema: &'a SchemaMap,
        space: &'a LabelSpace,
        dataset_tag: &'a str,
        strict: bool,
    ) -> Self {
        RowSink {
            schema,
            space,
            dataset_tag,
            strict,
            products: Vec::new(),
            by_id: HashMap::new(),
            judgments: Vec::new(),
            report: IngestReport::default(),
        }
    }

    /// Feed one row as a column-name -> value lookup. `line` is 1-based.
    fn push_row(
        &mut self,
        line: u64,
        get: &dyn Fn(&str) -> Option<String>,
    ) -> Result<(), CorpusError> {
        self.report.rows_read += 1;
        match self.parse_row(get) {
            Ok((product, judgment)) => {
                self.report.rows_ok += 1;
                self.insert_product(product);
                if let Some(j) = judgment {
                    self.judgments.push(j);
                    self.report.judgments_added += 1;
                }
                Ok(())
            }
            Err(message) => {
                self.report.rows_skipped += 1;
                if self.strict {
                    return Err(CorpusError::Row { line, message });
                }
                self.report.row_errors.push(RowError { line, message });
                Ok(())
            }
        }
    }

    fn parse_row(
        &self,
        get: &dyn Fn(&str) -> Option<String>,
    ) -> Result<(ProductDoc, Option<Judgment>), String> {
        let required = |role: &str| -> Result<String, String> {
            let col = self.schema.role(role).expect("validated schema");
            let value = get(col).ok_or_else(|| format!("missing value for column {col:?}"))?;
            if value.trim().is_empty() {
                return Err(format!("empty {role} (column {col:?})"));
            }
            Ok(value)
        };
        let optional = |role: &str| -> Option<String> { self.schema.role(role).and_then(get) };

        let product_id = required("product_id")?;
        let title = required("title")?;
        let description = optional("description").unwrap_or_default();
        let mut extras = IndexMap::new();
        for (field, col) in self.schema.extras() {
            if let Some(value) = get(col) {
                extras.insert(field.to_string(), value);
            }
        }
        let product = ProductDoc {
            product_id: product_id.clone(),
            title,
            description,
            extras,
        };

        let judgment = if self.schema.has_judgments() {
            let query_text = required("query")?;
            let raw_label = required("label")?;
            self.space
                .parse(&raw_label)
                .map_err(|e| format!("unparseable label: {e}"))?;
            let query_id = optional("query_id")
                .filter(|q| !q.trim().is_empty())
                .unwrap_or_else(|| derive_query_id(&query_text));
            Some(Judgment {
                query_id,
                query_text,
                product_id,
                raw_label,
                dataset_tag: self.dataset_tag.to_string(),
            })
        } else {
            None
        };
        Ok((product, judgment))
    }

    fn insert_product(&mut self, product: ProductDoc) {
        match self.by_id.get(&product.product_id) {
            None => {
                self.by_id
                    .insert(product.product_id.clone(), self.products.len());
                self.products.push(product);
                self.report.products_added += 1;
            }
            Some(&i) => {
                if self.products[i] != product {
                    self.report.conflicting_product_rows += 1;
                }
            }
        }
    }

    fn finish(mut self, label_space_name: &str) -> (Corpus, IngestReport) {
        if self.report.rows_read == 0 {
            self.report
                .warnings
                .push("input contained no rows".to_string());
        }
        (
            Corpus {
                products: self.products,
                by_id: self.by_id,
                judgments: self.judgments,
                label_space_name: label_space_name.to_string(),
            },
            self.report,
        )
    }
}

/// Stable query id for sources that do not carry one.
fn derive_query_id(query_text: &str) -> String {
    format!("q{:016x}", stable_hash64(&[query_text.as_bytes()]))
}

/// Ingest one table into a corpus.
///
/// The schema must map at least `product_id` and `title`; when it also
/// maps `query` and `label`, every row additionally yields a [`Judgment`]
/// whose label must parse in `space`. Unreadable rows are skipped and
/// reported (or abort the ingest under [`IngestOptions::strict`]).
pub fn ingest_table(
    path: &Path,
    format: TableFormat,
    schema: &SchemaMap,
    space: &LabelSpace,
    dataset_tag: &str,
    options: &IngestOptions,
) -> Result<(Corpus, IngestReport), CorpusError> {
    schema.validate()?;
    let file = File::open(path)?;
    match format {
        TableFormat::Csv => ingest_delimited(file, b',', true, schema, space, dataset_tag, options),
        TableFormat::Tsv => {
            ingest_delimited(file, b'\t', false, schema, space, dataset_tag, options)
        }
        TableFormat::Jsonl => ingest_jsonl(file, schema, space, dataset_tag, options),
    }
}

fn ingest_delimited<R: Read>(
    reader: R,
    delimiter: u8,
    quoting: bool,
    schema: &SchemaMap,
    space: &LabelSpace,
    dataset_tag: &str,
    options: &IngestOptions,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .quoting(quoting)
        .flexible(true)
        .from_reader(reader);

    let headers = csv_reader.headers()?.clone();
    let mut column_index: HashMap<String, usize> = HashMap::new();
    for (i, name) in headers.iter().enumerate() {
        column_index.entry(name.to_string()).or_insert(i);
    }
    // An empty file has no header row; that is a warned-about empty corpus,
    // not a schema error.
    if !column_index.is_empty() {
        for col in schema.columns.values() {
            if !column_index.contains_key(col) {
                return Err(CorpusError::MissingColumn {
                    column: col.clone(),
                });
            }
        }
    }

    let mut sink = RowSink::new(schema, space, dataset_tag, options.strict);
    for record in csv_reader.into_records() {
        let line = sink.report.rows_read + 2; // 1-based, after the header line
        match record {
            Ok(record) => {
                let get = |col: &str| -> Option<String> {
                    column_index
                        .get(col)
                        .and_then(|&i| record.get(i))
                        .map(str::to_string)
                };
                sink.push_row(line, &get)?;
            }
            Err(e) => {
                sink.report.rows_read += 1;
                sink.report.rows_skipped += 1;
                if options.strict {
                    return Err(CorpusError::Row {
                        line,
                        message: e.to_string(),
                    });
                }
                sink.report.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(sink.finish(space.name()))
}

fn ingest_jsonl<R: Read>(
    reader: R,
    schema: &SchemaMap,
    space: &LabelSpace,
    dataset_tag: &str,
    options: &IngestOptions,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let mut sink = RowSink::new(schema, space, dataset_tag, options.strict);
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i as u64 + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<serde_json::Value>(&text) {
            Ok(value) => {
                let get = |col: &str| -> Option<String> {
                    value.get(col).map(|v| match v {
                        serde_json::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                };
                sink.push_row(line_no, &get)?;
            }
            Err(e) => {
                sink.report.rows_read += 1;
                sink.report.rows_skipped += 1;
                if options.strict {
                    return Err(CorpusError::Row {
                        line: line_no,
                        message: e.to_string(),
                    });
                }
                sink.report.row_errors.push(RowError {
                    line: line_no,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(sink.finish(space.name()))
}

/// Report-only corpus diagnostics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    /// (query_id, product_id) judgments whose product is missing.
    pub dangling_references: Vec<(String, String)>,
    pub duplicate_product_ids: Vec<String>,
    pub empty_titles: Vec<String>,
    /// (query_id, raw_label) labels the space cannot parse.
    pub unparseable_labels: Vec<(String, String)>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.dangling_references.is_empty()
            && self.duplicate_product_ids.is_empty()
            && self.empty_titles.is_empty()
            && self.unparseable_labels.is_empty()
    }
}

/// Scan a corpus for defects: dangling product references, duplicate ids,
/// empty titles, unparseable labels. Never modifies the corpus.
pub fn validate_corpus(corpus: &Corpus, space: &LabelSpace) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen: HashMap<&str, u32> = HashMap::new();
    for p in &corpus.products {
        *seen.entry(p.product_id.as_str()).or_insert(0) += 1;
        if p.title.trim().is_empty() {
            report.empty_titles.push(p.product_id.clone());
        }
    }
    for (id, count) in seen {
        if count > 1 {
            report.duplicate_product_ids.push(id.to_string());
        }
    }
    report.duplicate_product_ids.sort();
    for j in &corpus.judgments {
        if corpus.product(&j.product_id).is_none() {
            report
                .dangling_references
                .push((j.query_id.clone(), j.product_id.clone()));
        }
        if space.parse(&j.raw_label).is_err() {
            report
                .unparseable_labels
                .push((j.query_id.clone(), j.raw_label.clone()));
        }
    }
    report
}

/// Write products as canonical JSONL, one record per line, field order fixed.
pub fn write_products_jsonl<W: Write>(corpus: &Corpus, mut writer: W) -> Result<(), CorpusError> {
    for p in &corpus.products {
        serde_json::to_writer(&mut writer, p).map_err(io_from_json)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Write judgments as canonical JSONL.
pub fn write_judgments_jsonl<W: Write>(corpus: &Corpus, mut writer: W) -> Result<(), CorpusError> {
    for j in &corpus.judgments {
        serde_json::to_writer(&mut writer, j).map_err(io_from_json)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn io_from_json(e: serde_json::Error) -> CorpusError {
    CorpusError::Io(std::io::Error::other(e))
}

/// Load a corpus from canonical JSONL files written by the writers above.
/// Duplicate product ids are rejected (canonical files never contain them).
pub fn load_corpus_jsonl(
    products_path: &Path,
    judgments_path: Option<&Path>,
    label_space_name: &str,
) -> Result<Corpus, CorpusError> {
    let mut products = Vec::new();
    let mut by_id = HashMap::new();
    for (i, line) in BufReader::new(File::open(products_path)?)
        .lines()
        .enumerate()
    {
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let product: ProductDoc =
            serde_json::from_str(&text).map_err(|source| CorpusError::Jsonl {
                line: i as u64 + 1,
                source,
            })?;
        if by_id.contains_key(&product.product_id) {
            return Err(CorpusError::DuplicateProduct(product.product_id));
        }
        by_id.insert(product.product_id.clone(), products.len());
        products.push(product);
    }
    let mut judgments = Vec::new();
    if let Some(path) = judgments_path {
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let text = line?;
            if text.trim().is_empty() {
                continue;
            }
            let judgment: Judgment =
                serde_json::from_str(&text).map_err(|source| CorpusError::Jsonl {
                    line: i as u64 + 1,
                    source,
                })?;
            judgments.push(judgment);
        }
    }
    Ok(Corpus {
        products,
        by_id,
        judgments,
        label_space_name: label_space_name.to_string(),
    })
}
