//! Ordered, weighted relevance label spaces.
//!
//! A [`LabelSpace`] orders labels from most to least relevant and attaches
//! two per-label quantities: a *weight* (used by the expected relevance
//! score) and a *gain* (used by NDCG). Discrete spaces enumerate their
//! labels; the HomeDepot-style continuous space parses raw scores as
//! numeric labels whose gain is the score itself.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

/// Built-in space names accepted by [`LabelSpace::builtin`].
pub const BUILTIN_SPACES: [&str; 4] = ["esci", "msmarco-binary", "wands", "homedepot-continuous"];

#[derive(Debug, Error)]
pub enum LabelError {
    #[error(
        "unknown label space {0:?}; valid names: esci, msmarco-binary, wands, homedepot-continuous"
    )]
    UnknownSpace(String),
    #[error("label {raw:?} not recognized in space {space:?}")]
    UnknownLabel { raw: String, space: String },
    #[error("invalid label space {space:?}: {reason}")]
    InvalidSpace { space: String, reason: String },
    #[error("space {space:?} is continuous and has no {what}")]
    Continuous { space: String, what: &'static str },
    #[error("failed to read label space config: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse label space config: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, PartialEq)]
enum SpaceKind {
    /// Labels ordered most-relevant first, with parallel weight/gain vectors.
    Discrete {
        labels: Vec<String>,
        weights: Vec<f64>,
        gains: Vec<f64>,
    },
    /// Numeric labels; gain is the raw score, no weights.
    Continuous,
}

#[derive(Debug, PartialEq)]
struct SpaceInner {
    name: String,
    kind: SpaceKind,
}

/// An immutable, cheaply cloneable label space handle.
#[derive(Debug, Clone)]
pub struct LabelSpace(Arc<SpaceInner>);

impl PartialEq for LabelSpace {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

/// On-disk JSON shape for custom discrete spaces.
#[derive(Debug, Deserialize)]
struct SpaceConfig {
    name: String,
    labels: Vec<String>,
    weights: Vec<f64>,
    gains: Vec<f64>,
}

impl LabelSpace {
    /// One of the four built-in spaces.
    ///
    /// - `esci`: E > S > C > I, weights {3, 2, 1, 0}, gains {3, 2, 1, 0}
    /// - `msmarco-binary`: Relevant > Irrelevant, weights {1, 0}
    /// - `wands`: Exact > Partial > Irrelevant, default gains {2, 1, 0}
    /// - `homedepot-continuous`: numeric labels, gain = raw score
    pub fn builtin(name: &str) -> Result<Self, LabelError> {
        match name {
            "esci" => Self::discrete(
                "esci",
                &["E", "S", "C", "I"],
                &[3.0, 2.0, 1.0, 0.0],
                &[3.0, 2.0, 1.0, 0.0],
            ),
            "msmarco-binary" => Self::discrete(
                "msmarco-binary",
                &["Relevant", "Irrelevant"],
                &[1.0, 0.0],
                &[1.0, 0.0],
            ),
            "wands" => Self::discrete(
                "wands",
                &["Exact", "Partial", "Irrelevant"],
                &[2.0, 1.0, 0.0],
                &[2.0, 1.0, 0.0],
            ),
            "homedepot-continuous" => Ok(LabelSpace(Arc::new(SpaceInner {
                name: "homedepot-continuous".to_string(),
                kind: SpaceKind::Continuous,
            }))),
            other => Err(LabelError::UnknownSpace(other.to_string())),
        }
    }

    /// Build a discrete space, validating the ordering invariants:
    /// unique labels, strictly decreasing non-negative weights, and
    /// non-increasing non-negative gains.
    pub fn discrete(
        name: &str,
        labels: &[&str],
        weights: &[f64],
        gains: &[f64],
    ) -> Result<Self, LabelError> {
        let invalid = |reason: String| LabelError::InvalidSpace {
            space: name.to_string(),
            reason,
        };
        if labels.is_empty() {
            return Err(invalid("no labels".into()));
        }
        if labels.len() != weights.len() || labels.len() != gains.len() {
            return Err(invalid(format!(
                "{} labels but {} weights and {} gains",
                labels.len(),
                weights.len(),
                gains.len()
            )));
        }
        for (i, label) in labels.iter().enumerate() {
            if label.trim().is_empty() {
                return Err(invalid(format!("label {i} is empty")));
            }
            for other in &labels[i + 1..] {
                if label.eq_ignore_ascii_case(other) {
                    return Err(invalid(format!("duplicate label {label:?}")));
                }
            }
        }
        if weights
            .iter()
            .chain(gains.iter())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(invalid(
                "weights and gains must be finite and non-negative".into(),
            ));
        }
        for pair in weights.windows(2) {
            if pair[0] <= pair[1] {
                return Err(invalid(format!(
                    "weights must be strictly decreasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        for pair in gains.windows(2) {
            if pair[0] < pair[1] {
                return Err(invalid(format!(
                    "gains must be non-increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(LabelSpace(Arc::new(SpaceInner {
            name: name.to_string(),
            kind: SpaceKind::Discrete {
                labels: labels.iter().map(|s| s.to_string()).collect(),
                weights: weights.to_vec(),
                gains: gains.to_vec(),
            },
        })))
    }

    /// Load a discrete space from a `{name, labels, weights, gains}` JSON file.
    pub fn from_config_file(path: &Path) -> Result<Self, LabelError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_json(&text)
    }

    /// Parse a discrete space from `{name, labels, weights, gains}` JSON text.
    pub fn from_config_json(json: &str) -> Result<Self, LabelError> {
        let cfg: SpaceConfig = serde_json::from_str(json)?;
        let labels: Vec<&str> = cfg.labels.iter().map(String::as_str).collect();
        Self::discrete(&cfg.name, &labels, &cfg.weights, &cfg.gains)
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.0.kind, SpaceKind::Discrete { .. })
    }

    /// Label names most-relevant first. `None` for continuous spaces.
    pub fn labels(&self) -> Option<&[String]> {
        match &self.0.kind {
            SpaceKind::Discrete { labels, .. } => Some(labels),
            SpaceKind::Continuous => None,
        }
    }

    /// Number of discrete labels. `None` for continuous spaces.
    pub fn label_count(&self) -> Option<usize> {
        self.labels().map(<[String]>::len)
    }

    /// Weights most-relevant first. Errors for continuous spaces.
    pub fn weights(&self) -> Result<&[f64], LabelError> {
        match &self.0.kind {
            SpaceKind::Discrete { weights, .. } => Ok(weights),
            SpaceKind::Continuous => Err(LabelError::Continuous {
                space: self.0.name.clone(),
                what: "weights",
            }),
        }
    }

    /// Parse a raw label as found in a source table.
    ///
    /// Discrete spaces match label names case-insensitively; the
    /// continuous space parses the text as a non-negative decimal.
    pub fn parse(&self, raw: &str) -> Result<GradedLabel, LabelError> {
        let unknown = || LabelError::UnknownLabel {
            raw: raw.to_string(),
            space: self.0.name.clone(),
        };
        match &self.0.kind {
            SpaceKind::Discrete { labels, .. } => {
                let trimmed = raw.trim();
                let rank = labels
                    .iter()
                    .position(|l| unicase_eq(l, trimmed))
                    .ok_or_else(unknown)?;
                Ok(GradedLabel {
                    space: self.clone(),
                    value: LabelValue::Rank(rank),
                })
            }
            SpaceKind::Continuous => {
                let value: f64 = raw.trim().parse().map_err(|_| unknown())?;
                if !value.is_finite() || value < 0.0 {
                    return Err(unknown());
                }
                Ok(GradedLabel {
                    space: self.clone(),
                    value: LabelValue::Numeric(value),
                })
            }
        }
    }

    /// The label at a given rank (0 = most relevant).
    pub fn label_at(&self, rank: usize) -> Option<GradedLabel> {
        match &self.0.kind {
            SpaceKind::Discrete { labels, .. } if rank < labels.len() => Some(GradedLabel {
                space: self.clone(),
                value: LabelValue::Rank(rank),
            }),
            _ => None,
        }
    }

    /// The most relevant label. `None` for continuous spaces.
    pub fn top_label(&self) -> Option<GradedLabel> {
        self.label_at(0)
    }

    /// The least relevant label. `None` for continuous spaces.
    pub fn least_label(&self) -> Option<GradedLabel> {
        self.label_count().and_then(|n| self.label_at(n - 1))
    }

    /// Adjacent label-name pairs in relevance order, e.g. (E,S), (S,C), (C,I).
    pub fn adjacent_pairs(&self) -> Vec<(String, String)> {
        match self.labels() {
            Some(labels) => labels
                .windows(2)
                .map(|w| (w[0].clone(), w[1].clone()))
                .collect(),
            None => Vec::new(),
        }
    }

    fn weight_at(&self, rank: usize) -> Option<f64> {
        match &self.0.kind {
            SpaceKind::Discrete { weights, .. } => weights.get(rank).copied(),
            SpaceKind::Continuous => None,
        }
    }

    fn gain_at(&self, rank: usize) -> Option<f64> {
        match &self.0.kind {
            SpaceKind::Discrete { gains, .. } => gains.get(rank).copied(),
            SpaceKind::Continuous => None,
        }
    }

    /// Two handles denote the same space if they have the same name and shape.
    pub fn same_space(&self, other: &LabelSpace) -> bool {
        if Arc::ptr_eq(&self.0, &other.0) {
            return true;
        }
        self.0.name == other.0.name && self.labels() == other.labels()
    }
}

fn unicase_eq(a: &str, b: &str) -> bool {
    a.chars()
        .flat_map(char::to_lowercase)
        .eq(b.chars().flat_map(char::to_lowercase))
}

#[derive(Debug, Clone, PartialEq)]
enum LabelValue {
    Rank(usize),
    Numeric(f64),
}

/// A validated label belonging to a specific [`LabelSpace`].
#[derive(Debug, Clone)]
pub struct GradedLabel {
    space: LabelSpace,
    value: LabelValue,
}

impl GradedLabel {
    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    /// Rank in the label order (0 = most relevant). `None` for numeric labels.
    pub fn rank(&self) -> Option<usize> {
        match self.value {
            LabelValue::Rank(r) => Some(r),
            LabelValue::Numeric(_) => None,
        }
    }

    /// Raw numeric value for continuous-space labels.
    pub fn numeric(&self) -> Option<f64> {
        match self.value {
            LabelValue::Numeric(v) => Some(v),
            LabelValue::Rank(_) => None,
        }
    }

    /// The NDCG gain of this label.
    pub fn gain(&self) -> f64 {
        match self.value {
            LabelValue::Rank(r) => self
                .space
                .gain_at(r)
                .expect("rank validated at construction"),
            LabelValue::Numeric(v) => v,
        }
    }

    /// The expected-score weight of this label. Errors for numeric labels.
    pub fn weight(&self) -> Result<f64, LabelError> {
        match self.value {
            LabelValue::Rank(r) => Ok(self
                .space
                .weight_at(r)
                .expect("rank validated at construction")),
            LabelValue::Numeric(_) => Err(LabelError::Continuous {
                space: self.space.name().to_string(),
                what: "weights",
            }),
        }
    }

    /// Render the label as it appears in templates and serialized records.
    pub fn render(&self) -> String {
        match &self.value {
            LabelValue::Rank(r) => self.space.labels().expect("discrete")[*r].clone(),
            LabelValue::Numeric(v) => format!("{v}"),
        }
    }
}

impl PartialEq for GradedLabel {
    fn eq(&self, other: &Self) -> bool {
        self.space.name() == other.space.name() && self.value == other.value
    }
}

impl fmt::Display for GradedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// How label gains enter the DCG numerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainTransform {
    /// Gain used directly.
    #[default]
    Linear,
    /// `2^gain - 1`.
    Exponential,
}

impl GainTransform {
    pub fn apply(&self, gain: f64) -> f64 {
        match self {
            GainTransform::Linear => gain,
            GainTransform::Exponential => gain.exp2() - 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn esci_shape() {
        let esci = LabelSpace::builtin("esci").unwrap();
        assert_eq!(esci.labels().unwrap(), &["E", "S", "C", "I"]);
        let e = esci.parse("E").unwrap();
        assert_eq!(e.weight().unwrap(), 3.0);
        assert_eq!(esci.least_label().unwrap().weight().unwrap(), 0.0);
    }

    #[test]
    fn msmarco_binary_shape() {
        let space = LabelSpace::builtin("msmarco-binary").unwrap();
        assert_eq!(space.label_count(), Some(2));
        assert_eq!(space.parse("Relevant").unwrap().weight().unwrap(), 1.0);
    }

    #[test]
    fn wands_gains() {
        let wands = LabelSpace::builtin("wands").unwrap();
        assert_eq!(wands.parse("Exact").unwrap().gain(), 2.0);
        assert_eq!(wands.parse("Partial").unwrap().gain(), 1.0);
        assert_eq!(wands.parse("Irrelevant").unwrap().gain(), 0.0);
    }

    #[test]
    fn parse_case_folds() {
        let esci = LabelSpace::builtin("esci").unwrap();
        assert_eq!(esci.parse("e").unwrap().rank(), Some(0));
        let wands = LabelSpace::builtin("wands").unwrap();
        assert_eq!(wands.parse("EXACT").unwrap().rank(), Some(0));
    }

    #[test]
    fn continuous_parses_decimals() {
        let hd = LabelSpace::builtin("homedepot-continuous").unwrap();
        let label = hd.parse("2.33").unwrap();
        assert_eq!(label.numeric(), Some(2.33));
        assert_eq!(label.gain(), 2.33);
        assert_eq!(hd.parse("3.0").unwrap().gain(), 3.0);
        assert!(hd.parse("relevant").is_err());
        assert!(hd.parse("-1").is_err());
        assert!(label.weight().is_err());
    }

    #[test]
    fn unknown_names_error() {
        assert!(LabelSpace::builtin("nope").is_err());
        let esci = LabelSpace::builtin("esci").unwrap();
        assert!(matches!(
            esci.parse("Exactly"),
            Err(LabelError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn parse_render_roundtrip_all_builtins() {
        for name in ["esci", "msmarco-binary", "wands"] {
            let space = LabelSpace::builtin(name).unwrap();
            for rank in 0..space.label_count().unwrap() {
                let label = space.label_at(rank).unwrap();
                let reparsed = space.parse(&label.render()).unwrap();
                assert_eq!(label, reparsed, "space {name} rank {rank}");
            }
        }
        let hd = LabelSpace::builtin("homedepot-continuous").unwrap();
        for raw in ["2.33", "1", "3", "0.5"] {
            let label = hd.parse(raw).unwrap();
            assert_eq!(label, hd.parse(&label.render()).unwrap());
        }
    }

    #[test]
    fn order_invariants_hold_for_builtins() {
        for name in ["esci", "msmarco-binary", "wands"] {
            let space = LabelSpace::builtin(name).unwrap();
            let n = space.label_count().unwrap();
            for i in 0..n {
                for j in i + 1..n {
                    let (a, b) = (space.label_at(i).unwrap(), space.label_at(j).unwrap());
                    assert!(a.weight().unwrap() > b.weight().unwrap());
                    assert!(a.gain() >= b.gain());
                }
            }
        }
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let space = LabelSpace::from_config_json(
            r#"{"name":"toy","labels":["Hot","Warm","Cold"],"weights":[2.0,1.0,0.0],"gains":[2.0,1.0,0.0]}"#,
        )
        .unwrap();
        assert_eq!(space.name(), "toy");
        assert_eq!(space.parse("warm").unwrap().rank(), Some(1));

        let bad = LabelSpace::from_config_json(
            r#"{"name":"bad","labels":["A","B"],"weights":[1.0,1.0],"gains":[1.0,0.0]}"#,
        );
        assert!(matches!(bad, Err(LabelError::InvalidSpace { .. })));

        let dup = LabelSpace::from_config_json(
            r#"{"name":"dup","labels":["A","a"],"weights":[1.0,0.0],"gains":[1.0,0.0]}"#,
        );
        assert!(matches!(dup, Err(LabelError::InvalidSpace { .. })));
    }

    #[test]
    fn adjacent_pairs_follow_order() {
        let esci = LabelSpace::builtin("esci").unwrap();
        assert_eq!(
            esci.adjacent_pairs(),
            vec![
                ("E".to_string(), "S".to_string()),
                ("S".to_string(), "C".to_string()),
                ("C".to_string(), "I".to_string()),
            ]
        );
    }

    #[test]
    fn gain_transform() {
        assert_eq!(GainTransform::Linear.apply(3.0), 3.0);
        assert_eq!(GainTransform::Exponential.apply(3.0), 7.0);
        assert_eq!(GainTransform::Exponential.apply(0.0), 0.0);
    }
}
