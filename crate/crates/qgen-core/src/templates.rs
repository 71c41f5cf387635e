//! Generation input/output text formats.
//!
//! Inputs follow the scaffold `Label: <label> Product: <title>
//! Description: <description>` (the label prefix is omitted for vanilla
//! generation); generator output is `Query: <query>`. Few-shot prompts
//! concatenate exemplar blocks and end with the target's input awaiting
//! completion after a trailing `Query:`.
//!
//! Length budgets are enforced in characters as a tokenizer-free proxy
//! (default 1200 chars, roughly 256 sentencepiece tokens). Truncation
//! drops trailing field text first and never touches the label or title.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ProductDoc;
use crate::labels::GradedLabel;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("generator output contained no query text: {raw:?}")]
    EmptyQuery { raw: String },
    #[error("{mode} prompts need exactly {expected} exemplars, got {got}")]
    ExemplarCount {
        mode: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("label {label:?} has {got} exemplars, expected {expected}")]
    ExemplarCoverage {
        label: String,
        expected: usize,
        got: usize,
    },
    #[error("vanilla prompts require top-label exemplars, found label {label:?}")]
    NonTopExemplar { label: String },
    #[error("label-conditioned prompts require a target label")]
    MissingTargetLabel,
    #[error("exemplar for product {product_id:?} has an empty query")]
    EmptyExemplarQuery { product_id: String },
}

/// How generation inputs are rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateConfig {
    /// Include the `Description:` field when the product has one.
    pub include_description: bool,
    /// Character budget for one formatted input.
    pub max_input_chars: usize,
    /// Extra product fields (by name) appended after the description.
    pub field_order: Vec<String>,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            include_description: true,
            max_input_chars: 1200,
            field_order: Vec::new(),
        }
    }
}

/// One few-shot example: a labeled (product, query) pair.
#[derive(Debug, Clone)]
pub struct Exemplar {
    pub label: GradedLabel,
    pub product: ProductDoc,
    pub query_text: String,
}

/// Number of exemplars in a vanilla prompt.
pub const VANILLA_PROMPT_EXEMPLARS: usize = 8;
/// Exemplars per label in a label-conditioned prompt.
pub const LABELCOND_EXEMPLARS_PER_LABEL: usize = 2;

/// Prompt assembly mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Vanilla,
    LabelCond,
}

/// Render the label-conditioned input `Label: <label> Product: ...`.
pub fn format_labelcond_input(
    product: &ProductDoc,
    label: &GradedLabel,
    cfg: &TemplateConfig,
) -> String {
    format_input(product, Some(label), cfg)
}

/// Render the vanilla input `Product: ...` (no label prefix).
pub fn format_vanilla_input(product: &ProductDoc, cfg: &TemplateConfig) -> String {
    format_input(product, None, cfg)
}

fn format_input(product: &ProductDoc, label: Option<&GradedLabel>, cfg: &TemplateConfig) -> String {
    let mut out = String::new();
    if let Some(label) = label {
        out.push_str("Label: ");
        out.push_str(&label.render());
        out.push(' ');
    }
    out.push_str("Product: ");
    out.push_str(&product.title);

    let mut used = out.chars().count();
    let mut fields: Vec<(String, &str)> = Vec::new();
    if cfg.include_description && !product.description.is_empty() {
        fields.push(("Description".to_string(), product.description.as_str()));
    }
    for name in &cfg.field_order {
        if let Some(value) = product.extras.get(name) {
            if !value.is_empty() {
                fields.push((field_marker(name), value.as_str()));
            }
        }
    }

    for (marker, text) in fields {
        let header = format!(" {marker}: ");
        let header_chars = header.chars().count();
        let remaining = cfg.max_input_chars.saturating_sub(used);
        // A field is worth emitting only if at least one content char fits.
        if header_chars + 1 > remaining {
            break;
        }
        let budget = remaining - header_chars;
        let text_chars = text.chars().count();
        out.push_str(&header);
        if text_chars <= budget {
            out.push_str(text);
            used += header_chars + text_chars;
        } else {
            out.extend(text.chars().take(budget));
            break;
        }
    }
    out
}

/// `bullet_point` -> `Bullet Point`, matching the dataset field style.
fn field_marker(name: &str) -> String {
    name.split(|c: char| c == '_' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(|w| {
            let mut chars = w.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Extract the query from generator output: strips one leading `Query:`
/// marker, trims whitespace, and stops at the first newline.
pub fn parse_query_output(raw: &str) -> Result<String, TemplateError> {
    let text = raw.trim_start();
    let text = text.strip_prefix("Query:").unwrap_or(text);
    let query = text.lines().next().unwrap_or("").trim();
    if query.is_empty() {
        return Err(TemplateError::EmptyQuery {
            raw: raw.to_string(),
        });
    }
    Ok(query.to_string())
}

/// Assemble a few-shot prompt.
///
/// Vanilla mode takes exactly 8 exemplars, all bearing the top label of
/// their space, rendered without label prefixes. Label-conditioned mode
/// takes exactly 2 exemplars per label of the target label's space,
/// re-ordered label-major (E, E, S, S, ...), each rendered with its label.
/// Every exemplar block is `<input> Query: <query>`; the prompt ends with
/// the target's input and a bare `Query:` awaiting completion.
pub fn assemble_prompt(
    exemplars: &[Exemplar],
    target: &ProductDoc,
    mode: PromptMode,
    target_label: Option<&GradedLabel>,
    cfg: &TemplateConfig,
) -> Result<String, TemplateError> {
    for ex in exemplars {
        if ex.query_text.trim().is_empty() {
            return Err(TemplateError::EmptyExemplarQuery {
                product_id: ex.product.product_id.clone(),
            });
        }
    }

    let mut lines = Vec::with_capacity(exemplars.len() + 1);
    match mode {
        PromptMode::Vanilla => {
            if exemplars.len() != VANILLA_PROMPT_EXEMPLARS {
                return Err(TemplateError::ExemplarCount {
                    mode: "vanilla",
                    expected: VANILLA_PROMPT_EXEMPLARS,
                    got: exemplars.len(),
                });
            }
            for ex in exemplars {
                if ex.label.rank() != Some(0) {
                    return Err(TemplateError::NonTopExemplar {
                        label: ex.label.render(),
                    });
                }
                lines.push(format!(
                    "{} Query: {}",
                    format_vanilla_input(&ex.product, cfg),
                    ex.query_text
                ));
            }
            lines.push(format!("{} Query:", format_vanilla_input(target, cfg)));
        }
        PromptMode::LabelCond => {
            let target_label = target_label.ok_or(TemplateError::MissingTargetLabel)?;
            let space = target_label.space();
            let labels = space.labels().ok_or(TemplateError::MissingTargetLabel)?;
            for (rank, name) in labels.iter().enumerate() {
                let got = exemplars
                    .iter()
                    .filter(|ex| ex.label.rank() == Some(rank))
                    .count();
                if got != LABELCOND_EXEMPLARS_PER_LABEL {
                    return Err(TemplateError::ExemplarCoverage {
                        label: name.clone(),
                        expected: LABELCOND_EXEMPLARS_PER_LABEL,
                        got,
                    });
                }
            }
            let expected = labels.len() * LABELCOND_EXEMPLARS_PER_LABEL;
            if exemplars.len() != expected {
                return Err(TemplateError::ExemplarCount {
                    mode: "label-conditioned",
                    expected,
                    got: exemplars.len(),
                });
            }
            // Label-major order, stable within a label.
            let mut ordered: Vec<&Exemplar> = exemplars.iter().collect();
            ordered.sort_by_key(|ex| ex.label.rank().unwrap_or(usize::MAX));
            for ex in ordered {
                lines.push(format!(
                    "{} Query: {}",
                    format_labelcond_input(&ex.product, &ex.label, cfg),
                    ex.query_text
                ));
            }
            lines.push(format!(
                "{} Query:",
                format_labelcond_input(target, target_label, cfg)
            ));
        }
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::LabelSpace;
    use indexmap::IndexMap;
    use proptest::prelude::*;

    fn product(title: &str, description: &str) -> ProductDoc {
        ProductDoc {
            product_id: "p1".into(),
            title: title.into(),
            description: description.into(),
            extras: IndexMap::new(),
        }
    }

    #[test]
    fn labelcond_scaffold_matches_published_format() {
        let esci = LabelSpace::builtin("esci").unwrap();
        let p = product(
            "Korean Skin Care K Beauty .",
            "Seoul Ceuticals CE Ferulic Serum. ..",
        );
        let text =
            format_labelcond_input(&p, &esci.parse("E").unwrap(), &TemplateConfig::default());
        assert_eq!(
            text,
            "Label: E Product: Korean Skin Care K Beauty . Description: Seoul Ceuticals CE Ferulic Serum. .."
        );
    }

    #[test]
    fn vanilla_scaffold_omits_label() {
        let p = product("T", "D");
        let text = format_vanilla_input(&p, &TemplateConfig::default());
        assert_eq!(text, "Product: T Description: D");
    }

    #[test]
    fn empty_description_drops_field() {
        let esci = LabelSpace::builtin("esci").unwrap();
        let p = product("some title", "");
        let cfg = TemplateConfig {
            include_description: false,
            ..TemplateConfig::default()
        };
        let text = format_labelcond_input(&p, &esci.parse("I").unwrap(), &cfg);
        assert_eq!(text, "Label: I Product: some title");
        // Same with the flag on: there is nothing to describe.
        let text =
            format_labelcond_input(&p, &esci.parse("I").unwrap(), &TemplateConfig::default());
        assert_eq!(text, "Label: I Product: some title");
    }

    #[test]
    fn budget_equal_to_scaffold_drops_description() {
        let p = product("chair", "a long description");
        let scaffold = "Product: chair";
        let cfg = TemplateConfig {
            max_input_chars: scaffold.chars().count(),
            ..TemplateConfig::default()
        };
        assert_eq!(format_vanilla_input(&p, &cfg), scaffold);
    }

    #[test]
    fn long_description_truncates_inside_description() {
        let p = product("chair", &"word ".repeat(500));
        let cfg = TemplateConfig {
            max_input_chars: 60,
            ..TemplateConfig::default()
        };
        let text = format_vanilla_input(&p, &cfg);
        assert!(text.chars().count() <= 60);
        assert!(text.starts_with("Product: chair Description: word"));
    }

    #[test]
    fn extras_render_in_field_order() {
        let mut p = product("TI-84", "graphing calculator");
        p.extras
            .insert("bullet_point".into(), "backlit display".into());
        p.extras.insert("brand".into(), "TI".into());
        let cfg = TemplateConfig {
            field_order: vec!["brand".into(), "bullet_point".into()],
            ..TemplateConfig::default()
        };
        assert_eq!(
            format_vanilla_input(&p, &cfg),
            "Product: TI-84 Description: graphing calculator Brand: TI Bullet Point: backlit display"
        );
    }

    #[test]
    fn determinism() {
        let p = product("solid wood platform bed", "a nice bed");
        let cfg = TemplateConfig::default();
        assert_eq!(
            format_vanilla_input(&p, &cfg),
            format_vanilla_input(&p, &cfg)
        );
    }

    #[test]
    fn parse_query_output_cases() {
        assert_eq!(
            parse_query_output("Query: wood bed frame").unwrap(),
            "wood bed frame"
        );
        assert_eq!(
            parse_query_output("wood bed frame").unwrap(),
            "wood bed frame"
        );
        assert_eq!(
            parse_query_output("Query: first line\nQuery: second line").unwrap(),
            "first line"
        );
        assert!(matches!(
            parse_query_output("Query:   "),
            Err(TemplateError::EmptyQuery { .. })
        ));
        assert!(parse_query_output("").is_err());
    }

    fn exemplar(space: &LabelSpace, rank: usize, title: &str, query: &str) -> Exemplar {
        Exemplar {
            label: space.label_at(rank).unwrap(),
            product: product(title, ""),
            query_text: query.into(),
        }
    }

    #[test]
    fn vanilla_prompt_shape() {
        let esci = LabelSpace::builtin("esci").unwrap();
        let exemplars: Vec<Exemplar> = (0..8)
            .map(|i| exemplar(&esci, 0, &format!("product {i}"), &format!("query {i}")))
            .collect();
        let target = product("target product", "");
        let prompt = assemble_prompt(
            &exemplars,
            &target,
            PromptMode::Vanilla,
            None,
            &TemplateConfig::default(),
        )
        .unwrap();
        assert_eq!(prompt.lines().count(), 9);
        assert_eq!(
            prompt.lines().last().unwrap(),
            "Product: target product Query:"
        );
        assert!(prompt.starts_with("Product: product 0 Query: query 0\n"));
    }

    #[test]
    fn vanilla_prompt_count_and_label_checks() {
        let esci = LabelSpace::builtin("esci").unwrap();
        let seven: Vec<Exemplar> = (0..7)
            .map(|i| exemplar(&esci, 0, &format!("p{i}"), "q"))
            .collect();
        let target = product("t", "");
        assert!(matches!(
            assemble_prompt(
                &seven,
                &target,
                PromptMode::Vanilla,
                None,
                &TemplateConfig::default()
            ),
            Err(TemplateError::ExemplarCount {
                expected: 8,
                got: 7,
                ..
            })
        ));
        let mut eight: Vec<Exemplar> = (0..8)
            .map(|i| exemplar(&esci, 0, &format!("p{i}"), "q"))
            .collect();
        eight[3] = exemplar(&esci, 2, "p3", "q");
        assert!(matches!(
            assemble_prompt(
                &eight,
                &target,
                PromptMode::Vanilla,
                None,
                &TemplateConfig::default()
            ),
            Err(TemplateError::NonTopExemplar { .. })
        ));
    }

    #[test]
    fn labelcond_prompt_orders_label_major_and_targets_label() {
        let esci = LabelSpace::builtin("esci").unwrap();
        // Provide exemplars shuffled: I, C, S, E, E, S, C, I.
        let ranks = [3, 2, 1, 0, 0, 1, 2, 3];
        let exemplars: Vec<Exemplar> = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| exemplar(&esci, r, &format!("p{i}"), &format!("q{i}")))
            .collect();
        let target = product("target", "");
        let target_label = esci.parse("S").unwrap();
        let prompt = assemble_prompt(
            &exemplars,
            &target,
            PromptMode::LabelCond,
            Some(&target_label),
            &TemplateConfig::default(),
        )
        .unwrap();
        let lines: Vec<&str> = prompt.lines().collect();
        assert_eq!(lines.len(), 9);
        assert!(lines[0].starts_with("Label: E Product:"));
        assert!(lines[1].starts_with("Label: E Product:"));
        assert!(lines[2].starts_with("Label: S Product:"));
        assert!(lines[6].starts_with("Label: I Product:"));
        assert!(
            lines[8].starts_with("Label: S Product:"),
            "target block: {}",
            lines[8]
        );
        assert!(lines[8].ends_with("Query:"));
    }

    #[test]
    fn labelcond_prompt_names_missing_label() {
        let esci = LabelSpace::builtin("esci").unwrap();
        // Two E, two S, two C, but zero I (replaced by extra E pair).
        let ranks = [0, 0, 1, 1, 2, 2, 0, 0];
        let exemplars: Vec<Exemplar> = ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| exemplar(&esci, r, &format!("p{i}"), "q"))
            .collect();
        let target = product("t", "");
        let target_label = esci.parse("E").unwrap();
        match assemble_prompt(
            &exemplars,
            &target,
            PromptMode::LabelCond,
            Some(&target_label),
            &TemplateConfig::default(),
        ) {
            Err(TemplateError::ExemplarCoverage {
                label,
                expected: 2,
                got,
            }) => {
                assert!(label == "E" || label == "I");
                assert_ne!(got, 2);
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn labelcond_is_vanilla_plus_prefix(
            title in "[a-zA-Z0-9 ]{1,40}",
            description in "[a-zA-Z0-9 ]{0,80}",
        ) {
            prop_assume!(!title.trim().is_empty());
            let esci = LabelSpace::builtin("esci").unwrap();
            let label = esci.parse("S").unwrap();
            let p = product(&title, &description);
            // Large budget: compare before truncation effects.
            let cfg = TemplateConfig { max_input_chars: 10_000, ..TemplateConfig::default() };
            let vanilla = format_vanilla_input(&p, &cfg);
            let labelcond = format_labelcond_input(&p, &label, &cfg);
            prop_assert_eq!(labelcond, format!("Label: S {vanilla}"));
        }

        #[test]
        fn parse_inverts_query_rendering(query in "[a-zA-Z0-9][a-zA-Z0-9 ]{0,60}[a-zA-Z0-9]") {
            let rendered = format!("Query: {query}");
            prop_assert_eq!(parse_query_output(&rendered).unwrap(), query);
        }

        #[test]
        fn formatted_length_never_exceeds_budget(
            title in "[a-zA-Z ]{1,30}",
            description in "[a-zA-Z ]{0,200}",
            budget_slack in 0usize..120,
        ) {
            prop_assume!(!title.trim().is_empty());
            let p = product(&title, &description);
            let scaffold_len = format!("Product: {title}").chars().count();
            let cfg = TemplateConfig {
                max_input_chars: scaffold_len + budget_slack,
                ..TemplateConfig::default()
            };
            let out = format_vanilla_input(&p, &cfg);
            prop_assert!(out.chars().count() <= cfg.max_input_chars.max(scaffold_len));
        }
    }
}
