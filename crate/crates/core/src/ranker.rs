//! Likelihood and suitability scoring, grading, ranking and selection of
//! candidate exceptions.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cee::{CeeTree, HandlingStrategy};
use crate::llm::{bind, render, Gateway, PromptKind};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Selection threshold; grades must exceed it strictly.
    pub gamma: f64,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig { alpha: 0.5, beta: 0.5, gamma: 0.6 }
    }
}

impl RankConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.alpha < 0.0 || self.beta < 0.0 || (self.alpha + self.beta).is_nan() || self.alpha + self.beta <= 0.0 {
            return Err("alpha and beta must be non-negative with a positive sum".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("unknown exception type `{0}`")]
    UnknownType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scores {
    pub likelihood: f64,
    pub suitability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedException {
    pub type_name: String,
    pub likelihood: f64,
    pub suitability: f64,
    pub grade: f64,
    #[serde(skip)]
    pub strategy: Option<HandlingStrategy>,
    pub segment: String,
}

pub fn grade(likelihood: f64, suitability: f64, config: &RankConfig) -> f64 {
    config.alpha * likelihood + config.beta * suitability
}

fn clamp(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Fraction of the node's property terms present in the code and summary.
pub fn heuristic_likelihood(tree: &CeeTree, type_name: &str, code: &str, summary: &str) -> f64 {
    let Some(node) = tree.get(type_name) else { return 0.0 };
    let property = text::terms(&node.property);
    if property.is_empty() {
        return 0.0;
    }
    let mut seen = text::terms(code);
    seen.extend(text::terms(summary));
    property.intersection(&seen).count() as f64 / property.len() as f64
}

pub fn heuristic_suitability(tree: &CeeTree, type_name: &str) -> f64 {
    if tree.strategy_of(type_name).is_ok() {
        1.0
    } else {
        0.5
    }
}

/// `[Type] handle logic` per candidate.
pub fn node_listing(tree: &CeeTree, types: &[String]) -> String {
    types
        .iter()
        .map(|t| {
            let logic = tree.strategy_of(t).map(|s| s.handle_logic).unwrap_or_else(|_| "no strategy".into());
            format!("- [{t}] {logic}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Offline ranker reply for a rendered `exception_nodes` listing.
pub fn heuristic_scores(tree: &CeeTree, listing: &str, code: &str, summary: &str) -> Value {
    let items: Vec<Value> = listing
        .lines()
        .filter_map(|l| l.trim().strip_prefix("- [")?.split_once(']').map(|(t, _)| t.to_string()))
        .map(|t| {
            json!({
                "ExceptionType": t,
                "LikelihoodScore": heuristic_likelihood(tree, &t, code, summary),
                "SuitabilityScore": heuristic_suitability(tree, &t),
            })
        })
        .collect();
    json!({ "Exceptions": items })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scored {
    pub type_name: String,
    pub scores: Scores,
}

/// Score every candidate of one segment with a single ranker call.
/// Types the reply omits, and every type when the backend fails, get the
/// offline formula.
pub fn score(
    types: &[String],
    code: &str,
    summary: &str,
    tree: &CeeTree,
    gateway: &Gateway,
) -> Result<(Vec<Scored>, bool), RankError> {
    if let Some(bad) = types.iter().find(|t| !tree.contains(t)) {
        return Err(RankError::UnknownType(bad.clone()));
    }
    if types.is_empty() {
        return Ok((Vec::new(), false));
    }
    let prompt = render(
        PromptKind::Ranker,
        &bind([
            ("exception_nodes", node_listing(tree, types)),
            ("code", code.to_string()),
            ("code_summary", summary.to_string()),
        ]),
    );
    let reply = prompt.and_then(|p| gateway.complete_structured(PromptKind::Ranker, &p));
    let (payload, degraded) = match reply {
        Ok(c) => (c.payload.expect("structured payload"), false),
        Err(e) => {
            log::warn!("ranker unavailable ({e}); scoring offline");
            gateway.note_degraded();
            (heuristic_scores(tree, &node_listing(tree, types), code, summary), true)
        }
    };
    let items = payload["Exceptions"].as_array().cloned().unwrap_or_default();
    let out = types
        .iter()
        .map(|t| {
            let hit = items.iter().find(|i| i["ExceptionType"].as_str() == Some(t));
            let scores = match hit {
                Some(i) => Scores {
                    likelihood: clamp(i["LikelihoodScore"].as_f64().unwrap_or(0.0)),
                    suitability: clamp(i["SuitabilityScore"].as_f64().unwrap_or(0.0)),
                },
                None => Scores {
                    likelihood: heuristic_likelihood(tree, t, code, summary),
                    suitability: heuristic_suitability(tree, t),
                },
            };
            Scored { type_name: t.clone(), scores }
        })
        .collect();
    Ok((out, degraded))
}

fn order(a: &RankedException, b: &RankedException) -> Ordering {
    b.grade
        .total_cmp(&a.grade)
        .then_with(|| a.type_name.cmp(&b.type_name))
        .then_with(|| a.segment.cmp(&b.segment))
}

/// Grade descending, then type name, then segment; stable.
pub fn rank(mut items: Vec<RankedException>) -> Vec<RankedException> {
    items.sort_by(order);
    items
}

/// Items with grade strictly above γ, order preserved.
pub fn select(ranked: &[RankedException], gamma: f64) -> Vec<RankedException> {
    ranked.iter().filter(|r| r.grade > gamma).cloned().collect()
}

/// Candidates at or below γ, for the rejection log.
pub fn rejected(ranked: &[RankedException], gamma: f64) -> Vec<RankedException> {
    ranked.iter().filter(|r| r.grade <= gamma).cloned().collect()
}

/// Build graded entries for one segment.
pub fn build(
    scored: &[Scored],
    segment: &str,
    tree: &CeeTree,
    config: &RankConfig,
) -> Vec<RankedException> {
    scored
        .iter()
        .map(|s| RankedException {
            type_name: s.type_name.clone(),
            likelihood: s.scores.likelihood,
            suitability: s.scores.suitability,
            grade: grade(s.scores.likelihood, s.scores.suitability, config),
            strategy: tree.strategy_of(&s.type_name).ok(),
            segment: segment.to_string(),
        })
        .collect()
}

/// Names of the types in a list, deduplicated.
pub fn type_names(items: &[RankedException]) -> BTreeSet<String> {
    items.iter().map(|r| r.type_name.clone()).collect()
}
