//! Branch-level retrieval over the CEE: scenario labels per branch,
//! activation by keyword overlap, few-sample verification with label
//! refinement, and depth-bounded node retrieval.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cee::{CeeTree, NodeId, BRANCH_DEPTH};
use crate::llm::{bind, render, Gateway, PromptKind};
use crate::planner::FunctionSummary;
use crate::pool::bounded_map;
use crate::text;

pub const BUNDLED_SAMPLES: &str = include_str!("../data/samples.json");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RagConfig {
    /// Pass-rate and accuracy threshold.
    pub theta: f64,
    /// Relevance threshold.
    pub delta: f64,
    pub max_depth: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig { theta: 0.7, delta: 0.25, max_depth: 5 }
    }
}

impl RagConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.theta) || !(0.0..=1.0).contains(&self.delta) {
            return Err("theta and delta must lie in [0, 1]".into());
        }
        if self.max_depth < BRANCH_DEPTH {
            return Err(format!("max_depth must be at least {BRANCH_DEPTH}"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RagError {
    #[error("cannot read samples: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed samples: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("sample `{id}`: {detail}")]
    Invalid { id: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BranchLabel {
    pub branch: String,
    pub text: String,
    pub keywords: BTreeSet<String>,
    pub revision: u32,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Query {
    pub unit_id: String,
    pub text: String,
    pub hints: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationSample {
    pub id: String,
    pub text: String,
    pub expected_branch: String,
    pub expected_types: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchReport {
    pub branch: String,
    pub pass_rates: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub mean_pass: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub refined: bool,
    pub insufficient_data: bool,
}

impl BranchReport {
    pub fn below(&self, theta: f64) -> bool {
        matches!(self.mean_pass, Some(p) if p < theta) || matches!(self.mean_accuracy, Some(a) if a < theta)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct FailureRecord {
    pub sample_id: String,
    pub branch: String,
    pub missing_keywords: BTreeSet<String>,
    pub note: String,
}

/// Append-only failure log shared by concurrent verifiers.
#[derive(Debug, Default)]
pub struct EnvContext {
    records: Mutex<Vec<FailureRecord>>,
}

impl EnvContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&self, record: FailureRecord) {
        self.records.lock().unwrap().push(record);
    }

    pub fn records(&self) -> Vec<FailureRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_branch(&self, branch: &str) -> Vec<FailureRecord> {
        let mut v: Vec<_> = self.records().into_iter().filter(|r| r.branch == branch).collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub node: String,
    pub branch: String,
    pub depth: usize,
    pub relevance: f64,
}

pub fn parse_samples(json: &str, tree: &CeeTree) -> Result<Vec<VerificationSample>, RagError> {
    let samples: Vec<VerificationSample> = serde_json::from_str(json)?;
    for s in &samples {
        let invalid = |detail: String| RagError::Invalid { id: s.id.clone(), detail };
        match tree.get(&s.expected_branch) {
            Some(n) if n.depth == BRANCH_DEPTH => {}
            _ => return Err(invalid(format!("`{}` is not a branch root", s.expected_branch))),
        }
        for t in &s.expected_types {
            if tree.branch_of(t).ok() != Some(s.expected_branch.as_str()) {
                return Err(invalid(format!("`{t}` is not in branch `{}`", s.expected_branch)));
            }
        }
        if s.text.trim().is_empty() {
            return Err(invalid("empty text".into()));
        }
    }
    Ok(samples)
}

pub fn load_samples(path: &Path, tree: &CeeTree) -> Result<Vec<VerificationSample>, RagError> {
    parse_samples(&std::fs::read_to_string(path)?, tree)
}

/// Text handed to label generation for a branch.
fn branch_sample_desc(tree: &CeeTree, root: NodeId) -> String {
    let n = tree.node(root);
    if n.info.dangerous_operations.trim().is_empty() {
        n.scenario.clone()
    } else {
        n.info.dangerous_operations.clone()
    }
}

fn scenario_terms(tree: &CeeTree, root: NodeId) -> BTreeSet<String> {
    tree.subtree(root).into_iter().flat_map(|id| text::terms(&tree.node(id).scenario)).collect()
}

/// Union of node term sets over a branch.
pub fn branch_vocabulary(tree: &CeeTree, root: NodeId) -> BTreeSet<String> {
    tree.subtree(root).into_iter().flat_map(|id| tree.node_terms(id)).collect()
}

fn fallback_label(tree: &CeeTree, root: NodeId) -> BranchLabel {
    let scenarios: Vec<&str> =
        tree.subtree(root).into_iter().map(|id| tree.node(id).scenario.as_str()).filter(|s| !s.is_empty()).collect();
    BranchLabel {
        branch: tree.node(root).name.clone(),
        text: scenarios.join("; "),
        keywords: scenario_terms(tree, root),
        revision: 0,
        degraded: true,
    }
}

fn generate_scenario(gateway: &Gateway, ename: &str, sample_desc: &str) -> Option<String> {
    let prompt = render(
        PromptKind::CeeGenScenario,
        &bind([("sample_desc", sample_desc.to_string()), ("ename", ename.to_string())]),
    );
    match prompt.and_then(|p| gateway.complete_structured(PromptKind::CeeGenScenario, &p)) {
        Ok(c) => c.payload.and_then(|v| v["scenario"].as_str().map(str::to_string)),
        Err(e) => {
            log::warn!("{ename}: label generation failed ({e})");
            None
        }
    }
}

/// One label per branch root, in tree order.
pub fn assign_labels(tree: &CeeTree, gateway: &Gateway, workers: usize) -> Vec<BranchLabel> {
    bounded_map(&tree.branch_roots(), workers, |&root| {
        let name = &tree.node(root).name;
        match generate_scenario(gateway, name, &branch_sample_desc(tree, root)) {
            Some(label_text) => {
                let mut keywords = text::terms(&label_text);
                keywords.extend(scenario_terms(tree, root));
                BranchLabel { branch: name.clone(), text: label_text, keywords, revision: 0, degraded: false }
            }
            None => {
                gateway.note_degraded();
                fallback_label(tree, root)
            }
        }
    })
}

/// Hinted branches plus branches sharing at least one keyword with the query.
pub fn activate(query: &Query, labels: &[BranchLabel]) -> BTreeSet<String> {
    let terms = text::terms(&query.text);
    let mut out = query.hints.clone();
    out.extend(
        labels.iter().filter(|l| l.keywords.iter().any(|k| terms.contains(k))).map(|l| l.branch.clone()),
    );
    out
}

pub fn relevance(node_terms: &BTreeSet<String>, context: &BTreeSet<String>) -> f64 {
    if node_terms.is_empty() {
        return 0.0;
    }
    node_terms.intersection(context).count() as f64 / node_terms.len() as f64
}

/// Nodes of the activated branches, depth 2..=D, with relevance ≥ δ,
/// sorted by relevance descending then name.
pub fn retrieve(
    summary: Option<&FunctionSummary>,
    queries: &[Query],
    branches: &BTreeSet<String>,
    tree: &CeeTree,
    config: &RagConfig,
    workers: usize,
) -> Vec<Retrieval> {
    let mut context: BTreeSet<String> = queries.iter().flat_map(|q| text::terms(&q.text)).collect();
    if let Some(s) = summary {
        context.extend(s.terms());
    }
    let roots: Vec<NodeId> = branches.iter().filter_map(|b| tree.id(b).ok()).collect();
    let per_branch = bounded_map(&roots, workers, |&root| {
        let branch = tree.node(root).name.clone();
        tree.subtree(root)
            .into_iter()
            .filter(|&id| tree.node(id).depth <= config.max_depth)
            .filter_map(|id| {
                let r = relevance(&tree.node_terms(id), &context);
                (r >= config.delta).then(|| Retrieval {
                    node: tree.node(id).name.clone(),
                    branch: branch.clone(),
                    depth: tree.node(id).depth,
                    relevance: r,
                })
            })
            .collect::<Vec<_>>()
    });
    let mut out: Vec<Retrieval> = per_branch.into_iter().flatten().collect();
    out.sort_by(|a, b| b.relevance.total_cmp(&a.relevance).then_with(|| a.node.cmp(&b.node)));
    out
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Score one branch against its samples, logging failures to `env`.
pub fn verify(
    branch: &str,
    samples: &[VerificationSample],
    labels: &[BranchLabel],
    tree: &CeeTree,
    config: &RagConfig,
    env: &EnvContext,
) -> BranchReport {
    let mine: Vec<&VerificationSample> = samples.iter().filter(|s| s.expected_branch == branch).collect();
    let label = labels.iter().find(|l| l.branch == branch);
    let vocabulary = tree.id(branch).map(|id| branch_vocabulary(tree, id)).unwrap_or_default();
    let mut report = BranchReport {
        branch: branch.to_string(),
        pass_rates: Vec::new(),
        accuracies: Vec::new(),
        mean_pass: None,
        mean_accuracy: None,
        refined: false,
        insufficient_data: mine.is_empty(),
    };
    for sample in mine {
        let query = Query { unit_id: sample.id.clone(), text: sample.text.clone(), hints: BTreeSet::new() };
        let active = activate(&query, labels);
        let p = if active.contains(branch) { 1.0 } else { 0.0 };
        let retrieved: BTreeSet<String> =
            retrieve(None, std::slice::from_ref(&query), &active, tree, config, 1).into_iter().map(|r| r.node).collect();
        let a = sample.expected_types.intersection(&retrieved).count() as f64 / sample.expected_types.len().max(1) as f64;
        if p < config.theta || a < config.theta {
            let have = label.map(|l| &l.keywords);
            let missing: BTreeSet<String> = text::terms(&sample.text)
                .intersection(&vocabulary)
                .filter(|k| have.is_none_or(|h| !h.contains(*k)))
                .cloned()
                .collect();
            env.append(FailureRecord {
                sample_id: sample.id.clone(),
                branch: branch.to_string(),
                missing_keywords: missing,
                note: format!("pass {p}, accuracy {a:.2}"),
            });
        }
        report.pass_rates.push(p);
        report.accuracies.push(a);
    }
    report.mean_pass = mean(&report.pass_rates);
    report.mean_accuracy = mean(&report.accuracies);
    report
}

/// Grow a label with the keywords its failures were missing.
pub fn refine_label(label: &BranchLabel, env: &EnvContext, tree: &CeeTree, gateway: &Gateway) -> BranchLabel {
    let records = env.for_branch(&label.branch);
    let mut next = label.clone();
    next.revision += 1;
    if records.is_empty() {
        log::warn!("{}: refinement requested without failure records", label.branch);
        return next;
    }
    let missing: BTreeSet<String> = records.into_iter().flat_map(|r| r.missing_keywords).collect();
    next.keywords.extend(missing.iter().cloned());
    if missing.is_empty() {
        return next;
    }
    let base = tree.id(&label.branch).map(|id| branch_sample_desc(tree, id)).unwrap_or_default();
    let desc = format!("{base} Also seen with: {}.", missing.iter().cloned().collect::<Vec<_>>().join(", "));
    match generate_scenario(gateway, &label.branch, &desc) {
        Some(t) => next.text = t,
        None => {
            gateway.note_degraded();
            next.degraded = true;
        }
    }
    next
}

#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub reports: Vec<BranchReport>,
    pub failures: Vec<FailureRecord>,
    pub refinements: usize,
}

/// Verify every branch that has samples; refine each failing branch once
/// and report its re-verified scores.
pub fn verify_and_refine(
    labels: &mut [BranchLabel],
    samples: &[VerificationSample],
    tree: &CeeTree,
    config: &RagConfig,
    gateway: &Gateway,
    workers: usize,
) -> Verification {
    let branches: Vec<String> =
        samples.iter().map(|s| s.expected_branch.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let env = EnvContext::new();
    let snapshot = labels.to_vec();
    let mut reports = bounded_map(&branches, workers, |b| verify(b, samples, &snapshot, tree, config, &env));
    let failing: Vec<usize> = (0..reports.len()).filter(|&i| reports[i].below(config.theta)).collect();
    let mut refinements = 0;
    for &i in &failing {
        let branch = &reports[i].branch;
        if let Some(label) = labels.iter_mut().find(|l| &l.branch == branch) {
            *label = refine_label(label, &env, tree, gateway);
            refinements += 1;
        }
    }
    let scratch = EnvContext::new();
    for &i in &failing {
        let mut again = verify(&reports[i].branch, samples, labels, tree, config, &scratch);
        again.refined = true;
        reports[i] = again;
    }
    let mut failures = env.records();
    failures.sort();
    Verification { reports, failures, refinements }
}

/// Query text for a segment: its code plus the unit summary.
pub fn query_for(unit_id: &str, segment_text: &str, summary: &FunctionSummary, hints: &BTreeSet<String>) -> Query {
    let mut t = segment_text.to_string();
    if !summary.text.is_empty() {
        t.push('\n');
        t.push_str(&summary.text);
    }
    Query { unit_id: unit_id.to_string(), text: t, hints: hints.clone() }
}

/// `- [Branch] Node: scenario` per retrieval, the Predator prompt's list.
pub fn branch_listing(tree: &CeeTree, retrievals: &[Retrieval]) -> String {
    retrievals
        .iter()
        .map(|r| {
            let scenario = tree.get(&r.node).map(|n| n.scenario.as_str()).unwrap_or_default();
            format!("- [{}] {}: {}", r.branch, r.node, scenario)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parse `- [Branch] Node: ...` lines back into node names, in order.
pub fn parse_listing(listing: &str) -> Vec<String> {
    listing
        .lines()
        .filter_map(|l| {
            let rest = l.trim().strip_prefix("- [")?;
            let (_, rest) = rest.split_once("] ")?;
            Some(rest.split(':').next()?.trim().to_string())
        })
        .collect()
}

/// Offline type prediction: listed nodes whose keywords the code calls,
/// keeping only the most specific of related hits.
pub fn heuristic_prediction(tree: &CeeTree, code: &str, listed: &[String]) -> Vec<String> {
    let calls = text::callee_tokens(&crate::syntax::mask(code));
    let hits: BTreeSet<&str> = listed
        .iter()
        .filter(|n| tree.id(n).is_ok_and(|id| tree.keywords(id).iter().any(|k| calls.contains(k))))
        .map(String::as_str)
        .collect();
    hits.iter()
        .filter(|&&h| !hits.iter().any(|&o| o != h && tree.is_subtype(o, h).unwrap_or(false)))
        .map(|h| h.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Prediction {
    pub types: Vec<String>,
    pub degraded: bool,
}

/// Ask the backend for the concrete types a segment raises, restricted to
/// retrieved nodes. Falls back to the detected types.
pub fn predict(
    code: &str,
    summary: &FunctionSummary,
    retrievals: &[Retrieval],
    detected: &BTreeSet<String>,
    tree: &CeeTree,
    gateway: &Gateway,
) -> Prediction {
    let allowed: BTreeSet<&str> = retrievals.iter().map(|r| r.node.as_str()).collect();
    let fallback = || detected.iter().filter(|t| tree.contains(t)).cloned().collect::<Vec<_>>();
    if retrievals.is_empty() {
        return Prediction { types: fallback(), degraded: false };
    }
    let prompt = render(
        PromptKind::Predator,
        &bind([
            ("code_unit", code.to_string()),
            ("code_summary", summary.text.clone()),
            ("exception_branches", branch_listing(tree, retrievals)),
        ]),
    );
    match prompt.and_then(|p| gateway.complete_structured(PromptKind::Predator, &p)) {
        Ok(c) => {
            let payload = c.payload.expect("structured payload");
            let mut types: Vec<String> = payload["ExceptionNodes"]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(|n| n["ExceptionType"].as_str())
                .filter(|t| allowed.contains(t))
                .map(str::to_string)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            if types.is_empty() {
                types = fallback();
            }
            Prediction { types, degraded: false }
        }
        Err(e) => {
            log::warn!("type prediction unavailable ({e}); using detected types");
            gateway.note_degraded();
            Prediction { types: fallback(), degraded: true }
        }
    }
}

/// Verification samples grouped by branch, for reporting.
pub fn samples_by_branch(samples: &[VerificationSample]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for s in samples {
        *m.entry(s.expected_branch.as_str()).or_insert(0) += 1;
    }
    m
}
