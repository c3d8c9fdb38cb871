//! Detection and generation quality metrics, and corpus evaluation against
//! ground-truth sidecars.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cee::{CeeTree, BRANCH_DEPTH};
use crate::llm::{bind, render, Gateway, PromptKind};
use crate::pool::bounded_map;
use crate::syntax::{self, StmtKind, CompoundKind};

pub type Span = (usize, usize);

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed sidecar {path}: {detail}")]
    Sidecar { path: String, detail: String },
    #[error("files without a counterpart: {0:?}")]
    KeyMismatch(Vec<String>),
    #[error("at least one ACRS rule is required")]
    NoRules,
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return a.len().max(b.len());
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Strip trailing whitespace per line and collapse runs of blank lines.
pub fn normalize_code(text: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for line in text.lines() {
        let line = line.trim_end();
        if line.is_empty() && out.last().is_none_or(|l| l.is_empty()) {
            continue;
        }
        out.push(line);
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    out.join("\n")
}

/// Distance and normalizer for the similarity of `g` to `a`.
pub fn edit_terms(g: &str, a: &str, raw: bool) -> (usize, usize) {
    let (g, a) = if raw { (g.to_string(), a.to_string()) } else { (normalize_code(g), normalize_code(a)) };
    (levenshtein(&g, &a), g.chars().count().max(a.chars().count()))
}

/// 1 − lev/max(|G|,|A|); two empty texts count as identical.
pub fn edit_similarity(g: &str, a: &str, raw: bool) -> f64 {
    let (d, m) = edit_terms(g, a, raw);
    if m == 0 {
        1.0
    } else {
        1.0 - d as f64 / m as f64
    }
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64 * 100.0)
}

pub fn cov_counts(s: &[Span], d: &[Span]) -> (usize, usize) {
    let found: BTreeSet<&Span> = d.iter().collect();
    (s.iter().filter(|x| found.contains(x)).count(), s.len())
}

pub fn cov(s: &[Span], d: &[Span]) -> Option<f64> {
    let (hit, n) = cov_counts(s, d);
    pct(hit, n)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CovPCounts {
    pub tp: usize,
    pub fp: usize,
    pub p: usize,
}

impl CovPCounts {
    pub fn combine(self, o: CovPCounts) -> CovPCounts {
        CovPCounts { tp: self.tp + o.tp, fp: self.fp + o.fp, p: self.p + o.p }
    }

    pub fn fn_count(&self) -> usize {
        self.p - self.tp
    }

    pub fn percent(&self) -> Option<f64> {
        (self.p > 0).then(|| self.tp as f64 / (self.p + self.fp) as f64 * 100.0)
    }
}

pub fn cov_p_counts(t: &[Span], t_hat: &[Span]) -> CovPCounts {
    let truth: BTreeSet<&Span> = t.iter().collect();
    let tp = t_hat.iter().filter(|x| truth.contains(x)).count();
    CovPCounts { tp, fp: t_hat.len() - tp, p: t.len() }
}

pub fn cov_p(t: &[Span], t_hat: &[Span]) -> Option<f64> {
    cov_p_counts(t, t_hat).percent()
}

/// Detected types that equal or specialise an actual type.
pub fn acc_counts(e: &BTreeSet<String>, e_hat: &BTreeSet<String>, tree: &CeeTree) -> (usize, usize) {
    let correct = e_hat
        .iter()
        .filter(|x| e.contains(*x) || e.iter().any(|t| tree.is_subtype(x, t).unwrap_or(false)))
        .count();
    (correct, e_hat.len())
}

pub fn acc(e: &BTreeSet<String>, e_hat: &BTreeSet<String>, tree: &CeeTree) -> Option<f64> {
    let (c, n) = acc_counts(e, e_hat, tree);
    pct(c, n)
}

pub fn crs(good: usize, total: usize) -> Option<f64> {
    pct(good, total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcrsRule {
    pub id: String,
    pub weight: f64,
    pub q: f64,
    pub max: f64,
}

/// Σ w·q/Q over Σ w, rules with Q = 0 left out.
pub fn acrs(rules: &[AcrsRule]) -> Result<f64, EvalError> {
    let live: Vec<&AcrsRule> = rules.iter().filter(|r| r.max > 0.0).collect();
    if live.is_empty() {
        return Err(EvalError::NoRules);
    }
    let w: f64 = live.iter().map(|r| r.weight).sum();
    Ok(live.iter().map(|r| r.weight * r.q / r.max).sum::<f64>() / w)
}

pub const RULE_IDS: [&str; 6] =
    ["specific-catch", "non-empty-catch", "catch-order", "logging", "no-swallowed-rethrow", "brace-balance"];

/// Weight per rule id; missing ids use the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcrsWeights(pub BTreeMap<String, f64>);

impl Default for AcrsWeights {
    fn default() -> Self {
        AcrsWeights(RULE_IDS.iter().zip([3.0, 2.0, 2.0, 1.0, 1.0, 1.0]).map(|(k, w)| (k.to_string(), w)).collect())
    }
}

impl AcrsWeights {
    pub fn weight(&self, id: &str) -> f64 {
        self.0.get(id).copied().unwrap_or_else(|| AcrsWeights::default().0[id])
    }

    pub fn validate(&self) -> Result<(), String> {
        for (k, w) in &self.0 {
            if !RULE_IDS.contains(&k.as_str()) {
                return Err(format!("unknown ACRS rule `{k}`"));
            }
            if w.is_nan() || *w <= 0.0 {
                return Err(format!("ACRS rule `{k}` needs a positive weight"));
            }
        }
        Ok(())
    }
}

/// Raw ACRS tallies (q, Q) per rule, poolable across files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RuleTally(pub [(usize, usize); 6]);

impl RuleTally {
    pub fn combine(mut self, o: RuleTally) -> RuleTally {
        for i in 0..6 {
            self.0[i].0 += o.0[i].0;
            self.0[i].1 += o.0[i].1;
        }
        self
    }

    pub fn rules(&self, weights: &AcrsWeights) -> Vec<AcrsRule> {
        RULE_IDS
            .iter()
            .zip(self.0)
            .map(|(id, (q, m))| AcrsRule { id: id.to_string(), weight: weights.weight(id), q: q as f64, max: m as f64 })
            .collect()
    }
}

fn logs(body: &str) -> bool {
    static LOG: OnceLock<Regex> = OnceLock::new();
    LOG.get_or_init(|| Regex::new(r"\b(log|logger|LOG|LOGGER)\s*\.|System\.(err|out)\.|printStackTrace\s*\(").unwrap())
        .is_match(body)
}

/// `throw` statements in a catch body must pass the caught exception on.
fn swallows(body: &str, var: &str) -> bool {
    static THROW: OnceLock<Regex> = OnceLock::new();
    let re = THROW.get_or_init(|| Regex::new(r"\bthrow\b([^;]*);").unwrap());
    re.captures_iter(body).any(|c| {
        let arg = &c[1];
        !arg.split(|ch: char| !(ch.is_alphanumeric() || ch == '_' || ch == '$')).any(|w| w == var)
    })
}

/// Tally the six default rules over the try statements of `text` that
/// start inside one of `regions` (all of them when `regions` is None).
pub fn tally(text: &str, regions: Option<&[Span]>, tree: &CeeTree) -> RuleTally {
    let (masked, stmts) = syntax::parse(text, 1);
    let raw: Vec<&str> = text.split('\n').collect();
    let mut t = RuleTally::default();
    syntax::walk(&stmts, &mut |s, _| {
        if s.kind != StmtKind::Compound(CompoundKind::Try) {
            return;
        }
        if let Some(r) = regions {
            if !r.iter().any(|&(a, b)| a <= s.start && s.start <= b) {
                return;
            }
        }
        let catches = syntax::catch_clauses(s);
        let mut legal = true;
        for (i, c) in catches.iter().enumerate() {
            let body = raw.get(c.open - 1..c.close).map(|ls| ls.join("\n")).unwrap_or_default();
            let body = body
                .split_once('{')
                .map(|(_, rest)| rest.rsplit_once('}').map_or(rest, |(b, _)| b).to_string())
                .unwrap_or_default();
            let masked_body: String = (c.open..=c.close).map(|l| masked.line(l)).collect::<Vec<_>>().join("\n");
            let inner = masked_body.split_once('{').map(|(_, r)| r.rsplit_once('}').map_or(r, |(b, _)| b)).unwrap_or("");
            for ty in &c.types {
                t.0[0].1 += 1;
                if tree.get(ty).is_some_and(|n| n.depth >= BRANCH_DEPTH) {
                    t.0[0].0 += 1;
                }
                if catches[..i].iter().any(|e| e.types.iter().any(|u| tree.is_same_or_subtype(ty, u))) {
                    legal = false;
                }
            }
            t.0[1].1 += 1;
            if !inner.trim().is_empty() {
                t.0[1].0 += 1;
            }
            t.0[3].1 += 1;
            if logs(inner) {
                t.0[3].0 += 1;
            }
            t.0[4].1 += 1;
            if !swallows(&body, &c.var) {
                t.0[4].0 += 1;
            }
        }
        t.0[2].1 += 1;
        if legal {
            t.0[2].0 += 1;
        }
    });
    t.0[5].1 += 1;
    if syntax::check_braces(&masked).is_ok() {
        t.0[5].0 += 1;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Good,
    Bad,
}

/// Offline judge: no empty catch, legal order, and no catch of
/// Exception/Throwable when the block's branches name something specific.
pub fn heuristic_verdict(tree: &CeeTree, code: &str, branches: &str) -> Verdict {
    let has_branches = branches.split(|c: char| c == ',' || c.is_whitespace()).any(|b| tree.get(b).is_some_and(|n| n.depth >= BRANCH_DEPTH));
    let (masked, stmts) = syntax::parse(code, 1);
    let mut ok = true;
    syntax::walk(&stmts, &mut |s, _| {
        let catches = syntax::catch_clauses(s);
        for (i, c) in catches.iter().enumerate() {
            let text: String = (c.open..=c.close).map(|l| masked.line(l)).collect::<Vec<_>>().join("\n");
            let inner = text.split_once('{').map(|(_, r)| r.rsplit_once('}').map_or(r, |(b, _)| b)).unwrap_or("");
            if inner.trim().is_empty() {
                ok = false;
            }
            for ty in &c.types {
                if has_branches && (ty == "Exception" || ty == "Throwable") {
                    ok = false;
                }
                if catches[..i].iter().any(|e| e.types.iter().any(|u| tree.is_same_or_subtype(ty, u))) {
                    ok = false;
                }
            }
        }
    });
    if ok {
        Verdict::Good
    } else {
        Verdict::Bad
    }
}

/// Judge one generated block; falls back to the offline rules.
pub fn judge(block: &str, branches: &BTreeSet<String>, tree: &CeeTree, gateway: &Gateway) -> (Verdict, bool) {
    let listing = branches.iter().cloned().collect::<Vec<_>>().join(", ");
    let reply = render(PromptKind::Judge, &bind([("code", block.to_string()), ("exception_branches", listing.clone())]))
        .and_then(|p| gateway.complete_structured(PromptKind::Judge, &p));
    let verdict = reply.ok().and_then(|c| c.payload).and_then(|v| match v["verdict"].as_str()?.trim().to_lowercase().as_str() {
        "good" => Some(Verdict::Good),
        "bad" => Some(Verdict::Bad),
        _ => None,
    });
    match verdict {
        Some(v) => (v, false),
        None => {
            log::warn!("judge unavailable or malformed; applying offline rules");
            gateway.note_degraded();
            (heuristic_verdict(tree, block, &listing), true)
        }
    }
}

/// Ground truth for one source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub sensitive_spans: Vec<Span>,
    pub try_spans: Vec<Span>,
    pub exception_types: BTreeSet<String>,
    pub reference_path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileTruth {
    pub path: String,
    pub sidecar: Sidecar,
    pub reference: String,
}

pub fn sidecar_path(source: &Path) -> PathBuf {
    let stem = source.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    source.with_file_name(format!("{stem}.expect.json"))
}

/// Load the sidecar of `source` and its reference file. Unknown exception
/// types are allowed but logged.
pub fn load_truth(source: &Path, key: &str, tree: &CeeTree) -> Result<FileTruth, EvalError> {
    let path = sidecar_path(source);
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| EvalError::Io { path: p.display().to_string(), source }
    };
    let json = std::fs::read_to_string(&path).map_err(io(&path))?;
    let sidecar: Sidecar = serde_json::from_str(&json)
        .map_err(|e| EvalError::Sidecar { path: path.display().to_string(), detail: e.to_string() })?;
    for &(a, b) in sidecar.sensitive_spans.iter().chain(&sidecar.try_spans) {
        if a == 0 || a > b {
            return Err(EvalError::Sidecar { path: path.display().to_string(), detail: format!("bad span [{a}, {b}]") });
        }
    }
    for t in &sidecar.exception_types {
        if !tree.contains(t) {
            log::warn!("{}: exception type `{t}` is not in the CEE", path.display());
        }
    }
    let reference_path = path.parent().unwrap_or(Path::new(".")).join(&sidecar.reference_path);
    let reference = std::fs::read_to_string(&reference_path).map_err(io(&reference_path))?;
    Ok(FileTruth { path: key.to_string(), sidecar, reference })
}

/// One generated try-catch block with the branches it was made for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedBlock {
    pub text: String,
    pub branches: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDetections {
    pub path: String,
    pub segments: Vec<Span>,
    pub try_spans: Vec<Span>,
    pub types: BTreeSet<String>,
    #[serde(skip)]
    pub generated: String,
    /// Output line ranges of generated blocks in `generated`.
    pub patched_ranges: Vec<Span>,
    pub blocks: Vec<GeneratedBlock>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counts {
    pub s: usize,
    pub s_detected: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub p: usize,
    pub types_correct: usize,
    pub types_detected: usize,
    pub n_good: usize,
    pub n_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileReport {
    pub path: String,
    pub cov: Option<f64>,
    pub cov_p: Option<f64>,
    pub acc: Option<f64>,
    pub es: f64,
    pub crs: Option<f64>,
    pub acrs: Option<f64>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub acrs: Option<f64>,
    pub cov: Option<f64>,
    pub cov_p: Option<f64>,
    pub acc: Option<f64>,
    pub es: f64,
    pub crs: Option<f64>,
    pub counts: Counts,
    pub rules: Vec<AcrsRule>,
    pub files: Vec<FileReport>,
    pub degraded_judgments: usize,
}

fn rounded(v: Option<f64>) -> Option<f64> {
    v.map(|x| (x * 1e6).round() / 1e6)
}

/// Micro-averaged metrics over the corpus plus per-file values.
pub fn evaluate(
    truth: &[FileTruth],
    detections: &[FileDetections],
    tree: &CeeTree,
    weights: &AcrsWeights,
    gateway: &Gateway,
    workers: usize,
) -> Result<EvaluationReport, EvalError> {
    let t_keys: BTreeSet<&str> = truth.iter().map(|t| t.path.as_str()).collect();
    let d_keys: BTreeSet<&str> = detections.iter().map(|d| d.path.as_str()).collect();
    let missing: Vec<String> = t_keys.symmetric_difference(&d_keys).map(|s| s.to_string()).collect();
    if !missing.is_empty() {
        return Err(EvalError::KeyMismatch(missing));
    }
    let by_path: BTreeMap<&str, &FileDetections> = detections.iter().map(|d| (d.path.as_str(), d)).collect();
    let mut sorted: Vec<&FileTruth> = truth.iter().collect();
    sorted.sort_by(|a, b| a.path.cmp(&b.path));

    let jobs: Vec<(usize, &GeneratedBlock)> = sorted
        .iter()
        .enumerate()
        .flat_map(|(i, t)| by_path[t.path.as_str()].blocks.iter().map(move |b| (i, b)))
        .collect();
    let verdicts = bounded_map(&jobs, workers, |(_, b)| judge(&b.text, &b.branches, tree, gateway));

    let mut total = Counts::default();
    let mut pooled_tally = RuleTally::default();
    let (mut lev_sum, mut max_sum) = (0usize, 0usize);
    let mut files = Vec::new();
    let mut degraded = 0;
    for (i, t) in sorted.iter().enumerate() {
        let d = by_path[t.path.as_str()];
        let (s_hit, s_n) = cov_counts(&t.sidecar.sensitive_spans, &d.segments);
        let cp = cov_p_counts(&t.sidecar.try_spans, &d.try_spans);
        let (a_ok, a_n) = acc_counts(&t.sidecar.exception_types, &d.types, tree);
        let mine: Vec<&(Verdict, bool)> = jobs.iter().zip(&verdicts).filter(|((j, _), _)| *j == i).map(|(_, v)| v).collect();
        let good = mine.iter().filter(|v| v.0 == Verdict::Good).count();
        degraded += mine.iter().filter(|v| v.1).count();
        let (lev, max) = edit_terms(&d.generated, &t.reference, false);
        let tally = tally(&d.generated, Some(&d.patched_ranges), tree);
        let counts = Counts {
            s: s_n,
            s_detected: s_hit,
            tp: cp.tp,
            fp: cp.fp,
            fn_: cp.fn_count(),
            p: cp.p,
            types_correct: a_ok,
            types_detected: a_n,
            n_good: good,
            n_total: mine.len(),
        };
        files.push(FileReport {
            path: t.path.clone(),
            cov: rounded(pct(s_hit, s_n)),
            cov_p: rounded(cp.percent()),
            acc: rounded(pct(a_ok, a_n)),
            es: rounded(Some(if max == 0 { 1.0 } else { 1.0 - lev as f64 / max as f64 })).unwrap(),
            crs: rounded(crs(good, mine.len())),
            acrs: rounded(acrs(&tally.rules(weights)).ok()),
            counts: counts.clone(),
        });
        total.s += counts.s;
        total.s_detected += counts.s_detected;
        total.tp += counts.tp;
        total.fp += counts.fp;
        total.fn_ += counts.fn_;
        total.p += counts.p;
        total.types_correct += counts.types_correct;
        total.types_detected += counts.types_detected;
        total.n_good += counts.n_good;
        total.n_total += counts.n_total;
        pooled_tally = pooled_tally.combine(tally);
        lev_sum += lev;
        max_sum += max;
    }
    let rules = pooled_tally.rules(weights);
    let cp = CovPCounts { tp: total.tp, fp: total.fp, p: total.p };
    Ok(EvaluationReport {
        acrs: rounded(acrs(&rules).ok()),
        cov: rounded(pct(total.s_detected, total.s)),
        cov_p: rounded(cp.percent()),
        acc: rounded(pct(total.types_correct, total.types_detected)),
        es: rounded(Some(if max_sum == 0 { 1.0 } else { 1.0 - lev_sum as f64 / max_sum as f64 })).unwrap(),
        crs: rounded(crs(total.n_good, total.n_total)),
        counts: total,
        rules,
        files,
        degraded_judgments: degraded,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.digits$}"))
}

/// Aligned text rendering of a report.
pub fn render_table(r: &EvaluationReport) -> String {
    let mut out = format!(
        "{:<32} {:>6} {:>7} {:>7} {:>7} {:>6} {:>7}\n",
        "file", "ACRS", "COV%", "COV-P%", "ACC%", "ES", "CRS%"
    );
    let row = |name: &str, acrs: Option<f64>, cov, covp, acc, es: f64, crs| {
        format!(
            "{:<32} {:>6} {:>7} {:>7} {:>7} {:>6.3} {:>7}\n",
            name,
            fmt_opt(acrs, 3),
            fmt_opt(cov, 1),
            fmt_opt(covp, 1),
            fmt_opt(acc, 1),
            es,
            fmt_opt(crs, 1)
        )
    };
    for f in &r.files {
        out.push_str(&row(&f.path, f.acrs, f.cov, f.cov_p, f.acc, f.es, f.crs));
    }
    out.push_str(&row("TOTAL", r.acrs, r.cov, r.cov_p, r.acc, r.es, r.crs));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{BackendConfig, FnBackend};
    use std::sync::Arc;

    fn naive(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = naive(ra, rb) + usize::from(x != y);
                sub.min(naive(ra, b) + 1).min(naive(a, rb) + 1)
            }
        }
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        let k: Vec<char> = "kitten".chars().collect();
        let s: Vec<char> = "sitting".chars().collect();
        assert_eq!(naive(&k, &s), 3);
        assert_eq!(levenshtein("same", "same"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(edit_similarity("x = 1;", "x = 1;", false), 1.0);
        assert!((edit_similarity("abc", "abd", false) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(edit_similarity("", "abc", false), 0.0);
        assert_eq!(edit_similarity("", "", false), 1.0);
        assert_eq!(edit_similarity("a  \n\n\n\nb\n", "a\n\nb", false), 1.0);
        assert!(edit_similarity("a  \nb", "a\nb", true) < 1.0);
    }

    #[test]
    fn coverage_examples() {
        let s = [(1, 1), (3, 4), (6, 6), (9, 9)];
        assert_eq!(cov(&s, &s), Some(100.0));
        assert_eq!(cov(&s, &[(1, 1), (3, 4), (6, 6)]), Some(75.0));
        assert_eq!(cov(&s, &[(1, 1), (3, 4), (6, 6), (9, 9), (12, 12)]), Some(100.0));
        assert_eq!(cov(&[], &[(1, 1)]), None);
    }

    #[test]
    fn cov_p_examples() {
        let t = [(1, 1), (3, 3), (5, 5), (7, 7)];
        let t_hat = [(1, 1), (3, 3), (5, 5), (8, 8), (9, 9)];
        assert_eq!(cov_p(&t, &t_hat), Some(50.0));
        assert_eq!(cov_p(&t, &t), Some(100.0));
        assert_eq!(cov_p(&t, &[(2, 2), (4, 4), (6, 6), (8, 8)]), Some(0.0));
        assert_eq!(cov_p(&[], &t), None);
    }

    #[test]
    fn acc_examples() {
        let tree = CeeTree::bundled();
        assert_eq!(acc(&set(&["IOException"]), &set(&["FileNotFoundException"]), &tree), Some(100.0));
        assert_eq!(acc(&set(&["FileNotFoundException"]), &set(&["IOException"]), &tree), Some(0.0));
        assert_eq!(acc(&set(&["IOException"]), &set(&["IOException"]), &tree), Some(100.0));
        assert_eq!(acc(&set(&["IOException"]), &set(&[]), &tree), None);
    }

    #[test]
    fn acrs_examples() {
        let r = |w: f64, q: f64, m: f64| AcrsRule { id: "r".into(), weight: w, q, max: m };
        assert_eq!(acrs(&[r(1.0, 2.0, 2.0)]).unwrap(), 1.0);
        assert!((acrs(&[r(2.0, 1.0, 2.0), r(1.0, 1.0, 1.0)]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(acrs(&[r(2.0, 0.0, 2.0), r(1.0, 0.0, 1.0)]).unwrap(), 0.0);
        assert!(matches!(acrs(&[]), Err(EvalError::NoRules)));
    }

    #[test]
    fn crs_examples() {
        assert_eq!(crs(3, 4), Some(75.0));
        assert_eq!(crs(4, 4), Some(100.0));
        assert_eq!(crs(0, 4), Some(0.0));
        assert_eq!(crs(0, 0), None);
    }

    #[test]
    fn offline_judge() {
        let tree = CeeTree::bundled();
        assert_eq!(heuristic_verdict(&tree, "try {\n  f();\n} catch (Exception e) {}", ""), Verdict::Bad);
        let sample = &tree.get("IOException").unwrap().info.handle_code;
        assert_eq!(heuristic_verdict(&tree, sample, "IOException"), Verdict::Good);
        let broad = "try {\n  f();\n} catch (Exception e) {\n  log(e);\n}";
        assert_eq!(heuristic_verdict(&tree, broad, "IOException"), Verdict::Bad);
        assert_eq!(heuristic_verdict(&tree, broad, ""), Verdict::Good);
    }

    #[test]
    fn malformed_judge_degrades() {
        let tree = CeeTree::bundled();
        let cfg = BackendConfig { max_retries: 2, backoff_base_ms: 0, ..Default::default() };
        let gw = Gateway::new(Arc::new(FnBackend(|_: &str| Ok("no idea".to_string()))), cfg);
        let sample = tree.get("IOException").unwrap().info.handle_code.clone();
        let (v, degraded) = judge(&sample, &set(&["IOException"]), &tree, &gw);
        assert_eq!((v, degraded), (Verdict::Good, true));
        assert_eq!(gw.call_count(), 3);
    }

    #[test]
    fn rule_tally() {
        let tree = CeeTree::bundled();
        let code = "try {\n    f();\n} catch (FileNotFoundException ex) {\n    System.err.println(ex);\n} catch (Exception ex) {\n    throw new RuntimeException(\"x\");\n}";
        let t = tally(code, None, &tree);
        assert_eq!(t.0[0], (1, 2));
        assert_eq!(t.0[1], (2, 2));
        assert_eq!(t.0[2], (1, 1));
        assert_eq!(t.0[3], (1, 2));
        assert_eq!(t.0[4], (1, 2));
        assert_eq!(t.0[5], (1, 1));
        let none = tally("int a = 1;", None, &tree);
        let rules = none.rules(&AcrsWeights::default());
        assert_eq!(acrs(&rules).unwrap(), 1.0);
    }

    #[test]
    fn micro_average_single_file() {
        let tree = CeeTree::bundled();
        let gw = Gateway::new(Arc::new(FnBackend(|_: &str| Ok(r#"{"verdict":"good"}"#.to_string()))), BackendConfig::default());
        let truth = FileTruth {
            path: "A.java".into(),
            sidecar: Sidecar {
                sensitive_spans: vec![(2, 2), (5, 5)],
                try_spans: vec![(2, 2)],
                exception_types: set(&["IOException"]),
                reference_path: "A.ref.java".into(),
            },
            reference: "x".into(),
        };
        let det = FileDetections {
            path: "A.java".into(),
            segments: vec![(2, 2)],
            try_spans: vec![(2, 2), (7, 7)],
            types: set(&["FileNotFoundException"]),
            generated: "x".into(),
            patched_ranges: vec![],
            blocks: vec![GeneratedBlock { text: "b".into(), branches: BTreeSet::new() }],
        };
        let r = evaluate(std::slice::from_ref(&truth), std::slice::from_ref(&det), &tree, &AcrsWeights::default(), &gw, 2).unwrap();
        assert_eq!(r.cov, r.files[0].cov);
        assert_eq!(r.cov, Some(50.0));
        assert_eq!(r.cov_p, Some(50.0));
        assert_eq!(r.acc, Some(100.0));
        assert_eq!(r.es, 1.0);
        assert_eq!(r.crs, Some(100.0));
        let other = FileDetections { path: "B.java".into(), ..det };
        assert!(matches!(evaluate(&[truth], &[other], &tree, &AcrsWeights::default(), &gw, 1), Err(EvalError::KeyMismatch(_))));
    }
}
