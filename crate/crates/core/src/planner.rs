//! Cuts Java files into bounded code units and summarizes them.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::cee::CeeTree;
use crate::llm::{bind, render, Gateway, PromptKind};
use crate::syntax::{self, CompoundKind, StmtKind};
use crate::text;

pub const DEFAULT_LIMIT: usize = 200;
pub const SUMMARY_WORDS: usize = 120;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    /// Path as reported in ids and reports (relative to the input root).
    pub path: String,
    pub text: String,
    /// Lines without their `\n`; a trailing `\r` is kept.
    pub lines: Vec<String>,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let mut lines: Vec<String> = text.split('\n').map(str::to_string).collect();
        if text.ends_with('\n') || text.is_empty() {
            lines.pop();
        }
        SourceFile { path: path.into(), text, lines }
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    /// Text of lines `start..=end`, newline-joined.
    pub fn slice(&self, start: usize, end: usize) -> String {
        self.lines[start - 1..end].join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitKind {
    Method,
    ClassFragment,
    FileFragment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodeUnit {
    pub id: String,
    pub path: String,
    pub start: usize,
    pub end: usize,
    #[serde(skip)]
    pub text: String,
    pub nesting: usize,
    pub kind: UnitKind,
    pub oversize: bool,
}

impl CodeUnit {
    /// Build a unit over raw text; line numbers start at `start`.
    pub fn from_text(path: &str, start: usize, text: &str) -> CodeUnit {
        let lines = text.split('\n').count() - usize::from(text.ends_with('\n'));
        let end = start + lines.max(1) - 1;
        CodeUnit {
            id: unit_id(path, start, end),
            path: path.to_string(),
            start,
            end,
            text: text.to_string(),
            nesting: syntax::nesting_level(text),
            kind: UnitKind::FileFragment,
            oversize: false,
        }
    }

    pub fn line_count(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn contains(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }

    /// Text of one absolute line of the unit.
    pub fn line(&self, line: usize) -> &str {
        self.text.split('\n').nth(line - self.start).unwrap_or("")
    }
}

pub fn unit_id(path: &str, start: usize, end: usize) -> String {
    format!("{path}:{start}-{end}")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("unbalanced braces at line {line}")]
    UnbalancedBraces { line: usize },
}

/// Split `file` into disjoint units covering every line, cutting only
/// between methods. A method longer than `limit` becomes its own unit with
/// the oversize flag set.
pub fn segment(file: &SourceFile, limit: usize) -> Result<Vec<CodeUnit>, PlanError> {
    let limit = limit.max(1);
    let n = file.line_count();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (masked, stmts) = syntax::parse(&file.text, 1);
    syntax::check_braces(&masked).map_err(|f| PlanError::UnbalancedBraces { line: f.line() })?;
    let methods = syntax::method_spans(&stmts);
    let types = type_bodies(&stmts);

    // cut_ok[k]: a unit may end at line k
    let mut cut_ok = vec![true; n + 1];
    for &(s, e) in &methods {
        for ok in cut_ok.iter_mut().take(e.min(n)).skip(s) {
            *ok = false;
        }
    }

    let mut units = Vec::new();
    let mut start = 1;
    while start <= n {
        let end = match methods.iter().find(|&&(s, e)| s == start && e + 1 - s > limit) {
            Some(&(_, e)) => e,
            None => {
                let far = (start + limit - 1).min(n);
                (start..=far).rev().find(|&k| cut_ok[k]).unwrap_or_else(|| {
                    // only reachable when a method starting later runs past the window
                    methods.iter().find(|&&(s, e)| s <= start && start <= e).map(|&(_, e)| e).unwrap_or(far)
                })
            }
        };
        let oversize = end + 1 - start > limit;
        let kind = if methods.contains(&(start, end)) {
            UnitKind::Method
        } else if types.iter().any(|&(open, close)| open < start && end < close) {
            UnitKind::ClassFragment
        } else {
            UnitKind::FileFragment
        };
        let text = file.slice(start, end);
        units.push(CodeUnit {
            id: unit_id(&file.path, start, end),
            path: file.path.clone(),
            start,
            end,
            nesting: syntax::nesting_level(&text),
            text,
            kind,
            oversize,
        });
        start = end + 1;
    }
    Ok(units)
}

/// (open line, close line) of every type body.
fn type_bodies(stmts: &[syntax::Stmt]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    syntax::walk(stmts, &mut |s, _| {
        if s.kind == StmtKind::Compound(CompoundKind::Type) {
            out.extend(s.clauses.iter().map(|c| (c.open, c.close)));
        }
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionSummary {
    pub unit_id: String,
    pub text: String,
    pub identifiers: BTreeSet<String>,
    pub degraded: bool,
}

impl FunctionSummary {
    pub fn terms(&self) -> BTreeSet<String> {
        let mut t = text::terms(&self.text);
        for id in &self.identifiers {
            t.extend(text::terms(id));
        }
        t
    }
}

impl fmt::Display for FunctionSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// API and type tokens of a code fragment: called names plus capitalized
/// identifiers, keywords excluded.
pub fn mentioned_identifiers(code: &str) -> BTreeSet<String> {
    let masked = syntax::mask(code);
    let mut out = text::callee_tokens(&masked);
    out.extend(
        text::identifiers(&masked)
            .into_iter()
            .filter(|w| w.starts_with(|c: char| c.is_ascii_uppercase()))
            .map(str::to_string),
    );
    out.retain(|w| !text::JAVA_KEYWORDS.contains(&w.as_str()));
    out
}

pub fn summarize(unit: &CodeUnit, gateway: &Gateway) -> FunctionSummary {
    let identifiers = mentioned_identifiers(&unit.text);
    let mut summary = FunctionSummary { unit_id: unit.id.clone(), text: String::new(), identifiers, degraded: false };
    if unit.text.trim().is_empty() {
        summary.text = "empty unit".into();
        return summary;
    }
    let reply = render(PromptKind::Planner, &bind([("code_unit", unit.text.clone())]))
        .and_then(|prompt| gateway.complete_structured(PromptKind::Planner, &prompt));
    match reply {
        Ok(c) => {
            let payload = c.payload.expect("structured completion has payload");
            summary.text = text::truncate_words(payload["summary"].as_str().unwrap_or_default(), SUMMARY_WORDS);
        }
        Err(e) => {
            log::warn!("{}: summary unavailable ({e}); using identifiers", unit.id);
            gateway.note_degraded();
            summary.degraded = true;
            summary.text = fallback_summary(&summary.identifiers);
        }
    }
    summary
}

fn fallback_summary(identifiers: &BTreeSet<String>) -> String {
    if identifiers.is_empty() {
        return "no identifiers".into();
    }
    let list: Vec<&str> = identifiers.iter().map(String::as_str).collect();
    text::truncate_words(&format!("Mentions {}.", list.join(", ")), SUMMARY_WORDS)
}

/// Offline summary: the calls a unit makes and, for calls that hit the CEE
/// keyword table, the scenario and property of the matching exception.
pub fn heuristic_summary(tree: &CeeTree, code: &str) -> String {
    let masked = syntax::mask(code);
    let callees = text::callee_tokens(&masked);
    if callees.is_empty() {
        return "Straight-line code without method calls.".into();
    }
    let mut s = format!("Calls {}.", callees.iter().cloned().collect::<Vec<_>>().join(", "));
    let hits: BTreeSet<&str> = callees
        .iter()
        .flat_map(|c| tree.nodes_for_keyword(c))
        .map(|id| tree.node(id).name.as_str())
        .collect();
    for name in hits {
        let node = tree.get(name).expect("keyword owners exist");
        s.push_str(&format!(" It may {}: {}.", node.scenario, node.property));
    }
    text::truncate_words(&s, SUMMARY_WORDS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{BackendConfig, BackendError, FnBackend};
    use std::sync::Arc;

    fn method(name: &str, body_lines: usize) -> String {
        let mut s = format!("    void {name}() {{\n");
        for i in 0..body_lines.saturating_sub(2) {
            s.push_str(&format!("        x{i}();\n"));
        }
        s.push_str("    }\n");
        s
    }

    #[test]
    fn empty_file() {
        assert!(segment(&SourceFile::new("a.java", ""), 200).unwrap().is_empty());
    }

    #[test]
    fn three_methods_three_units() {
        let text = format!("class A {{\n{}{}{}}}\n", method("a", 180), method("b", 150), method("c", 170));
        let file = SourceFile::new("A.java", text);
        let units = segment(&file, 200).unwrap();
        // oracle: method spans from a plain brace count over lines
        let mut spans = Vec::new();
        let mut depth = 0;
        let mut open_at = 0;
        for (i, l) in file.lines.iter().enumerate() {
            for c in l.chars() {
                match c {
                    '{' => {
                        depth += 1;
                        if depth == 2 {
                            open_at = i + 1;
                        }
                    }
                    '}' => {
                        if depth == 2 {
                            spans.push((open_at, i + 1));
                        }
                        depth -= 1;
                    }
                    _ => {}
                }
            }
        }
        assert_eq!(spans, vec![(2, 181), (182, 331), (332, 501)]);
        let got: Vec<_> = units.iter().map(|u| (u.start, u.end)).collect();
        assert_eq!(got, vec![(1, 181), (182, 331), (332, 502)]);
        assert_eq!(units[1].kind, UnitKind::Method);
        assert!(units.iter().all(|u| !u.oversize));
    }

    #[test]
    fn long_method_is_oversize() {
        let file = SourceFile::new("B.java", method("big", 250));
        let units = segment(&file, 200).unwrap();
        assert_eq!(units.len(), 1);
        assert!(units[0].oversize);
        assert_eq!((units[0].start, units[0].end), (1, 250));
    }

    #[test]
    fn unbalanced_reports_line() {
        let file = SourceFile::new("C.java", "class C {\n  void f() {\n}\n");
        assert_eq!(segment(&file, 200), Err(PlanError::UnbalancedBraces { line: 1 }));
        let file = SourceFile::new("D.java", "}\n");
        assert_eq!(segment(&file, 200), Err(PlanError::UnbalancedBraces { line: 1 }));
    }

    #[test]
    fn nesting_examples() {
        assert_eq!(syntax::nesting_level("void f(){}"), 1);
        assert_eq!(syntax::nesting_level("void f(){ if(x){ while(y){ } } }"), 3);
        assert_eq!(syntax::nesting_level("String s = \"{{{\";"), 0);
    }

    #[test]
    fn identifiers_from_tokenizer() {
        let ids = mentioned_identifiers("Reader r = new FileReader(path); // Ignored(\nint n = r.read();");
        assert!(ids.contains("FileReader"));
        assert!(ids.contains("read"));
        assert!(!ids.contains("Ignored"));
        assert!(!ids.contains("int"));
    }

    fn failing() -> Gateway {
        let cfg = BackendConfig { max_retries: 0, backoff_base_ms: 0, ..Default::default() };
        Gateway::new(Arc::new(FnBackend(|_: &str| Err(BackendError::Unreachable("down".into())))), cfg)
    }

    #[test]
    fn whitespace_unit() {
        let unit = CodeUnit::from_text("E.java", 1, "  \n\t\n");
        let s = summarize(&unit, &failing());
        assert_eq!(s.text, "empty unit");
        assert!(s.identifiers.is_empty());
        assert!(!s.degraded);
    }

    #[test]
    fn unreachable_backend_degrades() {
        let gw = failing();
        let unit = CodeUnit::from_text("F.java", 1, "Reader r = new FileReader(path);");
        let s = summarize(&unit, &gw);
        assert!(s.degraded);
        assert_eq!(s.text, "Mentions FileReader, Reader.");
        assert_eq!(gw.degraded_count(), 1);
    }

    #[test]
    fn heuristic_summary_names_hits() {
        let tree = CeeTree::bundled();
        let s = heuristic_summary(&tree, "Reader r = new FileReader(path);");
        assert!(s.starts_with("Calls FileReader."), "{s}");
        assert!(s.contains(&tree.get("IOException").unwrap().scenario));
        assert!(s.split_whitespace().count() <= SUMMARY_WORDS);
    }
}
