//! Try-catch synthesis: choose statement-aligned spans, render catches
//! from handling strategies, apply patches and check the result.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::cee::{parse_template_catches, CeeTree, TemplateCatch};
use crate::detector::{Cfg, SensitiveSegment};
use crate::llm::{bind, render, Gateway, PromptKind};
use crate::planner::CodeUnit;
use crate::syntax::{self, CompoundKind, Stmt, StmtKind};

pub const INDENT: &str = "    ";

/// Wrap span and the types to catch there.
pub type PlannedSpan = ((usize, usize), BTreeSet<String>);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum HandleError {
    #[error("segment {start}-{end} lies outside the unit")]
    OutsideUnit { start: usize, end: usize },
    #[error("segment {start}-{end} covers no statement")]
    NoStatement { start: usize, end: usize },
    #[error("segment {start}-{end} would wrap a declaration")]
    Declaration { start: usize, end: usize },
    #[error("overlapping patches: {0:?}")]
    Overlap(Vec<(usize, usize)>),
    #[error("nothing selected")]
    EmptySelection,
    #[error("no handling strategy for `{0}`")]
    NoStrategy(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Patch {
    pub unit_id: String,
    pub start: usize,
    pub end: usize,
    pub prefix: Vec<String>,
    pub suffix: Vec<String>,
    pub caught: Vec<String>,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OptimizedUnit {
    pub unit_id: String,
    #[serde(skip)]
    pub text: String,
    pub patches: Vec<Patch>,
    /// Output line ranges (1-based within `text`) occupied by each patch.
    pub patched_ranges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

fn structural(masked: &syntax::Masked, line: usize) -> bool {
    masked.line(line).trim().chars().all(|c| c == '{' || c == '}')
}

fn unwrappable(s: &Stmt) -> bool {
    matches!(
        s.kind,
        StmtKind::Compound(CompoundKind::Method | CompoundKind::Type | CompoundKind::Case | CompoundKind::Initializer)
    ) || s.kind == StmtKind::Label
}

/// Local declared by a simple `Type name = ...;` statement.
fn declared_local(text: &str) -> Option<&str> {
    let eq = text.find('=')?;
    let b = text.as_bytes();
    if b.get(eq + 1) == Some(&b'=') || (eq > 0 && b"+-*/%&|^!<>".contains(&b[eq - 1])) {
        return None;
    }
    let lhs: Vec<&str> = text[..eq].split_whitespace().collect();
    let name = *lhs.last()?;
    let is_ident = name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '$');
    let keyword = matches!(lhs[0], "return" | "throw" | "yield");
    (lhs.len() >= 2 && is_ident && !keyword && !text[..eq].contains('(')).then_some(name)
}

fn mentions(text: &str, name: &str) -> bool {
    let ident = |c: char| c.is_alphanumeric() || c == '_' || c == '$';
    text.match_indices(name).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + name.len()..].chars().next();
        !before.is_some_and(|c| ident(c) || c == '.') && !after.is_some_and(ident)
    })
}

fn stmt_text(masked: &syntax::Masked, s: &Stmt) -> String {
    (s.start..=s.end).map(|l| masked.line(l)).collect::<Vec<_>>().join("\n")
}

/// Grow `level[i..=j]` over later siblings that use a local declared in
/// the range, so the declaration stays in scope after wrapping.
fn extend_over_uses(level: &[Stmt], i: usize, mut j: usize, masked: &syntax::Masked) -> usize {
    let mut locals: BTreeSet<String> = BTreeSet::new();
    let collect = |s: &Stmt, locals: &mut BTreeSet<String>| {
        if s.kind == StmtKind::Simple {
            locals.extend(declared_local(&s.text).map(str::to_string));
        }
    };
    for s in &level[i..=j] {
        collect(s, &mut locals);
    }
    for k in j + 1..level.len() {
        if locals.is_empty() || unwrappable(&level[k]) {
            break;
        }
        let text = stmt_text(masked, &level[k]);
        if locals.iter().any(|n| mentions(&text, n)) {
            for s in &level[j + 1..=k] {
                collect(s, &mut locals);
            }
            j = k;
        }
    }
    j
}

/// Smallest statement-aligned span covering the segment, never leaving the
/// innermost block that holds it, grown over later uses of locals it
/// declares.
pub fn plan_tryspan(start: usize, end: usize, cfg: &Cfg) -> Result<(usize, usize), HandleError> {
    if start > end || start < cfg.unit_start || end > cfg.unit_end {
        return Err(HandleError::OutsideUnit { start, end });
    }
    let (mut s, mut e) = (start, end);
    while s <= e && structural(&cfg.masked, s) {
        s += 1;
    }
    while e >= s && structural(&cfg.masked, e) {
        e -= 1;
    }
    if s > e {
        return Err(HandleError::NoStatement { start, end });
    }
    let mut level: &[Stmt] = &cfg.stmts;
    loop {
        let hit: Vec<usize> = (0..level.len()).filter(|&k| level[k].start <= e && s <= level[k].end).collect();
        let (Some(&i), Some(&j)) = (hit.first(), hit.last()) else {
            return Err(HandleError::NoStatement { start, end });
        };
        if i == j {
            if let Some(c) = level[i].clauses.iter().find(|c| c.open < s && e < c.close) {
                level = &c.stmts;
                continue;
            }
        }
        if level[i..=j].iter().any(unwrappable) {
            return Err(HandleError::Declaration { start, end });
        }
        let j = extend_over_uses(level, i, j, &cfg.masked);
        return Ok((level[i].start, level[j].end));
    }
}

/// Catch order: deeper (more specific) types first, then by name. A
/// subtype is always deeper than its supertypes, so this is topological.
pub fn order_catches(tree: &CeeTree, types: &mut [String]) {
    types.sort_by_key(|t| (Reverse(tree.get(t).map(|n| n.depth).unwrap_or(0)), t.clone()));
}

fn leading_ws(line: &str) -> &str {
    &line[..line.len() - line.trim_start().len()]
}

fn indent_line(line: &str) -> String {
    if line.trim().is_empty() {
        line.to_string()
    } else {
        format!("{INDENT}{line}")
    }
}

/// Prefix and suffix lines wrapping code at `indent` with the given catches.
pub fn render_block(indent: &str, catches: &[TemplateCatch]) -> (Vec<String>, Vec<String>) {
    let prefix = vec![format!("{indent}try {{")];
    let mut suffix = Vec::new();
    for c in catches {
        suffix.push(format!("{indent}}} catch({} {}) {{", c.types.join(" | "), c.var));
        for line in &c.body {
            suffix.push(format!("{indent}{INDENT}{line}"));
        }
    }
    suffix.push(format!("{indent}}}"));
    (prefix, suffix)
}

/// Offline handler reply: wrap `code` with the catches of the listed
/// strategy templates, in listed order.
pub fn heuristic_handler(code: &str, strategies: &str) -> String {
    let catches = parse_template_catches(strategies);
    let lines: Vec<&str> = code.split('\n').collect();
    let indent = lines.iter().find(|l| !l.trim().is_empty()).map(|l| leading_ws(l)).unwrap_or("");
    let (prefix, suffix) = render_block(indent, &catches);
    let mut out = prefix;
    out.extend(lines.iter().map(|l| indent_line(l)));
    out.extend(suffix);
    out.join("\n")
}

/// `[Type] logic` followed by the type's single-catch template, per type.
pub fn strategy_listing(tree: &CeeTree, types: &[String]) -> Result<String, HandleError> {
    let mut parts = Vec::new();
    for t in types {
        let s = tree.strategy_of(t).map_err(|_| HandleError::NoStrategy(t.clone()))?;
        let c = s.catch_clause();
        let single = TemplateCatch { types: vec![t.clone()], var: c.var, body: c.body };
        let (prefix, suffix) = render_block("", std::slice::from_ref(&single));
        parts.push(format!("[{t}] {}\n{}\n{}\n{}", s.handle_logic, prefix.join("\n"), crate::cee::PLACEHOLDER, suffix.join("\n")));
    }
    Ok(parts.join("\n\n"))
}

/// Split a reply around the original lines, matched after trimming.
fn locate(reply: &str, original: &[&str]) -> Option<(Vec<String>, Vec<String>)> {
    let lines: Vec<&str> = reply.lines().collect();
    let want: Vec<&str> = original.iter().map(|l| l.trim()).collect();
    let n = want.len();
    if n == 0 || lines.len() < n {
        return None;
    }
    let at = (0..=lines.len() - n).find(|&i| (0..n).all(|k| lines[i + k].trim() == want[k]))?;
    let rebase = |ls: &[&str]| -> Vec<String> {
        let base = ls.iter().filter(|l| !l.trim().is_empty()).map(|l| leading_ws(l).len()).min().unwrap_or(0);
        ls.iter().map(|l| l.get(base..).unwrap_or(l.trim_start()).to_string()).collect()
    };
    Some((rebase(&lines[..at]), rebase(&lines[at + n..])))
}

#[derive(Debug, Clone, Serialize)]
pub struct Generation {
    pub patches: Vec<Patch>,
    /// Types dropped because no strategy exists.
    pub dropped: Vec<String>,
    pub degraded: bool,
}

/// Spans of the selected segments with the types to catch on each;
/// overlapping spans merge.
pub fn plan_spans(
    selected: &[(SensitiveSegment, Vec<String>)],
    cfg: &Cfg,
) -> Result<Vec<PlannedSpan>, HandleError> {
    let mut spans: BTreeMap<(usize, usize), BTreeSet<String>> = BTreeMap::new();
    for (seg, types) in selected {
        let span = plan_tryspan(seg.start, seg.end, cfg)?;
        spans.entry(span).or_default().extend(types.iter().cloned());
    }
    let mut out: Vec<PlannedSpan> = Vec::new();
    for (span, types) in spans {
        match out.last_mut() {
            Some((cur, t)) if span.0 <= cur.1 => {
                cur.1 = cur.1.max(span.1);
                t.extend(types);
            }
            _ => out.push((span, types)),
        }
    }
    Ok(out)
}

/// One patch per planned span. Backend output is used only when it keeps
/// the original lines and validates; otherwise catches come from the
/// strategy templates.
pub fn generate(
    unit: &CodeUnit,
    cfg: &Cfg,
    selected: &[(SensitiveSegment, Vec<String>)],
    tree: &CeeTree,
    gateway: &Gateway,
) -> Result<Generation, HandleError> {
    if selected.iter().all(|(_, t)| t.is_empty()) {
        return Err(HandleError::EmptySelection);
    }
    let mut gen = Generation { patches: Vec::new(), dropped: Vec::new(), degraded: false };
    for ((start, end), types) in plan_spans(selected, cfg)? {
        let (mut keep, drop): (Vec<String>, Vec<String>) =
            types.into_iter().partition(|t| tree.strategy_of(t).is_ok());
        for t in &drop {
            log::warn!("{}: no handling strategy for {t}; not caught", unit.id);
        }
        gen.dropped.extend(drop);
        if keep.is_empty() {
            continue;
        }
        order_catches(tree, &mut keep);
        let original: Vec<&str> = (start..=end).map(|l| unit.line(l)).collect();
        let indent = original.iter().find(|l| !l.trim().is_empty()).map(|l| leading_ws(l)).unwrap_or("").to_string();
        let catches: Vec<TemplateCatch> = keep
            .iter()
            .map(|t| {
                let c = tree.strategy_of(t).expect("filtered above").catch_clause();
                TemplateCatch { types: vec![t.clone()], var: c.var, body: c.body }
            })
            .collect();
        let (prefix, suffix) = render_block(&indent, &catches);
        let mut patch = Patch { unit_id: unit.id.clone(), start, end, prefix, suffix, caught: keep.clone(), degraded: false };
        match from_backend(&original, &indent, &keep, tree, gateway) {
            Some((prefix, suffix)) => {
                patch.prefix = prefix;
                patch.suffix = suffix;
            }
            None => {
                patch.degraded = true;
                gen.degraded = true;
            }
        }
        gen.patches.push(patch);
    }
    Ok(gen)
}

fn from_backend(
    original: &[&str],
    indent: &str,
    types: &[String],
    tree: &CeeTree,
    gateway: &Gateway,
) -> Option<(Vec<String>, Vec<String>)> {
    let listing = strategy_listing(tree, types).ok()?;
    let prompt = render(PromptKind::Handler, &bind([("code_unit", original.join("\n")), ("strategies", listing)])).ok()?;
    let reply = match gateway.complete_structured(PromptKind::Handler, &prompt) {
        Ok(c) => c.payload?.get("optimized_code")?.as_str()?.to_string(),
        Err(e) => {
            log::warn!("handler unavailable ({e}); using templates");
            gateway.note_degraded();
            return None;
        }
    };
    let Some((pre, post)) = locate(&reply, original) else {
        log::warn!("handler reply dropped the original statements; using templates");
        gateway.note_degraded();
        return None;
    };
    let prefix: Vec<String> = pre.iter().map(|l| if l.is_empty() { String::new() } else { format!("{indent}{l}") }).collect();
    let suffix: Vec<String> = post.iter().map(|l| if l.is_empty() { String::new() } else { format!("{indent}{l}") }).collect();
    let mut block = prefix.clone();
    block.extend(original.iter().map(|l| indent_line(l)));
    block.extend(suffix.iter().cloned());
    let problems = validate(&block.join("\n"), tree);
    if !problems.is_empty() || prefix.is_empty() || suffix.is_empty() {
        log::warn!("handler reply rejected ({} violation(s)); using templates", problems.len());
        gateway.note_degraded();
        return None;
    }
    Some((prefix, suffix))
}

/// Wrap every patch span; untouched lines are copied byte for byte.
pub fn apply(unit: &CodeUnit, patches: &[Patch]) -> Result<OptimizedUnit, HandleError> {
    let mut sorted: Vec<&Patch> = patches.iter().collect();
    sorted.sort_by_key(|p| (p.start, p.end));
    let collisions: Vec<(usize, usize)> = sorted
        .windows(2)
        .filter(|w| w[1].start <= w[0].end)
        .flat_map(|w| [(w[0].start, w[0].end), (w[1].start, w[1].end)])
        .collect();
    if !collisions.is_empty() {
        return Err(HandleError::Overlap(collisions));
    }
    if let Some(p) = sorted.iter().find(|p| p.start < unit.start || p.end > unit.end || p.start > p.end) {
        return Err(HandleError::OutsideUnit { start: p.start, end: p.end });
    }
    if sorted.is_empty() {
        return Ok(OptimizedUnit { unit_id: unit.id.clone(), text: unit.text.clone(), patches: vec![], patched_ranges: vec![] });
    }
    let lines: Vec<&str> = unit.text.split('\n').collect();
    let cr = if lines.first().is_some_and(|l| l.ends_with('\r')) { "\r" } else { "" };
    let mut out: Vec<String> = Vec::with_capacity(lines.len() + patches.len() * 6);
    let mut ranges = Vec::new();
    let mut next = sorted.iter().peekable();
    let mut i = 0;
    while i < lines.len() {
        let abs = unit.start + i;
        match next.peek() {
            Some(p) if p.start == abs => {
                let first = out.len() + 1;
                out.extend(p.prefix.iter().map(|l| format!("{l}{cr}")));
                for l in &lines[i..=i + (p.end - p.start)] {
                    out.push(indent_line(l));
                }
                out.extend(p.suffix.iter().map(|l| format!("{l}{cr}")));
                ranges.push((first, out.len()));
                i += p.end - p.start + 1;
                next.next();
            }
            _ => {
                out.push(lines[i].to_string());
                i += 1;
            }
        }
    }
    Ok(OptimizedUnit {
        unit_id: unit.id.clone(),
        text: out.join("\n"),
        patches: sorted.into_iter().cloned().collect(),
        patched_ranges: ranges,
    })
}

/// Syntactic checks on handling code: balanced braces, resolvable catch
/// types, non-empty catch bodies and reachable catch order.
pub fn validate(text: &str, tree: &CeeTree) -> Vec<Violation> {
    let (masked, stmts) = syntax::parse(text, 1);
    let mut out = Vec::new();
    if let Err(f) = syntax::check_braces(&masked) {
        out.push(Violation { line: f.line(), message: "unbalanced braces".into() });
    }
    syntax::walk(&stmts, &mut |s, _| {
        let catches = syntax::catch_clauses(s);
        for (i, c) in catches.iter().enumerate() {
            for t in &c.types {
                if !tree.contains(t) {
                    out.push(Violation { line: c.header_line, message: format!("unknown catch type `{t}`") });
                }
                let shadowed = catches[..i].iter().any(|e| e.types.iter().any(|u| tree.is_same_or_subtype(t, u)));
                if shadowed {
                    out.push(Violation { line: c.header_line, message: format!("unreachable catch of `{t}`") });
                }
            }
            let body_empty = (c.open..=c.close).all(|l| {
                let m = masked.line(l);
                let from = if l == c.open { m.find('{').map_or(0, |p| p + 1) } else { 0 };
                let to = if l == c.close { m.rfind('}').unwrap_or(m.len()) } else { m.len() };
                m.get(from..to.max(from)).is_none_or(|x| x.trim().is_empty())
            });
            if body_empty {
                out.push(Violation { line: c.header_line, message: "empty catch body".into() });
            }
        }
    });
    out.sort_by(|a, b| (a.line, &a.message).cmp(&(b.line, &b.message)));
    out
}
