//! Fragile-span detection: a static arm over the CFG and exception
//! propagation graph, and a matching arm that asks the backend to label
//! lines against CEE scenarios and properties.

pub mod cfg;
pub mod epg;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::cee::{CeeTree, BRANCH_DEPTH};
use crate::llm::{bind, render, Gateway, PromptKind};
use crate::planner::CodeUnit;
use crate::syntax;
use crate::text;

pub use cfg::{build_cfg, Block, BlockKind, Cfg, Edge, EdgeKind, Target};
pub use epg::{build_epg, route, Epg, Route, Site, SiteOrigin};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DetectError {
    #[error("line {line}: unbalanced braces")]
    Lex { line: usize },
    #[error("segments from different units: {0} and {1}")]
    MixedUnits(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Static,
    ScenarioMatch,
    PropertyMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SensitiveSegment {
    pub unit_id: String,
    pub start: usize,
    pub end: usize,
    pub origin: BTreeSet<Origin>,
    /// Branch root names.
    pub hints: BTreeSet<String>,
    /// Exception types behind the detection.
    pub types: BTreeSet<String>,
}

impl SensitiveSegment {
    pub fn id(&self) -> String {
        format!("{}@{}-{}", self.unit_id, self.start, self.end)
    }

    pub fn overlaps_or_touches(&self, other: &SensitiveSegment) -> bool {
        other.start <= self.end + 1 && self.start <= other.end + 1
    }

    /// Lines of the segment taken from its unit.
    pub fn text(&self, unit: &CodeUnit) -> String {
        (self.start..=self.end).map(|l| unit.line(l)).collect::<Vec<_>>().join("\n")
    }
}

/// Branch roots of the given types; types above branch depth are skipped.
pub fn hints_for<'a>(tree: &CeeTree, types: impl IntoIterator<Item = &'a String>) -> BTreeSet<String> {
    types.into_iter().filter_map(|t| tree.branch_of(t).ok()).map(str::to_string).collect()
}

/// Maximal runs of consecutive lines in `lines`, each with the union of
/// its lines' types.
fn runs(
    unit_id: &str,
    lines: &BTreeMap<usize, BTreeSet<String>>,
    origin: Origin,
    tree: &CeeTree,
) -> Vec<SensitiveSegment> {
    let mut out: Vec<SensitiveSegment> = Vec::new();
    for (&line, types) in lines {
        match out.last_mut() {
            Some(seg) if seg.end + 1 == line => {
                seg.end = line;
                seg.types.extend(types.iter().cloned());
            }
            _ => out.push(SensitiveSegment {
                unit_id: unit_id.to_string(),
                start: line,
                end: line,
                origin: BTreeSet::from([origin]),
                hints: BTreeSet::new(),
                types: types.clone(),
            }),
        }
    }
    for seg in &mut out {
        seg.hints = hints_for(tree, &seg.types);
    }
    out
}

/// Static arm: one segment per maximal run of lines holding unhandled sites.
pub fn detect_static(unit: &CodeUnit, epg: &Epg, tree: &CeeTree) -> Vec<SensitiveSegment> {
    let mut lines: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    for site in epg.unhandled() {
        lines.entry(site.line).or_default().insert(site.exception.clone());
    }
    runs(&unit.id, &lines, Origin::Static, tree)
}

/// Code with absolute line numbers, `N| text` per line.
pub fn numbered(unit: &CodeUnit) -> String {
    (unit.start..=unit.end).map(|l| format!("{l}| {}", unit.line(l))).collect::<Vec<_>>().join("\n")
}

/// `- [Name] text` for every node at branch depth or below with a
/// non-empty field.
pub fn label_document(tree: &CeeTree, property: bool) -> String {
    tree.nodes()
        .filter(|(_, n)| n.depth >= BRANCH_DEPTH)
        .filter_map(|(_, n)| {
            let text = if property { &n.property } else { &n.scenario };
            (!text.trim().is_empty()).then(|| format!("- [{}] {}", n.name, text.trim()))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn parse_doc_names(doc: &str) -> BTreeSet<String> {
    doc.lines()
        .filter_map(|l| l.trim().strip_prefix("- [")?.split_once(']').map(|(n, _)| n.to_string()))
        .collect()
}

/// Split `N| text` lines into their numbers and text.
pub fn parse_numbered(code: &str) -> Vec<(usize, String)> {
    code.lines()
        .filter_map(|l| {
            let (n, rest) = l.split_once('|')?;
            let n = n.trim().parse().ok()?;
            Some((n, rest.strip_prefix(' ').unwrap_or(rest).to_string()))
        })
        .collect()
}

/// Keyword labeling used by the offline backend: a line is tagged with
/// every listed node whose keywords contain one of its callee tokens.
pub fn heuristic_labels(tree: &CeeTree, code: &str, doc: &str) -> Value {
    let listed = parse_doc_names(doc);
    let numbered = parse_numbered(code);
    let joined = numbered.iter().map(|(_, t)| t.as_str()).collect::<Vec<_>>().join("\n");
    let masked = syntax::mask(&joined);
    let items: Vec<Value> = numbered
        .iter()
        .zip(masked.split('\n'))
        .map(|((n, _), line)| {
            let labels: BTreeSet<&str> = text::callee_tokens(line)
                .iter()
                .flat_map(|c| tree.nodes_for_keyword(c))
                .map(|id| tree.node(id).name.as_str())
                .filter(|name| listed.contains(*name))
                .collect();
            if labels.is_empty() {
                json!({"line": n, "labels": "None"})
            } else {
                json!({"line": n, "labels": labels})
            }
        })
        .collect();
    json!({ "code_with_label": items })
}

/// Resolve one label to a node name: a bare name, a `[Name] text` entry,
/// or the verbatim scenario/property text of a node.
fn resolve_label(tree: &CeeTree, label: &str) -> Option<String> {
    let label = label.trim();
    if label.is_empty() || label.eq_ignore_ascii_case("none") {
        return None;
    }
    if tree.contains(label) {
        return Some(label.to_string());
    }
    if let Some((name, _)) = label.strip_prefix('[').and_then(|r| r.split_once(']')) {
        if tree.contains(name) {
            return Some(name.to_string());
        }
    }
    tree.nodes()
        .find(|(_, n)| n.scenario.trim() == label || n.property.trim() == label)
        .map(|(_, n)| n.name.clone())
}

/// Labeled lines of a `code_with_label` reply, restricted to the unit.
pub fn parse_labels(tree: &CeeTree, unit: &CodeUnit, payload: &Value) -> BTreeMap<usize, BTreeSet<String>> {
    let mut out: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    let items = payload["code_with_label"].as_array().cloned().unwrap_or_default();
    for item in items {
        let Some(line) = item["line"].as_u64().map(|l| l as usize) else { continue };
        if !unit.contains(line) {
            log::debug!("{}: label for line {line} outside the unit", unit.id);
            continue;
        }
        let raw: Vec<String> = match &item["labels"] {
            Value::Array(a) => a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
            Value::String(s) => vec![s.clone()],
            _ => vec![],
        };
        let names: BTreeSet<String> = raw.iter().filter_map(|l| resolve_label(tree, l)).collect();
        if !names.is_empty() {
            out.entry(line).or_default().extend(names);
        }
    }
    out
}

/// One matching arm. `None` when the backend failed.
fn match_arm(
    unit: &CodeUnit,
    tree: &CeeTree,
    gateway: &Gateway,
    property: bool,
) -> Option<BTreeMap<usize, BTreeSet<String>>> {
    let (kind, slot) = if property {
        (PromptKind::DetectorProperty, "property")
    } else {
        (PromptKind::DetectorScenario, "scenario")
    };
    let prompt = render(kind, &bind([(slot, label_document(tree, property)), ("code", numbered(unit))]));
    match prompt.and_then(|p| gateway.complete_structured(kind, &p)) {
        Ok(c) => Some(parse_labels(tree, unit, c.payload.as_ref().expect("structured payload"))),
        Err(e) => {
            log::warn!("{}: {kind} matching unavailable ({e})", unit.id);
            gateway.note_degraded();
            None
        }
    }
}

/// Drop labeled lines whose every type is already handled or declared,
/// and lines of method or type headers.
fn prune(cfg: &Cfg, tree: &CeeTree, lines: &mut BTreeMap<usize, BTreeSet<String>>) {
    let mut headers = BTreeSet::new();
    syntax::walk(&cfg.stmts, &mut |s, _| {
        if s.is_method() || s.is_type() {
            headers.extend(s.start..=s.clauses[0].open);
        }
    });
    lines.retain(|&line, types| {
        !headers.contains(&line) && types.iter().any(|t| route(&cfg.stmts, tree, line, t) == Route::Exit)
    });
}

#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    pub segments: Vec<SensitiveSegment>,
    pub degraded: bool,
}

/// Matching arm: scenario and property prompts issued concurrently.
pub fn detect_match(unit: &CodeUnit, cfg: &Cfg, tree: &CeeTree, gateway: &Gateway) -> MatchResult {
    let (scenario, property) = std::thread::scope(|s| {
        let a = s.spawn(|| match_arm(unit, tree, gateway, false));
        let b = match_arm(unit, tree, gateway, true);
        (a.join().expect("scenario arm panicked"), b)
    });
    let degraded = scenario.is_none() || property.is_none();
    let mut segments = Vec::new();
    for (lines, origin) in [(scenario, Origin::ScenarioMatch), (property, Origin::PropertyMatch)] {
        if let Some(mut lines) = lines {
            prune(cfg, tree, &mut lines);
            segments.extend(runs(&unit.id, &lines, origin, tree));
        }
    }
    MatchResult { segments, degraded }
}

/// Union of segment sets: overlapping or adjacent spans coalesce, origins,
/// hints and types union, output sorted by start line.
pub fn merge(a: &[SensitiveSegment], b: &[SensitiveSegment]) -> Result<Vec<SensitiveSegment>, DetectError> {
    let mut all: Vec<&SensitiveSegment> = a.iter().chain(b).collect();
    if let Some(first) = all.first() {
        if let Some(other) = all.iter().find(|s| s.unit_id != first.unit_id) {
            return Err(DetectError::MixedUnits(first.unit_id.clone(), other.unit_id.clone()));
        }
    }
    all.sort_by_key(|s| (s.start, s.end));
    let mut out: Vec<SensitiveSegment> = Vec::new();
    for seg in all {
        match out.last_mut() {
            Some(cur) if seg.start <= cur.end + 1 => {
                cur.end = cur.end.max(seg.end);
                cur.origin.extend(seg.origin.iter().copied());
                cur.hints.extend(seg.hints.iter().cloned());
                cur.types.extend(seg.types.iter().cloned());
            }
            _ => out.push(seg.clone()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub cfg: Cfg,
    pub epg: Epg,
    pub segments: Vec<SensitiveSegment>,
    pub degraded: bool,
}

/// Both arms over one unit, merged.
pub fn detect(unit: &CodeUnit, tree: &CeeTree, gateway: &Gateway) -> Result<Detection, DetectError> {
    let cfg = build_cfg(unit)?;
    let (statics, epg, matched) = std::thread::scope(|s| {
        let m = s.spawn(|| detect_match(unit, &cfg, tree, gateway));
        let epg = build_epg(&cfg, tree);
        let statics = detect_static(unit, &epg, tree);
        (statics, epg, m.join().expect("matching arm panicked"))
    });
    let segments = merge(&statics, &matched.segments)?;
    Ok(Detection { cfg, epg, segments, degraded: matched.degraded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(start: usize, end: usize, origin: Origin, hint: &str) -> SensitiveSegment {
        SensitiveSegment {
            unit_id: "u".into(),
            start,
            end,
            origin: BTreeSet::from([origin]),
            hints: BTreeSet::from([hint.to_string()]),
            types: BTreeSet::new(),
        }
    }

    fn unit(src: &str) -> CodeUnit {
        CodeUnit::from_text("T.java", 1, src)
    }

    fn statics(src: &str) -> Vec<(usize, usize, Vec<String>)> {
        let tree = CeeTree::bundled();
        let u = unit(src);
        let cfg = build_cfg(&u).unwrap();
        let epg = build_epg(&cfg, &tree);
        detect_static(&u, &epg, &tree)
            .into_iter()
            .map(|s| (s.start, s.end, s.hints.into_iter().collect()))
            .collect()
    }

    #[test]
    fn unguarded_file_reader() {
        assert_eq!(
            statics("int a = 0;\nReader r = new FileReader(name);\na++;"),
            vec![(2, 2, vec!["IOException".to_string()])]
        );
    }

    #[test]
    fn guarded_file_reader() {
        let src = "try {\n    Reader r = new FileReader(name);\n} catch (IOException e) {\n    log(e);\n}";
        assert!(statics(src).is_empty());
    }

    #[test]
    fn separated_risky_lines() {
        let src = "Reader r = new FileReader(a);\nint x = 1;\nThread.sleep(5);";
        let got = statics(src);
        assert_eq!(got.len(), 2);
        assert_eq!((got[0].0, got[1].0), (1, 3));
        assert_eq!(got[1].2, vec!["InterruptedException".to_string()]);
    }

    #[test]
    fn merge_examples() {
        let m = merge(&[seg(3, 7, Origin::Static, "A")], &[seg(5, 10, Origin::ScenarioMatch, "B")]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].start, m[0].end), (3, 10));
        assert_eq!(m[0].origin, BTreeSet::from([Origin::Static, Origin::ScenarioMatch]));
        assert_eq!(m[0].hints.len(), 2);

        let d = merge(&[seg(1, 2, Origin::Static, "A")], &[seg(9, 9, Origin::Static, "A")]).unwrap();
        assert_eq!(d.iter().map(|s| (s.start, s.end)).collect::<Vec<_>>(), vec![(1, 2), (9, 9)]);
        assert!(merge(&[], &[]).unwrap().is_empty());

        let adj = merge(&[seg(1, 2, Origin::Static, "A")], &[seg(3, 3, Origin::Static, "A")]).unwrap();
        assert_eq!(adj.len(), 1);
    }

    #[test]
    fn merge_rejects_mixed_units() {
        let mut other = seg(1, 1, Origin::Static, "A");
        other.unit_id = "v".into();
        assert!(matches!(merge(&[seg(1, 1, Origin::Static, "A")], &[other]), Err(DetectError::MixedUnits(..))));
    }

    #[test]
    fn labels_from_keywords() {
        let tree = CeeTree::bundled();
        let u = unit("int a = 0;\nReader r = new FileReader(name); // FileReader(\nString s = \"sleep(\";");
        let doc = label_document(&tree, false);
        let v = heuristic_labels(&tree, &numbered(&u), &doc);
        let labels = parse_labels(&tree, &u, &v);
        assert_eq!(labels, BTreeMap::from([(2, BTreeSet::from(["IOException".to_string()]))]));
    }

    #[test]
    fn all_none_is_empty() {
        let tree = CeeTree::bundled();
        let u = unit("int a = 0;\nint b = 1;");
        let v = json!({"code_with_label": [{"line": 1, "labels": "None"}, {"line": 2, "labels": ["None"]}]});
        assert!(parse_labels(&tree, &u, &v).is_empty());
    }

    #[test]
    fn two_labels_two_hints() {
        let tree = CeeTree::bundled();
        let u = unit("x();");
        let scenario = tree.get("SQLException").unwrap().scenario.clone();
        let v = json!({"code_with_label": [{"line": 1, "labels": ["IOException", scenario]}]});
        let lines = parse_labels(&tree, &u, &v);
        let segs = runs(&u.id, &lines, Origin::ScenarioMatch, &tree);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].hints, BTreeSet::from(["IOException".to_string(), "SQLException".to_string()]));
    }

    #[test]
    fn segment_text_and_id() {
        let u = unit("a();\nb();\nc();");
        let s = seg(2, 3, Origin::Static, "A");
        assert_eq!(s.text(&u), "b();\nc();");
        assert_eq!(s.id(), "u@2-3");
    }
}
