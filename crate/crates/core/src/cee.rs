//! Common Exception Enumeration: the exception inheritance tree with
//! per-node scenario, property and handling payloads.
//!
//! Nodes live in an arena indexed by [`NodeId`]; the tree is immutable once
//! loaded and may be shared freely between threads. A *branch* is the
//! subtree under a depth-2 node (the root `Throwable` sits at depth 0,
//! `Exception`/`Error` at depth 1).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{bind, render, Gateway, GatewayError, PromptKind};
use crate::syntax;
use crate::text;

pub const ROOT_NAME: &str = "Throwable";
pub const MAX_DEPTH: usize = 5;
pub const BRANCH_DEPTH: usize = 2;
/// Marker for the wrapped statements in a handling template.
pub const PLACEHOLDER: &str = "{fragile_code}";

/// Bundled desk-scale CEE.
pub const BUNDLED_CEE: &str = include_str!("../data/cee.json");

pub type NodeId = usize;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeInfo {
    pub definition: String,
    pub reasons: String,
    pub dangerous_operations: String,
    pub sample_code: String,
    pub handle_code: String,
    pub handle_logic: String,
}

/// On-disk shape of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNode {
    pub name: String,
    #[serde(default)]
    pub children: Vec<RawNode>,
    #[serde(default)]
    pub info: NodeInfo,
    #[serde(default)]
    pub scenario: String,
    #[serde(default)]
    pub property: String,
}

#[derive(Debug, Clone)]
pub struct CeeNode {
    pub name: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
    pub info: NodeInfo,
    pub scenario: String,
    pub property: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeStats {
    pub nodes: usize,
    pub branches: usize,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    EmptyName,
    DuplicateName,
    RootNotThrowable,
    TooDeep(usize),
    MissingLeafPayload(&'static str),
    HandleCodeCatch,
    UnknownField(String),
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::EmptyName => write!(f, "empty name"),
            ViolationKind::DuplicateName => write!(f, "duplicate name"),
            ViolationKind::RootNotThrowable => write!(f, "root must be Throwable"),
            ViolationKind::TooDeep(d) => write!(f, "depth {d} exceeds {MAX_DEPTH}"),
            ViolationKind::MissingLeafPayload(field) => write!(f, "leaf has empty {field}"),
            ViolationKind::HandleCodeCatch => {
                write!(f, "handle_code has no catch naming the node or an ancestor")
            }
            ViolationKind::UnknownField(k) => write!(f, "unknown field `{k}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub node: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.node, self.kind)
    }
}

#[derive(Debug, Error)]
pub enum CeeError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed CEE document: {0}")]
    Parse(String),
    #[error("invalid CEE: {0}")]
    Invalid(Violation),
    #[error("unknown exception type `{0}`")]
    UnknownName(String),
    #[error("`{0}` sits above branch depth")]
    TooShallow(String),
    #[error("no handling strategy for `{0}`")]
    NoStrategy(String),
    #[error("invalid handling template for `{0}`: {1}")]
    BadTemplate(String, String),
    #[error("sample description must not be empty")]
    EmptySample,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Handling recipe for one exception type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HandlingStrategy {
    pub type_name: String,
    pub handle_logic: String,
    /// Java `try` template with exactly one [`PLACEHOLDER`].
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateCatch {
    pub types: Vec<String>,
    pub var: String,
    pub body: Vec<String>,
}

impl HandlingStrategy {
    pub fn new(type_name: &str, handle_logic: &str, template: &str) -> Result<Self, CeeError> {
        let holes = template.matches(PLACEHOLDER).count();
        if holes != 1 {
            return Err(CeeError::BadTemplate(type_name.into(), format!("{holes} placeholders")));
        }
        if parse_template_catches(template).is_empty() {
            return Err(CeeError::BadTemplate(type_name.into(), "no catch clause".into()));
        }
        Ok(HandlingStrategy {
            type_name: type_name.into(),
            handle_logic: handle_logic.into(),
            template: template.into(),
        })
    }

    /// The catch clause naming this strategy's type, else the first one.
    pub fn catch_clause(&self) -> TemplateCatch {
        let catches = parse_template_catches(&self.template);
        catches
            .iter()
            .find(|c| c.types.iter().any(|t| t == &self.type_name))
            .cloned()
            .unwrap_or_else(|| catches[0].clone())
    }
}

/// Catch clauses of a Java snippet with their bodies split into trimmed,
/// non-empty lines.
pub fn parse_template_catches(code: &str) -> Vec<TemplateCatch> {
    static CATCH: OnceLock<Regex> = OnceLock::new();
    let re = CATCH.get_or_init(|| Regex::new(r"\bcatch\s*\(([^)]*)\)\s*\{").unwrap());
    let masked = syntax::mask(code);
    let bytes = masked.as_bytes();
    let mut out = Vec::new();
    for caps in re.captures_iter(&masked) {
        let whole = caps.get(0).unwrap();
        let open = whole.end() - 1;
        let mut depth = 0usize;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            match b {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(close) = close else { continue };
        let Some((types, var)) = syntax::parse_catch_header(&format!("catch ({})", &caps[1])) else {
            continue;
        };
        let body = code[open + 1..close]
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        out.push(TemplateCatch { types, var, body });
    }
    out
}

fn template_from_catches(catches: &[TemplateCatch]) -> String {
    let mut t = format!("try {{\n{PLACEHOLDER}\n");
    for c in catches {
        t.push_str(&format!("}} catch({} {}) {{\n", c.types.join(" | "), c.var));
        for line in &c.body {
            t.push_str("    ");
            t.push_str(line);
            t.push('\n');
        }
    }
    t.push('}');
    t
}

/// Check a raw document, collecting every violation.
pub fn check_document(root: &RawNode) -> Vec<Violation> {
    let mut out = Vec::new();
    if root.name != ROOT_NAME {
        out.push(Violation { node: root.name.clone(), kind: ViolationKind::RootNotThrowable });
    }
    let mut seen = BTreeSet::new();
    let mut path: Vec<&str> = Vec::new();
    fn go<'a>(
        node: &'a RawNode,
        depth: usize,
        path: &mut Vec<&'a str>,
        seen: &mut BTreeSet<&'a str>,
        out: &mut Vec<Violation>,
    ) {
        let v = |kind| Violation { node: node.name.clone(), kind };
        if node.name.trim().is_empty() {
            out.push(v(ViolationKind::EmptyName));
        } else if !seen.insert(node.name.as_str()) {
            out.push(v(ViolationKind::DuplicateName));
        }
        if depth > MAX_DEPTH {
            out.push(v(ViolationKind::TooDeep(depth)));
        }
        if node.children.is_empty() {
            for (field, value) in [
                ("scenario", &node.scenario),
                ("property", &node.property),
                ("handle_logic", &node.info.handle_logic),
            ] {
                if value.trim().is_empty() {
                    out.push(v(ViolationKind::MissingLeafPayload(field)));
                }
            }
        }
        if !node.info.handle_code.trim().is_empty() {
            let named = parse_template_catches(&node.info.handle_code)
                .into_iter()
                .flat_map(|c| c.types)
                .any(|t| t == node.name || path.contains(&t.as_str()));
            if !named {
                out.push(v(ViolationKind::HandleCodeCatch));
            }
        }
        path.push(&node.name);
        for child in &node.children {
            go(child, depth + 1, path, seen, out);
        }
        path.pop();
    }
    go(root, 0, &mut path, &mut seen, &mut out);
    out
}

/// Fields outside the node schema.
pub fn unknown_fields(doc: &Value) -> Vec<Violation> {
    const NODE_KEYS: &[&str] = &["name", "children", "info", "scenario", "property"];
    const INFO_KEYS: &[&str] =
        &["definition", "reasons", "dangerous_operations", "sample_code", "handle_code", "handle_logic"];
    let mut out = Vec::new();
    fn go(v: &Value, out: &mut Vec<Violation>) {
        let Some(obj) = v.as_object() else { return };
        let name = obj.get("name").and_then(Value::as_str).unwrap_or("?").to_string();
        for (k, val) in obj {
            if !NODE_KEYS.contains(&k.as_str()) {
                out.push(Violation { node: name.clone(), kind: ViolationKind::UnknownField(k.clone()) });
            }
            if k == "info" {
                if let Some(info) = val.as_object() {
                    for ik in info.keys() {
                        if !INFO_KEYS.contains(&ik.as_str()) {
                            out.push(Violation {
                                node: name.clone(),
                                kind: ViolationKind::UnknownField(format!("info.{ik}")),
                            });
                        }
                    }
                }
            }
        }
        if let Some(children) = obj.get("children").and_then(Value::as_array) {
            for c in children {
                go(c, out);
            }
        }
    }
    go(doc, &mut out);
    out
}

/// Parse and check a document without building a tree. Unknown fields
/// count as violations only in strict mode.
pub fn validate_str(json: &str, strict: bool) -> Result<Vec<Violation>, CeeError> {
    let value: Value = serde_json::from_str(json).map_err(|e| CeeError::Parse(e.to_string()))?;
    let raw: RawNode = serde_json::from_value(value.clone()).map_err(|e| CeeError::Parse(e.to_string()))?;
    let mut violations = check_document(&raw);
    let unknown = unknown_fields(&value);
    if strict {
        violations.extend(unknown);
    } else {
        for u in unknown {
            log::warn!("ignoring {u}");
        }
    }
    Ok(violations)
}

pub fn load_cee(path: &Path) -> Result<CeeTree, CeeError> {
    let json = std::fs::read_to_string(path)
        .map_err(|source| CeeError::Io { path: path.display().to_string(), source })?;
    CeeTree::from_json(&json, false)
}

#[derive(Debug, Clone)]
pub struct CeeTree {
    nodes: Vec<CeeNode>,
    index: BTreeMap<String, NodeId>,
    /// API keyword -> nodes whose dangerous operations mention it.
    keyword_index: BTreeMap<String, BTreeSet<NodeId>>,
    node_keywords: Vec<BTreeSet<String>>,
}

impl CeeTree {
    pub fn bundled() -> CeeTree {
        CeeTree::from_json(BUNDLED_CEE, true).expect("bundled CEE is valid")
    }

    pub fn from_json(json: &str, strict: bool) -> Result<CeeTree, CeeError> {
        if let Some(first) = validate_str(json, strict)?.into_iter().next() {
            return Err(CeeError::Invalid(first));
        }
        let raw: RawNode = serde_json::from_str(json).map_err(|e| CeeError::Parse(e.to_string()))?;
        Ok(CeeTree::from_checked(&raw))
    }

    pub fn from_raw(raw: &RawNode) -> Result<CeeTree, CeeError> {
        if let Some(first) = check_document(raw).into_iter().next() {
            return Err(CeeError::Invalid(first));
        }
        Ok(CeeTree::from_checked(raw))
    }

    fn from_checked(raw: &RawNode) -> CeeTree {
        let mut nodes = Vec::new();
        fn add(raw: &RawNode, parent: Option<NodeId>, depth: usize, nodes: &mut Vec<CeeNode>) -> NodeId {
            let id = nodes.len();
            nodes.push(CeeNode {
                name: raw.name.clone(),
                parent,
                children: Vec::new(),
                depth,
                info: raw.info.clone(),
                scenario: raw.scenario.clone(),
                property: raw.property.clone(),
            });
            for child in &raw.children {
                let c = add(child, Some(id), depth + 1, nodes);
                nodes[id].children.push(c);
            }
            id
        }
        add(raw, None, 0, &mut nodes);
        let index = nodes.iter().enumerate().map(|(i, n)| (n.name.clone(), i)).collect::<BTreeMap<_, _>>();
        let node_keywords: Vec<_> = nodes.iter().map(|n| derive_keywords(n, &index)).collect();
        let mut keyword_index: BTreeMap<String, BTreeSet<NodeId>> = BTreeMap::new();
        for (id, kws) in node_keywords.iter().enumerate() {
            for k in kws {
                keyword_index.entry(k.clone()).or_default().insert(id);
            }
        }
        CeeTree { nodes, index, keyword_index, node_keywords }
    }

    pub fn to_raw(&self) -> RawNode {
        fn go(tree: &CeeTree, id: NodeId) -> RawNode {
            let n = &tree.nodes[id];
            RawNode {
                name: n.name.clone(),
                children: n.children.iter().map(|&c| go(tree, c)).collect(),
                info: n.info.clone(),
                scenario: n.scenario.clone(),
                property: n.property.clone(),
            }
        }
        go(self, 0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("tree serializes")
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn node(&self, id: NodeId) -> &CeeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &CeeNode)> {
        self.nodes.iter().enumerate()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Result<NodeId, CeeError> {
        self.index.get(name).copied().ok_or_else(|| CeeError::UnknownName(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Option<&CeeNode> {
        self.index.get(name).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Strict ancestors, nearest first.
    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(self.nodes[id].parent, move |&p| self.nodes[p].parent)
    }

    /// True iff `ancestor` lies strictly on the root path of `child`.
    pub fn is_subtype(&self, child: &str, ancestor: &str) -> Result<bool, CeeError> {
        let c = self.id(child)?;
        let a = self.id(ancestor)?;
        Ok(self.ancestors(c).any(|p| p == a))
    }

    /// `a` equals `b` or is a subtype of it. Unknown names are never related.
    pub fn is_same_or_subtype(&self, a: &str, b: &str) -> bool {
        a == b || self.is_subtype(a, b).unwrap_or(false)
    }

    pub fn branch_id(&self, id: NodeId) -> Option<NodeId> {
        let depth = self.nodes[id].depth;
        if depth < BRANCH_DEPTH {
            return None;
        }
        let mut cur = id;
        for _ in 0..depth - BRANCH_DEPTH {
            cur = self.nodes[cur].parent.expect("depth implies parent");
        }
        Some(cur)
    }

    /// Name of the depth-2 ancestor (or the node itself at depth 2).
    pub fn branch_of(&self, name: &str) -> Result<&str, CeeError> {
        let id = self.id(name)?;
        self.branch_id(id)
            .map(|b| self.nodes[b].name.as_str())
            .ok_or_else(|| CeeError::TooShallow(name.to_string()))
    }

    pub fn branch_roots(&self) -> Vec<NodeId> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.depth == BRANCH_DEPTH).map(|(i, _)| i).collect()
    }

    /// Nodes of the branch rooted at `root`, breadth-first.
    pub fn subtree(&self, root: NodeId) -> Vec<NodeId> {
        let mut out = vec![root];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.nodes[out[i]].children.iter().copied());
            i += 1;
        }
        out
    }

    pub fn stats(&self) -> TreeStats {
        TreeStats {
            nodes: self.nodes.len(),
            branches: self.nodes.iter().filter(|n| n.depth == BRANCH_DEPTH).count(),
            max_depth: self.nodes.iter().map(|n| n.depth).max().unwrap_or(0),
        }
    }

    /// Handling strategy for `name`, inheriting template and logic from the
    /// nearest ancestor (down to depth 1) that carries them.
    pub fn strategy_of(&self, name: &str) -> Result<HandlingStrategy, CeeError> {
        let id = self.id(name)?;
        let lineage: Vec<NodeId> = std::iter::once(id)
            .chain(self.ancestors(id))
            .filter(|&n| self.nodes[n].depth >= 1)
            .collect();
        let logic = lineage
            .iter()
            .map(|&n| &self.nodes[n].info.handle_logic)
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| CeeError::NoStrategy(name.to_string()))?;
        let supplier = lineage
            .iter()
            .copied()
            .find(|&n| !parse_template_catches(&self.nodes[n].info.handle_code).is_empty())
            .ok_or_else(|| CeeError::NoStrategy(name.to_string()))?;
        let supplier_name = &self.nodes[supplier].name;
        let mut catches = parse_template_catches(&self.nodes[supplier].info.handle_code);
        if supplier != id {
            for c in &mut catches {
                for t in &mut c.types {
                    if t == supplier_name {
                        *t = name.to_string();
                    }
                }
            }
        }
        HandlingStrategy::new(name, logic, &template_from_catches(&catches))
    }

    /// API tokens (callee names) that signal the node's dangerous operations.
    pub fn keywords(&self, id: NodeId) -> &BTreeSet<String> {
        &self.node_keywords[id]
    }

    /// Nodes whose keyword set contains `token`.
    pub fn nodes_for_keyword(&self, token: &str) -> impl Iterator<Item = NodeId> + '_ {
        self.keyword_index.get(token).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn keyword_table(&self) -> BTreeMap<String, Vec<String>> {
        self.keyword_index
            .iter()
            .map(|(k, ids)| (k.clone(), ids.iter().map(|&i| self.nodes[i].name.clone()).collect()))
            .collect()
    }

    /// Content terms used for relevance: scenario, property and dangerous
    /// operations.
    pub fn node_terms(&self, id: NodeId) -> BTreeSet<String> {
        let n = &self.nodes[id];
        let mut t = text::terms(&n.scenario);
        t.extend(text::terms(&n.property));
        t.extend(text::terms(&n.info.dangerous_operations));
        t
    }
}

const CALL_STOP: &[&str] = &[
    "add", "append", "contains", "equals", "format", "get", "getClass", "getLocalizedMessage", "getMessage",
    "hashCode", "isEmpty", "length", "main", "of", "print", "printStackTrace", "printf", "println",
    "put", "remove", "set", "size", "toString",
];

fn derive_keywords(node: &CeeNode, names: &BTreeMap<String, NodeId>) -> BTreeSet<String> {
    static HUMP: OnceLock<Regex> = OnceLock::new();
    static DOTTED: OnceLock<Regex> = OnceLock::new();
    let hump = HUMP.get_or_init(|| Regex::new(r"\b[A-Za-z]*[a-z][A-Z][A-Za-z0-9]*\b").unwrap());
    let dotted = DOTTED.get_or_init(|| Regex::new(r"\b[A-Z][A-Za-z0-9]*\.([a-z][A-Za-z0-9]*)\b").unwrap());
    let mut out = BTreeSet::new();
    let masked = syntax::mask(&node.info.sample_code);
    out.extend(text::callee_tokens(&masked));
    let ops = &node.info.dangerous_operations;
    // `Files.readAllLines`: the qualifier is not a call site
    out.extend(
        hump.find_iter(ops)
            .filter(|m| !ops[m.end()..].starts_with('.'))
            .map(|m| m.as_str().to_string()),
    );
    out.extend(dotted.captures_iter(ops).map(|c| c[1].to_string()));
    out.retain(|k| !names.contains_key(k) && !CALL_STOP.contains(&k.as_str()));
    out
}

/// Scenario and property produced by the two-step generation chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enrichment {
    pub scenario: String,
    pub property: String,
}

/// Generate a scenario, then a property consistent with it.
pub fn enrich_node(name: &str, sample_description: &str, gateway: &Gateway) -> Result<Enrichment, CeeError> {
    if sample_description.trim().is_empty() {
        return Err(CeeError::EmptySample);
    }
    let prompt = render(
        PromptKind::CeeGenScenario,
        &bind([("sample_desc", sample_description.to_string()), ("ename", name.to_string())]),
    )?;
    let first = gateway.complete_structured(PromptKind::CeeGenScenario, &prompt)?;
    let scenario = first.payload.as_ref().and_then(|p| p["scenario"].as_str()).unwrap_or_default().to_string();
    let prompt = render(
        PromptKind::CeeGenProperty,
        &bind([
            ("sample_desc", sample_description.to_string()),
            ("ename", name.to_string()),
            ("scenario", scenario.clone()),
        ]),
    )?;
    let second = gateway.complete_structured(PromptKind::CeeGenProperty, &prompt)?;
    let payload = second.payload.expect("structured completion has payload");
    Ok(Enrichment {
        scenario: payload["scenario"].as_str().map(str::to_string).unwrap_or(scenario),
        property: payload["property"].as_str().unwrap_or_default().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(name: &str) -> RawNode {
        RawNode {
            name: name.into(),
            children: vec![],
            info: NodeInfo { handle_logic: "log it".into(), ..Default::default() },
            scenario: "s".into(),
            property: "p".into(),
        }
    }

    fn with_children(name: &str, children: Vec<RawNode>) -> RawNode {
        RawNode { children, ..leaf(name) }
    }

    #[test]
    fn bundled_tree_loads() {
        let tree = CeeTree::bundled();
        let s = tree.stats();
        assert!(s.nodes >= 30);
        assert!(s.branches >= 8);
        assert!(s.max_depth <= MAX_DEPTH);
    }

    #[test]
    fn subtype_queries() {
        let tree = CeeTree::bundled();
        assert!(tree.is_subtype("SQLClientInfoException", "SQLException").unwrap());
        assert!(!tree.is_subtype("IOException", "IOException").unwrap());
        assert!(!tree.is_subtype("IOException", "RuntimeException").unwrap());
        assert!(matches!(tree.is_subtype("Nope", "IOException"), Err(CeeError::UnknownName(n)) if n == "Nope"));
    }

    #[test]
    fn branches() {
        let tree = CeeTree::bundled();
        assert_eq!(tree.branch_of("FileNotFoundException").unwrap(), "IOException");
        assert_eq!(tree.branch_of("IOException").unwrap(), "IOException");
        for shallow in ["Throwable", "Exception", "Error"] {
            assert!(matches!(tree.branch_of(shallow), Err(CeeError::TooShallow(_))));
        }
    }

    #[test]
    fn stats_of_tiny_tree() {
        let tree = CeeTree::from_raw(&with_children("Throwable", vec![leaf("Exception")])).unwrap();
        assert_eq!(tree.stats(), TreeStats { nodes: 2, branches: 0, max_depth: 1 });
    }

    #[test]
    fn duplicate_and_root_violations() {
        let dup = with_children(
            "Throwable",
            vec![with_children("Exception", vec![leaf("IOException"), leaf("IOException")])],
        );
        let v = check_document(&dup);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind.to_string(), "duplicate name");
        let bad_root = with_children("Exception", vec![leaf("IOException")]);
        let err = CeeTree::from_raw(&bad_root).unwrap_err();
        assert!(err.to_string().contains("root must be Throwable"), "{err}");
    }

    #[test]
    fn depth_and_payload_violations() {
        let mut deep = leaf("L6");
        for name in ["L5", "L4", "L3", "L2", "L1"] {
            deep = with_children(name, vec![deep]);
        }
        let v = check_document(&with_children("Throwable", vec![deep]));
        assert_eq!(v, vec![Violation { node: "L6".into(), kind: ViolationKind::TooDeep(6) }]);

        let mut bare = leaf("Exception");
        bare.scenario.clear();
        let v = check_document(&with_children("Throwable", vec![bare]));
        assert_eq!(v[0].kind, ViolationKind::MissingLeafPayload("scenario"));
    }

    #[test]
    fn handle_code_must_catch_self_or_ancestor() {
        let mut io = leaf("IOException");
        io.info.handle_code = "try { a(); } catch (SQLException e) { log(e); }".into();
        let v = check_document(&with_children("Throwable", vec![with_children("Exception", vec![io])]));
        assert_eq!(v[0].kind, ViolationKind::HandleCodeCatch);
    }

    #[test]
    fn unknown_fields_strict_only() {
        let doc = r#"{"name":"Throwable","scenario":"s","property":"p","info":{"handle_logic":"h","extra":1},"color":"red"}"#;
        assert_eq!(validate_str(doc, false).unwrap(), vec![]);
        let strict = validate_str(doc, true).unwrap();
        assert_eq!(strict.len(), 2);
        assert!(CeeTree::from_json(doc, false).is_ok());
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(CeeTree::from_json("{\"name\": ", false), Err(CeeError::Parse(_))));
    }

    #[test]
    fn io_strategy() {
        let tree = CeeTree::bundled();
        let s = tree.strategy_of("IOException").unwrap();
        assert!(s.handle_logic.starts_with("Try the codes attempting"));
        assert_eq!(s.template.matches(PLACEHOLDER).count(), 1);
        assert!(s.template.contains("catch(IOException ex)"));
        assert!(matches!(tree.strategy_of("Missing"), Err(CeeError::UnknownName(_))));
    }

    #[test]
    fn strategy_inherits_parent_template() {
        let mut parent = with_children("IOException", vec![leaf("EOFException")]);
        parent.info.handle_code = "try { r(); } catch (IOException e) {\n  log(e);\n}".into();
        let tree = CeeTree::from_raw(&with_children("Throwable", vec![with_children("Exception", vec![parent])]))
            .unwrap();
        let s = tree.strategy_of("EOFException").unwrap();
        assert_eq!(s.type_name, "EOFException");
        assert_eq!(s.template, "try {\n{fragile_code}\n} catch(EOFException e) {\n    log(e);\n}");
        let p = tree.strategy_of("IOException").unwrap();
        assert_eq!(p.template.replace("IOException", "EOFException"), s.template);
    }

    #[test]
    fn no_strategy_above_depth_one() {
        let mut root = with_children("Throwable", vec![leaf("Exception")]);
        root.info.handle_code = "try { x(); } catch (Throwable t) { log(t); }".into();
        root.children[0].info.handle_logic = "h".into();
        let tree = CeeTree::from_raw(&root).unwrap();
        assert!(matches!(tree.strategy_of("Exception"), Err(CeeError::NoStrategy(_))));
    }

    #[test]
    fn keyword_table_from_samples() {
        let tree = CeeTree::bundled();
        let io = tree.id("IOException").unwrap();
        assert!(tree.keywords(io).contains("FileReader"));
        let owners: Vec<_> = tree.nodes_for_keyword("parseInt").map(|i| tree.node(i).name.clone()).collect();
        assert_eq!(owners, vec!["NumberFormatException"]);
        for (_, names) in tree.keyword_table() {
            assert!(!names.is_empty());
        }
    }

    #[test]
    fn serialization_round_trip() {
        let tree = CeeTree::bundled();
        let again = CeeTree::from_json(&tree.to_json(), true).unwrap();
        assert_eq!(again.stats(), tree.stats());
        assert_eq!(again.names().collect::<Vec<_>>(), tree.names().collect::<Vec<_>>());
        assert_eq!(tree.stats().nodes, tree.names().count());
    }
}
