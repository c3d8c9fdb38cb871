//! Exception propagation graph: where exceptions may originate in a unit
//! and which handler, if any, receives them.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use super::cfg::Cfg;
use crate::cee::CeeTree;
use crate::syntax::{self, CompoundKind, Stmt, StmtKind};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteOrigin {
    ThrowStmt,
    ThrowsClause,
    ApiCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Site {
    pub line: usize,
    pub exception: String,
    pub origin: SiteOrigin,
    /// Keyword that matched, for api-call sites.
    pub keyword: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "to")]
pub enum Route {
    /// Caught by the catch clause whose header is on `line`.
    Catch { line: usize, catch_type: String },
    /// Declared by the enclosing method's throws clause.
    Declared,
    /// Leaves the unit unhandled.
    Exit,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Epg {
    pub sites: Vec<Site>,
    /// `routes[i]` is where `sites[i]` propagates.
    pub routes: Vec<Route>,
}

impl Epg {
    pub fn unhandled(&self) -> impl Iterator<Item = &Site> {
        self.sites.iter().zip(&self.routes).filter(|(_, r)| **r == Route::Exit).map(|(s, _)| s)
    }
}

fn throw_type(stmt_text: &str) -> Option<&str> {
    static THROW: OnceLock<Regex> = OnceLock::new();
    let re = THROW.get_or_init(|| Regex::new(r"^throw\s+new\s+([\w$.]+)\s*\(").unwrap());
    let caps = re.captures(stmt_text.trim())?;
    let full = caps.get(1)?.as_str();
    Some(full.rsplit('.').next().unwrap_or(full))
}

/// Types listed in a method header's throws clause.
pub fn throws_clause(header: &str) -> Vec<String> {
    static THROWS: OnceLock<Regex> = OnceLock::new();
    let re = THROWS.get_or_init(|| Regex::new(r"\)\s*throws\s+([\w$.,\s<>]+)$").unwrap());
    re.captures(header.trim())
        .map(|c| {
            c[1].split(',')
                .map(|t| t.trim().rsplit('.').next().unwrap_or("").to_string())
                .filter(|t| !t.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

/// Compound statements containing `line`, outermost first.
fn enclosing(stmts: &[Stmt], line: usize) -> Vec<&Stmt> {
    let mut chain = Vec::new();
    let mut level = stmts;
    'outer: loop {
        for s in level {
            if s.contains(line) && matches!(s.kind, StmtKind::Compound(_)) {
                chain.push(s);
                if let Some(c) = s.clauses.iter().find(|c| c.open <= line && line <= c.close) {
                    level = &c.stmts;
                    continue 'outer;
                }
                break 'outer;
            }
        }
        break;
    }
    chain
}

/// True iff `line` lies in the protected region of a try statement: its
/// resource header or its body, not its handlers.
fn in_try_region(stmt: &Stmt, line: usize) -> bool {
    let body = &stmt.clauses[0];
    line >= stmt.start && (line < body.close || (line == body.open && body.open == body.close))
}

/// Where an exception of type `exception` raised on `line` propagates.
pub fn route(stmts: &[Stmt], tree: &CeeTree, line: usize, exception: &str) -> Route {
    for s in enclosing(stmts, line).into_iter().rev() {
        match s.kind {
            StmtKind::Compound(CompoundKind::Try) if in_try_region(s, line) => {
                for c in syntax::catch_clauses(s) {
                    if let Some(t) = c.types.iter().find(|t| tree.is_same_or_subtype(exception, t)) {
                        return Route::Catch { line: c.header_line, catch_type: t.clone() };
                    }
                }
            }
            StmtKind::Compound(CompoundKind::Method) => {
                let declared = throws_clause(&s.clauses[0].header);
                if declared.iter().any(|d| tree.is_same_or_subtype(exception, d)) {
                    return Route::Declared;
                }
                return Route::Exit;
            }
            _ => {}
        }
    }
    Route::Exit
}

/// Lines that belong to method or type declarations rather than code.
fn declaration_lines(stmts: &[Stmt]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    syntax::walk(stmts, &mut |s, _| {
        if s.is_method() || s.is_type() {
            out.extend(s.start..=s.clauses[0].open);
        }
    });
    out
}

pub fn build_epg(cfg: &Cfg, tree: &CeeTree) -> Epg {
    let mut sites = Vec::new();
    syntax::walk(&cfg.stmts, &mut |s, _| match s.kind {
        StmtKind::Simple => {
            if let Some(t) = throw_type(&s.text) {
                if tree.contains(t) {
                    sites.push(Site { line: s.start, exception: t.to_string(), origin: SiteOrigin::ThrowStmt, keyword: None });
                } else {
                    log::debug!("line {}: `{t}` is not in the CEE", s.start);
                }
            }
        }
        StmtKind::Compound(CompoundKind::Method) => {
            for t in throws_clause(&s.clauses[0].header) {
                if tree.contains(&t) {
                    let line = (s.start..=s.clauses[0].open)
                        .find(|&l| cfg.masked.line(l).contains("throws"))
                        .unwrap_or(s.start);
                    sites.push(Site { line, exception: t, origin: SiteOrigin::ThrowsClause, keyword: None });
                }
            }
        }
        _ => {}
    });
    let skip = declaration_lines(&cfg.stmts);
    for line in cfg.unit_start..=cfg.unit_end {
        if skip.contains(&line) || line - cfg.masked.first_line >= cfg.masked.line_count() {
            continue;
        }
        for callee in text::callee_tokens(cfg.masked.line(line)) {
            for id in tree.nodes_for_keyword(&callee) {
                sites.push(Site {
                    line,
                    exception: tree.node(id).name.clone(),
                    origin: SiteOrigin::ApiCall,
                    keyword: Some(callee.clone()),
                });
            }
        }
    }
    sites.sort_by(|a, b| (a.line, a.origin, &a.exception).cmp(&(b.line, b.origin, &b.exception)));
    let routes = sites
        .iter()
        .map(|s| match s.origin {
            SiteOrigin::ThrowsClause => Route::Declared,
            _ => route(&cfg.stmts, tree, s.line, &s.exception),
        })
        .collect();
    Epg { sites, routes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::cfg::build_cfg;
    use crate::planner::CodeUnit;

    fn epg(src: &str) -> Epg {
        let tree = CeeTree::bundled();
        build_epg(&build_cfg(&CodeUnit::from_text("T.java", 1, src)).unwrap(), &tree)
    }

    #[test]
    fn file_reader_is_io_site() {
        let g = epg("Reader r = new FileReader(name);");
        assert_eq!(
            g.sites,
            vec![Site {
                line: 1,
                exception: "IOException".into(),
                origin: SiteOrigin::ApiCall,
                keyword: Some("FileReader".into())
            }]
        );
        assert_eq!(g.routes, vec![Route::Exit]);
    }

    #[test]
    fn plain_code_has_no_sites() {
        assert!(epg("int a = 1;\nint b = a * 2;\nif (b > a) {\n    a = b;\n}").sites.is_empty());
    }

    #[test]
    fn throw_routes_to_nearest_catch() {
        let src = "try {\n    try {\n        throw new IllegalStateException();\n    } catch (IOException e) {\n        log(e);\n    }\n} catch (RuntimeException e) {\n    log(e);\n}";
        let g = epg(src);
        assert_eq!(g.sites.len(), 1);
        assert_eq!(g.sites[0].origin, SiteOrigin::ThrowStmt);
        assert_eq!(g.routes[0], Route::Catch { line: 7, catch_type: "RuntimeException".into() });
    }

    #[test]
    fn throws_clause_declares() {
        let src = "void load(String p) throws IOException {\n    Reader r = new FileReader(p);\n    int n = Integer.parseInt(p);\n}";
        let g = epg(src);
        let origins: Vec<_> = g.sites.iter().map(|s| (s.line, s.origin, s.exception.as_str())).collect();
        assert_eq!(
            origins,
            vec![
                (1, SiteOrigin::ThrowsClause, "IOException"),
                (2, SiteOrigin::ApiCall, "IOException"),
                (3, SiteOrigin::ApiCall, "NumberFormatException"),
            ]
        );
        assert_eq!(g.routes, vec![Route::Declared, Route::Declared, Route::Exit]);
        assert_eq!(g.unhandled().count(), 1);
    }

    #[test]
    fn resource_header_is_protected() {
        let src = "try (Reader r = new FileReader(p)) {\n    use(r);\n} catch (IOException e) {\n    log(e);\n}";
        let g = epg(src);
        assert_eq!(g.routes, vec![Route::Catch { line: 3, catch_type: "IOException".into() }]);
    }

    #[test]
    fn handler_body_is_not_protected() {
        let src = "try {\n    a();\n} catch (RuntimeException e) {\n    Thread.sleep(10);\n}";
        let g = epg(src);
        assert_eq!(g.routes, vec![Route::Exit]);
    }
}
