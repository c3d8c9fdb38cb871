//! Statement-level control flow graph of one code unit.

use serde::Serialize;

use super::DetectError;
use crate::planner::{CodeUnit, UnitKind};
use crate::syntax::{self, Clause, CompoundKind, Stmt, StmtKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    Entry,
    Stmts,
    Cond,
    Try,
    Handler,
    Join,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Block {
    pub kind: BlockKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Sequence,
    BranchTrue,
    BranchFalse,
    LoopBack,
    ThrowExit,
    ReturnExit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Block(usize),
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub from: usize,
    pub to: Target,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub unit_start: usize,
    pub unit_end: usize,
    pub blocks: Vec<Block>,
    pub edges: Vec<Edge>,
    /// Statement forest of the unit, kept for statement-aligned queries.
    pub stmts: Vec<Stmt>,
    pub masked: syntax::Masked,
}

impl Cfg {
    pub fn entry(&self) -> usize {
        0
    }

    /// Block owning `line`: the one with the greatest start not after it.
    pub fn block_of(&self, line: usize) -> Option<usize> {
        if line < self.unit_start || line > self.unit_end {
            return None;
        }
        let mut best = 0;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.start <= line && b.start >= self.blocks[best].start {
                best = i;
            }
        }
        Some(best)
    }

    pub fn edges_from(&self, block: usize) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.from == block)
    }
}

pub fn build_cfg(unit: &CodeUnit) -> Result<Cfg, DetectError> {
    let (masked, stmts) = syntax::parse(&unit.text, unit.start);
    if unit.kind == UnitKind::Method {
        syntax::check_braces(&masked).map_err(|f| DetectError::Lex { line: f.line() })?;
    }
    let mut b = Builder { blocks: Vec::new(), edges: Vec::new(), frames: Vec::new(), open: None };
    let tail = b.seq(&stmts, Vec::new());
    if b.blocks.is_empty() {
        b.blocks.push(Block { kind: BlockKind::Entry, start: unit.start, end: unit.end });
    }
    b.blocks[0].start = b.blocks[0].start.min(unit.start);
    for (from, _) in tail {
        b.edges.push(Edge { from, to: Target::Exit, kind: EdgeKind::Sequence });
    }
    if b.edges.iter().all(|e| e.to != Target::Exit) {
        b.edges.push(Edge { from: b.blocks.len() - 1, to: Target::Exit, kind: EdgeKind::Sequence });
    }
    Ok(Cfg { unit_start: unit.start, unit_end: unit.end, blocks: b.blocks, edges: b.edges, stmts, masked })
}

type Pending = Vec<(usize, EdgeKind)>;

struct Frame {
    /// Loop head for `continue`; `None` for switch.
    head: Option<usize>,
    breaks: Pending,
}

struct Builder {
    blocks: Vec<Block>,
    edges: Vec<Edge>,
    frames: Vec<Frame>,
    /// Block that a following simple statement may extend.
    open: Option<usize>,
}

fn first_word(text: &str) -> &str {
    let t = text.trim_start();
    let end = t.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(t.len());
    &t[..end]
}

impl Builder {
    fn link(&mut self, preds: &Pending, to: usize) {
        for &(from, kind) in preds {
            self.edges.push(Edge { from, to: Target::Block(to), kind });
        }
    }

    fn block(&mut self, kind: BlockKind, start: usize, end: usize, preds: Pending) -> usize {
        let id = self.blocks.len();
        self.blocks.push(Block { kind, start, end: end.max(start) });
        self.link(&preds, id);
        self.open = matches!(kind, BlockKind::Stmts | BlockKind::Handler | BlockKind::Join).then_some(id);
        id
    }

    /// Extend the open block with lines `start..=end`, or start a new one.
    fn straight(&mut self, start: usize, end: usize, preds: Pending) -> usize {
        if let [(b, EdgeKind::Sequence)] = preds[..] {
            if self.open == Some(b) {
                self.blocks[b].end = self.blocks[b].end.max(end);
                return b;
            }
        }
        self.block(BlockKind::Stmts, start, end, preds)
    }

    fn seq(&mut self, stmts: &[Stmt], mut preds: Pending) -> Pending {
        for s in stmts {
            preds = self.stmt(s, preds);
        }
        preds
    }

    fn body(&mut self, clause: &Clause, preds: Pending) -> Pending {
        self.open = None;
        self.seq(&clause.stmts, preds)
    }

    fn stmt(&mut self, s: &Stmt, preds: Pending) -> Pending {
        match s.kind {
            StmtKind::Simple | StmtKind::Label => self.simple(s, preds),
            StmtKind::Compound(kind) => self.compound(kind, s, preds),
        }
    }

    fn simple(&mut self, s: &Stmt, preds: Pending) -> Pending {
        let b = self.straight(s.start, s.end, preds);
        match first_word(&s.text) {
            "throw" => {
                self.edges.push(Edge { from: b, to: Target::Exit, kind: EdgeKind::ThrowExit });
                self.open = None;
                Vec::new()
            }
            "return" => {
                self.edges.push(Edge { from: b, to: Target::Exit, kind: EdgeKind::ReturnExit });
                self.open = None;
                Vec::new()
            }
            "break" if !self.frames.is_empty() => {
                self.frames.last_mut().unwrap().breaks.push((b, EdgeKind::Sequence));
                self.open = None;
                Vec::new()
            }
            "continue" => match self.frames.iter().rev().find_map(|f| f.head) {
                Some(head) => {
                    self.edges.push(Edge { from: b, to: Target::Block(head), kind: EdgeKind::LoopBack });
                    self.open = None;
                    Vec::new()
                }
                None => vec![(b, EdgeKind::Sequence)],
            },
            _ => vec![(b, EdgeKind::Sequence)],
        }
    }

    fn join(&mut self, line: usize, preds: Pending) -> Pending {
        if preds.is_empty() {
            self.open = None;
            return preds;
        }
        let j = self.block(BlockKind::Join, line, line, preds);
        vec![(j, EdgeKind::Sequence)]
    }

    fn compound(&mut self, kind: CompoundKind, s: &Stmt, preds: Pending) -> Pending {
        let first = &s.clauses[0];
        match kind {
            CompoundKind::If => {
                let mut cond = self.block(BlockKind::Cond, s.start, first.open, preds);
                let mut out = Vec::new();
                let mut has_else = false;
                for (i, c) in s.clauses.iter().enumerate() {
                    if i > 0 {
                        if c.header.starts_with("else") && c.header["else".len()..].trim_start().starts_with("if") {
                            cond = self.block(BlockKind::Cond, c.header_line, c.open, vec![(cond, EdgeKind::BranchFalse)]);
                        } else {
                            has_else = true;
                            out.extend(self.body(c, vec![(cond, EdgeKind::BranchFalse)]));
                            continue;
                        }
                    }
                    out.extend(self.body(c, vec![(cond, EdgeKind::BranchTrue)]));
                }
                if !has_else {
                    out.push((cond, EdgeKind::BranchFalse));
                }
                self.join(s.end, out)
            }
            CompoundKind::While | CompoundKind::For => {
                let cond = self.block(BlockKind::Cond, s.start, first.open, preds);
                self.frames.push(Frame { head: Some(cond), breaks: Vec::new() });
                let tail = self.body(first, vec![(cond, EdgeKind::BranchTrue)]);
                for (from, _) in tail {
                    self.edges.push(Edge { from, to: Target::Block(cond), kind: EdgeKind::LoopBack });
                }
                let frame = self.frames.pop().unwrap();
                self.open = None;
                let mut out = vec![(cond, EdgeKind::BranchFalse)];
                out.extend(frame.breaks);
                out
            }
            CompoundKind::Do => {
                let first_block = self.blocks.len();
                self.frames.push(Frame { head: None, breaks: Vec::new() });
                self.open = None;
                let tail = self.seq(&first.stmts, preds);
                let cond = self.block(BlockKind::Cond, first.close, s.end, tail);
                let target = if first_block < cond { first_block } else { cond };
                self.edges.push(Edge { from: cond, to: Target::Block(target), kind: EdgeKind::LoopBack });
                let frame = self.frames.pop().unwrap();
                self.open = None;
                let mut out = vec![(cond, EdgeKind::BranchFalse)];
                out.extend(frame.breaks);
                out
            }
            CompoundKind::Switch => {
                let cond = self.block(BlockKind::Cond, s.start, first.open, preds);
                self.frames.push(Frame { head: None, breaks: Vec::new() });
                let mut out = Vec::new();
                let mut flow: Pending = Vec::new();
                let mut has_default = false;
                for st in &first.stmts {
                    let word = first_word(&st.text);
                    if matches!(word, "case" | "default") {
                        has_default |= word == "default";
                        let mut p = std::mem::take(&mut flow);
                        p.push((cond, EdgeKind::BranchTrue));
                        self.open = None;
                        flow = self.stmt(st, p);
                        if st.text.contains("->") {
                            out.append(&mut flow);
                        }
                    } else {
                        flow = self.stmt(st, flow);
                    }
                }
                out.extend(flow);
                let frame = self.frames.pop().unwrap();
                out.extend(frame.breaks);
                if !has_default {
                    out.push((cond, EdgeKind::BranchFalse));
                }
                self.join(s.end, out)
            }
            CompoundKind::Try => {
                let head = self.block(BlockKind::Try, s.start, first.open, preds);
                let mut out = self.body(first, vec![(head, EdgeKind::Sequence)]);
                let mut finally = None;
                for c in &s.clauses[1..] {
                    if c.header.starts_with("finally") {
                        finally = Some(c);
                        continue;
                    }
                    let h = self.block(BlockKind::Handler, c.header_line, c.open, vec![(head, EdgeKind::BranchFalse)]);
                    out.extend(self.seq(&c.stmts, vec![(h, EdgeKind::Sequence)]));
                }
                match finally {
                    Some(c) => {
                        let f = self.block(BlockKind::Stmts, c.header_line, c.open, out);
                        self.seq(&c.stmts, vec![(f, EdgeKind::Sequence)])
                    }
                    None => self.join(s.end, out),
                }
            }
            CompoundKind::Method => {
                let h = self.straight(s.start, first.open, preds.clone());
                let tail = self.seq(&first.stmts, vec![(h, EdgeKind::Sequence)]);
                for (from, _) in tail {
                    self.edges.push(Edge { from, to: Target::Exit, kind: EdgeKind::Sequence });
                }
                // members after a method continue from the declaration point
                self.open = None;
                if preds.is_empty() {
                    vec![(h, EdgeKind::Sequence)]
                } else {
                    preds
                }
            }
            _ => {
                let h = self.straight(s.start, first.open, preds);
                let mut out = self.seq(&first.stmts, vec![(h, EdgeKind::Sequence)]);
                for c in &s.clauses[1..] {
                    out = self.seq(&c.stmts, out);
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(text: &str) -> CodeUnit {
        CodeUnit::from_text("T.java", 1, text)
    }

    fn edges(cfg: &Cfg) -> Vec<(usize, Target, EdgeKind)> {
        cfg.edges.iter().map(|e| (e.from, e.to, e.kind)).collect()
    }

    #[test]
    fn straight_line_is_one_block() {
        let cfg = build_cfg(&unit("int a = 1;\nint b = a + 1;\nuse(b);")).unwrap();
        assert_eq!(cfg.blocks.len(), 1);
        assert_eq!((cfg.blocks[0].start, cfg.blocks[0].end), (1, 3));
        assert!(cfg.edges.iter().all(|e| e.kind == EdgeKind::Sequence));
    }

    #[test]
    fn if_else_diamond() {
        let cfg = build_cfg(&unit("if (x) {\n    a();\n} else {\n    b();\n}")).unwrap();
        let spans: Vec<_> = cfg.blocks.iter().map(|b| (b.kind, b.start, b.end)).collect();
        assert_eq!(
            spans,
            vec![
                (BlockKind::Cond, 1, 1),
                (BlockKind::Stmts, 2, 2),
                (BlockKind::Stmts, 4, 4),
                (BlockKind::Join, 5, 5)
            ]
        );
        use EdgeKind::*;
        assert_eq!(
            edges(&cfg),
            vec![
                (0, Target::Block(1), BranchTrue),
                (0, Target::Block(2), BranchFalse),
                (1, Target::Block(3), Sequence),
                (2, Target::Block(3), Sequence),
                (3, Target::Exit, Sequence),
            ]
        );
    }

    #[test]
    fn throw_has_exit_edge() {
        let cfg = build_cfg(&unit("check();\nthrow new IllegalStateException();")).unwrap();
        assert_eq!(cfg.blocks.len(), 1);
        assert!(edges(&cfg).contains(&(0, Target::Exit, EdgeKind::ThrowExit)));
    }

    #[test]
    fn loop_edges() {
        let cfg = build_cfg(&unit("while (more()) {\n    step();\n}\ndone();")).unwrap();
        use EdgeKind::*;
        let e = edges(&cfg);
        assert!(e.contains(&(0, Target::Block(1), BranchTrue)));
        assert!(e.contains(&(1, Target::Block(0), LoopBack)));
        assert!(e.contains(&(0, Target::Block(2), BranchFalse)));
        assert_eq!(cfg.block_of(3), Some(1));
        assert_eq!(cfg.block_of(4), Some(2));
    }

    #[test]
    fn try_catch_edges() {
        let src = "try {\n    read();\n} catch (IOException e) {\n    log(e);\n}\nnext();";
        let cfg = build_cfg(&unit(src)).unwrap();
        let kinds: Vec<_> = cfg.blocks.iter().map(|b| b.kind).collect();
        assert_eq!(kinds, vec![BlockKind::Try, BlockKind::Stmts, BlockKind::Handler, BlockKind::Join]);
        assert!(edges(&cfg).contains(&(0, Target::Block(2), EdgeKind::BranchFalse)));
        assert_eq!(cfg.block_of(6), Some(3));
    }

    #[test]
    fn return_exit_and_every_line_owned() {
        let src = "int f(int x) {\n    if (x > 0) {\n        return 1;\n    }\n    // note\n    return 0;\n}";
        let u = CodeUnit { kind: UnitKind::Method, ..unit(src) };
        let cfg = build_cfg(&u).unwrap();
        assert_eq!(cfg.edges.iter().filter(|e| e.kind == EdgeKind::ReturnExit).count(), 2);
        for line in 1..=7 {
            assert!(cfg.block_of(line).is_some());
        }
        assert_eq!(cfg.block_of(8), None);
        for e in &cfg.edges {
            assert!(e.from < cfg.blocks.len());
            if let Target::Block(t) = e.to {
                assert!(t < cfg.blocks.len());
            }
        }
    }

    #[test]
    fn unbalanced_method_is_lex_error() {
        let u = CodeUnit { kind: UnitKind::Method, ..unit("void f() {\n  g();\n") };
        assert!(matches!(build_cfg(&u), Err(DetectError::Lex { line: 1 })));
    }
}
