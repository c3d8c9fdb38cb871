//! Lexical model of Java source: comment/literal masking, brace accounting
//! and a lenient statement tree.
//!
//! Nothing here is a Java grammar. Statements are recovered from `;`, `{`
//! and `}` after comments and literals have been blanked out, which is
//! enough to find method boundaries, block structure and statement spans.
//! All line numbers are 1-based and absolute: callers pass the line number
//! of the first line of the text they hand in.

use std::sync::OnceLock;

use regex::Regex;

/// Replace the contents of comments, string, char and text-block literals
/// with spaces. Byte offsets and newlines are preserved.
pub fn mask(src: &str) -> String {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Code,
        LineComment,
        BlockComment,
        Str,
        Char,
        TextBlock,
    }
    let mut out = String::with_capacity(src.len());
    let mut state = State::Code;
    let mut chars = src.char_indices().peekable();
    let blank = |out: &mut String, c: char| {
        if c == '\n' {
            out.push('\n');
        } else {
            for _ in 0..c.len_utf8() {
                out.push(' ');
            }
        }
    };
    while let Some((i, c)) = chars.next() {
        match state {
            State::Code => {
                let rest = &src[i..];
                if rest.starts_with("//") {
                    state = State::LineComment;
                    blank(&mut out, c);
                } else if rest.starts_with("/*") {
                    state = State::BlockComment;
                    out.push_str("  ");
                    chars.next();
                } else if rest.starts_with("\"\"\"") {
                    state = State::TextBlock;
                    out.push_str("   ");
                    chars.next();
                    chars.next();
                } else if c == '"' {
                    state = State::Str;
                    blank(&mut out, c);
                } else if c == '\'' {
                    state = State::Char;
                    blank(&mut out, c);
                } else {
                    out.push(c);
                }
            }
            State::LineComment => {
                if c == '\n' {
                    state = State::Code;
                }
                blank(&mut out, c);
            }
            State::BlockComment => {
                if src[i..].starts_with("*/") {
                    out.push_str("  ");
                    chars.next();
                    state = State::Code;
                } else {
                    blank(&mut out, c);
                }
            }
            State::TextBlock => {
                if src[i..].starts_with("\"\"\"") {
                    out.push_str("   ");
                    chars.next();
                    chars.next();
                    state = State::Code;
                } else if c == '\\' {
                    blank(&mut out, c);
                    if let Some((_, n)) = chars.next() {
                        blank(&mut out, n);
                    }
                } else {
                    blank(&mut out, c);
                }
            }
            State::Str | State::Char => {
                let close = if state == State::Str { '"' } else { '\'' };
                if c == '\\' {
                    blank(&mut out, c);
                    if let Some(&(_, n)) = chars.peek() {
                        if n != '\n' {
                            chars.next();
                            blank(&mut out, n);
                        }
                    }
                } else if c == close || c == '\n' {
                    // unterminated literals stop at end of line
                    state = State::Code;
                    blank(&mut out, c);
                } else {
                    blank(&mut out, c);
                }
            }
        }
    }
    out
}

/// Masked text plus a line index.
#[derive(Debug, Clone)]
pub struct Masked {
    pub text: String,
    line_starts: Vec<usize>,
    pub first_line: usize,
}

impl Masked {
    pub fn new(src: &str, first_line: usize) -> Self {
        let text = mask(src);
        let mut line_starts = vec![0];
        for (i, b) in text.bytes().enumerate() {
            if b == b'\n' {
                line_starts.push(i + 1);
            }
        }
        Masked { text, line_starts, first_line }
    }

    /// Absolute line of a byte offset.
    pub fn line_of(&self, offset: usize) -> usize {
        let idx = match self.line_starts.binary_search(&offset) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        idx + self.first_line
    }

    pub fn line_count(&self) -> usize {
        if self.text.is_empty() {
            0
        } else if self.text.ends_with('\n') {
            self.line_starts.len() - 1
        } else {
            self.line_starts.len()
        }
    }

    /// Masked text of one absolute line, without the newline.
    pub fn line(&self, line: usize) -> &str {
        let idx = line - self.first_line;
        let start = self.line_starts[idx];
        let end = self
            .line_starts
            .get(idx + 1)
            .map(|e| e - 1)
            .unwrap_or(self.text.len());
        &self.text[start..end.max(start)]
    }
}

/// Location of the first brace imbalance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BraceFault {
    /// A `}` with nothing open.
    UnexpectedClose { line: usize },
    /// A `{` never closed.
    Unclosed { line: usize },
}

impl BraceFault {
    pub fn line(&self) -> usize {
        match *self {
            BraceFault::UnexpectedClose { line } | BraceFault::Unclosed { line } => line,
        }
    }
}

pub fn check_braces(masked: &Masked) -> Result<(), BraceFault> {
    let mut open: Vec<usize> = Vec::new();
    for (i, b) in masked.text.bytes().enumerate() {
        match b {
            b'{' => open.push(i),
            b'}' if open.pop().is_none() => {
                return Err(BraceFault::UnexpectedClose { line: masked.line_of(i) });
            }
            _ => {}
        }
    }
    match open.first() {
        Some(&i) => Err(BraceFault::Unclosed { line: masked.line_of(i) }),
        None => Ok(()),
    }
}

/// Maximum open-brace depth reached, ignoring literals and comments.
pub fn nesting_level(src: &str) -> usize {
    let masked = mask(src);
    let mut depth = 0usize;
    let mut max = 0usize;
    for b in masked.bytes() {
        match b {
            b'{' => {
                depth += 1;
                max = max.max(depth);
            }
            b'}' => depth = depth.saturating_sub(1),
            _ => {}
        }
    }
    max
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompoundKind {
    If,
    For,
    While,
    Do,
    Try,
    Switch,
    Synchronized,
    Block,
    Case,
    Initializer,
    Method,
    Type,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmtKind {
    Simple,
    Label,
    Compound(CompoundKind),
}

/// One `header { ... }` part of a compound statement (`if`, `else`,
/// `catch (...)`, a method body, ...).
#[derive(Debug, Clone)]
pub struct Clause {
    pub header: String,
    pub header_line: usize,
    pub open: usize,
    pub close: usize,
    pub stmts: Vec<Stmt>,
}

#[derive(Debug, Clone)]
pub struct Stmt {
    pub kind: StmtKind,
    pub start: usize,
    pub end: usize,
    /// Masked text of a simple statement, or the first clause header.
    pub text: String,
    pub clauses: Vec<Clause>,
}

impl Stmt {
    pub fn is_method(&self) -> bool {
        self.kind == StmtKind::Compound(CompoundKind::Method)
    }

    pub fn is_type(&self) -> bool {
        self.kind == StmtKind::Compound(CompoundKind::Type)
    }

    pub fn contains(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }

    /// Lines of the statement that belong to no nested block.
    pub fn own_lines(&self) -> Vec<usize> {
        let mut lines: Vec<usize> = (self.start..=self.end).collect();
        for clause in &self.clauses {
            lines.retain(|&l| l <= clause.open || l >= clause.close);
        }
        lines
    }
}

/// Parse masked source into a statement forest. `first_line` is the
/// absolute number of the first line of `src`.
pub fn parse(src: &str, first_line: usize) -> (Masked, Vec<Stmt>) {
    let masked = Masked::new(src, first_line);
    let stmts = {
        let mut p = Parser { text: &masked.text, bytes: masked.text.as_bytes(), pos: 0, masked: &masked };
        p.parse_items(false)
    };
    (masked, stmts)
}

/// Pre-order traversal of a statement forest.
pub fn walk<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt, usize)) {
    fn go<'a>(stmts: &'a [Stmt], depth: usize, f: &mut dyn FnMut(&'a Stmt, usize)) {
        for s in stmts {
            f(s, depth);
            for c in &s.clauses {
                go(&c.stmts, depth + 1, f);
            }
        }
    }
    go(stmts, 0, f)
}

/// Spans of outermost methods, descending into type bodies only.
pub fn method_spans(stmts: &[Stmt]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in stmts {
        if s.is_method() {
            out.push((s.start, s.end));
        } else if s.is_type() {
            for c in &s.clauses {
                out.extend(method_spans(&c.stmts));
            }
        }
    }
    out
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
    masked: &'a Masked,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn line(&self, offset: usize) -> usize {
        self.masked.line_of(offset.min(self.bytes.len().saturating_sub(1)))
    }

    fn peek_word(&self) -> &'a str {
        let start = self.pos;
        let mut end = start;
        while end < self.bytes.len() && (self.bytes[end].is_ascii_alphanumeric() || self.bytes[end] == b'_') {
            end += 1;
        }
        &self.text[start..end]
    }

    fn parse_items(&mut self, in_block: bool) -> Vec<Stmt> {
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            if self.pos >= self.bytes.len() {
                break;
            }
            match self.bytes[self.pos] {
                b'}' if in_block => break,
                // stray close of a block opened before this text began
                b'}' | b';' => self.pos += 1,
                _ => out.push(self.parse_stmt()),
            }
        }
        out
    }

    fn finish_simple(&self, start: usize, end: usize, kind: StmtKind) -> Stmt {
        let text = self.text[start..end].trim().to_string();
        let last = self.text[start..end].trim_end().len() + start;
        Stmt {
            kind,
            start: self.line(start),
            end: self.line(last.saturating_sub(1).max(start)),
            text,
            clauses: Vec::new(),
        }
    }

    /// Move past the brace group starting at `self.pos`.
    fn skip_group(&mut self) {
        let mut depth = 0usize;
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        self.pos += 1;
                        return;
                    }
                }
                _ => {}
            }
            self.pos += 1;
        }
    }

    fn parse_stmt(&mut self) -> Stmt {
        let start = self.pos;
        let mut paren = 0usize;
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'(' | b'[' => paren += 1,
                b')' | b']' => paren = paren.saturating_sub(1),
                b';' if paren == 0 => {
                    self.pos += 1;
                    return self.finish_simple(start, self.pos, StmtKind::Simple);
                }
                b':' if paren == 0 => {
                    let prev = self.bytes.get(self.pos.wrapping_sub(1)).copied();
                    let next = self.bytes.get(self.pos + 1).copied();
                    if prev != Some(b':') && next != Some(b':') && is_label_header(&self.text[start..self.pos]) {
                        self.pos += 1;
                        return self.finish_simple(start, self.pos, StmtKind::Label);
                    }
                }
                b'{' => {
                    let header = self.text[start..self.pos].trim();
                    if paren > 0 || is_expression_header(header) {
                        self.skip_group();
                        continue;
                    }
                    return self.parse_compound(start);
                }
                b'}' => return self.finish_simple(start, self.pos, StmtKind::Simple),
                _ => {}
            }
            self.pos += 1;
        }
        self.finish_simple(start, self.bytes.len(), StmtKind::Simple)
    }

    /// Parse `header { ... }` clauses starting with `self.pos` at the first `{`.
    fn parse_compound(&mut self, start: usize) -> Stmt {
        let first_header = self.text[start..self.pos].trim().to_string();
        let kind = classify(&first_header);
        let mut clauses = Vec::new();
        let mut header = first_header.clone();
        let mut header_start = start;
        let mut end;
        loop {
            let open = self.line(self.pos);
            self.pos += 1;
            let stmts = self.parse_items(true);
            let close = self.line(self.pos);
            end = self.pos;
            if self.pos < self.bytes.len() {
                self.pos += 1;
                end = self.pos;
            }
            clauses.push(Clause {
                header: header.clone(),
                header_line: self.line(header_start),
                open,
                close,
                stmts,
            });

            let save = self.pos;
            self.skip_ws();
            let word = self.peek_word();
            let continues = match kind {
                CompoundKind::Try => word == "catch" || word == "finally",
                CompoundKind::If => word == "else",
                CompoundKind::Do => word == "while",
                _ => false,
            };
            if !continues {
                self.pos = save;
                break;
            }
            // scan the continuation header up to `{` or `;`
            header_start = self.pos;
            let mut paren = 0usize;
            let mut found_brace = false;
            while self.pos < self.bytes.len() {
                match self.bytes[self.pos] {
                    b'(' => paren += 1,
                    b')' => paren = paren.saturating_sub(1),
                    b'{' if paren == 0 => {
                        found_brace = true;
                        break;
                    }
                    b';' if paren == 0 => break,
                    _ => {}
                }
                self.pos += 1;
            }
            if found_brace && kind != CompoundKind::Do {
                header = self.text[header_start..self.pos].trim().to_string();
                continue;
            }
            // `do {} while (c);` or a brace-less `else stmt;`
            if self.pos < self.bytes.len() {
                self.pos += 1;
            }
            end = self.pos;
            break;
        }
        let last = self.text[start..end].trim_end().len() + start;
        Stmt {
            kind: StmtKind::Compound(kind),
            start: self.line(start),
            end: self.line(last.saturating_sub(1)),
            text: first_header,
            clauses,
        }
    }
}

fn first_word(header: &str) -> &str {
    let h = header.trim_start();
    let end = h.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(h.len());
    &h[..end]
}

fn strip_annotations(header: &str) -> &str {
    let mut h = header.trim_start();
    while let Some(rest) = h.strip_prefix('@') {
        let name_end = rest
            .find(|c: char| !(c.is_alphanumeric() || c == '_' || c == '.'))
            .unwrap_or(rest.len());
        let mut after = rest[name_end..].trim_start();
        if after.starts_with('(') {
            let mut depth = 0;
            let mut cut = after.len();
            for (i, c) in after.char_indices() {
                match c {
                    '(' => depth += 1,
                    ')' => {
                        depth -= 1;
                        if depth == 0 {
                            cut = i + 1;
                            break;
                        }
                    }
                    _ => {}
                }
            }
            after = &after[cut..];
        }
        h = after.trim_start();
    }
    h
}

fn has_top_level_assign(header: &str) -> bool {
    let b = header.as_bytes();
    let mut depth = 0i32;
    for i in 0..b.len() {
        match b[i] {
            b'(' | b'[' | b'<' => depth += 1,
            b')' | b']' | b'>' => depth -= 1,
            b'=' if depth <= 0 => {
                let prev = if i > 0 { b[i - 1] } else { b' ' };
                let next = b.get(i + 1).copied().unwrap_or(b' ');
                if !matches!(prev, b'=' | b'!' | b'<' | b'>') && next != b'=' {
                    return true;
                }
            }
            _ => {}
        }
    }
    false
}

fn is_label_header(header: &str) -> bool {
    static LABEL: OnceLock<Regex> = OnceLock::new();
    let re = LABEL.get_or_init(|| Regex::new(r"^(case\b[^?]*|default\s*|[A-Za-z_$][\w$]*\s*)$").unwrap());
    let h = header.trim();
    !h.contains("->") && re.is_match(h) && !matches!(h, "else" | "do" | "try" | "finally")
}

fn is_expression_header(header: &str) -> bool {
    let h = strip_annotations(header);
    let word = first_word(h);
    if matches!(word, "case" | "default") {
        return false;
    }
    if matches!(word, "return" | "throw" | "new" | "yield" | "assert") {
        return true;
    }
    if h.ends_with("->") || h.ends_with(',') || h.ends_with('(') || h.ends_with('=') || h.ends_with(']') {
        return true;
    }
    if matches!(classify(h), CompoundKind::Other) {
        return has_top_level_assign(h) || h.contains("new ");
    }
    false
}

fn classify(header: &str) -> CompoundKind {
    static METHOD: OnceLock<Regex> = OnceLock::new();
    static TYPE: OnceLock<Regex> = OnceLock::new();
    let method = METHOD.get_or_init(|| {
        Regex::new(r"(?s)^[\w$<>\[\],.?\s]*\b[A-Za-z_$][\w$]*\s*\(.*\)\s*(throws\s+[\w$.,\s<>]+)?$").unwrap()
    });
    let ty = TYPE.get_or_init(|| Regex::new(r"\b(class|interface|enum|record)\s+[A-Za-z_$]").unwrap());
    let h = strip_annotations(header);
    match first_word(h) {
        "" if h.is_empty() => CompoundKind::Block,
        "if" | "else" => CompoundKind::If,
        "for" => CompoundKind::For,
        "while" => CompoundKind::While,
        "do" => CompoundKind::Do,
        "try" => CompoundKind::Try,
        "switch" => CompoundKind::Switch,
        "synchronized" if h.trim_start_matches("synchronized").trim_start().starts_with('(') => {
            CompoundKind::Synchronized
        }
        "case" | "default" => CompoundKind::Case,
        "static" if h == "static" => CompoundKind::Initializer,
        _ => {
            let before_paren = h.split('(').next().unwrap_or(h);
            if ty.is_match(before_paren) && !has_top_level_assign(h) {
                CompoundKind::Type
            } else if method.is_match(h) && !has_top_level_assign(h) && !h.starts_with("new ") {
                CompoundKind::Method
            } else {
                CompoundKind::Other
            }
        }
    }
}

/// Catch clause of a try statement, parsed from its header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatchClause {
    pub types: Vec<String>,
    pub var: String,
    pub header_line: usize,
    pub open: usize,
    pub close: usize,
}

/// Parse `catch (A | b.B e)` into simple type names and the variable.
pub fn parse_catch_header(header: &str) -> Option<(Vec<String>, String)> {
    static CATCH: OnceLock<Regex> = OnceLock::new();
    let re = CATCH.get_or_init(|| Regex::new(r"^catch\s*\(\s*(?:final\s+)?([\w$.|\s]+?)\s+([\w$]+)\s*\)$").unwrap());
    let caps = re.captures(header.trim())?;
    let types = caps[1]
        .split('|')
        .map(|t| t.trim().rsplit('.').next().unwrap_or("").to_string())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>();
    if types.is_empty() {
        return None;
    }
    Some((types, caps[2].to_string()))
}

/// Catch clauses of a `try` statement, in source order.
pub fn catch_clauses(stmt: &Stmt) -> Vec<CatchClause> {
    if stmt.kind != StmtKind::Compound(CompoundKind::Try) {
        return Vec::new();
    }
    stmt.clauses
        .iter()
        .filter(|c| c.header.starts_with("catch"))
        .filter_map(|c| {
            parse_catch_header(&c.header).map(|(types, var)| CatchClause {
                types,
                var,
                header_line: c.header_line,
                open: c.open,
                close: c.close,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_literals_and_comments() {
        let src = "a = \"{}\"; // {\nb = '{'; /* } */ c";
        let m = mask(src);
        assert_eq!(m.len(), src.len());
        assert!(!m.contains('{') && !m.contains('}'));
        assert!(m.contains("a = "));
        assert!(m.ends_with(" c"));
        assert_eq!(m.matches('\n').count(), 1);
    }

    #[test]
    fn masks_escapes() {
        let m = mask(r#"s = "a\"{"; t = '\''; x{"#);
        assert_eq!(m.matches('{').count(), 1);
    }

    #[test]
    fn nesting() {
        assert_eq!(nesting_level("void f(){}"), 1);
        assert_eq!(nesting_level("void f(){ if(x){ while(y){ } } }"), 3);
        assert_eq!(nesting_level("String s = \"{{{\";"), 0);
        assert_eq!(nesting_level("}}} {"), 1);
    }

    #[test]
    fn brace_faults() {
        assert!(check_braces(&Masked::new("a{\n}\n", 1)).is_ok());
        assert_eq!(
            check_braces(&Masked::new("a\n}\n{", 1)),
            Err(BraceFault::UnexpectedClose { line: 2 })
        );
        assert_eq!(check_braces(&Masked::new("x\n{\n{\n}", 10)), Err(BraceFault::Unclosed { line: 11 }));
    }

    #[test]
    fn statement_tree() {
        let src = "\
class A {
    @Override
    public void f(String p) throws IOException {
        int x = 1;
        if (x > 0) {
            g(x,
              2);
        } else {
            h();
        }
        try (Reader r = open()) {
            r.read();
        } catch (IOException | RuntimeException e) {
            log(e);
        } finally {
            done();
        }
        Runnable q = () -> {
            run();
        };
        list.forEach(v -> { use(v); });
        do { k(); } while (more());
    }
}
";
        let (_, stmts) = parse(src, 1);
        assert_eq!(stmts.len(), 1);
        assert!(stmts[0].is_type());
        let class_body = &stmts[0].clauses[0].stmts;
        assert_eq!(class_body.len(), 1);
        let m = &class_body[0];
        assert!(m.is_method());
        assert_eq!((m.start, m.end), (2, 23));
        let body = &m.clauses[0].stmts;
        let spans: Vec<_> = body.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(spans, vec![(4, 4), (5, 10), (11, 17), (18, 20), (21, 21), (22, 22)]);
        assert_eq!(body[1].kind, StmtKind::Compound(CompoundKind::If));
        assert_eq!(body[1].clauses.len(), 2);
        assert_eq!((body[1].clauses[0].stmts[0].start, body[1].clauses[0].stmts[0].end), (6, 7));
        let catches = catch_clauses(&body[2]);
        assert_eq!(catches.len(), 1);
        assert_eq!(catches[0].types, vec!["IOException", "RuntimeException"]);
        assert_eq!(body[3].kind, StmtKind::Simple);
        assert_eq!(body[5].kind, StmtKind::Compound(CompoundKind::Do));
        assert_eq!(method_spans(&stmts), vec![(2, 23)]);
    }

    #[test]
    fn switch_labels() {
        let src = "switch (k) {\ncase 1:\n  a();\n  break;\ndefault:\n  b();\n}\n";
        let (_, stmts) = parse(src, 1);
        let body = &stmts[0].clauses[0].stmts;
        assert_eq!(body[0].kind, StmtKind::Label);
        assert_eq!(body.len(), 5);
    }

    #[test]
    fn lenient_on_unbalanced_text() {
        let (_, stmts) = parse("    }\n}\nvoid g() {\n  x();\n", 7);
        assert_eq!(stmts.len(), 1);
        assert!(stmts[0].is_method());
        assert_eq!(stmts[0].start, 9);
        assert_eq!(stmts[0].clauses[0].stmts[0].start, 10);
    }

    #[test]
    fn anonymous_class_is_expression() {
        let src = "Runnable r = new Runnable() {\n public void run() { x(); }\n};\nnew Thread() { }.start();\n";
        let (_, stmts) = parse(src, 1);
        assert_eq!(stmts.len(), 2);
        assert_eq!((stmts[0].start, stmts[0].end), (1, 3));
        assert_eq!(stmts[0].kind, StmtKind::Simple);
    }
}
