//! Lexical term extraction shared by matching, retrieval and scoring.
//!
//! A "term" is a lowercase word of at least two characters that is not a
//! stop word. Identifiers are split on camel-case humps so that `FileReader`
//! yields `file`, `reader` and `filereader`.

use std::collections::BTreeSet;

const STOP_WORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been",
    "before", "being", "between", "boolean", "both", "but", "by", "byte", "can", "cannot", "catch",
    "char", "class", "could", "did", "do", "does", "doing", "double", "due", "during", "each",
    "either", "else", "etc", "exception", "exceptions", "false", "few", "final", "float", "for",
    "from", "further", "had", "has", "have", "having", "he", "her", "here", "him", "his", "how",
    "if", "in", "include", "includes", "including", "int", "into", "is", "it", "its", "itself",
    "just", "like", "long", "may", "might", "more", "most", "must", "new", "no", "nor", "not",
    "null", "of", "off", "on", "once", "one", "only", "or", "other", "our", "out", "over", "own",
    "private", "protected", "public", "return", "same", "she", "short", "should", "so", "some",
    "static", "such", "than", "that", "the", "their", "them", "then", "there", "these", "they",
    "this", "those", "through", "throw", "throws", "to", "too", "true", "try", "typically", "under",
    "until", "up", "use", "used", "uses", "using", "var", "very", "via", "void", "was", "we",
    "were", "what", "when", "where", "whether", "which", "while", "who", "why", "will", "with",
    "would", "you", "your",
];

pub fn is_stop_word(word: &str) -> bool {
    STOP_WORDS.binary_search(&word).is_ok()
}

/// Split an identifier on camel-case boundaries. Runs of capitals are kept
/// together as an acronym (`IOException` -> `IO`, `Exception`).
pub fn split_camel(word: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = word.char_indices().collect();
    let mut parts = Vec::new();
    let mut start = 0;
    for i in 1..chars.len() {
        let (pos, c) = chars[i];
        let prev = chars[i - 1].1;
        let next_lower = chars.get(i + 1).map(|&(_, n)| n.is_lowercase()).unwrap_or(false);
        let boundary = (c.is_uppercase() && prev.is_lowercase())
            || (c.is_uppercase() && prev.is_uppercase() && next_lower)
            || (c.is_ascii_digit() != prev.is_ascii_digit());
        if boundary {
            parts.push(&word[start..pos]);
            start = pos;
        }
    }
    if start < word.len() {
        parts.push(&word[start..]);
    }
    parts
}

fn keep(term: &str) -> bool {
    term.chars().count() >= 2 && !term.chars().all(|c| c.is_ascii_digit()) && !is_stop_word(term)
}

/// Content terms of free text or code.
pub fn terms(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        if word.is_empty() {
            continue;
        }
        let parts = split_camel(word);
        if parts.len() > 1 {
            let whole = word.to_lowercase();
            if keep(&whole) {
                out.insert(whole);
            }
        }
        for part in parts {
            let lower = part.to_lowercase();
            if keep(&lower) {
                out.insert(lower);
            }
        }
    }
    out
}

/// Java identifiers appearing in (already masked) code, in first-seen order.
pub fn identifiers(code: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let bytes = code.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            let start = i;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
            {
                i += 1;
            }
            out.push(&code[start..i]);
        } else if c.is_ascii_digit() {
            // skip numeric literals such as 0x1F or 10L
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Identifiers immediately followed by `(`: method names and constructor
/// types of `new T(...)`.
pub fn callee_tokens(code: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let bytes = code.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphabetic() || c == b'_' || c == b'$' {
            let start = i;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
            {
                i += 1;
            }
            let mut j = i;
            while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t') {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'(' {
                let word = &code[start..i];
                if !JAVA_KEYWORDS.contains(&word) {
                    out.insert(word.to_string());
                }
            }
        } else if c.is_ascii_digit() {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

pub const JAVA_KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const",
    "continue", "default", "do", "double", "else", "enum", "extends", "final", "finally",
    "float", "for", "goto", "if", "implements", "import", "instanceof", "int", "interface",
    "long", "native", "new", "package", "private", "protected", "public", "return", "short",
    "static", "strictfp", "super", "switch", "synchronized", "this", "throw", "throws",
    "transient", "try", "void", "volatile", "while", "var", "record", "yield", "true", "false",
    "null",
];

/// First `limit` words of `text`.
pub fn truncate_words(text: &str, limit: usize) -> String {
    text.split_whitespace().take(limit).collect::<Vec<_>>().join(" ")
}
