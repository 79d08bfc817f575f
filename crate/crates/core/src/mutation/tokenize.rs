//! Lossless prompt tokenization and a brace-aware line scanner for code.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Word,
    Punct,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub kind: TokenKind,
}

impl Token {
    pub fn new(text: impl Into<String>, kind: TokenKind) -> Self {
        Token {
            text: text.into(),
            kind,
        }
    }

    /// Whitespace that does not cross a line break.
    pub(crate) fn is_inline_space(&self) -> bool {
        self.kind == TokenKind::Whitespace && !self.text.contains('\n')
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Words are maximal runs of alphanumerics and `_`, whitespace runs are
/// kept intact, and every other character is a single punctuation token.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenizedPrompt {
    pub tokens: Vec<Token>,
}

impl TokenizedPrompt {
    pub fn tokenize(s: &str) -> Self {
        let mut tokens: Vec<Token> = Vec::new();
        for c in s.chars() {
            let kind = if is_word_char(c) {
                TokenKind::Word
            } else if c.is_whitespace() {
                TokenKind::Whitespace
            } else {
                TokenKind::Punct
            };
            match tokens.last_mut() {
                Some(last) if last.kind == kind && kind != TokenKind::Punct => last.text.push(c),
                _ => tokens.push(Token::new(c.to_string(), kind)),
            }
        }
        TokenizedPrompt { tokens }
    }

    pub fn detokenize(&self) -> String {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Token indices of the words, in order.
    pub fn word_positions(&self) -> Vec<usize> {
        self.tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind == TokenKind::Word)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn word_count(&self) -> usize {
        self.tokens.iter().filter(|t| t.kind == TokenKind::Word).count()
    }

    pub fn words(&self) -> Vec<&str> {
        self.tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Word)
            .map(|t| t.text.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementKind {
    /// `x = ...;`, `a[i] += ...;`
    Assignment,
    /// `int x;`, `final List<T> xs = ...;`
    Declaration { initialized: bool },
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeLine {
    pub text: String,
    /// Brace depth before the first character of the line.
    pub depth_before: i64,
    pub depth_after: i64,
    /// Line text with comments dropped and string/char literals blanked.
    pub code: String,
    pub kind: StatementKind,
}

impl CodeLine {
    /// The line ends a simple statement.
    pub fn ends_statement(&self) -> bool {
        self.code.trim_end().ends_with(';')
    }

    pub fn opens_block(&self) -> bool {
        self.code.trim_end().ends_with('{')
    }

    pub fn indent(&self) -> &str {
        let trimmed = self.text.trim_start_matches([' ', '\t']);
        &self.text[..self.text.len() - trimmed.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeScan {
    pub lines: Vec<CodeLine>,
    pub final_depth: i64,
    pub min_depth: i64,
}

impl CodeScan {
    pub fn balanced(&self) -> bool {
        self.final_depth == 0 && self.min_depth >= 0
    }
}

/// Scans `code` line by line, tracking brace depth outside comments and
/// string/char literals, and classifying each line's statement shape.
pub fn scan_code(code: &str) -> CodeScan {
    let mut depth = 0i64;
    let mut min_depth = 0i64;
    let mut in_block_comment = false;
    let mut lines = Vec::new();

    for text in code.split('\n') {
        let depth_before = depth;
        let mut stripped = String::with_capacity(text.len());
        let chars: Vec<char> = text.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let next = chars.get(i + 1).copied();
            if in_block_comment {
                if c == '*' && next == Some('/') {
                    in_block_comment = false;
                    i += 2;
                } else {
                    i += 1;
                }
                continue;
            }
            match c {
                '/' if next == Some('/') => break,
                '/' if next == Some('*') => {
                    in_block_comment = true;
                    i += 2;
                    continue;
                }
                '"' | '\'' => {
                    stripped.push(c);
                    i += 1;
                    while i < chars.len() && chars[i] != c {
                        if chars[i] == '\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                    stripped.push(c);
                    i += 1;
                    continue;
                }
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    min_depth = min_depth.min(depth);
                }
                _ => {}
            }
            stripped.push(c);
            i += 1;
        }
        let kind = classify_statement(&stripped);
        lines.push(CodeLine {
            text: text.to_string(),
            depth_before,
            depth_after: depth,
            code: stripped,
            kind,
        });
    }
    CodeScan {
        lines,
        final_depth: depth,
        min_depth,
    }
}

const NON_STATEMENT_PREFIXES: &[&str] = &[
    "return", "throw", "break", "continue", "assert", "import", "package", "if", "for", "while",
    "do", "else", "case", "default", "try", "catch", "finally", "switch", "synchronized", "yield",
];

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_alphanumeric() || c == '_' || c == '$')
}

/// `x`, `this.x`, `a.b.c`, `arr[i]`
fn is_lvalue(s: &str) -> bool {
    let base = s.split('[').next().unwrap_or("").trim();
    !base.is_empty() && base.split('.').all(|p| is_identifier(p.trim()))
}

/// `int x`, `final Map<K, V> m`, `String[] names`
fn is_typed_name(s: &str) -> bool {
    let s = s.trim();
    let Some(split) = s.rfind(|c: char| c.is_whitespace() || c == '>' || c == ']') else {
        return false;
    };
    let (ty, name) = (s[..=split].trim(), s[split + 1..].trim());
    if !is_identifier(name) || ty.is_empty() {
        return false;
    }
    let first = ty.split_whitespace().next().unwrap_or("");
    if NON_STATEMENT_PREFIXES.contains(&first) || first == "new" {
        return false;
    }
    ty.chars()
        .all(|c| c.is_alphanumeric() || "_$<>[],.? ".contains(c) || c.is_whitespace())
}

/// Start of the first top-level assignment operator (`=`, `+=`, `>>>=`, ...),
/// skipping comparisons and anything nested in brackets.
fn assignment_split(code: &str) -> Option<usize> {
    const ASSIGN_OPS: &[&str] = &[
        "=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>=",
    ];
    let b = code.as_bytes();
    let mut nest = 0i32;
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'(' | b'[' => nest += 1,
            b')' | b']' => nest -= 1,
            b'=' if nest == 0 => {
                if b.get(i + 1) == Some(&b'=') {
                    i += 2;
                    continue;
                }
                let mut s = i;
                while s > 0 && b"+-*/%&|^<>!=".contains(&b[s - 1]) {
                    s -= 1;
                }
                if ASSIGN_OPS.contains(&&code[s..=i]) {
                    return Some(s);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

pub fn classify_statement(code: &str) -> StatementKind {
    let t = code.trim();
    let Some(body) = t.strip_suffix(';') else {
        return StatementKind::Other;
    };
    let first = body
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .next()
        .unwrap_or("");
    if NON_STATEMENT_PREFIXES.contains(&first) {
        return StatementKind::Other;
    }
    match assignment_split(body) {
        Some(op_start) => {
            let lhs = body[..op_start].trim();
            if is_lvalue(lhs) {
                StatementKind::Assignment
            } else if is_typed_name(lhs) {
                StatementKind::Declaration { initialized: true }
            } else {
                StatementKind::Other
            }
        }
        None => {
            if body.contains('(') {
                return StatementKind::Other;
            }
            let last = body.split(',').next().unwrap_or("");
            if is_typed_name(last) {
                StatementKind::Declaration { initialized: false }
            } else {
                StatementKind::Other
            }
        }
    }
}
