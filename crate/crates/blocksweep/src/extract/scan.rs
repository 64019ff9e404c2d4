//! Detection of `__global__` / `__device__` function definitions in a token
//! stream, with parameter lists and brace-balanced body spans.

use serde::{Deserialize, Serialize};

use super::lexer::{lex, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Qualifier {
    Global,
    Device,
}

/// One declared kernel parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub type_text: String,
    #[serde(rename = "pointer")]
    pub is_pointer: bool,
}

/// A function definition carrying a GPU qualifier.
#[derive(Debug, Clone)]
pub struct FunctionDecl {
    pub name: String,
    pub qualifier: Qualifier,
    pub params: Vec<ParamSpec>,
    /// Byte offset where the declaration text starts (template prefix and
    /// leading qualifiers included).
    pub decl_start: usize,
    /// Byte offset just past the closing `)` of the parameter list.
    pub signature_end: usize,
    /// Byte range of the `{`..`}` body, end exclusive of nothing: `body_end`
    /// points one past the closing brace.
    pub body_start: usize,
    pub body_end: usize,
    pub templated: bool,
    pub launch_bounds: bool,
}

impl FunctionDecl {
    pub fn decl_text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.decl_start..self.body_end]
    }

    pub fn signature_text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.decl_start..self.signature_end]
    }
}

#[derive(Debug, Default)]
pub struct ScanResult {
    pub decls: Vec<FunctionDecl>,
    pub diagnostics: Vec<String>,
}

const LEADING_KEYWORDS: [&str; 10] = [
    "static",
    "inline",
    "constexpr",
    "extern",
    "__forceinline__",
    "__noinline__",
    "__inline__",
    "__host__",
    "__device__",
    "__global__",
];

/// Identifiers that cannot be a function or parameter name; hitting one of
/// these before `(` means we are looking at a declarator, not a call
/// signature.
const NAME_BLACKLIST: [&str; 19] = [
    "void",
    "int",
    "float",
    "double",
    "char",
    "long",
    "short",
    "unsigned",
    "signed",
    "bool",
    "const",
    "volatile",
    "if",
    "for",
    "while",
    "switch",
    "__restrict__",
    "__restrict",
    "restrict",
];

fn ident_eq(src: &str, token: &Token, text: &str) -> bool {
    token.kind == TokenKind::Ident && token.text(src) == text
}

/// Walk backward from the qualifier over leading keywords and an optional
/// `template <...>` prefix. Returns (start token index, templated).
fn find_decl_start(src: &str, tokens: &[Token], qualifier_idx: usize) -> (usize, bool) {
    let mut start = qualifier_idx;
    let mut templated = false;
    loop {
        if start == 0 {
            break;
        }
        let prev = &tokens[start - 1];
        if prev.kind == TokenKind::Ident && LEADING_KEYWORDS.contains(&prev.text(src)) {
            start -= 1;
            continue;
        }
        if prev.is_punct(b'>') {
            // try to match a template parameter group ending here
            let mut depth = 0i32;
            let mut j = start - 1;
            loop {
                let t = &tokens[j];
                if t.is_punct(b'>') {
                    depth += 1;
                } else if t.is_punct(b'<') {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                if j == 0 {
                    break;
                }
                j -= 1;
            }
            if depth == 0 && j > 0 && ident_eq(src, &tokens[j - 1], "template") {
                start = j - 1;
                templated = true;
                continue;
            }
        }
        break;
    }
    (start, templated)
}

/// Find the token index of the `)` matching the `(` at `open_idx`.
fn match_paren(tokens: &[Token], open_idx: usize) -> Option<usize> {
    let mut depth = 0i32;
    for (i, t) in tokens.iter().enumerate().skip(open_idx) {
        if t.is_punct(b'(') {
            depth += 1;
        } else if t.is_punct(b')') {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
    }
    None
}

fn collapse_ws(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !last_space {
                out.push(' ');
            }
            last_space = true;
        } else {
            out.push(ch);
            last_space = false;
        }
    }
    out.trim_end().to_string()
}

/// Parse the parameter list tokens between `(`+1 and `)` (exclusive).
fn parse_params(src: &str, tokens: &[Token], first: usize, last: usize) -> Vec<ParamSpec> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new()];
    let mut paren = 0i32;
    let mut bracket = 0i32;
    let mut brace = 0i32;
    let mut angle = 0i32;
    for idx in first..last {
        let t = &tokens[idx];
        match t.kind {
            TokenKind::Punct(b'(') => paren += 1,
            TokenKind::Punct(b')') => paren -= 1,
            TokenKind::Punct(b'[') => bracket += 1,
            TokenKind::Punct(b']') => bracket -= 1,
            TokenKind::Punct(b'{') => brace += 1,
            TokenKind::Punct(b'}') => brace -= 1,
            TokenKind::Punct(b'<') => angle += 1,
            TokenKind::Punct(b'>') => angle = (angle - 1).max(0),
            TokenKind::Punct(b',')
                if paren == 0 && bracket == 0 && brace == 0 && angle == 0 =>
            {
                groups.push(Vec::new());
                continue;
            }
            _ => {}
        }
        groups.last_mut().expect("non-empty").push(idx);
    }

    let mut params = Vec::new();
    for group in groups {
        if group.is_empty() {
            continue;
        }
        // drop a default-argument tail
        let mut cut = group.len();
        let mut depth = 0i32;
        for (pos, &idx) in group.iter().enumerate() {
            let t = &tokens[idx];
            match t.kind {
                TokenKind::Punct(b'(') | TokenKind::Punct(b'[') | TokenKind::Punct(b'{') => {
                    depth += 1
                }
                TokenKind::Punct(b')') | TokenKind::Punct(b']') | TokenKind::Punct(b'}') => {
                    depth -= 1
                }
                TokenKind::Punct(b'=') if depth == 0 => {
                    cut = pos;
                    break;
                }
                _ => {}
            }
        }
        let group = &group[..cut];
        if group.is_empty() {
            continue;
        }

        // `(void)`
        if group.len() == 1 && ident_eq(src, &tokens[group[0]], "void") {
            continue;
        }

        let name_idx = group
            .iter()
            .rev()
            .find(|&&idx| {
                tokens[idx].kind == TokenKind::Ident
                    && !NAME_BLACKLIST.contains(&tokens[idx].text(src))
            })
            .copied();

        let span_start = tokens[group[0]].start;
        let span_end = tokens[*group.last().expect("non-empty")].end;
        let is_pointer = group
            .iter()
            .any(|&idx| tokens[idx].is_punct(b'*') || tokens[idx].is_punct(b'['));

        let (name, type_text) = match name_idx {
            Some(idx) => {
                let name = tokens[idx].text(src).to_string();
                let mut text = String::new();
                text.push_str(&src[span_start..tokens[idx].start]);
                text.push_str(&src[tokens[idx].end..span_end]);
                (name, collapse_ws(text.trim()))
            }
            None => (String::new(), collapse_ws(src[span_start..span_end].trim())),
        };

        params.push(ParamSpec {
            name,
            type_text,
            is_pointer,
        });
    }
    params
}

/// Scan a source text for global/device function definitions.
pub fn scan_source(src: &str) -> ScanResult {
    let (tokens, mut diagnostics) = lex(src);
    let mut decls = Vec::new();

    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        let is_trigger = t.kind == TokenKind::Ident
            && matches!(t.text(src), "__global__" | "__device__");
        if !is_trigger {
            i += 1;
            continue;
        }
        match parse_decl(src, &tokens, i) {
            DeclOutcome::Found { decl, resume } => {
                decls.push(decl);
                i = resume;
            }
            DeclOutcome::Skip { resume } => {
                i = resume;
            }
            DeclOutcome::UnbalancedEof { message } => {
                diagnostics.push(message);
                break;
            }
        }
    }

    ScanResult { decls, diagnostics }
}

enum DeclOutcome {
    Found { decl: FunctionDecl, resume: usize },
    Skip { resume: usize },
    UnbalancedEof { message: String },
}

fn parse_decl(src: &str, tokens: &[Token], qualifier_idx: usize) -> DeclOutcome {
    let (start_idx, templated) = find_decl_start(src, tokens, qualifier_idx);

    // hunt for `name (` after the qualifier
    let mut launch_bounds = false;
    let mut j = qualifier_idx + 1;
    let (name_idx, open_idx) = loop {
        if j >= tokens.len() {
            return DeclOutcome::Skip { resume: qualifier_idx + 1 };
        }
        let t = &tokens[j];
        match t.kind {
            TokenKind::Punct(b';') | TokenKind::Punct(b'{') | TokenKind::Punct(b'}') => {
                // a variable or something else that is not a function
                return DeclOutcome::Skip { resume: qualifier_idx + 1 };
            }
            TokenKind::Ident if j + 1 < tokens.len() && tokens[j + 1].is_punct(b'(') => {
                let text = t.text(src);
                if text == "__launch_bounds__" {
                    launch_bounds = true;
                    match match_paren(tokens, j + 1) {
                        Some(close) => {
                            j = close + 1;
                            continue;
                        }
                        None => return DeclOutcome::Skip { resume: qualifier_idx + 1 },
                    }
                }
                if NAME_BLACKLIST.contains(&text) {
                    // declarator like `void (*fp)(int)` — skip the group
                    match match_paren(tokens, j + 1) {
                        Some(close) => {
                            j = close + 1;
                            continue;
                        }
                        None => return DeclOutcome::Skip { resume: qualifier_idx + 1 },
                    }
                }
                break (j, j + 1);
            }
            TokenKind::Punct(b'(') => {
                // `(` with no name in front (a lambda or declarator)
                return DeclOutcome::Skip { resume: qualifier_idx + 1 };
            }
            _ => j += 1,
        }
    };

    let Some(close_idx) = match_paren(tokens, open_idx) else {
        return DeclOutcome::UnbalancedEof {
            message: format!(
                "unbalanced parameter list for `{}` at byte {}",
                tokens[name_idx].text(src),
                tokens[name_idx].start
            ),
        };
    };

    // after `)`: allow trailing idents and attribute-style paren groups,
    // then require `{` for a definition or `;` for a prototype
    let mut k = close_idx + 1;
    let body_open = loop {
        if k >= tokens.len() {
            return DeclOutcome::Skip { resume: close_idx + 1 };
        }
        let t = &tokens[k];
        match t.kind {
            TokenKind::Punct(b'{') => break k,
            TokenKind::Punct(b';') => return DeclOutcome::Skip { resume: k + 1 },
            TokenKind::Ident => k += 1,
            TokenKind::Punct(b'(') => match match_paren(tokens, k) {
                Some(close) => k = close + 1,
                None => return DeclOutcome::Skip { resume: close_idx + 1 },
            },
            _ => return DeclOutcome::Skip { resume: close_idx + 1 },
        }
    };

    // match the body braces
    let mut depth = 0i32;
    let mut body_close = None;
    for (idx, t) in tokens.iter().enumerate().skip(body_open) {
        if t.is_punct(b'{') {
            depth += 1;
        } else if t.is_punct(b'}') {
            depth -= 1;
            if depth == 0 {
                body_close = Some(idx);
                break;
            }
        }
    }
    let Some(body_close) = body_close else {
        return DeclOutcome::UnbalancedEof {
            message: format!(
                "unbalanced braces at end of file in body of `{}`",
                tokens[name_idx].text(src)
            ),
        };
    };

    let qualifier = if (start_idx..name_idx).any(|idx| ident_eq(src, &tokens[idx], "__global__")) {
        Qualifier::Global
    } else {
        Qualifier::Device
    };

    let decl = FunctionDecl {
        name: tokens[name_idx].text(src).to_string(),
        qualifier,
        params: parse_params(src, tokens, open_idx + 1, close_idx),
        decl_start: tokens[start_idx].start,
        signature_end: tokens[close_idx].end,
        body_start: tokens[body_open].start,
        body_end: tokens[body_close].end,
        templated,
        launch_bounds,
    };
    DeclOutcome::Found {
        decl,
        resume: body_close + 1,
    }
}

/// Identifier tokens appearing inside a byte range (used for call detection
/// in function bodies).
pub fn ident_tokens_in_range(src: &str, start: usize, end: usize) -> Vec<String> {
    let (tokens, _) = lex(&src[start..end]);
    tokens
        .iter()
        .filter(|t| t.kind == TokenKind::Ident)
        .map(|t| t.text(&src[start..end]).to_string())
        .collect()
}
