//! Token scanner for C/C++/CUDA sources.
//!
//! This is deliberately not a grammar: the extractor only needs identifier
//! tokens, punctuation with byte offsets, and preprocessor directives, with
//! comments and literal contents skipped. Macro expansion is out of scope.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Punct(u8),
    /// A whole preprocessor directive, `#` through the end of its logical
    /// line (backslash continuations included).
    Directive,
}

#[derive(Debug, Clone, Copy)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn text<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.end]
    }

    pub fn is_punct(&self, ch: u8) -> bool {
        self.kind == TokenKind::Punct(ch)
    }
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_part(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Tokenize a source file. Returns the tokens plus diagnostics for lexical
/// problems worth reporting (unterminated comments/literals).
pub fn lex(src: &str) -> (Vec<Token>, Vec<String>) {
    let bytes = src.as_bytes();
    let mut tokens = Vec::new();
    let mut diagnostics = Vec::new();
    let mut i = 0;
    let mut at_line_start = true;

    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'\n' => {
                at_line_start = true;
                i += 1;
            }
            b' ' | b'\t' | b'\r' => {
                i += 1;
            }
            b'/' if i + 1 < bytes.len() && bytes[i + 1] == b'/' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if i + 1 < bytes.len() && bytes[i + 1] == b'*' => {
                let open = i;
                i += 2;
                loop {
                    if i + 1 >= bytes.len() {
                        diagnostics.push(format!("unterminated block comment at byte {open}"));
                        i = bytes.len();
                        break;
                    }
                    if bytes[i] == b'*' && bytes[i + 1] == b'/' {
                        i += 2;
                        break;
                    }
                    i += 1;
                }
                at_line_start = false;
            }
            b'"' => {
                let open = i;
                i += 1;
                loop {
                    if i >= bytes.len() {
                        diagnostics.push(format!("unterminated string literal at byte {open}"));
                        break;
                    }
                    match bytes[i] {
                        b'\\' => i = (i + 2).min(bytes.len()),
                        b'"' => {
                            i += 1;
                            break;
                        }
                        b'\n' => {
                            // unterminated on this line; resync rather than
                            // swallowing the rest of the file
                            diagnostics
                                .push(format!("unterminated string literal at byte {open}"));
                            break;
                        }
                        _ => i += 1,
                    }
                }
                at_line_start = false;
            }
            b'\'' => {
                // distinguish char literals from C++14 digit separators:
                // a quote directly after an identifier/number character is
                // treated as a separator and skipped
                let prev_joins = i > 0 && is_ident_part(bytes[i - 1]);
                if prev_joins {
                    i += 1;
                } else {
                    let open = i;
                    i += 1;
                    loop {
                        if i >= bytes.len() {
                            diagnostics.push(format!("unterminated char literal at byte {open}"));
                            break;
                        }
                        match bytes[i] {
                            b'\\' => i = (i + 2).min(bytes.len()),
                            b'\'' => {
                                i += 1;
                                break;
                            }
                            b'\n' => {
                                diagnostics
                                    .push(format!("unterminated char literal at byte {open}"));
                                break;
                            }
                            _ => i += 1,
                        }
                    }
                }
                at_line_start = false;
            }
            b'#' if at_line_start => {
                let start = i;
                while i < bytes.len() {
                    match bytes[i] {
                        b'\\' if i + 1 < bytes.len() && bytes[i + 1] == b'\n' => i += 2,
                        b'\\' if i + 2 < bytes.len()
                            && bytes[i + 1] == b'\r'
                            && bytes[i + 2] == b'\n' =>
                        {
                            i += 3
                        }
                        b'\n' => break,
                        _ => i += 1,
                    }
                }
                tokens.push(Token {
                    kind: TokenKind::Directive,
                    start,
                    end: i,
                });
            }
            _ if is_ident_start(b) => {
                let start = i;
                while i < bytes.len() && is_ident_part(bytes[i]) {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Ident,
                    start,
                    end: i,
                });
                at_line_start = false;
            }
            _ if b.is_ascii_digit() => {
                let start = i;
                i += 1;
                while i < bytes.len() && (is_ident_part(bytes[i]) || bytes[i] == b'.') {
                    i += 1;
                }
                tokens.push(Token {
                    kind: TokenKind::Number,
                    start,
                    end: i,
                });
                at_line_start = false;
            }
            _ => {
                tokens.push(Token {
                    kind: TokenKind::Punct(b),
                    start: i,
                    end: i + 1,
                });
                i += 1;
                at_line_start = false;
            }
        }
    }

    (tokens, diagnostics)
}

/// A `#include` directive, kept verbatim for reassembly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncludeDirective {
    /// The directive text exactly as written (no trailing newline).
    pub line: String,
    /// The include path between the delimiters.
    pub path: String,
    /// Quoted (`"..."`) rather than angle-bracket (`<...>`).
    pub quoted: bool,
    pub offset: usize,
}

/// Extract `#include` directives from a token stream.
pub fn includes(src: &str, tokens: &[Token]) -> Vec<IncludeDirective> {
    let mut out = Vec::new();
    for token in tokens {
        if token.kind != TokenKind::Directive {
            continue;
        }
        let text = token.text(src);
        let body = text[1..].trim_start();
        let Some(rest) = body.strip_prefix("include") else {
            continue;
        };
        let rest = rest.trim_start();
        let (quoted, open, close) = if rest.starts_with('"') {
            (true, '"', '"')
        } else if rest.starts_with('<') {
            (false, '<', '>')
        } else {
            continue;
        };
        let inner = &rest[open.len_utf8()..];
        let Some(end) = inner.find(close) else { continue };
        out.push(IncludeDirective {
            line: text.trim_end().to_string(),
            path: inner[..end].to_string(),
            quoted,
            offset: token.start,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idents(src: &str) -> Vec<String> {
        let (tokens, _) = lex(src);
        tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Ident)
            .map(|t| t.text(src).to_string())
            .collect()
    }

    #[test]
    fn skips_comments_and_strings() {
        let src = r#"
            // __global__ void in_line_comment() {}
            /* __global__ void in_block() {} */
            const char *s = "__global__ void in_string() {}";
            int real;
        "#;
        let ids = idents(src);
        assert!(!ids.contains(&"in_line_comment".to_string()));
        assert!(!ids.contains(&"in_block".to_string()));
        assert!(!ids.contains(&"in_string".to_string()));
        assert!(ids.contains(&"real".to_string()));
    }

    #[test]
    fn braces_in_strings_do_not_tokenize() {
        let src = "char *s = \"if (x) {\"; int after;";
        let (tokens, _) = lex(src);
        let braces = tokens.iter().filter(|t| t.is_punct(b'{')).count();
        assert_eq!(braces, 0);
        assert!(idents(src).contains(&"after".to_string()));
    }

    #[test]
    fn directive_spans_continuations() {
        let src = "#define LONG \\\n  more\nint x;";
        let (tokens, _) = lex(src);
        let dir = tokens.iter().find(|t| t.kind == TokenKind::Directive).unwrap();
        assert!(dir.text(src).contains("more"));
        assert!(idents(src).contains(&"x".to_string()));
        assert!(!idents(src).contains(&"more".to_string()));
    }

    #[test]
    fn digit_separator_is_not_char_literal() {
        let src = "int n = 1'000'000; int after;";
        assert!(idents(src).contains(&"after".to_string()));
    }

    #[test]
    fn include_extraction() {
        let src = "#include \"util.h\"\n# include <vector>\n#define X 1\n";
        let (tokens, _) = lex(src);
        let incs = includes(src, &tokens);
        assert_eq!(incs.len(), 2);
        assert_eq!(incs[0].path, "util.h");
        assert!(incs[0].quoted);
        assert_eq!(incs[0].line, "#include \"util.h\"");
        assert_eq!(incs[1].path, "vector");
        assert!(!incs[1].quoted);
    }

    #[test]
    fn unterminated_block_comment_diagnosed() {
        let (_, diags) = lex("int x; /* never closed");
        assert_eq!(diags.len(), 1);
        assert!(diags[0].contains("unterminated block comment"));
    }
}
