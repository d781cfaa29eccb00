use super::{ErrorKind, FrontendError, Span};

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Number(f64),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: Span,
}

// longest first
const PUNCTS: &[&str] = &[
    "++", "+=", "-=", "*=", "<=", ">=", "==", "!=", "&&", "||", "+", "-", "*", "/", "=", "<", ">", "(", ")",
    "[", "]", "{", "}", ";", ",", "&", "!",
];

/// Splits source text into tokens. Whitespace, `//` and `/* */` comments and
/// preprocessor lines (`#...`) are dropped.
pub fn tokenize(src: &str) -> Result<Vec<Token>, FrontendError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let mut line_start = true;

    macro_rules! bump {
        ($n:expr) => {{
            for _ in 0..$n {
                if bytes[i] == b'\n' {
                    line += 1;
                    col = 1;
                    line_start = true;
                } else {
                    col += 1;
                }
                i += 1;
            }
        }};
    }

    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            bump!(1);
            continue;
        }
        if c.is_ascii_whitespace() {
            bump!(1);
            continue;
        }
        if c == b'#' && line_start {
            while i < bytes.len() && bytes[i] != b'\n' {
                bump!(1);
            }
            continue;
        }
        line_start = false;
        let span = Span { line, col };
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                bump!(1);
            }
            continue;
        }
        if src[i..].starts_with("/*") {
            match src[i + 2..].find("*/") {
                Some(end) => bump!(end + 4),
                None => return Err(FrontendError::new(ErrorKind::Syntax, span, "unterminated comment")),
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                bump!(1);
            }
            let text = &src[start..i];
            toks.push(Token { kind: TokenKind::Ident(text.to_string()), text: text.to_string(), span });
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                bump!(1);
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let save = (i, line, col);
                bump!(1);
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    bump!(1);
                }
                if i < bytes.len() && bytes[i].is_ascii_digit() {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        bump!(1);
                    }
                } else {
                    (i, line, col) = save;
                }
            }
            let text = &src[start..i];
            let value: f64 = text
                .parse()
                .map_err(|_| FrontendError::new(ErrorKind::Syntax, span, format!("malformed number `{text}`")))?;
            toks.push(Token { kind: TokenKind::Number(value), text: text.to_string(), span });
            continue;
        }
        match PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            Some(p) => {
                toks.push(Token { kind: TokenKind::Punct(p), text: p.to_string(), span });
                bump!(p.len());
            }
            None => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(FrontendError::new(ErrorKind::Syntax, span, format!("unexpected character `{ch}`")));
            }
        }
    }
    toks.push(Token { kind: TokenKind::Eof, text: String::new(), span: Span { line, col } });
    Ok(toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skips_comments_and_preprocessor() {
        let toks = tokenize("#include <stdio.h>\n// hi\nx /* c */ = 1.5e-3;").unwrap();
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, ["x", "=", "1.5e-3", ";", ""]);
        assert_eq!(toks[0].span, Span { line: 3, col: 1 });
        assert_eq!(toks[2].kind, TokenKind::Number(1.5e-3));
    }

    #[test]
    fn compound_operators() {
        let toks = tokenize("i++ += <=").unwrap();
        assert_eq!(toks[1].kind, TokenKind::Punct("++"));
        assert_eq!(toks[2].kind, TokenKind::Punct("+="));
        assert_eq!(toks[3].kind, TokenKind::Punct("<="));
    }

    #[test]
    fn rejects_stray_characters() {
        let err = tokenize("x = $;").unwrap_err();
        assert_eq!(err.span, Span { line: 1, col: 5 });
    }
}
