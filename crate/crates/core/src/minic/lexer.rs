use super::FrontendError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(u64),
    Float(f64),
    Str(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

/// Keywords of the subset.
pub const KEYWORDS: &[&str] = &[
    "int", "double", "float", "void", "if", "else", "while", "for", "return", "typedef", "extern",
];

/// C keywords the subset rejects.
pub const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "char", "long", "short", "unsigned", "signed", "struct", "union", "enum", "const", "static",
    "switch", "case", "default", "break", "continue", "do", "goto", "sizeof", "volatile",
    "register", "auto", "inline", "restrict",
];

const PUNCTS: &[&str] = &[
    "<=", ">=", "==", "!=", "&&", "||", "(", ")", "{", "}", "[", "]", ";", ",", "+", "-", "*", "/",
    "%", "<", ">", "!", "=", "&",
];

const REJECTED_PUNCTS: &[&str] = &[
    "++", "--", "+=", "-=", "*=", "/=", "%=", "->", "<<", ">>", "|", "^", "~", "?", ":", ".", "#",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, FrontendError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! advance {
        ($n:expr) => {{
            for _ in 0..$n {
                if bytes[i] == b'\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
        }};
    }

    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            advance!(1);
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                advance!(1);
            }
            continue;
        }
        if src[i..].starts_with("/*") {
            let Some(end) = src[i + 2..].find("*/") else {
                return Err(FrontendError::syntax(line, col, "unterminated comment"));
            };
            advance!(end + 4);
            continue;
        }
        let (tl, tc) = (line, col);
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                advance!(1);
            }
            out.push(Token { tok: Tok::Ident(src[start..i].to_string()), line: tl, col: tc });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let mut is_float = false;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                advance!(1);
            }
            if i < bytes.len() && bytes[i] == b'.' {
                is_float = true;
                advance!(1);
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    advance!(1);
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    is_float = true;
                    advance!(j - i);
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        advance!(1);
                    }
                }
            }
            if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                return Err(FrontendError::unsupported(tl, tc, "numeric literal suffix"));
            }
            let text = &src[start..i];
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| FrontendError::syntax(tl, tc, "bad float"))?)
            } else {
                match text.parse::<u64>() {
                    Ok(v) => Tok::Int(v),
                    Err(_) => return Err(FrontendError::unsupported(tl, tc, "integer too large")),
                }
            };
            out.push(Token { tok, line: tl, col: tc });
            continue;
        }
        if c == b'"' {
            advance!(1);
            let mut s = String::new();
            loop {
                if i >= bytes.len() || bytes[i] == b'\n' {
                    return Err(FrontendError::syntax(tl, tc, "unterminated string literal"));
                }
                match bytes[i] {
                    b'"' => {
                        advance!(1);
                        break;
                    }
                    b'\\' => {
                        if i + 1 >= bytes.len() {
                            return Err(FrontendError::syntax(tl, tc, "unterminated string literal"));
                        }
                        let e = match bytes[i + 1] {
                            b'n' => '\n',
                            b't' => '\t',
                            b'\\' => '\\',
                            b'"' => '"',
                            _ => return Err(FrontendError::unsupported(line, col, "escape sequence")),
                        };
                        s.push(e);
                        advance!(2);
                    }
                    _ => {
                        let ch = src[i..].chars().next().unwrap_or('?');
                        s.push(ch);
                        advance!(ch.len_utf8());
                    }
                }
            }
            out.push(Token { tok: Tok::Str(s), line: tl, col: tc });
            continue;
        }
        if let Some(p) = REJECTED_PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            // `&&`/`||` are handled below; only reject when no accepted operator is longer
            if !PUNCTS.iter().any(|q| q.len() > p.len() && src[i..].starts_with(q)) {
                return Err(FrontendError::unsupported(tl, tc, &format!("operator `{p}`")));
            }
        }
        if let Some(p) = PUNCTS.iter().find(|p| src[i..].starts_with(**p)) {
            advance!(p.len());
            out.push(Token { tok: Tok::Punct(p), line: tl, col: tc });
            continue;
        }
        let ch = src[i..].chars().next().unwrap_or('?');
        return Err(FrontendError::syntax(tl, tc, &format!("unexpected character `{ch}`")));
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn numbers_and_operators() {
        assert_eq!(
            toks("a<=1.5e3&&b"),
            vec![
                Tok::Ident("a".into()),
                Tok::Punct("<="),
                Tok::Float(1500.0),
                Tok::Punct("&&"),
                Tok::Ident("b".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn string_escapes() {
        assert_eq!(toks(r#""a \"b\"\n""#)[0], Tok::Str("a \"b\"\n".into()));
        assert!(tokenize("\"abc").is_err());
    }

    #[test]
    fn rejects_increment() {
        let e = tokenize("i++;").unwrap_err();
        assert!(matches!(e, FrontendError::Unsupported { .. }));
    }
}
