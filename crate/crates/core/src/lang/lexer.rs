//! Indentation-aware tokenizer.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Name(String),
    Int(i64),
    Float(f64),
    Str(String),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
}

const OPS: &[&str] = &[
    "**=", "//=", "->", "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "+", "-", "*", "/", "%", "<",
    ">", "=", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "@",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut indents = vec![0usize];
    let mut depth = 0usize; // bracket nesting
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let mut at_line_start = true;

    while i < chars.len() {
        if at_line_start && depth == 0 {
            // measure indentation
            let mut col = 0;
            let mut j = i;
            while j < chars.len() && (chars[j] == ' ' || chars[j] == '\t') {
                col += if chars[j] == '\t' { 8 - col % 8 } else { 1 };
                j += 1;
            }
            // blank or comment-only line
            if j >= chars.len() || chars[j] == '\n' || chars[j] == '#' || chars[j] == '\r' {
                while j < chars.len() && chars[j] != '\n' {
                    j += 1;
                }
                if j < chars.len() {
                    line += 1;
                    j += 1;
                }
                i = j;
                continue;
            }
            let cur = *indents.last().unwrap();
            if col > cur {
                indents.push(col);
                out.push(Token { tok: Tok::Indent, line });
            } else {
                while col < *indents.last().unwrap() {
                    indents.pop();
                    out.push(Token { tok: Tok::Dedent, line });
                }
                if col != *indents.last().unwrap() {
                    return Err(ParseError::new(line, "inconsistent dedent"));
                }
            }
            i = j;
            at_line_start = false;
            continue;
        }

        let c = chars[i];
        match c {
            '\n' => {
                if depth == 0 {
                    if !matches!(out.last(), Some(Token { tok: Tok::Newline, .. }) | None) {
                        out.push(Token {
                            tok: Tok::Newline,
                            line,
                        });
                    }
                    at_line_start = true;
                }
                line += 1;
                i += 1;
            }
            ' ' | '\t' | '\r' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\\' if i + 1 < chars.len() && chars[i + 1] == '\n' => {
                i += 2;
                line += 1;
            }
            '"' | '\'' => {
                let (s, ni, nl) = lex_string(&chars, i, line)?;
                out.push(Token { tok: Tok::Str(s), line });
                line = nl;
                i = ni;
            }
            c if c.is_ascii_digit() || (c == '.' && i + 1 < chars.len() && chars[i + 1].is_ascii_digit()) => {
                let start = i;
                let mut is_float = false;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    is_float = true;
                    i += 1;
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                        i += 1;
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().filter(|c| **c != '_').collect();
                let tok = if is_float {
                    Tok::Float(text.parse().map_err(|_| ParseError::new(line, "bad float literal"))?)
                } else {
                    Tok::Int(
                        text.parse()
                            .map_err(|_| ParseError::new(line, "integer literal out of range"))?,
                    )
                };
                out.push(Token { tok, line });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                // string prefixes are not supported; a name directly followed by a quote is an error
                if i < chars.len() && (chars[i] == '"' || chars[i] == '\'') && word.len() <= 2 {
                    return Err(ParseError::new(line, format!("unsupported string prefix `{word}`")));
                }
                out.push(Token {
                    tok: Tok::Name(word),
                    line,
                });
            }
            _ => {
                let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
                let op = OPS
                    .iter()
                    .find(|op| rest.starts_with(**op))
                    .ok_or_else(|| ParseError::new(line, format!("unexpected character `{c}`")))?;
                match *op {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        depth = depth
                            .checked_sub(1)
                            .ok_or_else(|| ParseError::new(line, "unbalanced closing bracket"))?
                    }
                    _ => {}
                }
                out.push(Token { tok: Tok::Op(op), line });
                i += op.len();
            }
        }
    }
    if depth != 0 {
        return Err(ParseError::new(line, "unexpected end of input inside brackets"));
    }
    if !matches!(out.last(), Some(Token { tok: Tok::Newline, .. }) | None) {
        out.push(Token {
            tok: Tok::Newline,
            line,
        });
    }
    while indents.len() > 1 {
        indents.pop();
        out.push(Token { tok: Tok::Dedent, line });
    }
    out.push(Token { tok: Tok::Eof, line });
    Ok(out)
}

fn lex_string(chars: &[char], start: usize, mut line: usize) -> Result<(String, usize, usize), ParseError> {
    let q = chars[start];
    let triple = start + 2 < chars.len() && chars[start + 1] == q && chars[start + 2] == q;
    let mut i = start + if triple { 3 } else { 1 };
    let mut s = String::new();
    loop {
        if i >= chars.len() {
            return Err(ParseError::new(line, "unterminated string literal"));
        }
        let c = chars[i];
        if triple {
            if c == q && i + 2 < chars.len() && chars[i + 1] == q && chars[i + 2] == q {
                return Ok((s, i + 3, line));
            }
        } else if c == q {
            return Ok((s, i + 1, line));
        } else if c == '\n' {
            return Err(ParseError::new(line, "unterminated string literal"));
        }
        if c == '\\' && i + 1 < chars.len() {
            let e = chars[i + 1];
            i += 2;
            match e {
                'n' => s.push('\n'),
                't' => s.push('\t'),
                'r' => s.push('\r'),
                '0' => s.push('\0'),
                '\\' => s.push('\\'),
                '\'' => s.push('\''),
                '"' => s.push('"'),
                '\n' => line += 1,
                'u' | 'x' => {
                    let n = if e == 'u' { 4 } else { 2 };
                    let hex: String = chars.get(i..i + n).map(|h| h.iter().collect()).unwrap_or_default();
                    let code = u32::from_str_radix(&hex, 16)
                        .ok()
                        .and_then(char::from_u32)
                        .ok_or_else(|| ParseError::new(line, "bad escape sequence"))?;
                    s.push(code);
                    i += n;
                }
                other => {
                    s.push('\\');
                    s.push(other);
                }
            }
            continue;
        }
        if c == '\n' {
            line += 1;
        }
        s.push(c);
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn indentation_produces_block_tokens() {
        let t = toks("if x:\n    y = 1\nz\n");
        assert!(t.contains(&Tok::Indent));
        assert!(t.contains(&Tok::Dedent));
        assert_eq!(t.last(), Some(&Tok::Eof));
    }

    #[test]
    fn brackets_suppress_newlines() {
        let t = toks("f(1,\n  2)\n");
        assert_eq!(t.iter().filter(|t| **t == Tok::Newline).count(), 1);
    }

    #[test]
    fn numbers_and_strings() {
        let t = toks("1 2.5 1e-3 'a\\n' \"b\"\n");
        assert_eq!(t[0], Tok::Int(1));
        assert_eq!(t[1], Tok::Float(2.5));
        assert_eq!(t[2], Tok::Float(0.001));
        assert_eq!(t[3], Tok::Str("a\n".into()));
        assert_eq!(t[4], Tok::Str("b".into()));
    }

    #[test]
    fn unterminated_string_is_an_error() {
        assert!(tokenize("x = 'abc\n").is_err());
    }
}
