use crate::value::Comparator;

use super::{QueryError, QueryErrorKind};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokenKind {
    Word(String),
    Str(String),
    /// Numeric literal kept as source text so the schema decides its type.
    Number(String),
    Op(Comparator),
    Comma,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub column: usize,
}

pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> QueryError {
    QueryError::Parse {
        kind: QueryErrorKind::Syntax,
        line,
        column,
        message: message.into(),
    }
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, QueryError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut column) = (0usize, 1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, column);
        let advance = |n: usize, i: &mut usize, column: &mut usize| {
            *i += n;
            *column += n;
        };

        if c == '\n' {
            i += 1;
            line += 1;
            column = 1;
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i, &mut column);
            continue;
        }

        let kind = if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(1, &mut i, &mut column);
            }
            TokenKind::Word(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            advance(1, &mut i, &mut column);
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(1, &mut i, &mut column);
            }
            if i < chars.len() && chars[i] == '.' {
                advance(1, &mut i, &mut column);
                let frac_start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance(1, &mut i, &mut column);
                }
                if i == frac_start {
                    return Err(syntax(line, column, "expected digits after decimal point"));
                }
            }
            if i < chars.len() && (chars[i].is_ascii_alphabetic() || chars[i] == '_') {
                return Err(syntax(
                    line,
                    column,
                    "malformed number (scientific notation is not supported)",
                ));
            }
            TokenKind::Number(chars[start..i].iter().collect())
        } else if c == '\'' {
            advance(1, &mut i, &mut column);
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(syntax(start_line, start_col, "unterminated string literal")),
                    Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                        s.push('\'');
                        advance(2, &mut i, &mut column);
                    }
                    Some('\'') => {
                        advance(1, &mut i, &mut column);
                        break;
                    }
                    Some('\n') => {
                        s.push('\n');
                        i += 1;
                        line += 1;
                        column = 1;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        advance(1, &mut i, &mut column);
                    }
                }
            }
            TokenKind::Str(s)
        } else {
            let next = chars.get(i + 1).copied();
            let (op, width) = match (c, next) {
                ('!', Some('=')) => (Comparator::Ne, 2),
                ('<', Some('=')) => (Comparator::Le, 2),
                ('>', Some('=')) => (Comparator::Ge, 2),
                ('<', Some('>')) => (Comparator::Ne, 2),
                ('=', _) => (Comparator::Eq, 1),
                ('<', _) => (Comparator::Lt, 1),
                ('>', _) => (Comparator::Gt, 1),
                (',', _) => {
                    advance(1, &mut i, &mut column);
                    tokens.push(Token {
                        kind: TokenKind::Comma,
                        line: start_line,
                        column: start_col,
                    });
                    continue;
                }
                _ => return Err(syntax(line, column, format!("unexpected character {c:?}"))),
            };
            advance(width, &mut i, &mut column);
            TokenKind::Op(op)
        };
        tokens.push(Token {
            kind,
            line: start_line,
            column: start_col,
        });
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        line,
        column,
    });
    Ok(tokens)
}
