//! Recursive-descent parser for predicate source text.
//!
//! ```text
//! expr    := term ("OR" term)*
//! term    := factor ("AND" factor)*
//! factor  := "NOT" factor | "(" expr ")" | ident op literal
//! op      := "<" | ">" | "<=" | ">=" | "=" | "!="
//! literal := decimal-number | quoted-string
//! ```
//!
//! Keywords are case-insensitive. Strings may use single or double quotes
//! with backslash escapes.

use thiserror::Error;

use super::decimal::Decimal;
use super::expr::{CmpOp, Literal, Predicate, SimpleExpression};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl ParseError {
    fn new(position: usize, message: impl Into<String>) -> Self {
        ParseError {
            position,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Op(CmpOp),
    Number(Decimal),
    Str(String),
    LParen,
    RParen,
    And,
    Or,
    Not,
}

fn describe(tok: Option<&(usize, Tok)>) -> String {
    match tok {
        None => "end of input".to_string(),
        Some((_, t)) => match t {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Op(op) => format!("operator `{op}`"),
            Tok::Number(d) => format!("number `{d}`"),
            Tok::Str(s) => format!("string {:?}", s),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
            Tok::And => "AND".to_string(),
            Tok::Or => "OR".to_string(),
            Tok::Not => "NOT".to_string(),
        },
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'(' => {
                toks.push((start, Tok::LParen));
                i += 1;
            }
            b')' => {
                toks.push((start, Tok::RParen));
                i += 1;
            }
            b'<' | b'>' | b'=' | b'!' => {
                let next = bytes.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    (b'<', Some(b'=')) => (CmpOp::Le, 2),
                    (b'>', Some(b'=')) => (CmpOp::Ge, 2),
                    (b'!', Some(b'=')) => (CmpOp::Ne, 2),
                    (b'<', _) => (CmpOp::Lt, 1),
                    (b'>', _) => (CmpOp::Gt, 1),
                    (b'=', _) => (CmpOp::Eq, 1),
                    _ => return Err(ParseError::new(start, "expected `!=`")),
                };
                toks.push((start, Tok::Op(op)));
                i += len;
            }
            b'"' | b'\'' => {
                let quote = c;
                let mut text = String::new();
                i += 1;
                loop {
                    let Some(&b) = bytes.get(i) else {
                        return Err(ParseError::new(start, "unterminated string literal"));
                    };
                    if b == quote {
                        i += 1;
                        break;
                    }
                    if b == b'\\' {
                        match bytes.get(i + 1) {
                            Some(&e) if e == b'\\' || e == b'"' || e == b'\'' => {
                                text.push(e as char);
                                i += 2;
                                continue;
                            }
                            _ => {
                                return Err(ParseError::new(i, "invalid escape in string literal"))
                            }
                        }
                    }
                    // Copy one full UTF-8 character.
                    let ch = src[i..].chars().next().expect("in bounds");
                    text.push(ch);
                    i += ch.len_utf8();
                }
                toks.push((start, Tok::Str(text)));
            }
            b'0'..=b'9' | b'.' | b'-' | b'+' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let text = &src[start..i];
                let value: Decimal = text
                    .parse()
                    .map_err(|e| ParseError::new(start, format!("bad number: {e}")))?;
                toks.push((start, Tok::Number(value)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &src[start..i];
                let tok = if word.eq_ignore_ascii_case("and") {
                    Tok::And
                } else if word.eq_ignore_ascii_case("or") {
                    Tok::Or
                } else if word.eq_ignore_ascii_case("not") {
                    Tok::Not
                } else {
                    Tok::Ident(word.to_string())
                };
                toks.push((start, tok));
            }
            _ => {
                let ch = src[i..].chars().next().expect("in bounds");
                return Err(ParseError::new(
                    start,
                    format!("unexpected character `{ch}`"),
                ));
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        ParseError::new(
            self.offset(),
            format!(
                "expected {wanted}, found {}",
                describe(self.toks.get(self.pos))
            ),
        )
    }

    fn expr(&mut self) -> Result<Predicate, ParseError> {
        let mut lhs = self.term()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            lhs = Predicate::or(lhs, self.term()?);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Predicate, ParseError> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            lhs = Predicate::and(lhs, self.factor()?);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Predicate, ParseError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(Predicate::not(self.factor()?))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.unexpected("`)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Ident(_)) => self.comparison(),
            _ => Err(self.unexpected("a comparison, `NOT` or `(`")),
        }
    }

    fn comparison(&mut self) -> Result<Predicate, ParseError> {
        let Some(Tok::Ident(attribute)) = self.peek().cloned() else {
            return Err(self.unexpected("an attribute name"));
        };
        self.pos += 1;
        let Some(Tok::Op(op)) = self.peek().cloned() else {
            return Err(self.unexpected("a comparison operator"));
        };
        self.pos += 1;
        let literal_at = self.offset();
        let literal = match self.peek().cloned() {
            Some(Tok::Number(d)) => Literal::Number(d),
            Some(Tok::Str(s)) => Literal::Text(s),
            _ => return Err(self.unexpected("a number or quoted string")),
        };
        self.pos += 1;
        if literal.is_text() && op.is_ordering() {
            return Err(ParseError::new(
                literal_at,
                format!("string literal cannot be used with ordering operator `{op}`"),
            ));
        }
        Ok(Predicate::Leaf(SimpleExpression::new(
            attribute, op, literal,
        )))
    }
}

/// Parses predicate source text. Leaves are tagged with the default origin.
pub fn parse_predicate(text: &str) -> Result<Predicate, ParseError> {
    let toks = tokenize(text)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let p = parser.expr()?;
    if parser.pos != parser.toks.len() {
        return Err(parser.unexpected("end of input"));
    }
    Ok(p)
}
