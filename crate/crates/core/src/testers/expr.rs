//! Group predicates such as `marital == 'single' and (sex != "M" or age == 30)`.
//!
//! ```text
//! expr    = or ;
//! or      = and , { "or" , and } ;
//! and     = atom , { "and" , atom } ;
//! atom    = "(" , expr , ")" | compare ;
//! compare = column , ( "==" | "!=" ) , literal ;
//! column  = identifier ;
//! literal = quoted string | number | identifier ;
//! ```

use std::fmt;

use serde_json::{Map, Value};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum GroupExpr {
    Eq(String, String),
    Ne(String, String),
    And(Box<GroupExpr>, Box<GroupExpr>),
    Or(Box<GroupExpr>, Box<GroupExpr>),
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Ident(String),
    Literal(String),
    Eq,
    Ne,
    And,
    Or,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |msg: String| CoreError::invalid(format!("group expression: {msg}"));
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            '=' | '!' => {
                if chars.get(i + 1) != Some(&'=') {
                    return Err(err(format!("expected '{c}=' at offset {i}")));
                }
                out.push(if c == '=' { Token::Eq } else { Token::Ne });
                i += 2;
            }
            '\'' | '"' => {
                let quote = c;
                let mut text = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err("unterminated string literal".into())),
                        Some('\\') if chars.get(i + 1).is_some() => {
                            text.push(chars[i + 1]);
                            i += 2;
                        }
                        Some(&ch) if ch == quote => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            text.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token::Literal(text));
            }
            c if c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '+') => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || matches!(chars[i], '_' | '-' | '.' | '+')) {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                out.push(match word.as_str() {
                    "and" | "AND" => Token::And,
                    "or" | "OR" => Token::Or,
                    _ => Token::Ident(word),
                });
            }
            other => return Err(err(format!("unexpected character {other:?} at offset {i}"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn or(&mut self) -> Result<GroupExpr> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            lhs = GroupExpr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<GroupExpr> {
        let mut lhs = self.atom()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            lhs = GroupExpr::And(Box::new(lhs), Box::new(self.atom()?));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<GroupExpr> {
        let err = |msg: &str| CoreError::invalid(format!("group expression: {msg}"));
        match self.next() {
            Some(Token::LParen) => {
                let e = self.or()?;
                match self.next() {
                    Some(Token::RParen) => Ok(e),
                    _ => Err(err("missing ')'")),
                }
            }
            Some(Token::Ident(column)) => {
                let op = self.next();
                let literal = match self.next() {
                    Some(Token::Literal(s)) | Some(Token::Ident(s)) => s,
                    _ => return Err(err("expected a literal after the operator")),
                };
                match op {
                    Some(Token::Eq) => Ok(GroupExpr::Eq(column, literal)),
                    Some(Token::Ne) => Ok(GroupExpr::Ne(column, literal)),
                    _ => Err(err("expected '==' or '!='")),
                }
            }
            _ => Err(err("expected a column name or '('")),
        }
    }
}

fn cell_equals(value: &Value, literal: &str) -> bool {
    match value {
        Value::String(s) => s == literal,
        Value::Number(n) => match (n.as_f64(), literal.parse::<f64>()) {
            (Some(a), Ok(b)) => a == b,
            _ => n.to_string() == literal,
        },
        Value::Bool(b) => b.to_string() == literal,
        Value::Null => literal == "null",
        Value::Array(_) | Value::Object(_) => false,
    }
}

impl GroupExpr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        if tokens.is_empty() {
            return Err(CoreError::invalid("group expression is empty"));
        }
        let mut p = Parser { tokens, pos: 0 };
        let e = p.or()?;
        if p.pos != p.tokens.len() {
            return Err(CoreError::invalid("group expression: trailing input"));
        }
        Ok(e)
    }

    /// Column names referenced by the expression.
    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            GroupExpr::Eq(c, _) | GroupExpr::Ne(c, _) => out.push(c),
            GroupExpr::And(a, b) | GroupExpr::Or(a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }

    /// Evaluates on a row; a missing column makes comparisons false.
    pub fn eval(&self, row: &Map<String, Value>) -> bool {
        match self {
            GroupExpr::Eq(c, lit) => row.get(c).is_some_and(|v| cell_equals(v, lit)),
            GroupExpr::Ne(c, lit) => row.get(c).is_some_and(|v| !cell_equals(v, lit)),
            GroupExpr::And(a, b) => a.eval(row) && b.eval(row),
            GroupExpr::Or(a, b) => a.eval(row) || b.eval(row),
        }
    }

    /// The complementary predicate (De Morgan).
    pub fn negate(&self) -> GroupExpr {
        match self {
            GroupExpr::Eq(c, l) => GroupExpr::Ne(c.clone(), l.clone()),
            GroupExpr::Ne(c, l) => GroupExpr::Eq(c.clone(), l.clone()),
            GroupExpr::And(a, b) => GroupExpr::Or(Box::new(a.negate()), Box::new(b.negate())),
            GroupExpr::Or(a, b) => GroupExpr::And(Box::new(a.negate()), Box::new(b.negate())),
        }
    }
}

impl fmt::Display for GroupExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let quote = |s: &str| format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"));
        match self {
            GroupExpr::Eq(c, l) => write!(f, "{c} == {}", quote(l)),
            GroupExpr::Ne(c, l) => write!(f, "{c} != {}", quote(l)),
            GroupExpr::And(a, b) => write!(f, "({a} and {b})"),
            GroupExpr::Or(a, b) => write!(f, "({a} or {b})"),
        }
    }
}
