//! A JSONPath subset: root `$`, dot and bracket children, wildcard `[*]` /
//! `.*`, numeric indices (negative counts from the end) and recursive
//! descent `..`.
//!
//! ```text
//! path     = "$" { segment }
//! segment  = ".." selector-after-descent | "." ( name | "*" ) | "[" bracket "]"
//! bracket  = "*" | integer | quoted-name
//! ```

use serde_json::Value;

use crate::error::{GatewayError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
enum Selector {
    Name(String),
    Index(i64),
    Wildcard,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Child(Selector),
    Descendant(Selector),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JsonPath {
    source: String,
    segments: Vec<Segment>,
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    source: &'a str,
}

impl Parser<'_> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(GatewayError::Path {
            path: self.source.to_string(),
            reason: format!("{} at offset {}", reason.into(), self.pos),
        })
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn name(&mut self) -> Result<String> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' || c == '-' || c == '$' || c == '@' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return self.fail("expected a member name");
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn bracket(&mut self) -> Result<Selector> {
        let sel = match self.peek() {
            Some('*') => {
                self.pos += 1;
                Selector::Wildcard
            }
            Some(q @ ('\'' | '"')) => {
                self.pos += 1;
                let mut out = String::new();
                loop {
                    match self.peek() {
                        None => return self.fail("unterminated quoted name"),
                        Some('\\') => {
                            self.pos += 1;
                            match self.peek() {
                                Some(c) => out.push(c),
                                None => return self.fail("dangling escape"),
                            }
                            self.pos += 1;
                        }
                        Some(c) if c == q => {
                            self.pos += 1;
                            break;
                        }
                        Some(c) => {
                            out.push(c);
                            self.pos += 1;
                        }
                    }
                }
                Selector::Name(out)
            }
            Some(c) if c == '-' || c.is_ascii_digit() => {
                let start = self.pos;
                self.pos += 1;
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
                let text: String = self.chars[start..self.pos].iter().collect();
                match text.parse() {
                    Ok(i) => Selector::Index(i),
                    Err(_) => return self.fail(format!("bad index {text:?}")),
                }
            }
            _ => return self.fail("expected *, an index or a quoted name"),
        };
        if !self.eat(']') {
            return self.fail("expected ]");
        }
        Ok(sel)
    }

    fn dotted(&mut self) -> Result<Selector> {
        if self.eat('*') {
            Ok(Selector::Wildcard)
        } else {
            Ok(Selector::Name(self.name()?))
        }
    }
}

impl JsonPath {
    pub fn parse(source: &str) -> Result<Self> {
        let mut p = Parser {
            chars: source.trim().chars().collect(),
            pos: 0,
            source,
        };
        if !p.eat('$') {
            return p.fail("path must start with $");
        }
        let mut segments = Vec::new();
        while p.peek().is_some() {
            if p.eat('.') {
                if p.eat('.') {
                    let sel = if p.eat('[') { p.bracket()? } else { p.dotted()? };
                    segments.push(Segment::Descendant(sel));
                } else {
                    segments.push(Segment::Child(p.dotted()?));
                }
            } else if p.eat('[') {
                segments.push(Segment::Child(p.bracket()?));
            } else {
                return p.fail("expected . or [");
            }
        }
        Ok(JsonPath {
            source: source.to_string(),
            segments,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    /// Matching nodes in document order.
    pub fn select<'a>(&self, root: &'a Value) -> Vec<&'a Value> {
        let mut current = vec![root];
        for seg in &self.segments {
            let mut next = Vec::new();
            match seg {
                Segment::Child(sel) => {
                    for node in current {
                        apply(sel, node, &mut next);
                    }
                }
                Segment::Descendant(sel) => {
                    for node in current {
                        let mut all = Vec::new();
                        descendants(node, &mut all);
                        for n in all {
                            apply(sel, n, &mut next);
                        }
                    }
                }
            }
            current = next;
        }
        current
    }
}

fn apply<'a>(sel: &Selector, node: &'a Value, out: &mut Vec<&'a Value>) {
    match (sel, node) {
        (Selector::Name(name), Value::Object(map)) => out.extend(map.get(name)),
        (Selector::Index(i), Value::Array(items)) => {
            let idx = if *i < 0 { items.len() as i64 + i } else { *i };
            if idx >= 0 {
                out.extend(items.get(idx as usize));
            }
        }
        (Selector::Wildcard, Value::Array(items)) => out.extend(items.iter()),
        (Selector::Wildcard, Value::Object(map)) => out.extend(map.values()),
        _ => {}
    }
}

/// The node itself followed by all descendants, pre-order.
fn descendants<'a>(node: &'a Value, out: &mut Vec<&'a Value>) {
    out.push(node);
    match node {
        Value::Array(items) => items.iter().for_each(|v| descendants(v, out)),
        Value::Object(map) => map.values().for_each(|v| descendants(v, out)),
        _ => {}
    }
}
