//! Action-chain extraction from free-form LLM completions.
//!
//! The first balanced `{...}` in the completion is parsed as strict JSON
//! and, failing that, with a lenient reader that tolerates missing or
//! trailing commas and an array left open before the next object key.

use serde_json::{Map, Value};

use crate::coa::{ActionChain, ActionKind, ChainNode, Stage};
use crate::error::{Error, Result};

/// Byte range of the first brace-balanced object, skipping braces inside
/// string literals.
pub fn extract_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

struct Lenient<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Lenient<'a> {
    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::ChainParseError(format!("{msg} at byte {}", self.pos)))
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace() || c == b',') {
            self.pos += 1;
        }
    }

    fn value(&mut self) -> Result<Value> {
        self.skip_ws();
        match self.peek() {
            Some(b'{') => self.object(),
            Some(b'[') => self.array(),
            Some(b'"') => self.string().map(Value::String),
            Some(_) => self.scalar(),
            None => self.err("unexpected end of input"),
        }
    }

    fn object(&mut self) -> Result<Value> {
        self.pos += 1;
        let mut map = Map::new();
        loop {
            self.skip_separators();
            match self.peek() {
                Some(b'}') => {
                    self.pos += 1;
                    return Ok(Value::Object(map));
                }
                Some(b'"') => {
                    let key = self.string()?;
                    self.skip_ws();
                    if self.peek() != Some(b':') {
                        return self.err("expected `:` after object key");
                    }
                    self.pos += 1;
                    let v = self.value()?;
                    map.insert(key, v);
                }
                None => return self.err("unterminated object"),
                Some(_) => return self.err("expected object key"),
            }
        }
    }

    fn array(&mut self) -> Result<Value> {
        self.pos += 1;
        let mut items = Vec::new();
        loop {
            self.skip_separators();
            match self.peek() {
                Some(b']') => {
                    self.pos += 1;
                    return Ok(Value::Array(items));
                }
                // an enclosing object closes the array implicitly
                Some(b'}') => return Ok(Value::Array(items)),
                None => return self.err("unterminated array"),
                Some(_) => {}
            }
            let before = self.pos;
            let item = self.value()?;
            if item.is_string() {
                self.skip_ws();
                if self.peek() == Some(b':') {
                    // the string was the next key of the enclosing object
                    self.pos = before;
                    return Ok(Value::Array(items));
                }
            }
            items.push(item);
        }
    }

    fn string(&mut self) -> Result<String> {
        let start = self.pos;
        self.pos += 1;
        let mut escaped = false;
        while let Some(c) = self.peek() {
            self.pos += 1;
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => {
                    let raw = std::str::from_utf8(&self.s[start..self.pos]).expect("input is str");
                    return serde_json::from_str::<String>(raw).or_else(|_| {
                        // tolerate raw control characters inside the literal
                        let cleaned: String = raw
                            .chars()
                            .map(|c| if c.is_control() { ' ' } else { c })
                            .collect();
                        serde_json::from_str::<String>(&cleaned)
                            .map_err(|e| Error::ChainParseError(format!("bad string literal: {e}")))
                    });
                }
                _ => {}
            }
        }
        self.err("unterminated string")
    }

    fn scalar(&mut self) -> Result<Value> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if !c.is_ascii_whitespace() && !b",:]}".contains(&c)) {
            self.pos += 1;
        }
        let raw = std::str::from_utf8(&self.s[start..self.pos]).expect("input is str");
        match serde_json::from_str::<Value>(raw) {
            Ok(v) if !v.is_object() && !v.is_array() => Ok(v),
            _ => self.err(&format!("unexpected token `{raw}`")),
        }
    }
}

/// Strict JSON first, then the lenient reader.
pub fn parse_lenient_object(text: &str) -> Result<Map<String, Value>> {
    let obj = extract_object(text)
        .ok_or_else(|| Error::ChainParseError("no balanced JSON object in completion".into()))?;
    let value = match serde_json::from_str::<Value>(obj) {
        Ok(v) => v,
        Err(_) => {
            let mut p = Lenient {
                s: obj.as_bytes(),
                pos: 0,
            };
            let v = p.value()?;
            p.skip_ws();
            if p.pos != obj.len() {
                return p.err("trailing content after object");
            }
            v
        }
    };
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(Error::ChainParseError("completion is not a JSON object".into())),
    }
}

fn field<'v>(map: &'v Map<String, Value>, name: &str) -> Option<&'v Value> {
    map.iter()
        .find(|(k, _)| k.trim().eq_ignore_ascii_case(name))
        .map(|(_, v)| v)
}

fn text_field(map: &Map<String, Value>, name: &str) -> Result<Option<String>> {
    match field(map, name) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.trim().to_owned())),
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(Value::Bool(b)) => Ok(Some(b.to_string())),
        Some(other) => Err(Error::ChainParseError(format!("`{name}` must be text, got {other}"))),
    }
}

fn flag_field(map: &Map<String, Value>) -> Result<bool> {
    match field(map, "missing_flag") {
        None | Some(Value::Null) => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => Ok(true),
            "false" | "" => Ok(false),
            other => Err(Error::ChainParseError(format!("bad missing_flag `{other}`"))),
        },
        Some(other) => Err(Error::ChainParseError(format!("bad missing_flag {other}"))),
    }
}

fn node(value: &Value) -> Result<ChainNode> {
    let Value::Object(map) = value else {
        return Err(Error::ChainParseError(format!("chain element is not an object: {value}")));
    };
    let action = text_field(map, "action")?
        .ok_or_else(|| Error::ChainParseError("chain node without `action`".into()))?;
    let sub = text_field(map, "sub")?
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::ChainParseError("chain node without `sub`".into()))?;
    Ok(ChainNode {
        action: action.parse::<ActionKind>()?,
        sub,
        guess_answer: text_field(map, "guess_answer")?.unwrap_or_default(),
        missing_flag: flag_field(map)?,
        retrieved: None,
        corrected_answer: None,
        faith_score: None,
        error: None,
    })
}

/// Parses a completion into a chain. Initial-stage chains never carry an
/// optimized question.
pub fn parse_action_chain(completion: &str, stage: Stage) -> Result<ActionChain> {
    let map = parse_lenient_object(completion)?;
    let nodes = match field(&map, "chain") {
        Some(Value::Array(items)) => items.iter().map(node).collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(Error::ChainParseError("`chain` is not an array".into())),
        None => return Err(Error::ChainParseError("missing `chain`".into())),
    };
    if nodes.is_empty() {
        return Err(Error::EmptyChain);
    }
    let optimized_question = match stage {
        Stage::Initial => None,
        Stage::Normal => text_field(&map, "optimized_question")?.filter(|s| !s.is_empty()),
    };
    Ok(ActionChain {
        question: text_field(&map, "question")?.unwrap_or_default(),
        optimized_question,
        nodes,
        final_answer: text_field(&map, "final_answer")?.unwrap_or_default(),
    })
}
