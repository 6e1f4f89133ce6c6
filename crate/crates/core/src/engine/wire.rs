//! Line-oriented subscription records: `field=value` pairs separated by
//! single spaces, in schema order, and `.eos` as the end-of-stream line.

use thiserror::Error;

use crate::querygraph::{Schema, Tuple, Value};

pub const EOS_LINE: &str = ".eos";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("record has {found} fields, schema has {expected}")]
    FieldCount { expected: usize, found: usize },
    #[error("expected field `{expected}`, found `{found}`")]
    FieldName { expected: String, found: String },
    #[error("bad value for `{field}`: `{text}`")]
    Value { field: String, text: String },
    #[error("malformed record: {0}")]
    Syntax(String),
}

fn escape_into(s: &str, out: &mut String) {
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '=' => out.push_str("\\e"),
            c => out.push(c),
        }
    }
}

fn unescape(s: &str) -> Result<String, WireError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next() {
            Some('\\') => '\\',
            Some('s') => ' ',
            Some('n') => '\n',
            Some('r') => '\r',
            Some('e') => '=',
            other => {
                return Err(WireError::Syntax(format!(
                    "bad escape `\\{}`",
                    other.unwrap_or(' ')
                )))
            }
        });
    }
    Ok(out)
}

/// Encodes one tuple as a record line (without the newline). Doubles use
/// the shortest representation that reads back to the same value.
pub fn encode_record(schema: &Schema, t: &Tuple) -> String {
    let mut out = String::new();
    for (i, (f, v)) in schema.fields().iter().zip(&t.0).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&f.name);
        out.push('=');
        match v {
            Value::Str(s) => escape_into(s, &mut out),
            Value::Double(d) => out.push_str(&format!("{d:?}")),
            v => out.push_str(&v.to_string()),
        }
    }
    out
}

/// `Ok(None)` for the end-of-stream line.
pub fn decode_record(schema: &Schema, line: &str) -> Result<Option<Tuple>, WireError> {
    let line = line.trim_end_matches(['\n', '\r']);
    if line == EOS_LINE {
        return Ok(None);
    }
    let parts: Vec<&str> = if line.is_empty() {
        Vec::new()
    } else {
        line.split(' ').collect()
    };
    if parts.len() != schema.arity() {
        return Err(WireError::FieldCount {
            expected: schema.arity(),
            found: parts.len(),
        });
    }
    let mut values = Vec::with_capacity(parts.len());
    for (f, part) in schema.fields().iter().zip(parts) {
        let (name, raw) = part
            .split_once('=')
            .ok_or_else(|| WireError::Syntax(format!("`{part}` lacks `=`")))?;
        if name != f.name {
            return Err(WireError::FieldName {
                expected: f.name.clone(),
                found: name.to_string(),
            });
        }
        let text = unescape(raw)?;
        let v = Value::parse_as(f.ty, &text).ok_or_else(|| WireError::Value {
            field: f.name.clone(),
            text: text.clone(),
        })?;
        values.push(v);
    }
    Ok(Some(Tuple(values)))
}
