use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use crate::predicate::{CmpOp, Decimal, Literal, SimpleExpression};

use super::GraphError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldType {
    Timestamp,
    Double,
    Int,
    String,
}

impl FieldType {
    pub fn name(self) -> &'static str {
        match self {
            FieldType::Timestamp => "timestamp",
            FieldType::Double => "double",
            FieldType::Int => "int",
            FieldType::String => "string",
        }
    }

    pub fn parse(s: &str) -> Option<FieldType> {
        match s.to_ascii_lowercase().as_str() {
            "timestamp" => Some(FieldType::Timestamp),
            "double" => Some(FieldType::Double),
            "int" | "integer" | "long" => Some(FieldType::Int),
            "string" => Some(FieldType::String),
            _ => None,
        }
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, FieldType::String)
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Field {
    pub name: String,
    pub ty: FieldType,
}

impl Field {
    pub fn new(name: impl Into<String>, ty: FieldType) -> Field {
        Field {
            name: name.into(),
            ty,
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Named, ordered field list of a stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schema {
    stream_name: String,
    fields: Vec<Field>,
}

impl Schema {
    pub fn new(stream_name: impl Into<String>, fields: Vec<Field>) -> Result<Schema, GraphError> {
        let stream_name = stream_name.into();
        if !is_identifier(&stream_name) {
            return Err(GraphError::InvalidName(stream_name));
        }
        if fields.is_empty() {
            return Err(GraphError::EmptySchema(stream_name));
        }
        let mut seen = HashSet::new();
        for f in &fields {
            if !is_identifier(&f.name) {
                return Err(GraphError::InvalidName(f.name.clone()));
            }
            if !seen.insert(f.name.to_ascii_lowercase()) {
                return Err(GraphError::DuplicateField(f.name.clone()));
            }
        }
        Ok(Schema {
            stream_name,
            fields,
        })
    }

    /// Builds a schema from `(name, type)` pairs.
    pub fn of(stream_name: &str, fields: &[(&str, FieldType)]) -> Result<Schema, GraphError> {
        Schema::new(
            stream_name,
            fields.iter().map(|(n, t)| Field::new(*n, *t)).collect(),
        )
    }

    pub fn stream_name(&self) -> &str {
        &self.stream_name
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn arity(&self) -> usize {
        self.fields.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Case-insensitive lookup returning the schema's spelling.
    pub fn resolve(&self, name: &str) -> Option<&Field> {
        self.fields
            .iter()
            .find(|f| f.name.eq_ignore_ascii_case(name))
    }

    /// The first timestamp field, which drives time windows.
    pub fn timestamp_field(&self) -> Option<usize> {
        self.fields
            .iter()
            .position(|f| f.ty == FieldType::Timestamp)
    }

    pub(crate) fn with_fields(&self, fields: Vec<Field>) -> Schema {
        Schema {
            stream_name: self.stream_name.clone(),
            fields,
        }
    }

    /// Checks arity and per-field types of `t`.
    pub fn check(&self, t: &Tuple) -> Result<(), GraphError> {
        if t.0.len() != self.fields.len() {
            return Err(GraphError::ArityMismatch {
                expected: self.fields.len(),
                found: t.0.len(),
            });
        }
        for (f, v) in self.fields.iter().zip(&t.0) {
            if v.field_type() != f.ty {
                return Err(GraphError::TypeMismatch {
                    attribute: f.name.clone(),
                    detail: format!("expected {}, got {}", f.ty, v.field_type()),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.stream_name)?;
        for (i, field) in self.fields.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{} {}", field.name, field.ty)?;
        }
        f.write_str(")")
    }
}

/// Lookup of registered stream schemas by name.
pub trait SchemaCatalog {
    fn schema(&self, stream: &str) -> Option<Schema>;
}

impl SchemaCatalog for HashMap<String, Schema> {
    fn schema(&self, stream: &str) -> Option<Schema> {
        self.get(stream).cloned()
    }
}

impl SchemaCatalog for BTreeMap<String, Schema> {
    fn schema(&self, stream: &str) -> Option<Schema> {
        self.get(stream).cloned()
    }
}

impl SchemaCatalog for [Schema] {
    fn schema(&self, stream: &str) -> Option<Schema> {
        self.iter().find(|s| s.stream_name == stream).cloned()
    }
}

impl SchemaCatalog for Vec<Schema> {
    fn schema(&self, stream: &str) -> Option<Schema> {
        self.as_slice().schema(stream)
    }
}

/// A field value. Timestamps are milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Timestamp(i64),
    Double(f64),
    Int(i64),
    Str(String),
}

impl Value {
    pub fn field_type(&self) -> FieldType {
        match self {
            Value::Timestamp(_) => FieldType::Timestamp,
            Value::Double(_) => FieldType::Double,
            Value::Int(_) => FieldType::Int,
            Value::Str(_) => FieldType::String,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Timestamp(v) | Value::Int(v) => Some(*v as f64),
            Value::Double(v) => Some(*v),
            Value::Str(_) => None,
        }
    }

    /// Parses the wire/text form of a value of type `ty`.
    pub fn parse_as(ty: FieldType, text: &str) -> Option<Value> {
        match ty {
            FieldType::Timestamp => text.parse().ok().map(Value::Timestamp),
            FieldType::Int => text.parse().ok().map(Value::Int),
            FieldType::Double => text.parse().ok().map(Value::Double),
            FieldType::String => Some(Value::Str(text.to_string())),
        }
    }

    /// Compares against a literal. Decimal literals compare exactly against
    /// integers, and against doubles by their shortest decimal rendering.
    pub fn compare(&self, literal: &Literal, literal_f64: f64) -> Option<Ordering> {
        match (self, literal) {
            (Value::Timestamp(v) | Value::Int(v), Literal::Number(l)) => {
                Some(Decimal::from_i64(*v).cmp(l))
            }
            (Value::Double(v), Literal::Number(l)) => {
                let coarse = v.partial_cmp(&literal_f64)?;
                if coarse != Ordering::Equal {
                    return Some(coarse);
                }
                Some(Decimal::from_f64(*v).map_or(Ordering::Equal, |d| d.cmp(l)))
            }
            (Value::Str(v), Literal::Text(l)) => Some(v.as_str().cmp(l.as_str())),
            _ => None,
        }
    }

    /// Truth value of `s` for this value. Kind mismatches only satisfy `!=`.
    pub fn satisfies(&self, s: &SimpleExpression) -> bool {
        let lf = s.literal.as_number().map_or(f64::NAN, Decimal::to_f64);
        self.satisfies_with(s.op, &s.literal, lf)
    }

    pub(crate) fn satisfies_with(&self, op: CmpOp, literal: &Literal, literal_f64: f64) -> bool {
        match self.compare(literal, literal_f64) {
            Some(ord) => match (self, op) {
                (Value::Str(_), CmpOp::Eq | CmpOp::Ne)
                | (Value::Timestamp(_) | Value::Int(_) | Value::Double(_), _) => op.test(ord),
                _ => false,
            },
            None => op == CmpOp::Ne,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Timestamp(v) | Value::Int(v) => write!(f, "{v}"),
            Value::Double(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

/// Field values aligned positionally with a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuple(pub Vec<Value>);

impl Tuple {
    pub fn new(values: Vec<Value>) -> Tuple {
        Tuple(values)
    }

    pub fn values(&self) -> &[Value] {
        &self.0
    }

    pub fn get(&self, i: usize) -> Option<&Value> {
        self.0.get(i)
    }
}

impl From<Vec<Value>> for Tuple {
    fn from(v: Vec<Value>) -> Self {
        Tuple(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_invariants() {
        assert!(Schema::of("s", &[]).is_err());
        assert!(Schema::of("s", &[("a", FieldType::Int), ("A", FieldType::Int)]).is_err());
        assert!(Schema::of("bad name", &[("a", FieldType::Int)]).is_err());
        let s = Schema::of("s", &[("RainRate", FieldType::Double)]).unwrap();
        assert_eq!(s.resolve("rainrate").unwrap().name, "RainRate");
    }

    #[test]
    fn decimal_aware_comparison() {
        let s = SimpleExpression::new("x", CmpOp::Eq, Literal::Number("0.3".parse().unwrap()));
        assert!(Value::Double(0.3).satisfies(&s));
        assert!(!Value::Double(0.1 + 0.2).satisfies(&s));
        let s = SimpleExpression::new("x", CmpOp::Gt, 5);
        assert!(Value::Int(6).satisfies(&s));
        assert!(!Value::Str("9".into()).satisfies(&s));
        let s = SimpleExpression::new("x", CmpOp::Ne, "a");
        assert!(Value::Int(1).satisfies(&s));
    }

    #[test]
    fn tuple_check() {
        let s = Schema::of("s", &[("a", FieldType::Int), ("b", FieldType::String)]).unwrap();
        assert!(s
            .check(&Tuple(vec![Value::Int(1), Value::Str("x".into())]))
            .is_ok());
        assert!(s.check(&Tuple(vec![Value::Int(1)])).is_err());
        assert!(s
            .check(&Tuple(vec![Value::Double(1.0), Value::Str("x".into())]))
            .is_err());
    }
}
