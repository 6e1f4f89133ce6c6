//! Operator pipeline shared by policies, user queries, the merge step and the
//! engine: an optional filter, then an optional map, then an optional
//! window aggregation, applied to one named source stream.

mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::predicate::{Literal, Predicate};

pub use schema::{Field, FieldType, Schema, SchemaCatalog, Tuple, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("invalid identifier `{0}`")]
    InvalidName(String),
    #[error("schema for `{0}` has no fields")]
    EmptySchema(String),
    #[error("duplicate field `{0}`")]
    DuplicateField(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("type mismatch on `{attribute}`: {detail}")]
    TypeMismatch { attribute: String, detail: String },
    #[error("tuple has {found} values, schema has {expected} fields")]
    ArityMismatch { expected: usize, found: usize },
    #[error("map operator needs at least one attribute")]
    EmptyMap,
    #[error("window aggregation needs at least one aggregate")]
    EmptyAggregates,
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("time window needs a timestamp field in its input")]
    MissingTimestamp,
    #[error("pipeline already has a {0} operator")]
    DuplicateOperator(&'static str),
    #[error("graph reads stream `{found}` but schema is for `{expected}`")]
    StreamMismatch { expected: String, found: String },
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FilterOp {
    pub condition: Predicate,
}

impl FilterOp {
    pub fn new(condition: Predicate) -> FilterOp {
        FilterOp { condition }
    }
}

/// Projection onto a non-empty attribute set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MapOp {
    attributes: BTreeSet<String>,
}

impl MapOp {
    pub fn new<I, S>(attributes: I) -> Result<MapOp, GraphError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let attributes: BTreeSet<String> = attributes.into_iter().map(Into::into).collect();
        if attributes.is_empty() {
            return Err(GraphError::EmptyMap);
        }
        Ok(MapOp { attributes })
    }

    pub fn attributes(&self) -> &BTreeSet<String> {
        &self.attributes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowType {
    Tuple,
    Time,
}

impl WindowType {
    pub fn name(self) -> &'static str {
        match self {
            WindowType::Tuple => "tuple",
            WindowType::Time => "time",
        }
    }

    pub fn parse(s: &str) -> Option<WindowType> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tuple" | "tuples" => Some(WindowType::Tuple),
            "time" | "second" | "seconds" => Some(WindowType::Time),
            _ => None,
        }
    }
}

impl fmt::Display for WindowType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AggFunc {
    Avg,
    Max,
    Min,
    Count,
    Sum,
    LastVal,
    FirstVal,
}

impl AggFunc {
    pub const ALL: [AggFunc; 7] = [
        AggFunc::Avg,
        AggFunc::Max,
        AggFunc::Min,
        AggFunc::Count,
        AggFunc::Sum,
        AggFunc::LastVal,
        AggFunc::FirstVal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Avg => "avg",
            AggFunc::Max => "max",
            AggFunc::Min => "min",
            AggFunc::Count => "count",
            AggFunc::Sum => "sum",
            AggFunc::LastVal => "lastval",
            AggFunc::FirstVal => "firstval",
        }
    }

    /// Accepts the short names and the long spellings (`average`, `lastvalue`, ...).
    pub fn parse(s: &str) -> Option<AggFunc> {
        match s.trim().to_ascii_lowercase().as_str() {
            "avg" | "average" => Some(AggFunc::Avg),
            "max" | "maximum" => Some(AggFunc::Max),
            "min" | "minimum" => Some(AggFunc::Min),
            "count" => Some(AggFunc::Count),
            "sum" => Some(AggFunc::Sum),
            "lastval" | "lastvalue" => Some(AggFunc::LastVal),
            "firstval" | "firstvalue" => Some(AggFunc::FirstVal),
            _ => None,
        }
    }

    /// Output type for an input of type `ty`, or `None` if not applicable.
    pub fn output_type(self, ty: FieldType) -> Option<FieldType> {
        match self {
            AggFunc::Avg => {
                matches!(ty, FieldType::Double | FieldType::Int).then_some(FieldType::Double)
            }
            AggFunc::Sum => matches!(ty, FieldType::Double | FieldType::Int).then_some(ty),
            AggFunc::Max | AggFunc::Min => ty.is_numeric().then_some(ty),
            AggFunc::Count => Some(FieldType::Int),
            AggFunc::LastVal | AggFunc::FirstVal => Some(ty),
        }
    }

    /// Name of the output column for `attribute`, e.g. `avgrainrate`.
    pub fn output_name(self, attribute: &str) -> String {
        format!("{}{}", self.name(), attribute)
    }
}

impl fmt::Display for AggFunc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sliding-window aggregation: one function per attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WindowAggOp {
    window_type: WindowType,
    size: u32,
    step: u32,
    aggs: BTreeMap<String, AggFunc>,
}

impl WindowAggOp {
    pub fn new<I, S>(
        window_type: WindowType,
        size: u32,
        step: u32,
        aggs: I,
    ) -> Result<WindowAggOp, GraphError>
    where
        I: IntoIterator<Item = (S, AggFunc)>,
        S: Into<String>,
    {
        if size == 0 || step == 0 {
            return Err(GraphError::InvalidWindow(
                "size and step must be positive".into(),
            ));
        }
        if step > size {
            return Err(GraphError::InvalidWindow(format!(
                "step {step} exceeds size {size}"
            )));
        }
        let mut map = BTreeMap::new();
        for (attr, func) in aggs {
            let attr = attr.into();
            if let Some(prev) = map.insert(attr.clone(), func) {
                if prev != func {
                    return Err(GraphError::InvalidWindow(format!(
                        "attribute `{attr}` aggregated by both {prev} and {func}"
                    )));
                }
            }
        }
        if map.is_empty() {
            return Err(GraphError::EmptyAggregates);
        }
        Ok(WindowAggOp {
            window_type,
            size,
            step,
            aggs: map,
        })
    }

    pub fn window_type(&self) -> WindowType {
        self.window_type
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn aggs(&self) -> &BTreeMap<String, AggFunc> {
        &self.aggs
    }

    /// Same window shape, different aggregate set.
    pub fn with_aggs(&self, aggs: BTreeMap<String, AggFunc>) -> Result<WindowAggOp, GraphError> {
        WindowAggOp::new(self.window_type, self.size, self.step, aggs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operator {
    Filter(FilterOp),
    Map(MapOp),
    Window(WindowAggOp),
}

impl Operator {
    pub fn kind(&self) -> &'static str {
        match self {
            Operator::Filter(_) => "filter",
            Operator::Map(_) => "map",
            Operator::Window(_) => "window",
        }
    }
}

/// Linear pipeline over one source stream in canonical order:
/// filter, then map, then window aggregation, each optional.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryGraph {
    pub source: String,
    pub filter: Option<FilterOp>,
    pub map: Option<MapOp>,
    pub window: Option<WindowAggOp>,
}

impl QueryGraph {
    /// The identity pipeline: raw access to `source`.
    pub fn identity(source: impl Into<String>) -> QueryGraph {
        QueryGraph {
            source: source.into(),
            filter: None,
            map: None,
            window: None,
        }
    }

    /// Assembles a pipeline from operators given in any order.
    pub fn from_operators(
        source: impl Into<String>,
        ops: impl IntoIterator<Item = Operator>,
    ) -> Result<QueryGraph, GraphError> {
        let mut g = QueryGraph::identity(source);
        for op in ops {
            let kind = op.kind();
            let taken = match op {
                Operator::Filter(f) => g.filter.replace(f).is_some(),
                Operator::Map(m) => g.map.replace(m).is_some(),
                Operator::Window(w) => g.window.replace(w).is_some(),
            };
            if taken {
                return Err(GraphError::DuplicateOperator(kind));
            }
        }
        Ok(g)
    }

    pub fn with_filter(mut self, condition: Predicate) -> QueryGraph {
        self.filter = Some(FilterOp::new(condition));
        self
    }

    pub fn with_map(mut self, map: MapOp) -> QueryGraph {
        self.map = Some(map);
        self
    }

    pub fn with_window(mut self, window: WindowAggOp) -> QueryGraph {
        self.window = Some(window);
        self
    }

    /// Operators in canonical order.
    pub fn operators(&self) -> Vec<Operator> {
        let mut ops = Vec::with_capacity(3);
        if let Some(f) = &self.filter {
            ops.push(Operator::Filter(f.clone()));
        }
        if let Some(m) = &self.map {
            ops.push(Operator::Map(m.clone()));
        }
        if let Some(w) = &self.window {
            ops.push(Operator::Window(w.clone()));
        }
        ops
    }

    pub fn is_identity(&self) -> bool {
        self.filter.is_none() && self.map.is_none() && self.window.is_none()
    }

    /// Canonical one-line text, used for cache keys and logs:
    /// `stream | FILTER <pred> | MAP a,b | WINDOW tuple 10/2 avg(a),max(b)`.
    pub fn canonical_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for QueryGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)?;
        if let Some(filter) = &self.filter {
            write!(f, " | FILTER {}", filter.condition)?;
        }
        if let Some(map) = &self.map {
            let attrs: Vec<&str> = map.attributes.iter().map(String::as_str).collect();
            write!(f, " | MAP {}", attrs.join(","))?;
        }
        if let Some(w) = &self.window {
            let aggs: Vec<String> = w
                .aggs
                .iter()
                .map(|(a, func)| format!("{func}({a})"))
                .collect();
            write!(
                f,
                " | WINDOW {} {}/{} {}",
                w.window_type,
                w.size,
                w.step,
                aggs.join(",")
            )?;
        }
        Ok(())
    }
}

/// Derives the schema produced by `op` on `input`.
pub fn output_schema_of(op: &Operator, input: &Schema) -> Result<Schema, GraphError> {
    match op {
        Operator::Filter(filter) => {
            for leaf in filter.condition.leaves() {
                let field = input
                    .field(&leaf.attribute)
                    .ok_or_else(|| GraphError::UnknownAttribute(leaf.attribute.clone()))?;
                let ok = match (&leaf.literal, field.ty) {
                    (Literal::Text(_), FieldType::String) => true,
                    (Literal::Number(_), ty) => ty.is_numeric(),
                    _ => false,
                };
                if !ok {
                    return Err(GraphError::TypeMismatch {
                        attribute: leaf.attribute.clone(),
                        detail: format!("cannot compare {} field with `{}`", field.ty, leaf),
                    });
                }
            }
            Ok(input.clone())
        }
        Operator::Map(map) => {
            let mut fields = Vec::with_capacity(map.attributes.len());
            for f in input.fields() {
                if map.attributes.contains(&f.name) {
                    fields.push(f.clone());
                }
            }
            if let Some(missing) = map.attributes.iter().find(|a| input.field(a).is_none()) {
                return Err(GraphError::UnknownAttribute(missing.clone()));
            }
            Ok(input.with_fields(fields))
        }
        Operator::Window(w) => {
            if w.window_type == WindowType::Time && input.timestamp_field().is_none() {
                return Err(GraphError::MissingTimestamp);
            }
            let mut fields = Vec::with_capacity(w.aggs.len());
            for (attr, func) in &w.aggs {
                let field = input
                    .field(attr)
                    .ok_or_else(|| GraphError::UnknownAttribute(attr.clone()))?;
                let ty = func
                    .output_type(field.ty)
                    .ok_or_else(|| GraphError::TypeMismatch {
                        attribute: attr.clone(),
                        detail: format!("{func} is not defined on {}", field.ty),
                    })?;
                fields.push(Field::new(func.output_name(attr), ty));
            }
            // Output names must stay unique (e.g. `maxa` from max(a) vs a field `a` named `xa`).
            Schema::new(input.stream_name(), fields)
        }
    }
}

/// Validates `g` against its source schema and returns the output schema.
pub fn validate_graph(g: &QueryGraph, source: &Schema) -> Result<Schema, GraphError> {
    if g.source != source.stream_name() {
        return Err(GraphError::StreamMismatch {
            expected: source.stream_name().to_string(),
            found: g.source.clone(),
        });
    }
    let mut schema = source.clone();
    for op in g.operators() {
        schema = output_schema_of(&op, &schema)?;
    }
    Ok(schema)
}

/// Intermediate schemas: the input of each operator followed by the final output.
pub fn stage_schemas(g: &QueryGraph, source: &Schema) -> Result<Vec<Schema>, GraphError> {
    let mut out = vec![source.clone()];
    for op in g.operators() {
        let next = output_schema_of(&op, out.last().expect("non-empty"))?;
        out.push(next);
    }
    Ok(out)
}
