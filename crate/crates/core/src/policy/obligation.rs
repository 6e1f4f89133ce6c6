use std::fmt;

use crate::predicate::{parse_predicate, Predicate};
use crate::querygraph::{
    validate_graph, AggFunc, FilterOp, MapOp, QueryGraph, Schema, WindowAggOp, WindowType,
};

use super::PolicyError;

const STRING_TYPE: &str = "http://www.w3.org/2001/XMLSchema#string";
const INTEGER_TYPE: &str = "http://www.w3.org/2001/XMLSchema#integer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataType {
    String,
    Integer,
}

impl DataType {
    pub fn uri(self) -> &'static str {
        match self {
            DataType::String => STRING_TYPE,
            DataType::Integer => INTEGER_TYPE,
        }
    }

    /// Accepts the schema URIs and the bare names.
    pub fn parse(s: &str) -> Option<DataType> {
        let name = s.rsplit('#').next().unwrap_or(s).to_ascii_lowercase();
        match name.as_str() {
            "string" => Some(DataType::String),
            "integer" | "int" => Some(DataType::Integer),
            _ => None,
        }
    }
}

/// What an assignment carries, recovered from its AttributeId.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AssignmentRole {
    FilterCondition,
    MapAttribute,
    WindowType,
    WindowSize,
    WindowStep,
    WindowAttr,
}

impl AssignmentRole {
    fn suffix(self) -> &'static str {
        match self {
            AssignmentRole::FilterCondition => "stream-filter-condition-id",
            AssignmentRole::MapAttribute => "stream-map-attribute-id",
            AssignmentRole::WindowType => "stream-window-type-id",
            AssignmentRole::WindowSize => "stream-window-size-id",
            AssignmentRole::WindowStep => "stream-window-step-id",
            AssignmentRole::WindowAttr => "stream-window-attr-id",
        }
    }

    pub fn attribute_id(self) -> String {
        format!("pCloud:obligation:{}", self.suffix())
    }

    fn from_id(id: &str) -> Option<AssignmentRole> {
        let name = normalize_name(strip_prefix(id)?);
        [
            AssignmentRole::FilterCondition,
            AssignmentRole::MapAttribute,
            AssignmentRole::WindowType,
            AssignmentRole::WindowSize,
            AssignmentRole::WindowStep,
            AssignmentRole::WindowAttr,
        ]
        .into_iter()
        .find(|r| r.suffix() == name)
    }
}

/// `exacml:obligation:<name>` or `pCloud:obligation:<name>`, any case.
fn strip_prefix(id: &str) -> Option<&str> {
    let (prefix, rest) = id.split_once(':')?;
    if !prefix.eq_ignore_ascii_case("exacml") && !prefix.eq_ignore_ascii_case("pcloud") {
        return None;
    }
    let (kind, name) = rest.split_once(':')?;
    kind.eq_ignore_ascii_case("obligation").then_some(name)
}

/// Maps the long spellings (`stream-filtering`, `stream-mapping`,
/// `stream-window-aggregation`) onto the short ones.
fn normalize_name(name: &str) -> String {
    let lower = name.to_ascii_lowercase();
    for (long, short) in [
        ("stream-window-aggregation", "stream-window"),
        ("stream-filtering", "stream-filter"),
        ("stream-mapping", "stream-map"),
    ] {
        if let Some(rest) = lower.strip_prefix(long) {
            return format!("{short}{rest}");
        }
    }
    lower
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AttributeAssignment {
    pub attribute_id: String,
    pub data_type: DataType,
    pub value: String,
}

impl AttributeAssignment {
    pub fn new(
        attribute_id: impl Into<String>,
        data_type: DataType,
        value: impl Into<String>,
    ) -> Result<AttributeAssignment, PolicyError> {
        let a = AttributeAssignment {
            attribute_id: attribute_id.into(),
            data_type,
            value: value.into().trim().to_string(),
        };
        if data_type == DataType::Integer && a.value.parse::<i64>().is_err() {
            return Err(PolicyError::InvalidObligation(format!(
                "`{}` is not an integer (assignment {})",
                a.value, a.attribute_id
            )));
        }
        Ok(a)
    }

    pub fn role(&self) -> Option<AssignmentRole> {
        AssignmentRole::from_id(&self.attribute_id)
    }

    fn of(
        role: AssignmentRole,
        data_type: DataType,
        value: impl Into<String>,
    ) -> AttributeAssignment {
        AttributeAssignment {
            attribute_id: role.attribute_id(),
            data_type,
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObligationKind {
    Filter,
    Map,
    Window,
}

impl ObligationKind {
    /// Canonical obligation id.
    pub fn id(self) -> &'static str {
        match self {
            ObligationKind::Filter => "exacml:obligation:stream-filter",
            ObligationKind::Map => "exacml:obligation:stream-map",
            ObligationKind::Window => "exacml:obligation:stream-window",
        }
    }

    /// Recognizes both spellings and both prefixes of each id.
    pub fn from_id(id: &str) -> Option<ObligationKind> {
        match normalize_name(strip_prefix(id.trim())?).as_str() {
            "stream-filter" => Some(ObligationKind::Filter),
            "stream-map" => Some(ObligationKind::Map),
            "stream-window" => Some(ObligationKind::Window),
            _ => None,
        }
    }
}

impl fmt::Display for ObligationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Obligation {
    pub kind: ObligationKind,
    pub assignments: Vec<AttributeAssignment>,
}

impl Obligation {
    /// Checks that the assignments fit the obligation kind.
    pub fn new(
        kind: ObligationKind,
        assignments: Vec<AttributeAssignment>,
    ) -> Result<Obligation, PolicyError> {
        let o = Obligation { kind, assignments };
        let count = |r| o.values(r).count();
        let bad = |msg: &str| Err(PolicyError::InvalidObligation(format!("{kind}: {msg}")));
        for a in &o.assignments {
            let fits = match (kind, a.role()) {
                (ObligationKind::Filter, Some(AssignmentRole::FilterCondition)) => true,
                (ObligationKind::Map, Some(AssignmentRole::MapAttribute)) => true,
                (
                    ObligationKind::Window,
                    Some(
                        AssignmentRole::WindowType
                        | AssignmentRole::WindowSize
                        | AssignmentRole::WindowStep
                        | AssignmentRole::WindowAttr,
                    ),
                ) => true,
                _ => false,
            };
            if !fits {
                return bad(&format!("unexpected assignment {}", a.attribute_id));
            }
        }
        match kind {
            ObligationKind::Filter if count(AssignmentRole::FilterCondition) != 1 => {
                bad("needs exactly one condition")
            }
            ObligationKind::Map if count(AssignmentRole::MapAttribute) == 0 => {
                bad("needs at least one attribute")
            }
            ObligationKind::Window
                if count(AssignmentRole::WindowType) != 1
                    || count(AssignmentRole::WindowSize) != 1
                    || count(AssignmentRole::WindowStep) != 1 =>
            {
                bad("needs exactly one type, size and step")
            }
            ObligationKind::Window if count(AssignmentRole::WindowAttr) == 0 => {
                bad("needs at least one attr:function assignment")
            }
            _ => Ok(o),
        }
    }

    fn values(&self, role: AssignmentRole) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |a| a.role() == Some(role))
            .map(|a| a.value.as_str())
    }

    fn value(&self, role: AssignmentRole) -> &str {
        self.values(role)
            .next()
            .expect("checked by Obligation::new")
    }
}

fn resolve<'s>(schema: &'s Schema, name: &str) -> Result<&'s str, PolicyError> {
    schema
        .resolve(name.trim())
        .map(|f| f.name.as_str())
        .ok_or_else(|| PolicyError::UnknownAttribute(name.trim().to_string()))
}

/// Rewrites every attribute of `p` to the schema's spelling.
pub(crate) fn resolve_predicate(p: &Predicate, schema: &Schema) -> Result<Predicate, PolicyError> {
    for leaf in p.leaves() {
        resolve(schema, &leaf.attribute)?;
    }
    Ok(p.clone().map_leaves(&mut |mut s| {
        s.attribute = resolve(schema, &s.attribute)
            .expect("checked above")
            .to_string();
        s
    }))
}

pub(crate) fn parse_window_number(what: &str, text: &str) -> Result<u32, PolicyError> {
    text.trim().parse::<u32>().map_err(|_| {
        PolicyError::InvalidObligation(format!(
            "window {what} `{}` is not a positive integer",
            text.trim()
        ))
    })
}

/// Compiles a policy's obligations into the pipeline they describe.
pub fn obligations_to_graph(
    obligations: &[Obligation],
    schema: &Schema,
) -> Result<QueryGraph, PolicyError> {
    let mut g = QueryGraph::identity(schema.stream_name());
    for o in obligations {
        let taken = match o.kind {
            ObligationKind::Filter => {
                let condition = parse_predicate(o.value(AssignmentRole::FilterCondition))?;
                g.filter
                    .replace(FilterOp::new(resolve_predicate(&condition, schema)?))
                    .is_some()
            }
            ObligationKind::Map => {
                let attrs = o
                    .values(AssignmentRole::MapAttribute)
                    .map(|a| resolve(schema, a).map(str::to_string))
                    .collect::<Result<Vec<_>, _>>()?;
                g.map.replace(MapOp::new(attrs)?).is_some()
            }
            ObligationKind::Window => {
                let ty_text = o.value(AssignmentRole::WindowType);
                let ty = WindowType::parse(ty_text).ok_or_else(|| {
                    PolicyError::InvalidObligation(format!("unknown window type `{ty_text}`"))
                })?;
                let size = parse_window_number("size", o.value(AssignmentRole::WindowSize))?;
                let step = parse_window_number("step", o.value(AssignmentRole::WindowStep))?;
                let mut aggs = Vec::new();
                for pair in o.values(AssignmentRole::WindowAttr) {
                    let (attr, func) = pair.split_once(':').ok_or_else(|| {
                        PolicyError::InvalidObligation(format!(
                            "`{pair}` is not of the form attribute:function"
                        ))
                    })?;
                    let func = AggFunc::parse(func).ok_or_else(|| {
                        PolicyError::InvalidObligation(format!(
                            "unknown aggregate function `{func}`"
                        ))
                    })?;
                    aggs.push((resolve(schema, attr)?.to_string(), func));
                }
                g.window
                    .replace(WindowAggOp::new(ty, size, step, aggs)?)
                    .is_some()
            }
        };
        if taken {
            return Err(PolicyError::InvalidObligation(format!(
                "more than one {} obligation",
                o.kind
            )));
        }
    }
    validate_graph(&g, schema)?;
    Ok(g)
}

/// Serializes a pipeline as obligations; inverse of [`obligations_to_graph`].
pub fn graph_to_obligations(g: &QueryGraph) -> Vec<Obligation> {
    let mut out = Vec::new();
    if let Some(f) = &g.filter {
        out.push(Obligation {
            kind: ObligationKind::Filter,
            assignments: vec![AttributeAssignment::of(
                AssignmentRole::FilterCondition,
                DataType::String,
                f.condition.to_string(),
            )],
        });
    }
    if let Some(m) = &g.map {
        out.push(Obligation {
            kind: ObligationKind::Map,
            assignments: m
                .attributes()
                .iter()
                .map(|a| {
                    AttributeAssignment::of(
                        AssignmentRole::MapAttribute,
                        DataType::String,
                        a.clone(),
                    )
                })
                .collect(),
        });
    }
    if let Some(w) = &g.window {
        let mut assignments = vec![
            AttributeAssignment::of(
                AssignmentRole::WindowStep,
                DataType::Integer,
                w.step().to_string(),
            ),
            AttributeAssignment::of(
                AssignmentRole::WindowSize,
                DataType::Integer,
                w.size().to_string(),
            ),
            AttributeAssignment::of(
                AssignmentRole::WindowType,
                DataType::String,
                w.window_type().name(),
            ),
        ];
        assignments.extend(w.aggs().iter().map(|(a, f)| {
            AttributeAssignment::of(
                AssignmentRole::WindowAttr,
                DataType::String,
                format!("{a}:{f}"),
            )
        }));
        out.push(Obligation {
            kind: ObligationKind::Window,
            assignments,
        });
    }
    out
}
