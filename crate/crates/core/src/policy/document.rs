//! XML forms of policies, requests and user queries.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use roxmltree::{Document, Node};

use crate::predicate::{parse_predicate, Origin, Predicate};
use crate::querygraph::{
    validate_graph, AggFunc, GraphError, MapOp, QueryGraph, Schema, WindowAggOp, WindowType,
};
use crate::xml::{child, children, escape, repair_leaf_elements, text};

use super::obligation::{parse_window_number, resolve_predicate};
use super::{
    AccessRequest, AttributeAssignment, DataType, Effect, Obligation, ObligationKind, Policy,
    PolicyError, Target,
};

const QUERY_LEAVES: [&str; 4] = ["FilterCondition", "WindowType", "WindowSize", "WindowStep"];

fn malformed(msg: impl Into<String>) -> PolicyError {
    PolicyError::Malformed(msg.into())
}

/// Parses `doc`, retrying once with the leaf-element repairs applied.
fn with_document<T>(
    doc: &str,
    f: impl FnOnce(Node) -> Result<T, PolicyError>,
) -> Result<T, PolicyError> {
    match Document::parse(doc) {
        Ok(d) => f(d.root_element()),
        Err(first) => {
            let repaired = repair_leaf_elements(doc, &QUERY_LEAVES);
            if repaired == doc {
                return Err(malformed(first.to_string()));
            }
            let d = Document::parse(&repaired).map_err(|_| malformed(first.to_string()))?;
            log::warn!("repaired malformed query elements before parsing");
            f(d.root_element())
        }
    }
}

fn expect_root(node: Node, name: &str) -> Result<(), PolicyError> {
    if node.tag_name().name() == name {
        Ok(())
    } else {
        Err(malformed(format!(
            "expected <{name}>, found <{}>",
            node.tag_name().name()
        )))
    }
}

fn required_attr<'a>(node: Node<'a, '_>, name: &str) -> Result<&'a str, PolicyError> {
    node.attribute(name).ok_or_else(|| {
        malformed(format!(
            "<{}> lacks attribute {name}",
            node.tag_name().name()
        ))
    })
}

/// `<Attribute AttributeId="k">v</Attribute>` children as pairs.
fn attribute_pairs(node: Node) -> Result<Vec<(String, String)>, PolicyError> {
    children(node, "Attribute")
        .map(|a| Ok((required_attr(a, "AttributeId")?.to_string(), text(a))))
        .collect()
}

fn single_value(parent: Node, name: &str) -> Result<String, PolicyError> {
    let node = child(parent, name).ok_or_else(|| malformed(format!("missing <{name}>")))?;
    let pairs = attribute_pairs(node)?;
    match pairs.as_slice() {
        [(_, v)] => Ok(v.clone()),
        [] if !text(node).is_empty() => Ok(text(node)),
        _ => Err(malformed(format!("<{name}> must name exactly one value"))),
    }
}

fn credentials_of(node: Option<Node>) -> Result<BTreeMap<String, String>, PolicyError> {
    let mut out = BTreeMap::new();
    if let Some(node) = node {
        for (k, v) in attribute_pairs(node)? {
            if out.insert(k.clone(), v).is_some() {
                return Err(malformed(format!("subject attribute `{k}` given twice")));
            }
        }
    }
    Ok(out)
}

fn obligations_of(node: Node) -> Result<Vec<Obligation>, PolicyError> {
    let mut out = Vec::new();
    for o in children(node, "Obligation") {
        let id = required_attr(o, "ObligationId")?;
        let kind = ObligationKind::from_id(id)
            .ok_or_else(|| malformed(format!("unknown obligation `{id}`")))?;
        if let Some(on) = o.attribute("FulfillOn") {
            if Effect::parse(on) != Some(Effect::Permit) {
                return Err(PolicyError::InvalidObligation(format!(
                    "{id}: only FulfillOn=\"Permit\" is supported"
                )));
            }
        }
        let mut assignments = Vec::new();
        for a in children(o, "AttributeAssignment") {
            let attr_id = required_attr(a, "AttributeId")?;
            let data_type = match a.attribute("DataType") {
                Some(t) => DataType::parse(t)
                    .ok_or_else(|| malformed(format!("unsupported DataType `{t}`")))?,
                None => DataType::String,
            };
            assignments.push(AttributeAssignment::new(attr_id, data_type, text(a))?);
        }
        out.push(Obligation::new(kind, assignments)?);
    }
    Ok(out)
}

/// Parses a bare `<Obligations>` block.
pub fn parse_obligations(doc: &str) -> Result<Vec<Obligation>, PolicyError> {
    with_document(doc, |root| {
        expect_root(root, "Obligations")?;
        obligations_of(root)
    })
}

fn write_attribute_block(out: &mut String, indent: &str, tag: &str, pairs: &[(&str, &str)]) {
    let _ = writeln!(out, "{indent}<{tag}>");
    for (k, v) in pairs {
        let _ = writeln!(
            out,
            "{indent}  <Attribute AttributeId=\"{}\">{}</Attribute>",
            escape(k),
            escape(v)
        );
    }
    let _ = writeln!(out, "{indent}</{tag}>");
}

fn write_obligations(out: &mut String, indent: &str, obligations: &[Obligation]) {
    let _ = writeln!(out, "{indent}<Obligations>");
    for o in obligations {
        let _ = writeln!(
            out,
            "{indent}  <Obligation ObligationId=\"{}\" FulfillOn=\"Permit\">",
            o.kind.id()
        );
        for a in &o.assignments {
            let _ = writeln!(
                out,
                "{indent}    <AttributeAssignment AttributeId=\"{}\" DataType=\"{}\">{}</AttributeAssignment>",
                escape(&a.attribute_id),
                a.data_type.uri(),
                escape(&a.value)
            );
        }
        let _ = writeln!(out, "{indent}  </Obligation>");
    }
    let _ = writeln!(out, "{indent}</Obligations>");
}

impl Policy {
    /// Reads a `<Policy PolicyId=".." Effect="..">` document with a
    /// `<Target>` (Subjects, Resources, Actions) and optional `<Obligations>`.
    pub fn from_xml(doc: &str) -> Result<Policy, PolicyError> {
        with_document(doc, |root| {
            expect_root(root, "Policy")?;
            let id = required_attr(root, "PolicyId")?.trim().to_string();
            if id.is_empty() {
                return Err(malformed("empty PolicyId"));
            }
            let effect_text = required_attr(root, "Effect")?;
            let effect = Effect::parse(effect_text)
                .ok_or_else(|| malformed(format!("unknown Effect `{effect_text}`")))?;
            let target = child(root, "Target").ok_or_else(|| malformed("missing <Target>"))?;
            let target = Target {
                subjects: credentials_of(child(target, "Subjects"))?,
                resource: single_value(target, "Resources")?,
                action: single_value(target, "Actions")?,
            };
            let obligations = match child(root, "Obligations") {
                Some(o) => obligations_of(o)?,
                None => Vec::new(),
            };
            Ok(Policy {
                id,
                target,
                effect,
                obligations,
            })
        })
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<Policy PolicyId=\"{}\" Effect=\"{}\">",
            escape(&self.id),
            self.effect.name()
        );
        out.push_str("  <Target>\n");
        let subjects: Vec<(&str, &str)> = self
            .target
            .subjects
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        write_attribute_block(&mut out, "    ", "Subjects", &subjects);
        write_attribute_block(
            &mut out,
            "    ",
            "Resources",
            &[("resource-id", &self.target.resource)],
        );
        write_attribute_block(
            &mut out,
            "    ",
            "Actions",
            &[("action-id", &self.target.action)],
        );
        out.push_str("  </Target>\n");
        if !self.obligations.is_empty() {
            write_obligations(&mut out, "  ", &self.obligations);
        }
        out.push_str("</Policy>\n");
        out
    }
}

impl AccessRequest {
    /// Reads a `<Request>` with Subject, Resource, Action and an optional
    /// embedded `<UserQuery>`.
    pub fn from_xml(doc: &str) -> Result<AccessRequest, PolicyError> {
        with_document(doc, |root| {
            expect_root(root, "Request")?;
            let resource = single_value(root, "Resource")?;
            if resource.is_empty() {
                return Err(malformed("empty resource"));
            }
            Ok(AccessRequest {
                credentials: credentials_of(child(root, "Subject"))?,
                resource,
                action: single_value(root, "Action")?,
                user_query: child(root, "UserQuery")
                    .map(UserQueryDoc::from_node)
                    .transpose()?,
            })
        })
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::from("<Request>\n");
        let subjects: Vec<(&str, &str)> = self
            .credentials
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        write_attribute_block(&mut out, "  ", "Subject", &subjects);
        write_attribute_block(
            &mut out,
            "  ",
            "Resource",
            &[("resource-id", &self.resource)],
        );
        write_attribute_block(&mut out, "  ", "Action", &[("action-id", &self.action)]);
        if let Some(q) = &self.user_query {
            q.write_xml(&mut out, "  ");
        }
        out.push_str("</Request>\n");
        out
    }

    /// Cache key: requester, resource, action and the query's canonical form.
    pub fn canonical_key(&self) -> String {
        let query = self
            .user_query
            .as_ref()
            .map(UserQueryDoc::canonical_text)
            .unwrap_or_default();
        format!(
            "{}|{}|{}|{}",
            self.fingerprint(),
            self.resource.replace('|', "\\|"),
            self.action.replace('|', "\\|"),
            query
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AggregationSpec {
    pub window_type: WindowType,
    pub size: u32,
    pub step: u32,
    /// `(attribute, function)` as written, e.g. `("RainRate", Avg)`.
    pub aggs: Vec<(String, AggFunc)>,
}

/// A user query as written: attribute names are not yet resolved against a
/// schema.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UserQueryDoc {
    pub stream: String,
    pub filter: Option<Predicate>,
    pub map: Option<Vec<String>>,
    pub aggregation: Option<AggregationSpec>,
}

/// `avg(RainRate)` into its parts.
fn parse_agg_call(s: &str) -> Result<(String, AggFunc), PolicyError> {
    let bad = || {
        malformed(format!(
            "aggregate `{s}` is not of the form function(attribute)"
        ))
    };
    let (func, rest) = s.split_once('(').ok_or_else(bad)?;
    let attr = rest.trim().strip_suffix(')').ok_or_else(bad)?.trim();
    let func = AggFunc::parse(func)
        .ok_or_else(|| malformed(format!("unknown aggregate function `{}`", func.trim())))?;
    if attr.is_empty() {
        return Err(bad());
    }
    Ok((attr.to_string(), func))
}

impl UserQueryDoc {
    /// The empty query: raw access to `stream`, subject to policy.
    pub fn raw(stream: impl Into<String>) -> UserQueryDoc {
        UserQueryDoc {
            stream: stream.into(),
            filter: None,
            map: None,
            aggregation: None,
        }
    }

    /// The query that asks for exactly `g`.
    pub fn from_graph(g: &QueryGraph) -> UserQueryDoc {
        UserQueryDoc {
            stream: g.source.clone(),
            filter: g
                .filter
                .as_ref()
                .map(|f| f.condition.clone().with_origin(Origin::User)),
            map: g
                .map
                .as_ref()
                .map(|m| m.attributes().iter().cloned().collect()),
            aggregation: g.window.as_ref().map(|w| AggregationSpec {
                window_type: w.window_type(),
                size: w.size(),
                step: w.step(),
                aggs: w.aggs().iter().map(|(a, f)| (a.clone(), *f)).collect(),
            }),
        }
    }

    pub fn from_xml(doc: &str) -> Result<UserQueryDoc, PolicyError> {
        with_document(doc, UserQueryDoc::from_node)
    }

    fn from_node(root: Node) -> Result<UserQueryDoc, PolicyError> {
        expect_root(root, "UserQuery")?;
        let stream_node = child(root, "Stream").ok_or_else(|| malformed("missing <Stream>"))?;
        let stream = required_attr(stream_node, "name")?.trim().to_string();

        let filter = match child(root, "Filter") {
            Some(f) => {
                let cond = child(f, "FilterCondition")
                    .ok_or_else(|| malformed("missing <FilterCondition>"))?;
                Some(parse_predicate(&text(cond))?)
            }
            None => None,
        };

        let map = match child(root, "Map") {
            Some(m) => {
                let attrs: Vec<String> = children(m, "Attribute").map(text).collect();
                if attrs.is_empty() || attrs.iter().any(String::is_empty) {
                    return Err(malformed("<Map> needs non-empty <Attribute> elements"));
                }
                Some(attrs)
            }
            None => None,
        };

        let aggregation = match child(root, "Aggregation") {
            Some(a) => {
                let field = |name: &str| {
                    child(a, name)
                        .map(text)
                        .ok_or_else(|| malformed(format!("<Aggregation> lacks <{name}>")))
                };
                let ty_text = field("WindowType")?;
                let window_type = WindowType::parse(&ty_text)
                    .ok_or_else(|| malformed(format!("unknown window type `{ty_text}`")))?;
                let size = parse_window_number("size", &field("WindowSize")?)?;
                let step = parse_window_number("step", &field("WindowStep")?)?;
                let aggs = children(a, "Attribute")
                    .map(|n| parse_agg_call(&text(n)))
                    .collect::<Result<Vec<_>, _>>()?;
                if aggs.is_empty() {
                    return Err(malformed("<Aggregation> needs at least one <Attribute>"));
                }
                Some(AggregationSpec {
                    window_type,
                    size,
                    step,
                    aggs,
                })
            }
            None => None,
        };

        Ok(UserQueryDoc {
            stream,
            filter,
            map,
            aggregation,
        })
    }

    fn write_xml(&self, out: &mut String, indent: &str) {
        let _ = writeln!(out, "{indent}<UserQuery>");
        let _ = writeln!(
            out,
            "{indent}  <Stream name=\"{}\" />",
            escape(&self.stream)
        );
        if let Some(f) = &self.filter {
            let _ = writeln!(
                out,
                "{indent}  <Filter>\n{indent}    <FilterCondition>{}</FilterCondition>\n{indent}  </Filter>",
                escape(&f.to_string())
            );
        }
        if let Some(m) = &self.map {
            let _ = writeln!(out, "{indent}  <Map>");
            for a in m {
                let _ = writeln!(out, "{indent}    <Attribute>{}</Attribute>", escape(a));
            }
            let _ = writeln!(out, "{indent}  </Map>");
        }
        if let Some(a) = &self.aggregation {
            let _ = writeln!(out, "{indent}  <Aggregation>");
            let _ = writeln!(
                out,
                "{indent}    <WindowType>{}</WindowType>",
                a.window_type
            );
            let _ = writeln!(out, "{indent}    <WindowSize>{}</WindowSize>", a.size);
            let _ = writeln!(out, "{indent}    <WindowStep>{}</WindowStep>", a.step);
            for (attr, func) in &a.aggs {
                let _ = writeln!(
                    out,
                    "{indent}    <Attribute>{func}({})</Attribute>",
                    escape(attr)
                );
            }
            let _ = writeln!(out, "{indent}  </Aggregation>");
        }
        let _ = writeln!(out, "{indent}</UserQuery>");
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        self.write_xml(&mut out, "");
        out
    }

    /// One-line form with attribute names lowercased, since resolution
    /// against the schema is case-insensitive.
    pub fn canonical_text(&self) -> String {
        let mut out = self.stream.clone();
        if let Some(f) = &self.filter {
            let lowered = f.clone().map_leaves(&mut |mut s| {
                s.attribute = s.attribute.to_ascii_lowercase();
                s
            });
            let _ = write!(out, " | FILTER {lowered}");
        }
        if let Some(m) = &self.map {
            let mut attrs: Vec<String> = m.iter().map(|a| a.to_ascii_lowercase()).collect();
            attrs.sort();
            attrs.dedup();
            let _ = write!(out, " | MAP {}", attrs.join(","));
        }
        if let Some(a) = &self.aggregation {
            let mut aggs: Vec<String> = a
                .aggs
                .iter()
                .map(|(attr, func)| format!("{func}({})", attr.to_ascii_lowercase()))
                .collect();
            aggs.sort();
            aggs.dedup();
            let _ = write!(
                out,
                " | WINDOW {} {}/{} {}",
                a.window_type,
                a.size,
                a.step,
                aggs.join(",")
            );
        }
        out
    }

    /// Resolves names against `schema` and builds the user pipeline. Filter
    /// leaves are tagged as user expressions.
    pub fn to_graph(&self, schema: &Schema) -> Result<QueryGraph, PolicyError> {
        if self.stream != schema.stream_name() {
            return Err(PolicyError::Graph(GraphError::StreamMismatch {
                expected: schema.stream_name().to_string(),
                found: self.stream.clone(),
            }));
        }
        let resolve = |name: &str| {
            schema
                .resolve(name)
                .map(|f| f.name.clone())
                .ok_or_else(|| PolicyError::UnknownAttribute(name.to_string()))
        };
        let mut g = QueryGraph::identity(schema.stream_name());
        if let Some(f) = &self.filter {
            g = g.with_filter(resolve_predicate(f, schema)?.with_origin(Origin::User));
        }
        if let Some(m) = &self.map {
            let attrs = m
                .iter()
                .map(|a| resolve(a))
                .collect::<Result<Vec<_>, _>>()?;
            g = g.with_map(MapOp::new(attrs)?);
        }
        if let Some(a) = &self.aggregation {
            let aggs = a
                .aggs
                .iter()
                .map(|(attr, func)| Ok((resolve(attr)?, *func)))
                .collect::<Result<Vec<_>, PolicyError>>()?;
            g = g.with_window(WindowAggOp::new(a.window_type, a.size, a.step, aggs)?);
        }
        validate_graph(&g, schema)?;
        Ok(g)
    }
}

/// Parses a user-query document and compiles it against `schema`.
pub fn parse_user_query(doc: &str, schema: &Schema) -> Result<QueryGraph, PolicyError> {
    UserQueryDoc::from_xml(doc)?.to_graph(schema)
}
