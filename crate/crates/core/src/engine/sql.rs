//! StreamSQL-style rendering of a query graph.

use std::fmt::Write as _;

use crate::predicate::{CmpOp, Literal, Predicate};
use crate::querygraph::{stage_schemas, GraphError, QueryGraph, Schema, WindowType};

fn sql_literal(l: &Literal) -> String {
    match l {
        Literal::Number(d) => d.to_string(),
        Literal::Text(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

fn sql_condition(p: &Predicate, out: &mut String) {
    let nested = |p: &Predicate, out: &mut String| {
        if matches!(p, Predicate::Leaf(_)) {
            sql_condition(p, out);
        } else {
            out.push('(');
            sql_condition(p, out);
            out.push(')');
        }
    };
    match p {
        Predicate::Leaf(s) => {
            let op = match s.op {
                CmpOp::Ne => "<>",
                op => op.symbol(),
            };
            let _ = write!(out, "{} {op} {}", s.attribute, sql_literal(&s.literal));
        }
        Predicate::Not(a) => {
            out.push_str("NOT ");
            nested(a, out);
        }
        Predicate::And(a, b) | Predicate::Or(a, b) => {
            let word = if matches!(p, Predicate::And(..)) {
                " AND "
            } else {
                " OR "
            };
            for (i, side) in [a, b].into_iter().enumerate() {
                if i > 0 {
                    out.push_str(word);
                }
                // Same-operator chains and NOT stay flat.
                let same = std::mem::discriminant(side.as_ref()) == std::mem::discriminant(p);
                if same || matches!(side.as_ref(), Predicate::Not(_)) {
                    sql_condition(side, out);
                } else {
                    nested(side, out);
                }
            }
        }
    }
}

/// Renders `g` as a script: the input declaration, one statement per
/// operator feeding `internal_N` streams, and a final `output` stream.
pub fn render_streamsql(g: &QueryGraph, schema: &Schema) -> Result<String, GraphError> {
    let stages = stage_schemas(g, schema)?;
    let mut s = String::new();
    let _ = writeln!(s, "CREATE INPUT STREAM {} (", schema.stream_name());
    let cols: Vec<String> = schema
        .fields()
        .iter()
        .map(|f| format!("{} {}", f.name, f.ty))
        .collect();
    let _ = writeln!(s, "{} );", cols.join(", "));

    let ops = g.operators();
    let mut input = schema.stream_name().to_string();
    if ops.is_empty() {
        let _ = write!(
            s,
            "\nCREATE OUTPUT STREAM output;\nSELECT * FROM {input} INTO output;\n"
        );
        return Ok(s);
    }
    for (i, _) in ops.iter().enumerate() {
        let last = i + 1 == ops.len();
        let target = if last {
            "output".to_string()
        } else {
            format!("internal_{i}")
        };
        s.push('\n');
        if last {
            let _ = writeln!(s, "CREATE OUTPUT STREAM {target};");
        } else {
            let _ = writeln!(s, "CREATE STREAM {target};");
        }
        let stage_in = &stages[i];
        match &ops[i] {
            crate::querygraph::Operator::Filter(f) => {
                let mut cond = String::new();
                sql_condition(&f.condition, &mut cond);
                let _ = writeln!(s, "SELECT * FROM {input} WHERE {cond} INTO {target};");
            }
            crate::querygraph::Operator::Map(_) => {
                let cols: Vec<String> = stages[i + 1]
                    .fields()
                    .iter()
                    .map(|f| format!("{input}.{}", f.name))
                    .collect();
                let _ = writeln!(s, "SELECT {} FROM {input} INTO {target};", cols.join(", "));
            }
            crate::querygraph::Operator::Window(w) => {
                let (unit, suffix) = match w.window_type() {
                    WindowType::Tuple => ("TUPLES", "tuple"),
                    WindowType::Time => ("SECONDS", "sec"),
                };
                let name = format!("_{}{suffix}", w.size());
                let _ = writeln!(
                    s,
                    "CREATE WINDOW {name}( SIZE {} ADVANCE {} {unit});",
                    w.size(),
                    w.step()
                );
                debug_assert!(w.aggs().keys().all(|a| stage_in.field(a).is_some()));
                let cols: Vec<String> = w
                    .aggs()
                    .iter()
                    .map(|(a, func)| format!("{func}({a}) AS {}", func.output_name(a)))
                    .collect();
                let _ = writeln!(
                    s,
                    "SELECT {} FROM {input}[{name}] INTO {target};",
                    cols.join(", ")
                );
            }
        }
        input = target;
    }
    Ok(s)
}
