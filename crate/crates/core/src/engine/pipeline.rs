//! Compiled, incremental execution of one query graph.

use std::cmp::Ordering;

use crate::predicate::{CmpOp, Decimal, Literal, Predicate};
use crate::querygraph::{
    stage_schemas, AggFunc, FieldType, GraphError, QueryGraph, Schema, Tuple, Value, WindowAggOp,
    WindowType,
};

enum Cond {
    Leaf {
        idx: usize,
        op: CmpOp,
        literal: Literal,
        lf: f64,
    },
    Not(Box<Cond>),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
}

impl Cond {
    fn compile(p: &Predicate, schema: &Schema) -> Result<Cond, GraphError> {
        Ok(match p {
            Predicate::Leaf(s) => Cond::Leaf {
                idx: schema
                    .index_of(&s.attribute)
                    .ok_or_else(|| GraphError::UnknownAttribute(s.attribute.clone()))?,
                op: s.op,
                literal: s.literal.clone(),
                lf: s.literal.as_number().map_or(f64::NAN, Decimal::to_f64),
            },
            Predicate::Not(a) => Cond::Not(Box::new(Cond::compile(a, schema)?)),
            Predicate::And(a, b) => Cond::And(
                Box::new(Cond::compile(a, schema)?),
                Box::new(Cond::compile(b, schema)?),
            ),
            Predicate::Or(a, b) => Cond::Or(
                Box::new(Cond::compile(a, schema)?),
                Box::new(Cond::compile(b, schema)?),
            ),
        })
    }

    fn eval(&self, t: &Tuple) -> bool {
        match self {
            Cond::Leaf {
                idx,
                op,
                literal,
                lf,
            } => t.0[*idx].satisfies_with(*op, literal, *lf),
            Cond::Not(a) => !a.eval(t),
            Cond::And(a, b) => a.eval(t) && b.eval(t),
            Cond::Or(a, b) => a.eval(t) || b.eval(t),
        }
    }
}

fn cmp_values(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Int(x) | Value::Timestamp(x), Value::Int(y) | Value::Timestamp(y)) => x.cmp(y),
        _ => a
            .as_f64()
            .unwrap_or(f64::NAN)
            .total_cmp(&b.as_f64().unwrap_or(f64::NAN)),
    }
}

/// Running state of one aggregate function over one window.
#[derive(Debug, Clone)]
enum Acc {
    Avg { sum: f64, n: u64 },
    SumInt(i64),
    SumDouble(f64),
    Max(Option<Value>),
    Min(Option<Value>),
    Count(i64),
    Last(Option<Value>),
    First(Option<Value>),
}

impl Acc {
    fn new(func: AggFunc, ty: FieldType) -> Acc {
        match func {
            AggFunc::Avg => Acc::Avg { sum: 0.0, n: 0 },
            AggFunc::Sum if ty == FieldType::Double => Acc::SumDouble(0.0),
            AggFunc::Sum => Acc::SumInt(0),
            AggFunc::Max => Acc::Max(None),
            AggFunc::Min => Acc::Min(None),
            AggFunc::Count => Acc::Count(0),
            AggFunc::LastVal => Acc::Last(None),
            AggFunc::FirstVal => Acc::First(None),
        }
    }

    fn add(&mut self, v: &Value) {
        match self {
            Acc::Avg { sum, n } => {
                *sum += v.as_f64().unwrap_or(0.0);
                *n += 1;
            }
            Acc::SumInt(s) => {
                if let Value::Int(x) = v {
                    *s = s.wrapping_add(*x);
                }
            }
            Acc::SumDouble(s) => *s += v.as_f64().unwrap_or(0.0),
            Acc::Max(m) => {
                if m.as_ref()
                    .map_or(true, |cur| cmp_values(v, cur) == Ordering::Greater)
                {
                    *m = Some(v.clone());
                }
            }
            Acc::Min(m) => {
                if m.as_ref()
                    .map_or(true, |cur| cmp_values(v, cur) == Ordering::Less)
                {
                    *m = Some(v.clone());
                }
            }
            Acc::Count(c) => *c += 1,
            Acc::Last(l) => *l = Some(v.clone()),
            Acc::First(f) => {
                if f.is_none() {
                    *f = Some(v.clone());
                }
            }
        }
    }

    fn finish(&self) -> Value {
        match self {
            Acc::Avg { sum, n } => Value::Double(if *n == 0 { f64::NAN } else { sum / *n as f64 }),
            Acc::SumInt(s) => Value::Int(*s),
            Acc::SumDouble(s) => Value::Double(*s),
            Acc::Count(c) => Value::Int(*c),
            Acc::Max(v) | Acc::Min(v) | Acc::Last(v) | Acc::First(v) => {
                v.clone().expect("windows hold at least one tuple")
            }
        }
    }
}

/// Aggregates of a window operator resolved against its input schema.
#[derive(Clone)]
struct AggPlan {
    cols: Vec<(usize, AggFunc, FieldType)>,
}

impl AggPlan {
    fn new(op: &WindowAggOp, input: &Schema) -> Result<AggPlan, GraphError> {
        let mut cols = Vec::with_capacity(op.aggs().len());
        for (attr, func) in op.aggs() {
            let idx = input
                .index_of(attr)
                .ok_or_else(|| GraphError::UnknownAttribute(attr.clone()))?;
            cols.push((idx, *func, input.fields()[idx].ty));
        }
        Ok(AggPlan { cols })
    }

    fn fresh(&self) -> Vec<Acc> {
        self.cols
            .iter()
            .map(|(_, f, ty)| Acc::new(*f, *ty))
            .collect()
    }

    fn add(&self, accs: &mut [Acc], t: &Tuple) {
        for (acc, (idx, _, _)) in accs.iter_mut().zip(&self.cols) {
            acc.add(&t.0[*idx]);
        }
    }
}

fn finish(accs: &[Acc]) -> Tuple {
    Tuple(accs.iter().map(Acc::finish).collect())
}

/// Applies `op` to one complete window of tuples (schema `input`).
pub fn execute_window(
    op: &WindowAggOp,
    input: &Schema,
    window: &[Tuple],
) -> Result<Tuple, GraphError> {
    if window.is_empty() {
        return Err(GraphError::InvalidWindow("empty window".into()));
    }
    let plan = AggPlan::new(op, input)?;
    let mut accs = plan.fresh();
    for t in window {
        plan.add(&mut accs, t);
    }
    Ok(finish(&accs))
}

struct OpenWindow {
    start: i64,
    filled: u64,
    accs: Vec<Acc>,
}

enum Clock {
    Tuples {
        size: u64,
        step: u64,
        seen: u64,
    },
    /// Milliseconds; windows are aligned to the first tuple's timestamp.
    Time {
        size: i64,
        step: i64,
        ts_idx: usize,
        next_start: Option<i64>,
    },
}

struct WindowState {
    plan: AggPlan,
    clock: Clock,
    open: Vec<OpenWindow>,
}

const MS_PER_TIME_UNIT: i64 = 1000;

impl WindowState {
    fn new(op: &WindowAggOp, input: &Schema) -> Result<WindowState, GraphError> {
        let clock = match op.window_type() {
            WindowType::Tuple => Clock::Tuples {
                size: op.size() as u64,
                step: op.step() as u64,
                seen: 0,
            },
            WindowType::Time => Clock::Time {
                size: op.size() as i64 * MS_PER_TIME_UNIT,
                step: op.step() as i64 * MS_PER_TIME_UNIT,
                ts_idx: input
                    .timestamp_field()
                    .ok_or(GraphError::MissingTimestamp)?,
                next_start: None,
            },
        };
        Ok(WindowState {
            plan: AggPlan::new(op, input)?,
            clock,
            open: Vec::new(),
        })
    }

    fn push(&mut self, t: &Tuple, out: &mut Vec<Tuple>) {
        match &mut self.clock {
            Clock::Tuples { size, step, seen } => {
                if *seen % *step == 0 {
                    self.open.push(OpenWindow {
                        start: *seen as i64,
                        filled: 0,
                        accs: self.plan.fresh(),
                    });
                }
                *seen += 1;
                for w in &mut self.open {
                    self.plan.add(&mut w.accs, t);
                    w.filled += 1;
                }
                let size = *size;
                while self.open.first().is_some_and(|w| w.filled == size) {
                    out.push(finish(&self.open.remove(0).accs));
                }
            }
            Clock::Time {
                size,
                step,
                ts_idx,
                next_start,
            } => {
                let ts = match &t.0[*ts_idx] {
                    Value::Timestamp(v) => *v,
                    _ => return,
                };
                let (size, step) = (*size, *step);
                while self.open.first().is_some_and(|w| w.start + size <= ts) {
                    out.push(finish(&self.open.remove(0).accs));
                }
                let next = next_start.get_or_insert(ts);
                if ts - size >= *next {
                    // Skip windows that would end before this tuple; they stay empty.
                    *next += ((ts - size - *next) / step + 1) * step;
                }
                while *next <= ts {
                    self.open.push(OpenWindow {
                        start: *next,
                        filled: 0,
                        accs: self.plan.fresh(),
                    });
                    *next += step;
                }
                for w in &mut self.open {
                    if w.start <= ts && ts < w.start + size {
                        self.plan.add(&mut w.accs, t);
                        w.filled += 1;
                    }
                }
            }
        }
        debug_assert!(self.open.len() <= self.max_open());
    }

    fn max_open(&self) -> usize {
        match self.clock {
            Clock::Tuples { size, step, .. } => size.div_ceil(step) as usize,
            Clock::Time { size, step, .. } => (size as u64).div_ceil(step as u64) as usize,
        }
    }
}

/// A graph compiled against its source schema, with its window buffer.
pub(crate) struct Pipeline {
    filter: Option<Cond>,
    projection: Option<Vec<usize>>,
    window: Option<WindowState>,
    output: Schema,
}

impl Pipeline {
    pub fn compile(g: &QueryGraph, source: &Schema) -> Result<Pipeline, GraphError> {
        let stages = stage_schemas(g, source)?;
        let mut stage = 0;
        let filter = match &g.filter {
            Some(f) => {
                stage += 1;
                Some(Cond::compile(&f.condition, &stages[stage - 1])?)
            }
            None => None,
        };
        let projection = match &g.map {
            Some(_) => {
                let input = &stages[stage];
                stage += 1;
                let out = &stages[stage];
                Some(
                    out.fields()
                        .iter()
                        .map(|f| {
                            input
                                .index_of(&f.name)
                                .expect("map output is a subset of its input")
                        })
                        .collect(),
                )
            }
            None => None,
        };
        let window = match &g.window {
            Some(w) => Some(WindowState::new(w, &stages[stage])?),
            None => None,
        };
        Ok(Pipeline {
            filter,
            projection,
            window,
            output: stages.last().expect("non-empty").clone(),
        })
    }

    pub fn output_schema(&self) -> &Schema {
        &self.output
    }

    /// Feeds one source tuple; appends any outputs to `out`.
    pub fn push(&mut self, t: &Tuple, out: &mut Vec<Tuple>) {
        if let Some(f) = &self.filter {
            if !f.eval(t) {
                return;
            }
        }
        let projected;
        let t = match &self.projection {
            Some(idx) => {
                projected = Tuple(idx.iter().map(|&i| t.0[i].clone()).collect());
                &projected
            }
            None => t,
        };
        match &mut self.window {
            Some(w) => w.push(t, out),
            None => out.push(t.clone()),
        }
    }

    #[cfg(test)]
    pub fn open_windows(&self) -> usize {
        self.window.as_ref().map_or(0, |w| w.open.len())
    }
}

/// Runs `g` over a finite input from a fresh state.
pub fn execute_graph(
    g: &QueryGraph,
    source: &Schema,
    input: &[Tuple],
) -> Result<Vec<Tuple>, GraphError> {
    let mut p = Pipeline::compile(g, source)?;
    let mut out = Vec::new();
    for t in input {
        source.check(t)?;
        p.push(t, &mut out);
    }
    Ok(out)
}
