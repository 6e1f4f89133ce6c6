//! Value sets denoted by simple expressions over a single attribute.
//!
//! Numbers range over the (dense) decimal line, strings over all strings.
//! Ordering comparisons only ever admit numbers.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::decimal::Decimal;
use super::expr::{CmpOp, Literal, SimpleExpression};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bound {
    Unbounded,
    Open(Decimal),
    Closed(Decimal),
}

impl Bound {
    fn value(self) -> Option<Decimal> {
        match self {
            Bound::Unbounded => None,
            Bound::Open(v) | Bound::Closed(v) => Some(v),
        }
    }
}

/// Orders lower bounds from loosest to tightest.
fn cmp_lower(a: Bound, b: Bound) -> Ordering {
    match (a, b) {
        (Bound::Unbounded, Bound::Unbounded) => Ordering::Equal,
        (Bound::Unbounded, _) => Ordering::Less,
        (_, Bound::Unbounded) => Ordering::Greater,
        (x, y) => {
            let (vx, vy) = (x.value().unwrap(), y.value().unwrap());
            vx.cmp(&vy).then_with(|| match (x, y) {
                (Bound::Open(_), Bound::Closed(_)) => Ordering::Greater,
                (Bound::Closed(_), Bound::Open(_)) => Ordering::Less,
                _ => Ordering::Equal,
            })
        }
    }
}

/// Orders upper bounds from tightest to loosest.
fn cmp_upper(a: Bound, b: Bound) -> Ordering {
    match (a, b) {
        (Bound::Unbounded, Bound::Unbounded) => Ordering::Equal,
        (Bound::Unbounded, _) => Ordering::Greater,
        (_, Bound::Unbounded) => Ordering::Less,
        (x, y) => {
            let (vx, vy) = (x.value().unwrap(), y.value().unwrap());
            vx.cmp(&vy).then_with(|| match (x, y) {
                (Bound::Open(_), Bound::Closed(_)) => Ordering::Less,
                (Bound::Closed(_), Bound::Open(_)) => Ordering::Greater,
                _ => Ordering::Equal,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Interval {
    pub lo: Bound,
    pub hi: Bound,
}

impl Interval {
    pub const ALL: Interval = Interval {
        lo: Bound::Unbounded,
        hi: Bound::Unbounded,
    };

    pub fn intersect(self, other: Interval) -> Interval {
        Interval {
            lo: if cmp_lower(self.lo, other.lo) == Ordering::Less {
                other.lo
            } else {
                self.lo
            },
            hi: if cmp_upper(self.hi, other.hi) == Ordering::Greater {
                other.hi
            } else {
                self.hi
            },
        }
    }

    pub fn is_empty(self) -> bool {
        match (self.lo, self.hi) {
            (Bound::Unbounded, _) | (_, Bound::Unbounded) => false,
            (Bound::Closed(a), Bound::Closed(b)) => a > b,
            (lo, hi) => lo.value().unwrap() >= hi.value().unwrap(),
        }
    }

    pub fn point(self) -> Option<Decimal> {
        match (self.lo, self.hi) {
            (Bound::Closed(a), Bound::Closed(b)) if a == b => Some(a),
            _ => None,
        }
    }

    pub fn contains(self, v: Decimal) -> bool {
        let above = match self.lo {
            Bound::Unbounded => true,
            Bound::Open(l) => v > l,
            Bound::Closed(l) => v >= l,
        };
        let below = match self.hi {
            Bound::Unbounded => true,
            Bound::Open(h) => v < h,
            Bound::Closed(h) => v <= h,
        };
        above && below
    }

    /// `self ⊆ other`, for non-empty `self`.
    pub fn within(self, other: Interval) -> bool {
        cmp_lower(other.lo, self.lo) != Ordering::Greater
            && cmp_upper(self.hi, other.hi) != Ordering::Greater
    }
}

/// The set of numbers admitted by one numeric comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NumRegion {
    Interval(Interval),
    AllBut(Decimal),
}

impl NumRegion {
    pub fn of(op: CmpOp, v: Decimal) -> NumRegion {
        let interval = |lo, hi| NumRegion::Interval(Interval { lo, hi });
        match op {
            CmpOp::Lt => interval(Bound::Unbounded, Bound::Open(v)),
            CmpOp::Le => interval(Bound::Unbounded, Bound::Closed(v)),
            CmpOp::Gt => interval(Bound::Open(v), Bound::Unbounded),
            CmpOp::Ge => interval(Bound::Closed(v), Bound::Unbounded),
            CmpOp::Eq => interval(Bound::Closed(v), Bound::Closed(v)),
            CmpOp::Ne => NumRegion::AllBut(v),
        }
    }

    pub fn intersects(self, other: NumRegion) -> bool {
        match (self, other) {
            (NumRegion::Interval(a), NumRegion::Interval(b)) => !a.intersect(b).is_empty(),
            (NumRegion::Interval(a), NumRegion::AllBut(v))
            | (NumRegion::AllBut(v), NumRegion::Interval(a)) => a.point() != Some(v),
            (NumRegion::AllBut(_), NumRegion::AllBut(_)) => true,
        }
    }

    /// `self ⊆ other`.
    pub fn within(self, other: NumRegion) -> bool {
        match (self, other) {
            (NumRegion::Interval(a), NumRegion::Interval(b)) => a.within(b),
            (NumRegion::Interval(a), NumRegion::AllBut(v)) => !a.contains(v),
            (NumRegion::AllBut(_), NumRegion::Interval(b)) => b == Interval::ALL,
            (NumRegion::AllBut(v), NumRegion::AllBut(w)) => v == w,
        }
    }
}

/// Accumulated constraints on one attribute within a conjunction.
#[derive(Debug, Clone)]
struct AttributeConstraints {
    interval: Interval,
    excluded: Vec<Decimal>,
    /// Some comparison only numbers can satisfy.
    numeric_forced: bool,
    text_eq: Vec<String>,
    text_ne: Vec<String>,
}

impl Default for AttributeConstraints {
    fn default() -> Self {
        AttributeConstraints {
            interval: Interval::ALL,
            excluded: Vec::new(),
            numeric_forced: false,
            text_eq: Vec::new(),
            text_ne: Vec::new(),
        }
    }
}

impl AttributeConstraints {
    fn add(&mut self, s: &SimpleExpression) {
        match &s.literal {
            Literal::Number(v) => {
                match NumRegion::of(s.op, *v) {
                    NumRegion::Interval(i) => self.interval = self.interval.intersect(i),
                    NumRegion::AllBut(v) => self.excluded.push(v),
                }
                if s.op != CmpOp::Ne {
                    self.numeric_forced = true;
                }
            }
            Literal::Text(t) => match s.op {
                CmpOp::Eq => self.text_eq.push(t.clone()),
                _ => self.text_ne.push(t.clone()),
            },
        }
    }

    fn witness(&self) -> Option<Literal> {
        if self.numeric_forced && !self.text_eq.is_empty() {
            return None;
        }
        if !self.text_eq.is_empty() {
            return self.text_witness().map(Literal::Text);
        }
        self.numeric_witness().map(Literal::Number)
    }

    fn text_witness(&self) -> Option<String> {
        let first = &self.text_eq[0];
        if self.text_eq.iter().any(|t| t != first) || self.text_ne.contains(first) {
            return None;
        }
        Some(first.clone())
    }

    fn numeric_witness(&self) -> Option<Decimal> {
        let iv = self.interval;
        if iv.is_empty() {
            return None;
        }
        if let Some(p) = iv.point() {
            return (!self.excluded.contains(&p)).then_some(p);
        }
        let one = Decimal::ONE;
        let pick = match (iv.lo.value(), iv.hi.value()) {
            (None, None) => {
                let mut c = Decimal::ZERO;
                if self.excluded.contains(&c) {
                    c = self.excluded.iter().max().unwrap().checked_add(one)?;
                }
                c
            }
            (Some(lo), None) => {
                let top = self
                    .excluded
                    .iter()
                    .copied()
                    .filter(|e| *e > lo)
                    .max()
                    .unwrap_or(lo);
                top.checked_add(one)?
            }
            (None, Some(hi)) => {
                let bottom = self
                    .excluded
                    .iter()
                    .copied()
                    .filter(|e| *e < hi)
                    .min()
                    .unwrap_or(hi);
                bottom.checked_sub(one)?
            }
            (Some(lo), Some(hi)) => {
                // Midpoint between the lower bound and the next excluded point
                // (or the upper bound) lies strictly inside and is not excluded.
                let next = self
                    .excluded
                    .iter()
                    .copied()
                    .filter(|e| *e > lo && *e < hi)
                    .min()
                    .unwrap_or(hi);
                lo.midpoint(next)?
            }
        };
        debug_assert!(iv.contains(pick) && !self.excluded.contains(&pick));
        Some(pick)
    }
}

/// A satisfying assignment for a conjunction of simple expressions, if one exists.
pub(crate) fn conjunct_witness(conjunct: &[SimpleExpression]) -> Option<BTreeMap<String, Literal>> {
    let mut per_attr: BTreeMap<&str, AttributeConstraints> = BTreeMap::new();
    for s in conjunct {
        per_attr.entry(&s.attribute).or_default().add(s);
    }
    let mut out = BTreeMap::new();
    for (attr, c) in per_attr {
        out.insert(attr.to_string(), c.witness()?);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: i64) -> Decimal {
        Decimal::from_i64(v)
    }

    #[test]
    fn region_intersections() {
        let lt4 = NumRegion::of(CmpOp::Lt, d(4));
        let gt5 = NumRegion::of(CmpOp::Gt, d(5));
        assert!(!lt4.intersects(gt5));
        let ge7 = NumRegion::of(CmpOp::Ge, d(7));
        let le7 = NumRegion::of(CmpOp::Le, d(7));
        assert!(ge7.intersects(le7));
        let ne7 = NumRegion::of(CmpOp::Ne, d(7));
        let eq7 = NumRegion::of(CmpOp::Eq, d(7));
        assert!(!ne7.intersects(eq7));
        assert!(ne7.intersects(ge7));
    }

    #[test]
    fn region_containment() {
        let gt8 = NumRegion::of(CmpOp::Gt, d(8));
        let gt5 = NumRegion::of(CmpOp::Gt, d(5));
        assert!(gt8.within(gt5));
        assert!(!gt5.within(gt8));
        let ge5 = NumRegion::of(CmpOp::Ge, d(5));
        assert!(gt5.within(ge5));
        assert!(!ge5.within(gt5));
        let ne3 = NumRegion::of(CmpOp::Ne, d(3));
        assert!(gt5.within(ne3));
        assert!(!ne3.within(gt5));
    }

    #[test]
    fn witnesses() {
        let w = conjunct_witness(&[SimpleExpression::new("a", CmpOp::Gt, 5)]).unwrap();
        assert_eq!(w["a"], Literal::from(6));
        let w = conjunct_witness(&[
            SimpleExpression::new("a", CmpOp::Gt, 20),
            SimpleExpression::new("a", CmpOp::Lt, 30),
        ])
        .unwrap();
        assert_eq!(w["a"], Literal::from(25));
        assert!(conjunct_witness(&[
            SimpleExpression::new("a", CmpOp::Ge, 2),
            SimpleExpression::new("a", CmpOp::Le, 2),
            SimpleExpression::new("a", CmpOp::Ne, 2),
        ])
        .is_none());
        let w = conjunct_witness(&[
            SimpleExpression::new("a", CmpOp::Ne, "x"),
            SimpleExpression::new("a", CmpOp::Ne, 0),
        ])
        .unwrap();
        assert_eq!(w["a"], Literal::from(1));
        assert!(conjunct_witness(&[
            SimpleExpression::new("a", CmpOp::Eq, "x"),
            SimpleExpression::new("a", CmpOp::Lt, 3),
        ])
        .is_none());
    }
}
