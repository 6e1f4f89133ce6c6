use std::collections::BTreeSet;
use std::fmt;
use std::hash::{Hash, Hasher};

use super::decimal::Decimal;

/// Comparison operator of a simple expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [
        CmpOp::Lt,
        CmpOp::Gt,
        CmpOp::Le,
        CmpOp::Ge,
        CmpOp::Eq,
        CmpOp::Ne,
    ];

    /// The operator `op'` such that `NOT (x op v)` is `x op' v`.
    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
        }
    }

    pub fn is_ordering(self) -> bool {
        matches!(self, CmpOp::Lt | CmpOp::Gt | CmpOp::Le | CmpOp::Ge)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }

    /// Applies the operator to an ordering of `lhs` relative to `rhs`.
    pub fn test(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Lt => ord == Less,
            CmpOp::Gt => ord == Greater,
            CmpOp::Le => ord != Greater,
            CmpOp::Ge => ord != Less,
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
        }
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Right-hand side of a simple expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Literal {
    Number(Decimal),
    Text(String),
}

impl Literal {
    pub fn is_text(&self) -> bool {
        matches!(self, Literal::Text(_))
    }

    pub fn as_number(&self) -> Option<Decimal> {
        match self {
            Literal::Number(d) => Some(*d),
            Literal::Text(_) => None,
        }
    }
}

impl From<i64> for Literal {
    fn from(v: i64) -> Self {
        Literal::Number(Decimal::from_i64(v))
    }
}

impl From<Decimal> for Literal {
    fn from(v: Decimal) -> Self {
        Literal::Number(v)
    }
}

impl From<&str> for Literal {
    fn from(v: &str) -> Self {
        Literal::Text(v.to_string())
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(d) => write!(f, "{d}"),
            Literal::Text(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

/// Which side of a merge a simple expression came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Origin {
    #[default]
    Policy,
    User,
}

/// `attribute op literal`.
///
/// Equality and hashing ignore `origin`: two expressions that test the same
/// thing are the same expression regardless of who wrote them.
#[derive(Debug, Clone)]
pub struct SimpleExpression {
    pub attribute: String,
    pub op: CmpOp,
    pub literal: Literal,
    pub origin: Origin,
}

impl PartialEq for SimpleExpression {
    fn eq(&self, other: &Self) -> bool {
        self.attribute == other.attribute && self.op == other.op && self.literal == other.literal
    }
}

impl Eq for SimpleExpression {}

impl Hash for SimpleExpression {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.attribute.hash(state);
        self.op.hash(state);
        self.literal.hash(state);
    }
}

impl SimpleExpression {
    pub fn new(attribute: impl Into<String>, op: CmpOp, literal: impl Into<Literal>) -> Self {
        SimpleExpression {
            attribute: attribute.into(),
            op,
            literal: literal.into(),
            origin: Origin::Policy,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    /// The same expression with its operator replaced by its complement.
    pub fn negated(&self) -> SimpleExpression {
        SimpleExpression {
            op: self.op.negate(),
            ..self.clone()
        }
    }

    /// Truth value when the attribute takes `value`.
    ///
    /// Values of the other literal kind never compare equal or ordered, so
    /// only `!=` holds across kinds.
    pub fn holds(&self, value: &Literal) -> bool {
        match (value, &self.literal) {
            (Literal::Number(v), Literal::Number(l)) => self.op.test(v.cmp(l)),
            (Literal::Text(v), Literal::Text(l)) => match self.op {
                CmpOp::Eq => v == l,
                CmpOp::Ne => v != l,
                _ => false,
            },
            _ => self.op == CmpOp::Ne,
        }
    }
}

impl fmt::Display for SimpleExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.attribute, self.op, self.literal)
    }
}

/// A boolean combination of simple expressions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    Leaf(SimpleExpression),
    Not(Box<Predicate>),
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
}

impl From<SimpleExpression> for Predicate {
    fn from(s: SimpleExpression) -> Self {
        Predicate::Leaf(s)
    }
}

impl Predicate {
    pub fn leaf(attribute: impl Into<String>, op: CmpOp, literal: impl Into<Literal>) -> Self {
        Predicate::Leaf(SimpleExpression::new(attribute, op, literal))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(p: Predicate) -> Self {
        Predicate::Not(Box::new(p))
    }

    pub fn and(a: Predicate, b: Predicate) -> Self {
        Predicate::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Predicate, b: Predicate) -> Self {
        Predicate::Or(Box::new(a), Box::new(b))
    }

    /// Left-folds `items` with AND. `None` for an empty list.
    pub fn all(items: impl IntoIterator<Item = Predicate>) -> Option<Predicate> {
        items.into_iter().reduce(Predicate::and)
    }

    /// Left-folds `items` with OR. `None` for an empty list.
    pub fn any(items: impl IntoIterator<Item = Predicate>) -> Option<Predicate> {
        items.into_iter().reduce(Predicate::or)
    }

    pub fn leaves(&self) -> Vec<&SimpleExpression> {
        let mut out = Vec::new();
        self.visit_leaves(&mut |s| out.push(s));
        out
    }

    fn visit_leaves<'a>(&'a self, f: &mut impl FnMut(&'a SimpleExpression)) {
        match self {
            Predicate::Leaf(s) => f(s),
            Predicate::Not(p) => p.visit_leaves(f),
            Predicate::And(a, b) | Predicate::Or(a, b) => {
                a.visit_leaves(f);
                b.visit_leaves(f);
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn attributes(&self) -> BTreeSet<&str> {
        self.leaves()
            .into_iter()
            .map(|s| s.attribute.as_str())
            .collect()
    }

    pub fn contains_not(&self) -> bool {
        match self {
            Predicate::Leaf(_) => false,
            Predicate::Not(_) => true,
            Predicate::And(a, b) | Predicate::Or(a, b) => a.contains_not() || b.contains_not(),
        }
    }

    /// Rewrites every leaf in place.
    pub fn map_leaves(self, f: &mut impl FnMut(SimpleExpression) -> SimpleExpression) -> Predicate {
        match self {
            Predicate::Leaf(s) => Predicate::Leaf(f(s)),
            Predicate::Not(p) => Predicate::not(p.map_leaves(f)),
            Predicate::And(a, b) => Predicate::and(a.map_leaves(f), b.map_leaves(f)),
            Predicate::Or(a, b) => Predicate::or(a.map_leaves(f), b.map_leaves(f)),
        }
    }

    /// Tags every leaf with `origin`.
    pub fn with_origin(self, origin: Origin) -> Predicate {
        self.map_leaves(&mut |s| s.with_origin(origin))
    }

    /// Evaluates under an assignment; leaves whose attribute is unassigned are false.
    pub fn eval<'a>(&self, lookup: &impl Fn(&str) -> Option<&'a Literal>) -> bool {
        match self {
            Predicate::Leaf(s) => lookup(&s.attribute).is_some_and(|v| s.holds(v)),
            Predicate::Not(p) => !p.eval(lookup),
            Predicate::And(a, b) => a.eval(lookup) && b.eval(lookup),
            Predicate::Or(a, b) => a.eval(lookup) || b.eval(lookup),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Predicate::Or(..) => 0,
            Predicate::And(..) => 1,
            Predicate::Not(_) | Predicate::Leaf(_) => 2,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, child: &Predicate, right: bool) -> fmt::Result {
        // Binary operators parse left-associatively, so an equal-precedence
        // right child needs parentheses to survive a round trip.
        let needs = child.precedence() < self.precedence()
            || (right && child.precedence() == self.precedence());
        if needs {
            write!(f, "({child})")
        } else {
            write!(f, "{child}")
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Leaf(s) => write!(f, "{s}"),
            Predicate::Not(p) => write!(f, "NOT ({p})"),
            Predicate::And(a, b) => {
                self.fmt_child(f, a, false)?;
                f.write_str(" AND ")?;
                self.fmt_child(f, b, true)
            }
            Predicate::Or(a, b) => {
                self.fmt_child(f, a, false)?;
                f.write_str(" OR ")?;
                self.fmt_child(f, b, true)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negation_table_is_an_involution() {
        for op in CmpOp::ALL {
            assert_eq!(op.negate().negate(), op);
            assert_ne!(op.negate(), op);
        }
    }

    #[test]
    fn holds_across_literal_kinds() {
        let num = SimpleExpression::new("a", CmpOp::Lt, 5);
        assert!(num.holds(&Literal::from(4)));
        assert!(!num.holds(&Literal::from("x")));
        let ne = SimpleExpression::new("a", CmpOp::Ne, "x");
        assert!(ne.holds(&Literal::from(4)));
        assert!(!ne.holds(&Literal::from("x")));
    }

    #[test]
    fn display_parenthesizes_only_where_needed() {
        let a = Predicate::leaf("a", CmpOp::Gt, 1);
        let b = Predicate::leaf("b", CmpOp::Lt, 2);
        let c = Predicate::leaf("c", CmpOp::Eq, "x");
        let p = Predicate::and(Predicate::or(a.clone(), b.clone()), c.clone());
        assert_eq!(p.to_string(), "(a > 1 OR b < 2) AND c = \"x\"");
        let q = Predicate::and(a.clone(), Predicate::and(b.clone(), c.clone()));
        assert_eq!(q.to_string(), "a > 1 AND (b < 2 AND c = \"x\")");
        let r = Predicate::or(Predicate::and(a, b), Predicate::not(c));
        assert_eq!(r.to_string(), "a > 1 AND b < 2 OR NOT (c = \"x\")");
    }

    #[test]
    fn origin_does_not_affect_equality() {
        let p = SimpleExpression::new("a", CmpOp::Gt, 1);
        assert_eq!(p.clone().with_origin(Origin::User), p);
    }
}
