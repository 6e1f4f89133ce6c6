//! NOT-elimination and disjunctive normal form.

use std::fmt;

use thiserror::Error;

use super::expr::{Predicate, SimpleExpression};

/// Default bound on the number of disjuncts `to_dnf` will materialize.
pub const DEFAULT_DISJUNCT_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DnfError {
    #[error("predicate still contains NOT; eliminate negation first")]
    ContainsNot,
    #[error("DNF would exceed {cap} disjuncts")]
    Capacity { cap: usize },
}

/// Pushes every negation down to the leaves and folds it into the comparison.
pub fn eliminate_not(p: &Predicate) -> Predicate {
    push_down(p, false)
}

fn push_down(p: &Predicate, negate: bool) -> Predicate {
    match (p, negate) {
        (Predicate::Leaf(s), false) => Predicate::Leaf(s.clone()),
        (Predicate::Leaf(s), true) => Predicate::Leaf(s.negated()),
        (Predicate::Not(inner), _) => push_down(inner, !negate),
        (Predicate::And(a, b), false) => Predicate::and(push_down(a, false), push_down(b, false)),
        (Predicate::Or(a, b), false) => Predicate::or(push_down(a, false), push_down(b, false)),
        (Predicate::And(a, b), true) => Predicate::or(push_down(a, true), push_down(b, true)),
        (Predicate::Or(a, b), true) => Predicate::and(push_down(a, true), push_down(b, true)),
    }
}

/// A conjunction of simple expressions.
pub type Conjunct = Vec<SimpleExpression>;

/// OR of ANDs of simple expressions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnfPredicate {
    disjuncts: Vec<Conjunct>,
}

impl DnfPredicate {
    pub fn disjuncts(&self) -> &[Conjunct] {
        &self.disjuncts
    }

    pub fn into_disjuncts(self) -> Vec<Conjunct> {
        self.disjuncts
    }

    pub fn len(&self) -> usize {
        self.disjuncts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disjuncts.is_empty()
    }

    /// Back to a predicate tree (left-folded).
    pub fn to_predicate(&self) -> Predicate {
        Predicate::any(self.disjuncts.iter().map(|c| {
            Predicate::all(c.iter().cloned().map(Predicate::Leaf)).expect("conjuncts are non-empty")
        }))
        .expect("DNF has at least one disjunct")
    }
}

impl fmt::Display for DnfPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.disjuncts.iter().enumerate() {
            if i > 0 {
                f.write_str(" OR ")?;
            }
            f.write_str("(")?;
            for (j, s) in c.iter().enumerate() {
                if j > 0 {
                    f.write_str(" AND ")?;
                }
                write!(f, "{s}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

enum Postfix<'a> {
    Operand(&'a SimpleExpression),
    And,
    Or,
}

fn postfix<'a>(p: &'a Predicate, out: &mut Vec<Postfix<'a>>) -> Result<(), DnfError> {
    match p {
        Predicate::Leaf(s) => out.push(Postfix::Operand(s)),
        Predicate::Not(_) => return Err(DnfError::ContainsNot),
        Predicate::And(a, b) => {
            postfix(a, out)?;
            postfix(b, out)?;
            out.push(Postfix::And);
        }
        Predicate::Or(a, b) => {
            postfix(a, out)?;
            postfix(b, out)?;
            out.push(Postfix::Or);
        }
    }
    Ok(())
}

/// Converts a NOT-free predicate to DNF with the default disjunct cap.
pub fn to_dnf(p: &Predicate) -> Result<DnfPredicate, DnfError> {
    to_dnf_capped(p, DEFAULT_DISJUNCT_CAP)
}

/// Converts a NOT-free predicate to DNF by evaluating its postfix form on a
/// stack: AND distributes the two operands, OR concatenates them. Repeated
/// expressions of the same origin within a conjunct are kept once.
pub fn to_dnf_capped(p: &Predicate, cap: usize) -> Result<DnfPredicate, DnfError> {
    let mut tokens = Vec::new();
    postfix(p, &mut tokens)?;

    let mut stack: Vec<Vec<Conjunct>> = Vec::new();
    for tok in tokens {
        match tok {
            Postfix::Operand(s) => stack.push(vec![vec![s.clone()]]),
            Postfix::And => {
                let rhs = stack.pop().expect("well-formed postfix");
                let lhs = stack.pop().expect("well-formed postfix");
                if lhs.len().saturating_mul(rhs.len()) > cap {
                    return Err(DnfError::Capacity { cap });
                }
                let mut product = Vec::with_capacity(lhs.len() * rhs.len());
                for l in &lhs {
                    for r in &rhs {
                        let mut c = l.clone();
                        for s in r {
                            if !c.iter().any(|x| x == s && x.origin == s.origin) {
                                c.push(s.clone());
                            }
                        }
                        product.push(c);
                    }
                }
                stack.push(product);
            }
            Postfix::Or => {
                let rhs = stack.pop().expect("well-formed postfix");
                let mut lhs = stack.pop().expect("well-formed postfix");
                if lhs.len() + rhs.len() > cap {
                    return Err(DnfError::Capacity { cap });
                }
                lhs.extend(rhs);
                stack.push(lhs);
            }
        }
    }
    let disjuncts = stack.pop().expect("non-empty predicate");
    debug_assert!(stack.is_empty());
    Ok(DnfPredicate { disjuncts })
}
