//! Empty-result (NR) and partial-result (PR) detection for merged filters.

use std::fmt;

use log::warn;
use thiserror::Error;

use super::domain::{conjunct_witness, NumRegion};
use super::expr::{CmpOp, Literal, Origin, Predicate, SimpleExpression};
use super::normal::{eliminate_not, to_dnf_capped, DnfError, DEFAULT_DISJUNCT_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum WarningKind {
    #[default]
    None,
    /// Some tuples the user asked for are withheld by policy.
    PartialResult,
    /// No tuple can ever reach the user.
    EmptyResult,
}

impl WarningKind {
    pub fn code(self) -> &'static str {
        match self {
            WarningKind::None => "NONE",
            WarningKind::PartialResult => "PR",
            WarningKind::EmptyResult => "NR",
        }
    }

    pub fn from_code(code: &str) -> Option<WarningKind> {
        match code {
            "NONE" => Some(WarningKind::None),
            "PR" => Some(WarningKind::PartialResult),
            "NR" => Some(WarningKind::EmptyResult),
            _ => None,
        }
    }

    /// The more severe of two verdicts.
    pub fn worst(self, other: WarningKind) -> WarningKind {
        self.max(other)
    }
}

impl fmt::Display for WarningKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Verdict of a merge-time static check.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Warning {
    pub kind: WarningKind,
    pub explanation: String,
    pub witnesses: Vec<(SimpleExpression, SimpleExpression)>,
}

impl Warning {
    pub fn none() -> Warning {
        Warning::default()
    }

    pub fn new(kind: WarningKind, explanation: impl Into<String>) -> Warning {
        Warning {
            kind,
            explanation: explanation.into(),
            witnesses: Vec::new(),
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == WarningKind::None
    }

    /// Folds `other` into `self`: the worse kind wins, explanations and
    /// witnesses of contributing non-None verdicts accumulate.
    pub fn combine(mut self, other: Warning) -> Warning {
        if other.kind == WarningKind::None {
            return self;
        }
        if self.kind == WarningKind::None {
            return other;
        }
        self.kind = self.kind.worst(other.kind);
        if !other.explanation.is_empty() {
            if !self.explanation.is_empty() {
                self.explanation.push_str("; ");
            }
            self.explanation.push_str(&other.explanation);
        }
        self.witnesses.extend(other.witnesses);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("analysis capacity exceeded: {0}")]
    Capacity(#[from] DnfError),
}

/// Pairwise conflict check between two simple expressions.
///
/// NR when the two can never hold together. PR when they come from different
/// origins and the policy-side expression rejects some value the user-side
/// expression admits. Otherwise None.
pub fn check_two_simple(s1: &SimpleExpression, s2: &SimpleExpression) -> WarningKind {
    if s1.attribute != s2.attribute {
        return WarningKind::None;
    }
    match (&s1.literal, &s2.literal) {
        (Literal::Number(v1), Literal::Number(v2)) => {
            let r1 = NumRegion::of(s1.op, *v1);
            let r2 = NumRegion::of(s2.op, *v2);
            if !r1.intersects(r2) {
                return WarningKind::EmptyResult;
            }
            match (s1.origin, s2.origin) {
                (Origin::Policy, Origin::User) if !r2.within(r1) => WarningKind::PartialResult,
                (Origin::User, Origin::Policy) if !r1.within(r2) => WarningKind::PartialResult,
                _ => WarningKind::None,
            }
        }
        (Literal::Text(t1), Literal::Text(t2)) => {
            let disjoint = match (s1.op, s2.op) {
                (CmpOp::Eq, CmpOp::Eq) => t1 != t2,
                (CmpOp::Eq, CmpOp::Ne) | (CmpOp::Ne, CmpOp::Eq) => t1 == t2,
                _ => false,
            };
            if disjoint {
                return WarningKind::EmptyResult;
            }
            // {t} is within {t'} iff equal; everything-but-t is within
            // everything-but-t' iff t = t'; {t} within everything-but-t' iff t != t'.
            let within = |user: &SimpleExpression,
                          policy: &SimpleExpression,
                          tu: &str,
                          tp: &str| match (user.op, policy.op) {
                (CmpOp::Eq, CmpOp::Eq) | (CmpOp::Ne, CmpOp::Ne) => tu == tp,
                (CmpOp::Eq, CmpOp::Ne) => tu != tp,
                _ => false,
            };
            match (s1.origin, s2.origin) {
                (Origin::Policy, Origin::User) if !within(s2, s1, t2, t1) => {
                    WarningKind::PartialResult
                }
                (Origin::User, Origin::Policy) if !within(s1, s2, t1, t2) => {
                    WarningKind::PartialResult
                }
                _ => WarningKind::None,
            }
        }
        // A value is either a number or a string: equality to one kind rules
        // out every positive comparison against the other kind.
        _ => {
            let positive = |op: CmpOp| op != CmpOp::Ne;
            if (s1.op == CmpOp::Eq && positive(s2.op)) || (s2.op == CmpOp::Eq && positive(s1.op)) {
                WarningKind::EmptyResult
            } else {
                WarningKind::None
            }
        }
    }
}

/// True when the two expressions compare one attribute against literals of
/// different kinds (number vs string).
pub fn incomparable(s1: &SimpleExpression, s2: &SimpleExpression) -> bool {
    s1.attribute == s2.attribute && s1.literal.is_text() != s2.literal.is_text()
}

/// Merge-time analyzer for filter conditions.
#[derive(Debug, Clone, Copy)]
pub struct Analyzer {
    pub disjunct_cap: usize,
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer {
            disjunct_cap: DEFAULT_DISJUNCT_CAP,
        }
    }
}

struct ConjunctMark {
    kind: WarningKind,
    pairs: Vec<(SimpleExpression, SimpleExpression)>,
    notes: Vec<String>,
}

fn mark_conjunct(conjunct: &[SimpleExpression]) -> ConjunctMark {
    let mut nr = Vec::new();
    let mut pr = Vec::new();
    let mut notes = Vec::new();
    for (i, s1) in conjunct.iter().enumerate() {
        for s2 in &conjunct[i + 1..] {
            let kind = check_two_simple(s1, s2);
            if incomparable(s1, s2) && kind == WarningKind::None {
                notes.push(format!(
                    "`{s1}` and `{s2}` compare `{}` against different literal kinds",
                    s1.attribute
                ));
            }
            match kind {
                WarningKind::EmptyResult => nr.push((s1.clone(), s2.clone())),
                WarningKind::PartialResult => pr.push((s1.clone(), s2.clone())),
                WarningKind::None => {}
            }
        }
    }
    if !nr.is_empty() {
        ConjunctMark {
            kind: WarningKind::EmptyResult,
            pairs: nr,
            notes,
        }
    } else if !pr.is_empty() {
        ConjunctMark {
            kind: WarningKind::PartialResult,
            pairs: pr,
            notes,
        }
    } else {
        ConjunctMark {
            kind: WarningKind::None,
            pairs: Vec::new(),
            notes,
        }
    }
}

fn format_pairs(pairs: &[(SimpleExpression, SimpleExpression)]) -> String {
    pairs
        .iter()
        .map(|(a, b)| format!("({a}, {b})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Analyzer {
    /// Checks whether merging `policy_pred` with `user_pred` (conjunction)
    /// leaves the user with no tuples (NR) or only some of them (PR).
    pub fn analyze(
        &self,
        policy_pred: &Predicate,
        user_pred: &Predicate,
    ) -> Result<Warning, AnalysisError> {
        let policy = policy_pred.clone().with_origin(Origin::Policy);
        let user = user_pred.clone().with_origin(Origin::User);
        let merged = eliminate_not(&Predicate::and(policy.clone(), user.clone()));
        let dnf = to_dnf_capped(&merged, self.disjunct_cap)?;

        let marks: Vec<ConjunctMark> = dnf.disjuncts().iter().map(|c| mark_conjunct(c)).collect();
        let notes: Vec<&String> = marks.iter().flat_map(|m| m.notes.iter()).collect();

        if marks.iter().all(|m| m.kind == WarningKind::EmptyResult) {
            let pairs: Vec<_> = marks.iter().flat_map(|m| m.pairs.iter().cloned()).collect();
            let explanation = format!(
                "every disjunct of the merged filter is contradictory; conflicting pairs: {}",
                format_pairs(&pairs)
            );
            return Ok(Warning {
                kind: WarningKind::EmptyResult,
                explanation,
                witnesses: pairs,
            });
        }

        if marks.iter().all(|m| m.kind != WarningKind::None) {
            // The pairwise marks are local; only report PR when some tuple the
            // user asked for really is rejected by the policy.
            if self.user_loses_tuples(&policy, &user)? {
                let pairs: Vec<_> = marks
                    .iter()
                    .filter(|m| m.kind == WarningKind::PartialResult)
                    .flat_map(|m| m.pairs.iter().cloned())
                    .collect();
                let explanation = format!(
                    "policy conditions narrow the requested filter; narrowing pairs: {}",
                    format_pairs(&pairs)
                );
                return Ok(Warning {
                    kind: WarningKind::PartialResult,
                    explanation,
                    witnesses: pairs,
                });
            }
        }

        let explanation = notes
            .iter()
            .map(|n| n.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        Ok(Warning {
            kind: WarningKind::None,
            explanation,
            witnesses: Vec::new(),
        })
    }

    /// Is `user AND NOT policy` satisfiable?
    fn user_loses_tuples(
        &self,
        policy: &Predicate,
        user: &Predicate,
    ) -> Result<bool, AnalysisError> {
        let blocked = eliminate_not(&Predicate::and(
            user.clone(),
            Predicate::not(policy.clone()),
        ));
        let dnf = to_dnf_capped(&blocked, self.disjunct_cap)?;
        Ok(dnf
            .disjuncts()
            .iter()
            .any(|c| conjunct_witness(c).is_some()))
    }
}

/// [`Analyzer::analyze`] with the default disjunct cap.
pub fn analyze_merge(
    policy_pred: &Predicate,
    user_pred: &Predicate,
) -> Result<Warning, AnalysisError> {
    Analyzer::default().analyze(policy_pred, user_pred)
}

/// Like [`analyze_merge`], but degrades a capacity overflow to "no warning".
pub fn analyze_merge_advisory(policy_pred: &Predicate, user_pred: &Predicate) -> Warning {
    match analyze_merge(policy_pred, user_pred) {
        Ok(w) => w,
        Err(e) => {
            warn!("filter analysis skipped: {e}");
            Warning::new(WarningKind::None, format!("analysis skipped: {e}"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::parse::parse_predicate;

    fn s(attr: &str, op: CmpOp, v: i64, origin: Origin) -> SimpleExpression {
        SimpleExpression::new(attr, op, v).with_origin(origin)
    }

    #[test]
    fn pair_examples() {
        use Origin::*;
        assert_eq!(
            check_two_simple(&s("a", CmpOp::Lt, 10, Policy), &s("a", CmpOp::Eq, 40, User)),
            WarningKind::EmptyResult
        );
        assert_eq!(
            check_two_simple(&s("a", CmpOp::Gt, 8, Policy), &s("a", CmpOp::Gt, 5, User)),
            WarningKind::PartialResult
        );
        assert_eq!(
            check_two_simple(&s("a", CmpOp::Ge, 7, Policy), &s("a", CmpOp::Ge, 7, User)),
            WarningKind::None
        );
        assert_eq!(
            check_two_simple(&s("a", CmpOp::Gt, 8, Policy), &s("b", CmpOp::Lt, 0, User)),
            WarningKind::None
        );
        // Same-origin pairs only ever report NR.
        assert_eq!(
            check_two_simple(&s("a", CmpOp::Gt, 8, User), &s("a", CmpOp::Gt, 5, User)),
            WarningKind::None
        );
    }

    #[test]
    fn text_pairs() {
        let p = SimpleExpression::new("c", CmpOp::Eq, "x").with_origin(Origin::Policy);
        let u = SimpleExpression::new("c", CmpOp::Ne, "x").with_origin(Origin::User);
        assert_eq!(check_two_simple(&p, &u), WarningKind::EmptyResult);
        let u = SimpleExpression::new("c", CmpOp::Ne, "y").with_origin(Origin::User);
        assert_eq!(check_two_simple(&p, &u), WarningKind::PartialResult);
        let p = SimpleExpression::new("c", CmpOp::Ne, "y").with_origin(Origin::Policy);
        let u = SimpleExpression::new("c", CmpOp::Eq, "x").with_origin(Origin::User);
        assert_eq!(check_two_simple(&p, &u), WarningKind::None);
    }

    #[test]
    fn mixed_literal_kinds() {
        let num = s("a", CmpOp::Lt, 5, Origin::Policy);
        let eq_text = SimpleExpression::new("a", CmpOp::Eq, "x").with_origin(Origin::User);
        let ne_text = SimpleExpression::new("a", CmpOp::Ne, "x").with_origin(Origin::User);
        assert_eq!(check_two_simple(&num, &eq_text), WarningKind::EmptyResult);
        assert_eq!(check_two_simple(&num, &ne_text), WarningKind::None);
        let w = analyze_merge(&Predicate::Leaf(num), &Predicate::Leaf(ne_text)).unwrap();
        assert!(w.explanation.contains("different literal kinds"));
    }

    #[test]
    fn example_three_is_nr() {
        let c1 = parse_predicate("(a>20 AND a<30) OR NOT(a!=40)").unwrap();
        let c2 = parse_predicate("NOT(a>=10) AND b=20").unwrap();
        let w = analyze_merge(&c1, &c2).unwrap();
        assert_eq!(w.kind, WarningKind::EmptyResult);
        let has = |x: &str, y: &str| {
            let (x, y) = (parse_predicate(x).unwrap(), parse_predicate(y).unwrap());
            w.witnesses.iter().any(|(a, b)| {
                let (a, b) = (Predicate::Leaf(a.clone()), Predicate::Leaf(b.clone()));
                (a == x && b == y) || (a == y && b == x)
            })
        };
        assert!(has("a < 10", "a = 40"));
        assert!(has("a < 10", "a > 20"));
    }

    #[test]
    fn narrowing_is_pr_and_identity_is_none() {
        let w = analyze_merge(
            &parse_predicate("a > 8").unwrap(),
            &parse_predicate("a > 5").unwrap(),
        )
        .unwrap();
        assert_eq!(w.kind, WarningKind::PartialResult);
        let w = analyze_merge(
            &parse_predicate("a > 5").unwrap(),
            &parse_predicate("a > 5").unwrap(),
        )
        .unwrap();
        assert_eq!(w, Warning::none());
        let w = analyze_merge(
            &parse_predicate("a < 4").unwrap(),
            &parse_predicate("a > 5").unwrap(),
        )
        .unwrap();
        assert_eq!(w.kind, WarningKind::EmptyResult);
    }

    #[test]
    fn covering_policy_is_not_pr() {
        // Each disjunct of the policy narrows the user filter, but together
        // they admit everything.
        let policy = parse_predicate("a > 2 OR a < 5").unwrap();
        let user = parse_predicate("a > 0").unwrap();
        assert_eq!(
            analyze_merge(&policy, &user).unwrap().kind,
            WarningKind::None
        );
    }

    #[test]
    fn capacity_degrades_to_none() {
        let wide = (0..13)
            .map(|i| format!("(x{i} = 0 OR x{i} = 1)"))
            .collect::<Vec<_>>()
            .join(" AND ");
        let policy = parse_predicate(&wide).unwrap();
        let user = parse_predicate("x0 = 0").unwrap();
        assert!(matches!(
            analyze_merge(&policy, &user),
            Err(AnalysisError::Capacity(_))
        ));
        assert_eq!(
            analyze_merge_advisory(&policy, &user).kind,
            WarningKind::None
        );
    }

    #[test]
    fn combine_keeps_worst() {
        let a = Warning::new(WarningKind::PartialResult, "map");
        let b = Warning::new(WarningKind::EmptyResult, "window");
        let c = a.clone().combine(b).combine(Warning::none());
        assert_eq!(c.kind, WarningKind::EmptyResult);
        assert_eq!(c.explanation, "map; window");
        assert_eq!(Warning::none().combine(a.clone()), a);
    }
}
