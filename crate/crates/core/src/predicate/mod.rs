//! Predicate algebra: parsing, NOT-elimination, DNF conversion and
//! merge-time NR/PR analysis of filter conditions.

mod check;
mod decimal;
mod domain;
mod expr;
mod normal;
mod oracle;
mod parse;

pub use check::{
    analyze_merge, analyze_merge_advisory, check_two_simple, incomparable, AnalysisError, Analyzer,
    Warning, WarningKind,
};
pub use decimal::{Decimal, DecimalError};
pub use expr::{CmpOp, Literal, Origin, Predicate, SimpleExpression};
pub use normal::{
    eliminate_not, to_dnf, to_dnf_capped, Conjunct, DnfError, DnfPredicate, DEFAULT_DISJUNCT_CAP,
};
pub use oracle::{implies, sat_oracle, Assignment, SatResult};
pub use parse::{parse_predicate, ParseError};
