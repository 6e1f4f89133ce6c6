//! Exact satisfiability for single-attribute comparisons under AND/OR/NOT.

use std::collections::BTreeMap;

use super::domain::conjunct_witness;
use super::expr::{Literal, Predicate};
use super::normal::{eliminate_not, to_dnf_capped, DnfError};

pub type Assignment = BTreeMap<String, Literal>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SatResult {
    pub satisfiable: bool,
    pub witness: Option<Assignment>,
}

/// Decides satisfiability by intersecting per-attribute value sets in each
/// disjunct of the predicate's DNF. A returned witness assigns every
/// attribute of `p` and makes `p` true.
pub fn sat_oracle(p: &Predicate) -> SatResult {
    let dnf = to_dnf_capped(&eliminate_not(p), usize::MAX)
        .expect("NOT was eliminated and the cap is unbounded");
    for conjunct in dnf.disjuncts() {
        if let Some(mut witness) = conjunct_witness(conjunct) {
            for attr in p.attributes() {
                witness.entry(attr.to_string()).or_insert(Literal::from(0));
            }
            debug_assert!(p.eval(&|a: &str| witness.get(a)));
            return SatResult {
                satisfiable: true,
                witness: Some(witness),
            };
        }
    }
    SatResult {
        satisfiable: false,
        witness: None,
    }
}

/// Whether every assignment satisfying `p` also satisfies `q`. Fails when
/// the normal form of `p AND NOT q` exceeds `cap` disjuncts.
pub fn implies(p: &Predicate, q: &Predicate, cap: usize) -> Result<bool, DnfError> {
    let counter = Predicate::and(p.clone(), Predicate::not(q.clone()));
    let dnf = to_dnf_capped(&eliminate_not(&counter), cap)?;
    Ok(dnf
        .disjuncts()
        .iter()
        .all(|c| conjunct_witness(c).is_none()))
}
