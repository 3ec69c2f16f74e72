//! Shared test support: the small term universe, independent reference
//! implementations of the matching algebra, and a brute-force matcher.
//!
//! The reference functions are deliberately naive transcriptions of the
//! matching and binding equations (quadratic prefix recomputation included)
//! so they share no code path with the engine.

#![allow(dead_code)]

use acre_core::term::{Bindings, Predicate, Term, VarContext};
use proptest::prelude::*;

pub const CONSTANTS: [&str; 3] = ["a", "b", "c"];

/// Ground terms of the universe: constants plus f/1 and g/2 up to depth 2.
pub fn ground_term(depth: u32) -> BoxedStrategy<Term> {
    let leaf = prop_oneof![
        Just(Term::constant("a")),
        Just(Term::constant("b")),
        Just(Term::constant("c")),
    ];
    if depth == 0 {
        leaf.boxed()
    } else {
        let inner = ground_term(depth - 1);
        prop_oneof![
            3 => ground_term(0),
            1 => inner.clone().prop_map(|t| Term::function("f", vec![t])),
            1 => (inner.clone(), inner).prop_map(|(s, t)| Term::function("g", vec![s, t])),
        ]
        .boxed()
    }
}

/// Pattern terms over the universe: ground leaves plus `?x`, `??x`, `?y`,
/// `??y` and the anonymous variable.
pub fn pattern_term(depth: u32) -> BoxedStrategy<Term> {
    let leaf = prop_oneof![
        Just(Term::constant("a")),
        Just(Term::constant("b")),
        Just(Term::constant("c")),
        Just(Term::variable("x", VarContext::Immutable)),
        Just(Term::variable("x", VarContext::Mutable)),
        Just(Term::variable("y", VarContext::Immutable)),
        Just(Term::variable("y", VarContext::Mutable)),
        Just(Term::anonymous()),
    ];
    if depth == 0 {
        leaf.boxed()
    } else {
        let inner = pattern_term(depth - 1);
        prop_oneof![
            3 => pattern_term(0),
            1 => inner.clone().prop_map(|t| Term::function("f", vec![t])),
            1 => (inner.clone(), inner).prop_map(|(s, t)| Term::function("g", vec![s, t])),
        ]
        .boxed()
    }
}

/// Immutable-only pattern terms (no `??` occurrences), for the
/// substitution-enumeration matcher.
pub fn immutable_pattern_term(depth: u32) -> BoxedStrategy<Term> {
    pattern_term(depth)
        .prop_map(|t| freeze_mutables(&t))
        .boxed()
}

fn freeze_mutables(t: &Term) -> Term {
    match t {
        Term::Variable {
            name: Some(n),
            context: VarContext::Mutable,
        } => Term::variable(n.clone(), VarContext::Immutable),
        Term::Function { functor, args } => Term::Function {
            functor: functor.clone(),
            args: args.iter().map(freeze_mutables).collect(),
        },
        other => other.clone(),
    }
}

/// Predicates over the universe with symbol `p` and 0..=2 arguments.
pub fn ground_predicate() -> BoxedStrategy<Predicate> {
    prop::collection::vec(ground_term(1), 0..=2)
        .prop_map(|args| Predicate::new("p", args))
        .boxed()
}

pub fn pattern_predicate() -> BoxedStrategy<Predicate> {
    prop::collection::vec(pattern_term(1), 0..=2)
        .prop_map(|args| Predicate::new("p", args))
        .boxed()
}

/// Random bindings over the universe's variable names.
pub fn bindings() -> BoxedStrategy<Bindings> {
    prop::collection::btree_map(
        prop_oneof![Just("x".to_string()), Just("y".to_string())],
        ground_term(1),
        0..=2,
    )
    .prop_map(|map| map.into_iter().collect())
    .boxed()
}

// --- naive reference implementation ------------------------------------

pub fn naive_combine(older: &Bindings, newer: &Bindings) -> Bindings {
    let mut merged: Vec<(String, Term)> = older
        .iter()
        .filter(|(name, _)| newer.get(name).is_none())
        .map(|(n, v)| (n.clone(), v.clone()))
        .collect();
    merged.extend(newer.iter().map(|(n, v)| (n.clone(), v.clone())));
    merged.into_iter().collect()
}

pub fn naive_tapply(t: &Term, b: &Bindings) -> Term {
    match t {
        Term::Function { functor, args } => Term::Function {
            functor: functor.clone(),
            args: args.iter().map(|a| naive_tapply(a, b)).collect(),
        },
        Term::Variable {
            name: Some(n),
            context: VarContext::Immutable,
        } => match b.get(n) {
            Some(v) => v.clone(),
            None => t.clone(),
        },
        other => other.clone(),
    }
}

pub fn naive_lbind(ts: &[Term], us: &[Term]) -> Bindings {
    if ts.is_empty() {
        return Bindings::new();
    }
    let n = ts.len();
    let prefix = naive_lbind(&ts[..n - 1], &us[..n - 1]);
    let last = naive_tbind(&naive_tapply(&ts[n - 1], &prefix), &us[n - 1]);
    naive_combine(&prefix, &last)
}

pub fn naive_lmatches(ts: &[Term], us: &[Term]) -> bool {
    if ts.len() != us.len() {
        return false;
    }
    if ts.is_empty() {
        return true;
    }
    let n = ts.len();
    let prefix_bindings = naive_lbind(&ts[..n - 1], &us[..n - 1]);
    naive_lmatches(&ts[..n - 1], &us[..n - 1])
        && naive_tmatches(&naive_tapply(&ts[n - 1], &prefix_bindings), &us[n - 1])
}

pub fn naive_tmatches(s1: &Term, s2: &Term) -> bool {
    match (s1, s2) {
        (Term::Variable { .. }, _) => true,
        (Term::Constant(a), Term::Constant(b)) => a == b,
        (
            Term::Function {
                functor: fa,
                args: xa,
            },
            Term::Function {
                functor: fb,
                args: xb,
            },
        ) => fa == fb && xa.len() == xb.len() && naive_lmatches(xa, xb),
        _ => false,
    }
}

pub fn naive_tbind(t: &Term, g: &Term) -> Bindings {
    match t {
        Term::Variable { name: Some(n), .. } => [(n.clone(), g.clone())].into_iter().collect(),
        Term::Variable { name: None, .. } => Bindings::new(),
        Term::Function { functor, args } => match g {
            Term::Function {
                functor: gf,
                args: gargs,
            } if naive_tmatches(t, g) && functor == gf && args.len() == gargs.len() => {
                naive_lbind(args, gargs)
            }
            _ => Bindings::new(),
        },
        Term::Constant(_) => Bindings::new(),
    }
}

pub fn naive_pmatches(l: &Predicate, g: &Predicate) -> bool {
    l.symbol == g.symbol && l.args.len() == g.args.len() && naive_lmatches(&l.args, &g.args)
}

pub fn naive_pbind(l: &Predicate, g: &Predicate) -> Bindings {
    if naive_pmatches(l, g) {
        naive_lbind(&l.args, &g.args)
    } else {
        Bindings::new()
    }
}

// --- brute-force substitution enumeration -------------------------------

fn subterms(g: &Term, out: &mut Vec<Term>) {
    out.push(g.clone());
    if let Term::Function { args, .. } = g {
        for a in args {
            subterms(a, out);
        }
    }
}

fn named_vars(t: &Term, out: &mut Vec<String>) {
    match t {
        Term::Variable { name: Some(n), .. } => {
            if !out.contains(n) {
                out.push(n.clone());
            }
        }
        Term::Function { args, .. } => {
            for a in args {
                named_vars(a, out);
            }
        }
        _ => {}
    }
}

/// Does the pattern, with each named variable replaced under the
/// assignment, equal the ground term? Anonymous occurrences match any
/// subterm.
fn equals_under(pattern: &Term, ground: &Term, assignment: &[(String, Term)]) -> bool {
    match (pattern, ground) {
        (Term::Variable { name: None, .. }, _) => true,
        (Term::Variable { name: Some(n), .. }, g) => assignment
            .iter()
            .find(|(v, _)| v == n)
            .map(|(_, value)| value == g)
            .unwrap_or(false),
        (Term::Constant(a), Term::Constant(b)) => a == b,
        (
            Term::Function {
                functor: fa,
                args: xa,
            },
            Term::Function {
                functor: fb,
                args: xb,
            },
        ) => {
            fa == fb
                && xa.len() == xb.len()
                && xa
                    .iter()
                    .zip(xb)
                    .all(|(p, g)| equals_under(p, g, assignment))
        }
        _ => false,
    }
}

/// Brute-force matcher for immutable/anonymous patterns: enumerates every
/// substitution from the pattern's variables to subterms of the ground term
/// and succeeds if any substitution makes the pattern equal the ground
/// term. A variable can only ever need a value that appears as a subterm of
/// the ground side, so this domain is exhaustive.
pub fn brute_force_matches(pattern: &Term, ground: &Term) -> bool {
    let mut vars = Vec::new();
    named_vars(pattern, &mut vars);
    let mut candidates = Vec::new();
    subterms(ground, &mut candidates);
    candidates.sort();
    candidates.dedup();

    let mut assignment: Vec<(String, Term)> = Vec::new();
    enumerate(pattern, ground, &vars, &candidates, &mut assignment)
}

fn enumerate(
    pattern: &Term,
    ground: &Term,
    vars: &[String],
    candidates: &[Term],
    assignment: &mut Vec<(String, Term)>,
) -> bool {
    if vars.is_empty() {
        return equals_under(pattern, ground, assignment);
    }
    for candidate in candidates {
        assignment.push((vars[0].clone(), candidate.clone()));
        if enumerate(pattern, ground, &vars[1..], candidates, assignment) {
            assignment.pop();
            return true;
        }
        assignment.pop();
    }
    false
}

/// Same enumeration lifted to predicates.
pub fn brute_force_pmatches(pattern: &Predicate, ground: &Predicate) -> bool {
    if pattern.symbol != ground.symbol || pattern.args.len() != ground.args.len() {
        return false;
    }
    if pattern.args.is_empty() {
        return true;
    }
    brute_force_matches(
        &Term::Function {
            functor: "||".into(),
            args: pattern.args.clone(),
        },
        &Term::Function {
            functor: "||".into(),
            args: ground.args.clone(),
        },
    )
}
