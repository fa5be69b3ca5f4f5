//! The merge, shortcut and iteration rules, transcripts of their
//! applications, and replay of a split negotiation's transcript onto its
//! parent.
//!
//! Every rule is a pure function from a negotiation to a new negotiation
//! plus a [`RuleApplication`] record. Fresh outcome names are canonical:
//! `r1+r2` for merge, `r.r'` for shortcut and `r*.r'` for iteration, with
//! `'` appended until the name is unused in its atom.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{is_valid_name, AtomId, Negotiation, Outcome, OutcomeName, TransformerError};
use crate::structure::SplitNegotiation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("unknown atom {0}")]
    UnknownAtom(AtomId),
    #[error("atom {atom} has no outcome {outcome}")]
    UnknownOutcome { atom: AtomId, outcome: OutcomeName },
    #[error("guard of the {kind} rule does not hold at {site}")]
    Guard { kind: RuleKind, site: String },
    #[error("iteration would leave {0} without outcomes")]
    OnlySelfLoop(AtomId),
    #[error("shortcut from {atom} into the final atom would leave it with other references")]
    FinalShortcutBlocked { atom: AtomId },
    #[error(transparent)]
    Transformer(#[from] TransformerError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleKind {
    Merge,
    Shortcut,
    Iteration,
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::Merge => "merge",
            RuleKind::Shortcut => "shortcut",
            RuleKind::Iteration => "iteration",
        })
    }
}

impl FromStr for RuleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "merge" => Ok(RuleKind::Merge),
            "shortcut" => Ok(RuleKind::Shortcut),
            "iteration" => Ok(RuleKind::Iteration),
            _ => Err(format!("unknown rule {s:?}")),
        }
    }
}

/// A place where a rule can be applied.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Redex {
    Merge {
        atom: AtomId,
        first: OutcomeName,
        second: OutcomeName,
    },
    Shortcut {
        atom: AtomId,
        outcome: OutcomeName,
        target: AtomId,
    },
    Iteration {
        atom: AtomId,
        outcome: OutcomeName,
    },
}

/// Record of one rule application.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleApplication {
    pub kind: RuleKind,
    /// The atom whose outcomes are rewritten.
    pub atom: AtomId,
    /// Consumed outcomes of `atom`: both operands of a merge, the shortcut
    /// outcome, or the iterated self-loop.
    pub outcomes: Vec<OutcomeName>,
    /// The unconditionally enabled atom of a shortcut.
    pub target: Option<AtomId>,
    /// `(source, fresh)` pairs. For a merge the sources are the two merged
    /// outcomes; for a shortcut the outcomes of the target; for an iteration
    /// the renamed outcomes of `atom`.
    pub produced: Vec<(OutcomeName, OutcomeName)>,
    pub removed_atom: Option<AtomId>,
}

impl RuleApplication {
    pub fn redex(&self) -> Redex {
        match self.kind {
            RuleKind::Merge => Redex::Merge {
                atom: self.atom.clone(),
                first: self.outcomes[0].clone(),
                second: self.outcomes[1].clone(),
            },
            RuleKind::Shortcut => Redex::Shortcut {
                atom: self.atom.clone(),
                outcome: self.outcomes[0].clone(),
                target: self.target.clone().expect("shortcut has a target"),
            },
            RuleKind::Iteration => Redex::Iteration {
                atom: self.atom.clone(),
                outcome: self.outcomes[0].clone(),
            },
        }
    }

    pub fn fresh(&self, source: &OutcomeName) -> Option<&OutcomeName> {
        self.produced.iter().find(|(s, _)| s == source).map(|(_, f)| f)
    }
}

/// One trace line: `kind atom=n outcomes=r1,r2 target=n' fresh=s:f,... removed=n'`.
/// Absent fields are written as `-`.
impl fmt::Display for RuleApplication {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: Vec<String>| if v.is_empty() { "-".to_string() } else { v.join(",") };
        let opt = |o: &Option<AtomId>| o.as_ref().map_or("-".to_string(), |a| a.to_string());
        write!(
            f,
            "{} atom={} outcomes={} target={} fresh={} removed={}",
            self.kind,
            self.atom,
            join(self.outcomes.iter().map(|r| r.to_string()).collect()),
            opt(&self.target),
            join(self.produced.iter().map(|(s, r)| format!("{s}:{r}")).collect()),
            opt(&self.removed_atom),
        )
    }
}

impl FromStr for RuleApplication {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let mut words = line.split_whitespace();
        let kind: RuleKind = words.next().ok_or("empty trace line")?.parse()?;
        let mut fields = BTreeMap::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| format!("expected key=value, got {w:?}"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("missing field {k}"));
        let name = |s: &str| -> Result<String, String> {
            if is_valid_name(s) {
                Ok(s.to_string())
            } else {
                Err(format!("invalid name {s:?}"))
            }
        };
        fn list(s: &str) -> Result<Vec<&str>, String> {
            Ok(if s == "-" { Vec::new() } else { s.split(',').collect() })
        }
        let opt = |s: &str| -> Result<Option<AtomId>, String> {
            Ok(if s == "-" { None } else { Some(AtomId::new(name(s)?)) })
        };
        let outcomes = list(get("outcomes")?)?
            .into_iter()
            .map(|r| name(r).map(OutcomeName::from))
            .collect::<Result<_, _>>()?;
        let produced = list(get("fresh")?)?
            .into_iter()
            .map(|p| {
                let (s, r) = p.split_once(':').ok_or_else(|| format!("bad fresh pair {p:?}"))?;
                Ok((OutcomeName::from(name(s)?), OutcomeName::from(name(r)?)))
            })
            .collect::<Result<_, String>>()?;
        Ok(RuleApplication {
            kind,
            atom: AtomId::new(name(get("atom")?)?),
            outcomes,
            target: opt(get("target")?)?,
            produced,
            removed_atom: opt(get("removed")?)?,
        })
    }
}

/// Ordered log of rule applications.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript(pub Vec<RuleApplication>);

impl Transcript {
    pub fn count(&self, kind: RuleKind) -> usize {
        self.0.iter().filter(|a| a.kind == kind).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.0 {
            writeln!(f, "{a}")?;
        }
        Ok(())
    }
}

impl FromStr for Transcript {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map(Transcript)
    }
}

fn fresh_name(taken: &BTreeSet<OutcomeName>, base: String) -> OutcomeName {
    let mut name = base;
    while taken.contains(name.as_str()) {
        name.push('\'');
    }
    OutcomeName::new(name)
}

fn lookup<'a>(
    neg: &'a Negotiation,
    atom: &AtomId,
    outcome: &OutcomeName,
) -> Result<&'a Outcome, RuleError> {
    let a = neg
        .atom(atom)
        .ok_or_else(|| RuleError::UnknownAtom(atom.clone()))?;
    a.outcomes
        .get(outcome)
        .ok_or_else(|| RuleError::UnknownOutcome {
            atom: atom.clone(),
            outcome: outcome.clone(),
        })
}

/// All merge redexes: pairs `r1 < r2` of one atom with equal next-atom maps.
/// The final atom is skipped; merging its outcomes would change the set of
/// final outcomes.
pub fn find_merges(neg: &Negotiation) -> Vec<Redex> {
    let mut out = Vec::new();
    for (n, atom) in neg.atoms.iter().filter(|(n, _)| **n != neg.final_atom) {
        let rs: Vec<(&OutcomeName, &Outcome)> = atom.outcomes.iter().collect();
        for (i, (r1, o1)) in rs.iter().enumerate() {
            for (r2, o2) in &rs[i + 1..] {
                if o1.next == o2.next {
                    out.push(Redex::Merge {
                        atom: n.clone(),
                        first: (*r1).clone(),
                        second: (*r2).clone(),
                    });
                }
            }
        }
    }
    out
}

pub fn apply_merge(
    neg: &Negotiation,
    atom: &AtomId,
    first: &OutcomeName,
    second: &OutcomeName,
) -> Result<(Negotiation, RuleApplication), RuleError> {
    let o1 = lookup(neg, atom, first)?;
    let o2 = lookup(neg, atom, second)?;
    if first == second || o1.next != o2.next || *atom == neg.final_atom {
        return Err(RuleError::Guard {
            kind: RuleKind::Merge,
            site: format!("{atom}/{first},{second}"),
        });
    }
    let merged = Outcome {
        next: o1.next.clone(),
        transformer: o1.transformer.union(&o2.transformer)?,
    };
    let mut out = neg.clone();
    let outcomes = &mut out.atoms.get_mut(atom).unwrap().outcomes;
    outcomes.remove(first);
    outcomes.remove(second);
    let taken: BTreeSet<OutcomeName> = outcomes.keys().cloned().collect();
    let fresh = fresh_name(&taken, format!("{first}+{second}"));
    outcomes.insert(fresh.clone(), merged);
    Ok((
        out,
        RuleApplication {
            kind: RuleKind::Merge,
            atom: atom.clone(),
            outcomes: vec![first.clone(), second.clone()],
            target: None,
            produced: vec![(first.clone(), fresh.clone()), (second.clone(), fresh)],
            removed_atom: None,
        },
    ))
}

/// `(n, r)` unconditionally enables `n'`: `P_n ⊇ P_n'` and every party of
/// `n'` goes exactly to `n'`.
pub fn unconditionally_enables(
    neg: &Negotiation,
    n: &AtomId,
    r: &OutcomeName,
    target: &AtomId,
) -> bool {
    let (Some(a), Some(t)) = (neg.atom(n), neg.atom(target)) else {
        return false;
    };
    let Some(o) = a.outcomes.get(r) else {
        return false;
    };
    t.parties.is_subset(&a.parties)
        && t
            .parties
            .iter()
            .all(|p| o.next.get(p).is_some_and(|s| s.len() == 1 && s.contains(target)))
}

/// Whether a shortcut into the final atom would absorb it: the redex
/// outcome must be the only outcome of `n` and the only reference to the
/// final atom, so that `n` can take over the final role.
fn absorbs_final(neg: &Negotiation, n: &AtomId, r: &OutcomeName) -> bool {
    let Some(a) = neg.atom(n) else { return false };
    a.outcomes.len() == 1
        && a.outcomes.contains_key(r)
        && neg
            .outcomes()
            .filter(|(m, q, _)| !(*m == n && *q == r))
            .all(|(_, _, o)| o.referenced().all(|t| *t != neg.final_atom))
}

/// All shortcut redexes `(n, r, n')` with `n' != n`, in canonical order.
/// Shortcuts into the final atom are only listed when they absorb it.
pub fn find_shortcuts(neg: &Negotiation) -> Vec<Redex> {
    let mut out = Vec::new();
    for (n, r, o) in neg.outcomes() {
        let targets: BTreeSet<&AtomId> = o.referenced().collect();
        for t in targets {
            if t != n
                && unconditionally_enables(neg, n, r, t)
                && (*t != neg.final_atom || absorbs_final(neg, n, r))
            {
                out.push(Redex::Shortcut {
                    atom: n.clone(),
                    outcome: r.clone(),
                    target: t.clone(),
                });
            }
        }
    }
    out
}

pub fn apply_shortcut(
    neg: &Negotiation,
    atom: &AtomId,
    outcome: &OutcomeName,
    target: &AtomId,
) -> Result<(Negotiation, RuleApplication), RuleError> {
    let o = lookup(neg, atom, outcome)?;
    if atom == target || !unconditionally_enables(neg, atom, outcome, target) {
        return Err(RuleError::Guard {
            kind: RuleKind::Shortcut,
            site: format!("{atom}/{outcome}->{target}"),
        });
    }
    let into_final = *target == neg.final_atom;
    if into_final && !absorbs_final(neg, atom, outcome) {
        return Err(RuleError::FinalShortcutBlocked { atom: atom.clone() });
    }
    let t = &neg.atoms[target];
    let mut out = neg.clone();
    let outcomes = &mut out.atoms.get_mut(atom).unwrap().outcomes;
    outcomes.remove(outcome);
    let mut taken: BTreeSet<OutcomeName> = outcomes.keys().cloned().collect();
    let mut produced = Vec::new();
    for (r2, o2) in &t.outcomes {
        let next = o
            .next
            .iter()
            .map(|(a, ts)| match o2.next.get(a) {
                Some(ts2) if t.parties.contains(a) => (a.clone(), ts2.clone()),
                _ => (a.clone(), ts.clone()),
            })
            .collect();
        let fresh = fresh_name(&taken, format!("{outcome}.{r2}"));
        taken.insert(fresh.clone());
        outcomes.insert(
            fresh.clone(),
            Outcome {
                next,
                transformer: o.transformer.compose(&o2.transformer)?,
            },
        );
        produced.push((r2.clone(), fresh));
    }
    let removed = (!out.has_incoming(target) && *target != out.initial).then(|| target.clone());
    if let Some(t) = &removed {
        out.atoms.remove(t);
        if into_final {
            out.final_atom = atom.clone();
        }
    }
    Ok((
        out,
        RuleApplication {
            kind: RuleKind::Shortcut,
            atom: atom.clone(),
            outcomes: vec![outcome.clone()],
            target: Some(target.clone()),
            produced,
            removed_atom: removed,
        },
    ))
}

/// All outcomes that send every party straight back to their own atom.
pub fn find_iterations(neg: &Negotiation) -> Vec<Redex> {
    neg.outcomes()
        .filter(|(n, _, o)| is_self_loop(neg, n, o))
        .map(|(n, r, _)| Redex::Iteration {
            atom: n.clone(),
            outcome: r.clone(),
        })
        .collect()
}

fn is_self_loop(neg: &Negotiation, n: &AtomId, o: &Outcome) -> bool {
    neg.atom(n).is_some_and(|a| {
        a.parties
            .iter()
            .all(|p| o.next.get(p).is_some_and(|s| s.len() == 1 && s.contains(n)))
    })
}

pub fn apply_iteration(
    neg: &Negotiation,
    atom: &AtomId,
    outcome: &OutcomeName,
) -> Result<(Negotiation, RuleApplication), RuleError> {
    let o = lookup(neg, atom, outcome)?;
    if !is_self_loop(neg, atom, o) {
        return Err(RuleError::Guard {
            kind: RuleKind::Iteration,
            site: format!("{atom}/{outcome}"),
        });
    }
    let a = &neg.atoms[atom];
    if a.outcomes.len() == 1 {
        return Err(RuleError::OnlySelfLoop(atom.clone()));
    }
    let star = o.transformer.star()?;
    let mut renamed = BTreeMap::new();
    let mut produced = Vec::new();
    let mut taken = BTreeSet::new();
    for (r2, o2) in a.outcomes.iter().filter(|(r2, _)| *r2 != outcome) {
        let fresh = fresh_name(&taken, format!("{outcome}*.{r2}"));
        taken.insert(fresh.clone());
        renamed.insert(
            fresh.clone(),
            Outcome {
                next: o2.next.clone(),
                transformer: star.compose(&o2.transformer)?,
            },
        );
        produced.push((r2.clone(), fresh));
    }
    let mut out = neg.clone();
    out.atoms.get_mut(atom).unwrap().outcomes = renamed;
    Ok((
        out,
        RuleApplication {
            kind: RuleKind::Iteration,
            atom: atom.clone(),
            outcomes: vec![outcome.clone()],
            target: None,
            produced,
            removed_atom: None,
        },
    ))
}

pub fn apply(neg: &Negotiation, redex: &Redex) -> Result<(Negotiation, RuleApplication), RuleError> {
    match redex {
        Redex::Merge {
            atom,
            first,
            second,
        } => apply_merge(neg, atom, first, second),
        Redex::Shortcut {
            atom,
            outcome,
            target,
        } => apply_shortcut(neg, atom, outcome, target),
        Redex::Iteration { atom, outcome } => apply_iteration(neg, atom, outcome),
    }
}

/// How the final outcomes of a negotiation are renamed by a rule: each old
/// final outcome maps to the new final outcomes standing for it.
pub fn final_outcome_map(
    before: &Negotiation,
    app: &RuleApplication,
) -> BTreeMap<OutcomeName, Vec<OutcomeName>> {
    let finals = before
        .atom(&before.final_atom)
        .map(|a| a.outcomes.keys().cloned().collect::<Vec<_>>())
        .unwrap_or_default();
    let absorbed = app.kind == RuleKind::Shortcut
        && app.target.as_ref() == Some(&before.final_atom)
        && app.removed_atom.is_some();
    finals
        .into_iter()
        .map(|r| {
            let image = if absorbed {
                app.fresh(&r).into_iter().cloned().collect()
            } else {
                vec![r.clone()]
            };
            (r, image)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("replayed rule {index} ({line}) failed in the parent: {error}")]
    Guard {
        index: usize,
        line: String,
        error: RuleError,
    },
    #[error("rule {index} names {atom}/{outcome}, which has no counterpart in the parent")]
    Unmapped {
        index: usize,
        atom: AtomId,
        outcome: OutcomeName,
    },
}

/// Applies `transcript`, recorded on the split negotiation, to its parent.
///
/// Atoms are mapped through the split's back map, and outcome names through
/// a table that follows the fresh names each side produces. Guards are
/// checked again in the parent; a failure is reported, not assumed away.
pub fn replay(
    parent: &Negotiation,
    transcript: &[RuleApplication],
    split: &SplitNegotiation,
) -> Result<(Negotiation, Transcript), ReplayError> {
    let mut names: BTreeMap<(AtomId, OutcomeName), OutcomeName> = BTreeMap::new();
    for (n, atom) in &split.neg.atoms {
        for r in atom.outcomes.keys() {
            names.insert((n.clone(), r.clone()), r.clone());
        }
    }
    let back = |n: &AtomId| split.back_map.get(n).cloned().unwrap_or_else(|| n.clone());
    let mut current = parent.clone();
    let mut realized = Vec::with_capacity(transcript.len());
    for (index, app) in transcript.iter().enumerate() {
        let map = |n: &AtomId, r: &OutcomeName| {
            names
                .get(&(n.clone(), r.clone()))
                .cloned()
                .ok_or_else(|| ReplayError::Unmapped {
                    index,
                    atom: n.clone(),
                    outcome: r.clone(),
                })
        };
        let atom = back(&app.atom);
        let redex = match app.kind {
            RuleKind::Merge => Redex::Merge {
                atom: atom.clone(),
                first: map(&app.atom, &app.outcomes[0])?,
                second: map(&app.atom, &app.outcomes[1])?,
            },
            RuleKind::Shortcut => Redex::Shortcut {
                atom: atom.clone(),
                outcome: map(&app.atom, &app.outcomes[0])?,
                target: back(app.target.as_ref().expect("shortcut has a target")),
            },
            RuleKind::Iteration => Redex::Iteration {
                atom: atom.clone(),
                outcome: map(&app.atom, &app.outcomes[0])?,
            },
        };
        let (next, done) = apply(&current, &redex).map_err(|error| ReplayError::Guard {
            index,
            line: app.to_string(),
            error,
        })?;
        // carry fresh names across
        let mut carried = Vec::new();
        for (source, fresh) in &app.produced {
            let parent_source = match app.kind {
                RuleKind::Shortcut => {
                    let t = app.target.as_ref().unwrap();
                    map(t, source)?
                }
                _ => map(&app.atom, source)?,
            };
            if let Some(parent_fresh) = done.fresh(&parent_source) {
                carried.push(((app.atom.clone(), fresh.clone()), parent_fresh.clone()));
            }
        }
        names.extend(carried);
        current = next;
        realized.push(done);
    }
    Ok((current, Transcript(realized)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{is_deterministic, validate, Expr, NegotiationBuilder, Transformer};

    fn n(s: &str) -> AtomId {
        AtomId::new(s)
    }
    fn r(s: &str) -> OutcomeName {
        OutcomeName::new(s)
    }

    fn diamond() -> Negotiation {
        NegotiationBuilder::new(&["a", "b"])
            .atom("n0", &["a", "b"])
            .atom("n1", &["a", "b"])
            .atom("nf", &["a", "b"])
            .initial("n0")
            .final_atom("nf")
            .outcome_all("n0", "x", "n1")
            .outcome_all("n0", "y", "n1")
            .outcome_all("n0", "z", "n1")
            .outcome("n0", "w", &[("a", "n1"), ("b", "nf")])
            .outcome_all("n1", "r", "nf")
            .outcome("nf", "end", &[])
            .build_unchecked()
    }

    #[test]
    fn merge_redexes_need_identical_targets() {
        let neg = diamond();
        let m = find_merges(&neg);
        assert_eq!(m.len(), 3);
        assert_eq!(
            m[0],
            Redex::Merge {
                atom: n("n0"),
                first: r("x"),
                second: r("y")
            }
        );
        assert!(find_merges(&fixtures::fdm_cyclic()).is_empty());
    }

    #[test]
    fn merge_unions_the_transformers() {
        let neg = diamond();
        let (once, app) = apply_merge(&neg, &n("n0"), &r("x"), &r("y")).unwrap();
        assert_eq!(app.produced[0].1, "x+y");
        let merged = once.outcome(&n("n0"), &r("x+y")).unwrap();
        assert_eq!(
            merged.transformer,
            Transformer::Symbolic(Expr::union(Expr::label("n0", "x"), Expr::label("n0", "y")))
        );
        let (twice, _) = apply_merge(&once, &n("n0"), &r("x+y"), &r("z")).unwrap();
        assert_eq!(twice.atoms[&n("n0")].outcomes.len(), 2);
        assert!(apply_merge(&neg, &n("n0"), &r("x"), &r("w")).is_err());
    }

    #[test]
    fn fdm_unconditional_enabling() {
        let neg = fixtures::fdm_cyclic();
        // M is not a party of n1, so n1 cannot enable n2 unconditionally
        assert!(!unconditionally_enables(&neg, &n("n1"), &r("t"), &n("n2")));
        assert!(unconditionally_enables(&neg, &n("n2"), &r("r"), &n("n1")));
        assert!(find_iterations(&neg).is_empty());
    }

    #[test]
    fn shortcut_on_a_chain_removes_the_middle_atom() {
        let neg = NegotiationBuilder::new(&["a"])
            .atom("n0", &["a"])
            .atom("n1", &["a"])
            .atom("nf", &["a"])
            .initial("n0")
            .final_atom("nf")
            .outcome_all("n0", "r", "n1")
            .outcome_all("n1", "s", "nf")
            .outcome("nf", "end", &[])
            .build()
            .unwrap();
        let (out, app) = apply_shortcut(&neg, &n("n0"), &r("r"), &n("n1")).unwrap();
        assert_eq!(app.removed_atom, Some(n("n1")));
        assert_eq!(out.atom_count(), 2);
        let o = out.outcome(&n("n0"), &r("r.s")).unwrap();
        assert_eq!(o.next_of(&"a".into()), Some(&n("nf")));
        assert_eq!(
            o.transformer,
            Transformer::Symbolic(Expr::concat(Expr::label("n0", "r"), Expr::label("n1", "s")))
        );
        // and the last step absorbs the final atom
        let (single, app) = apply_shortcut(&out, &n("n0"), &r("r.s"), &n("nf")).unwrap();
        assert_eq!(single.atom_count(), 1);
        assert_eq!(single.final_atom, "n0");
        assert_eq!(app.produced, vec![(r("end"), r("r.s.end"))]);
        assert!(validate(&single).is_empty());
    }

    #[test]
    fn shortcut_into_final_needs_absorption() {
        let neg = diamond();
        assert!(matches!(
            apply_shortcut(&neg, &n("n1"), &r("r"), &n("nf")),
            Err(RuleError::FinalShortcutBlocked { .. })
        ));
        assert!(!find_shortcuts(&neg).iter().any(|x| matches!(x, Redex::Shortcut { target, .. } if *target == "nf")));
    }

    #[test]
    fn iteration_stars_the_self_loop() {
        let neg = NegotiationBuilder::new(&["a"])
            .atom("n0", &["a"])
            .atom("nf", &["a"])
            .initial("n0")
            .final_atom("nf")
            .outcome_all("n0", "again", "n0")
            .outcome_all("n0", "exit", "nf")
            .outcome("nf", "end", &[])
            .build()
            .unwrap();
        assert_eq!(
            find_iterations(&neg),
            vec![Redex::Iteration {
                atom: n("n0"),
                outcome: r("again")
            }]
        );
        let (out, app) = apply_iteration(&neg, &n("n0"), &r("again")).unwrap();
        assert_eq!(app.produced, vec![(r("exit"), r("again*.exit"))]);
        assert_eq!(
            out.outcome(&n("n0"), &r("again*.exit")).unwrap().transformer,
            Transformer::Symbolic(Expr::concat(
                Expr::star(Expr::label("n0", "again")),
                Expr::label("n0", "exit")
            ))
        );
        assert!(is_deterministic(&out));
    }

    #[test]
    fn iteration_refuses_to_empty_an_atom() {
        let neg = NegotiationBuilder::new(&["a"])
            .atom("n0", &["a"])
            .atom("n1", &["a"])
            .atom("nf", &["a"])
            .initial("n0")
            .final_atom("nf")
            .outcome_all("n0", "r", "n1")
            .outcome_all("n0", "s", "nf")
            .outcome_all("n1", "again", "n1")
            .outcome("nf", "end", &[])
            .build()
            .unwrap();
        assert_eq!(
            apply_iteration(&neg, &n("n1"), &r("again")),
            Err(RuleError::OnlySelfLoop(n("n1")))
        );
    }

    #[test]
    fn fresh_names_avoid_collisions() {
        let neg = NegotiationBuilder::new(&["a"])
            .atom("n0", &["a"])
            .atom("nf", &["a"])
            .initial("n0")
            .final_atom("nf")
            .outcome_all("n0", "x", "nf")
            .outcome_all("n0", "y", "nf")
            .outcome("n0", "x+y", &[("a", "n0")])
            .outcome("nf", "end", &[])
            .build()
            .unwrap();
        let (out, app) = apply_merge(&neg, &n("n0"), &r("x"), &r("y")).unwrap();
        assert_eq!(app.produced[0].1, "x+y'");
        assert_eq!(out.atoms[&n("n0")].outcomes.len(), 2);
    }

    #[test]
    fn trace_lines_round_trip() {
        let app = RuleApplication {
            kind: RuleKind::Shortcut,
            atom: n("n1"),
            outcomes: vec![r("a")],
            target: Some(n("n3")),
            produced: vec![(r("a"), r("a.a")), (r("b"), r("a.b"))],
            removed_atom: None,
        };
        let line = app.to_string();
        assert_eq!(line, "shortcut atom=n1 outcomes=a target=n3 fresh=a:a.a,b:a.b removed=-");
        assert_eq!(line.parse::<RuleApplication>().unwrap(), app);
        let t = Transcript(vec![app.clone(), app]);
        assert_eq!(t.to_string().parse::<Transcript>().unwrap(), t);
    }

    #[test]
    fn empty_replay_is_identity() {
        let neg = fixtures::fig3();
        let split = crate::structure::split_negotiation(
            &neg,
            &crate::structure::fragment(
                &neg,
                &crate::semantics::reachability_graph(&neg, 1000).unwrap(),
                &n("n2"),
            ),
        )
        .unwrap();
        let (out, t) = replay(&neg, &[], &split).unwrap();
        assert_eq!(out, neg);
        assert!(t.is_empty());
    }
}
