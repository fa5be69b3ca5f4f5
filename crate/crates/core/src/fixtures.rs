//! Hand-built negotiations used by tests, examples and the golden files in
//! `fixtures/`.
//!
//! The figure reconstructions fill in details the drawings leave implicit
//! (outcome names, exact hyperarcs); each one is pinned down by the loops,
//! markings and rule counts that the prose states about it.

use std::sync::Arc;

use crate::model::{Negotiation, NegotiationBuilder, Relation, StateSpace, Transformer};

const FDM: [&str; 3] = ["D", "F", "M"];

fn build(b: NegotiationBuilder) -> Negotiation {
    b.build().expect("fixture is well-formed")
}

/// Father, Daughter and Mother agree on a return time; Mother may send the
/// proposal back for renegotiation (outcome `r`).
pub fn fdm_cyclic() -> Negotiation {
    build(fdm_cyclic_builder())
}

fn fdm_cyclic_builder() -> NegotiationBuilder {
    NegotiationBuilder::new(&FDM)
        .atom("n0", &FDM)
        .atom("n1", &["F", "D"])
        .atom("n2", &FDM)
        .atom("nf", &FDM)
        .initial("n0")
        .final_atom("nf")
        .outcome("n0", "yes", &[("F", "n1"), ("D", "n1"), ("M", "n2")])
        .outcome_all("n0", "no", "nf")
        .outcome_all("n1", "t", "n2")
        .outcome_all("n2", "yes", "nf")
        .outcome("n2", "r", &[("F", "n1"), ("D", "n1"), ("M", "n2")])
        .outcome("nf", "end", &[])
}

/// [`fdm_cyclic`] with Mother's renegotiation arc bent to `n1`, where she is
/// not a party. Deterministic, well-formed, unsound.
pub fn fdm_mutant() -> Negotiation {
    build(fdm_cyclic_builder().outcome(
        "n2",
        "r",
        &[("F", "n1"), ("D", "n1"), ("M", "n1")],
    ))
}

fn fdm_acyclic_builder(mother: Vec<&'static str>) -> NegotiationBuilder {
    NegotiationBuilder::new(&FDM)
        .atom("n0", &FDM)
        .atom("nFD", &["F", "D"])
        .atom("nDM", &["D", "M"])
        .atom("nf", &FDM)
        .initial("n0")
        .final_atom("nf")
        .hyper_outcome(
            "n0",
            "st",
            &[("F", vec!["nFD"]), ("D", vec!["nFD"]), ("M", mother)],
        )
        .outcome_all("nFD", "yes", "nf")
        .outcome_all("nFD", "no", "nf")
        .outcome("nFD", "am", &[("F", "nf"), ("D", "nDM")])
        .outcome_all("nDM", "yes", "nf")
        .outcome_all("nDM", "no", "nf")
        .outcome("nf", "end", &[])
}

/// Father and Daughter negotiate, possibly asking Mother. Mother's hyperarc
/// from `n0` makes this negotiation nondeterministic (and sound).
pub fn fdm_acyclic() -> Negotiation {
    build(fdm_acyclic_builder(vec!["nDM", "nf"]))
}

/// [`fdm_acyclic`] with Mother sent only to `nDM`: deterministic, and the
/// sequence `(n0,st)(nFD,yes)` deadlocks.
pub fn fdm_deadlock() -> Negotiation {
    build(fdm_acyclic_builder(vec!["nDM"]))
}

/// The cyclic negotiation reduced step by step in the worked example of the
/// reduction procedure: inner loop `n2 n4` over F and D, outer loops through
/// `n1` and `n5` over all three agents.
pub fn fig3() -> Negotiation {
    build(
        NegotiationBuilder::new(&FDM)
            .atom("n0", &FDM)
            .atom("n1", &FDM)
            .atom("n2", &["F", "D"])
            .atom("n3", &FDM)
            .atom("n4", &["F", "D"])
            .atom("n5", &FDM)
            .atom("nf", &FDM)
            .initial("n0")
            .final_atom("nf")
            .outcome_all("n0", "a", "n1")
            .outcome("n1", "a", &[("F", "n2"), ("D", "n2"), ("M", "n5")])
            .outcome_all("n1", "b", "n3")
            .outcome_all("n2", "a", "n4")
            .outcome_all("n3", "a", "n5")
            .outcome_all("n4", "a", "n5")
            .outcome_all("n4", "b", "n2")
            .outcome_all("n5", "a", "nf")
            .outcome_all("n5", "b", "n1")
            .outcome("nf", "end", &[])
    )
}

/// Sound and cyclic, yet without loops: the only large step is
/// `n0 n1 n2 n1 nf`. Nondeterministic (A's hyperarc out of `n1`).
pub fn fig4_left() -> Negotiation {
    build(
        NegotiationBuilder::new(&["A", "B"])
            .atom("n0", &["A", "B"])
            .atom("n1", &["A"])
            .atom("n2", &["A", "B"])
            .atom("nf", &["A", "B"])
            .initial("n0")
            .final_atom("nf")
            .outcome("n0", "r", &[("A", "n1"), ("B", "n2")])
            .hyper_outcome("n1", "r", &[("A", vec!["n2", "nf"])])
            .outcome("n2", "r", &[("A", "n1"), ("B", "nf")])
            .outcome("nf", "r", &[])
    )
}

/// Deterministic version of [`fig4_left`] in which A must return to `n2`:
/// cyclic, unsound, and no split is acyclic.
pub fn fig4_left_deterministic() -> Negotiation {
    build(
        NegotiationBuilder::new(&["A", "B"])
            .atom("n0", &["A", "B"])
            .atom("n1", &["A"])
            .atom("n2", &["A", "B"])
            .atom("nf", &["A", "B"])
            .initial("n0")
            .final_atom("nf")
            .outcome("n0", "r", &[("A", "n1"), ("B", "n2")])
            .outcome("n1", "r", &[("A", "n2")])
            .outcome("n2", "r", &[("A", "n1"), ("B", "nf")])
            .outcome("nf", "r", &[])
    )
}

/// Sound nondeterministic negotiation whose loop `n1 n2` has no
/// synchronizer.
pub fn fig4_right() -> Negotiation {
    build(
        NegotiationBuilder::new(&["A", "B", "C"])
            .atom("n0", &["A", "B", "C"])
            .atom("n1", &["A", "B"])
            .atom("n2", &["B", "C"])
            .atom("nf", &["A", "B", "C"])
            .initial("n0")
            .final_atom("nf")
            .hyper_outcome(
                "n0",
                "r",
                &[
                    ("A", vec!["n1", "nf"]),
                    ("B", vec!["n1", "nf"]),
                    ("C", vec!["n2", "nf"]),
                ],
            )
            .hyper_outcome("n1", "r", &[("A", vec!["n1", "nf"]), ("B", vec!["n2"])])
            .hyper_outcome("n2", "r", &[("B", vec!["n1", "nf"]), ("C", vec!["n2", "nf"])])
            .outcome("nf", "r", &[])
    )
}

/// One-agent negotiation whose single loop `(n1,a)(n3,a)(n4,b)` makes the
/// shortcut rule add outcomes when replayed on the whole negotiation.
pub fn fig5() -> Negotiation {
    build(
        NegotiationBuilder::new(&["a"])
            .atom("n0", &["a"])
            .atom("n1", &["a"])
            .atom("n2", &["a"])
            .atom("n3", &["a"])
            .atom("n4", &["a"])
            .atom("n5", &["a"])
            .atom("nf", &["a"])
            .initial("n0")
            .final_atom("nf")
            .outcome_all("n0", "a", "n1")
            .outcome_all("n0", "b", "n2")
            .outcome_all("n1", "a", "n3")
            .outcome_all("n2", "a", "n3")
            .outcome_all("n2", "b", "n4")
            .outcome_all("n3", "a", "n4")
            .outcome_all("n3", "b", "nf")
            .outcome_all("n3", "c", "n5")
            .outcome_all("n4", "a", "nf")
            .outcome_all("n4", "b", "n1")
            .outcome_all("n5", "a", "nf")
            .outcome("nf", "end", &[])
    )
}

/// Acyclic and deterministic; `n1` and `n2` each wait for the agent the
/// other one holds.
pub fn acyclic_deadlock() -> Negotiation {
    build(
        NegotiationBuilder::new(&["A", "B"])
            .atom("n0", &["A", "B"])
            .atom("n1", &["A", "B"])
            .atom("n2", &["A", "B"])
            .atom("nf", &["A", "B"])
            .initial("n0")
            .final_atom("nf")
            .outcome("n0", "r", &[("A", "n1"), ("B", "n2")])
            .outcome_all("n1", "r", "nf")
            .outcome_all("n2", "r", "nf")
            .outcome("nf", "end", &[])
    )
}

/// A single atom that is both initial and final.
pub fn single_atom() -> Negotiation {
    build(
        NegotiationBuilder::new(&["a", "b"])
            .atom("n0", &["a", "b"])
            .initial("n0")
            .final_atom("n0")
            .outcome("n0", "r", &[])
    )
}

/// Two atoms in sequence.
pub fn chain() -> Negotiation {
    build(
        NegotiationBuilder::new(&["a", "b"])
            .atom("n0", &["a", "b"])
            .atom("nf", &["a", "b"])
            .initial("n0")
            .final_atom("nf")
            .outcome_all("n0", "r", "nf")
            .outcome("nf", "end", &[])
    )
}

/// Every named fixture, for corpus-wide tests.
pub fn all() -> Vec<(&'static str, Negotiation)> {
    vec![
        ("acyclic_deadlock", acyclic_deadlock()),
        ("chain", chain()),
        ("fdm_acyclic", fdm_acyclic()),
        ("fdm_cyclic", fdm_cyclic()),
        ("fdm_deadlock", fdm_deadlock()),
        ("fdm_mutant", fdm_mutant()),
        ("fig3", fig3()),
        ("fig4_left", fig4_left()),
        ("fig4_left_deterministic", fig4_left_deterministic()),
        ("fig4_right", fig4_right()),
        ("fig5", fig5()),
        ("nfd_times", nfd_times()),
        ("single_atom", single_atom()),
    ]
}

/// Local states of Father and Daughter in the return-time example: `bot`
/// plus the times `t1 < t2 < t3`.
pub fn nfd_space() -> Arc<StateSpace> {
    let times = vec!["bot", "t1", "t2", "t3"];
    Arc::new(StateSpace::from_labels([("D", times.clone()), ("F", times)]).expect("small space"))
}

/// Time index of a label, `None` for `bot`.
fn time(space: &StateSpace, state: usize, agent: usize) -> Option<usize> {
    match space.component(state, agent) {
        0 => None,
        t => Some(t),
    }
}

/// `yes`: both agree on a time between their proposals. States where
/// someone is already at `bot` go to `(bot,bot)` so the relation stays
/// left-total.
pub fn nfd_yes() -> Relation {
    let sp = nfd_space();
    let mut pairs = Vec::new();
    for q in 0..sp.size() {
        match (time(&sp, q, 0), time(&sp, q, 1)) {
            (Some(td), Some(tf)) => {
                for t in td.min(tf)..=td.max(tf) {
                    pairs.push((q, sp.encode(&[t, t]).unwrap()));
                }
            }
            _ => pairs.push((q, 0)),
        }
    }
    Relation::from_pairs(sp, pairs).expect("left-total")
}

/// `no`: both end at `bot`.
pub fn nfd_no() -> Relation {
    let sp = nfd_space();
    Relation::from_pairs(sp.clone(), (0..sp.size()).map(|q| (q, 0))).expect("left-total")
}

/// The Father-Daughter atom on its own, with the concrete transformers
/// above, followed by a final atom that keeps the states.
pub fn nfd_times() -> Negotiation {
    let sp = nfd_space();
    build(
        NegotiationBuilder::new(&["D", "F"])
            .atom("nFD", &["D", "F"])
            .atom("nf", &["D", "F"])
            .initial("nFD")
            .final_atom("nf")
            .states(sp.clone())
            .outcome_all("nFD", "yes", "nf")
            .outcome_all("nFD", "no", "nf")
            .outcome("nf", "end", &[])
            .delta("nFD", "yes", Transformer::Concrete(nfd_yes()))
            .delta("nFD", "no", Transformer::Concrete(nfd_no()))
            .delta("nf", "end", Transformer::Concrete(Relation::identity(sp))),
    )
}
