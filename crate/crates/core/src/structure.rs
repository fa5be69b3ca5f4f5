//! Static and behavioural structure: the negotiation graph, loops,
//! synchronizers, fragments and split negotiations.
//!
//! Loops are behavioural, so everything past the negotiation graph is
//! computed on the reachability graph.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use petgraph::algo::dominators::simple_fast;
use petgraph::algo::{is_cyclic_directed, tarjan_scc};
use petgraph::graphmap::DiGraphMap;
use thiserror::Error;

use crate::model::{AtomId, Atom, Negotiation, Outcome, OutcomeName, Transformer};
use crate::semantics::{Marking, ReachabilityGraph};

/// Default cap on the number of elementary cycles enumerated.
pub const DEFAULT_CYCLE_LIMIT: usize = 100_000;

/// Name of the placeholder outcome of the fresh final atom of a split.
pub const SPLIT_FINAL_OUTCOME: &str = "done";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("more than {0} elementary cycles")]
    CycleLimit(usize),
    #[error("fragment of {0} is empty")]
    EmptyFragment(AtomId),
}

/// The graph of a negotiation: an edge `n -> n'` whenever some party of `n`
/// may go to `n'`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegGraph {
    pub vertices: BTreeSet<AtomId>,
    pub edges: BTreeSet<(AtomId, AtomId)>,
}

pub fn negotiation_graph(neg: &Negotiation) -> NegGraph {
    let mut edges = BTreeSet::new();
    for (n, _, o) in neg.outcomes() {
        for t in o.referenced() {
            edges.insert((n.clone(), t.clone()));
        }
    }
    NegGraph {
        vertices: neg.atoms.keys().cloned().collect(),
        edges,
    }
}

impl NegGraph {
    fn to_petgraph(&self) -> (Vec<&AtomId>, DiGraphMap<usize, ()>) {
        let names: Vec<&AtomId> = self.vertices.iter().collect();
        let ix = |n: &AtomId| names.binary_search(&n).unwrap_or(usize::MAX);
        let mut g = DiGraphMap::new();
        for i in 0..names.len() {
            g.add_node(i);
        }
        for (a, b) in &self.edges {
            g.add_edge(ix(a), ix(b), ());
        }
        (names, g)
    }

    /// Atoms every path from `root` to which passes through `s`, excluding
    /// `s` itself. Empty if `s` is unreachable from `root`.
    pub fn dominated_by(&self, root: &AtomId, s: &AtomId) -> BTreeSet<AtomId> {
        let (names, g) = self.to_petgraph();
        let ix = |n: &AtomId| names.binary_search(&n).ok();
        let (Some(r), Some(si)) = (ix(root), ix(s)) else {
            return BTreeSet::new();
        };
        let dom = simple_fast(&g, r);
        names
            .iter()
            .enumerate()
            .filter(|&(v, _)| v != si && dom.dominators(v).is_some_and(|mut d| d.any(|x| x == si)))
            .map(|(_, n)| (*n).clone())
            .collect()
    }

    /// True if the graph has no cycles; a self-loop is a cycle.
    pub fn is_acyclic(&self) -> bool {
        !is_cyclic_directed(&self.to_petgraph().1)
    }

    /// Kahn's algorithm, always picking the smallest available name.
    /// `None` if the graph is cyclic.
    pub fn topological_order(&self) -> Option<Vec<AtomId>> {
        let mut indeg: BTreeMap<&AtomId, usize> = self.vertices.iter().map(|v| (v, 0)).collect();
        let mut succ: BTreeMap<&AtomId, Vec<&AtomId>> = BTreeMap::new();
        for (a, b) in &self.edges {
            *indeg.entry(b).or_default() += 1;
            succ.entry(a).or_default().push(b);
        }
        let mut ready: BinaryHeap<Reverse<&AtomId>> = indeg
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(v, _)| Reverse(*v))
            .collect();
        let mut order = Vec::with_capacity(self.vertices.len());
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v.clone());
            for w in succ.get(v).into_iter().flatten() {
                let d = indeg.get_mut(w).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(*w));
                }
            }
        }
        (order.len() == self.vertices.len()).then_some(order)
    }

    /// Whether the subgraph induced by `atoms` is strongly connected.
    pub fn induces_strongly_connected(&self, atoms: &BTreeSet<AtomId>) -> bool {
        let sub = NegGraph {
            vertices: atoms.clone(),
            edges: self
                .edges
                .iter()
                .filter(|(a, b)| atoms.contains(a) && atoms.contains(b))
                .cloned()
                .collect(),
        };
        tarjan_scc(&sub.to_petgraph().1).len() <= 1
    }
}

/// An elementary cycle of the reachability graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loop {
    pub steps: Vec<(AtomId, OutcomeName)>,
    /// The marking the loop starts and ends at.
    pub base: Marking,
    /// Reachability-graph nodes visited, starting with `base`.
    pub nodes: Vec<usize>,
}

impl Loop {
    pub fn atoms(&self) -> BTreeSet<AtomId> {
        self.steps.iter().map(|(n, _)| n.clone()).collect()
    }
}

/// Elementary cycles of the reachability graph, parallel edges expanded.
///
/// Johnson's algorithm on the node graph; every node cycle is then expanded
/// into one loop per choice of edge label. Each cycle starts at its
/// smallest node.
pub fn elementary_cycles(
    rg: &ReachabilityGraph,
    cycle_limit: usize,
) -> Result<Vec<Loop>, StructureError> {
    let n = rg.nodes.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut labels: BTreeMap<(usize, usize), Vec<(AtomId, OutcomeName)>> = BTreeMap::new();
    for e in &rg.edges {
        let l = labels.entry((e.source, e.target)).or_default();
        if l.is_empty() {
            succ[e.source].push(e.target);
        }
        l.push((e.atom.clone(), e.outcome.clone()));
    }
    for s in succ.iter_mut() {
        s.sort_unstable();
    }

    let mut loops = Vec::new();
    let emit = |cycle: &[usize], loops: &mut Vec<Loop>| -> Result<(), StructureError> {
        let mut partial: Vec<Vec<(AtomId, OutcomeName)>> = vec![Vec::new()];
        for (i, &v) in cycle.iter().enumerate() {
            let w = cycle[(i + 1) % cycle.len()];
            let options = &labels[&(v, w)];
            partial = partial
                .into_iter()
                .flat_map(|p| {
                    options.iter().map(move |o| {
                        let mut q = p.clone();
                        q.push(o.clone());
                        q
                    })
                })
                .collect();
        }
        for steps in partial {
            if loops.len() >= cycle_limit {
                return Err(StructureError::CycleLimit(cycle_limit));
            }
            loops.push(Loop {
                steps,
                base: rg.nodes[cycle[0]].clone(),
                nodes: cycle.to_vec(),
            });
        }
        Ok(())
    };

    for start in 0..n {
        let comp = component_from(start, &succ);
        if comp.is_empty() {
            continue;
        }
        let sub = |v: usize| succ[v].iter().copied().filter(|w| comp.contains(w));
        // iterative circuit search
        let mut blocked = BTreeSet::from([start]);
        let mut b: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        let mut closed: BTreeSet<usize> = BTreeSet::new();
        let mut path = vec![start];
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(start, sub(start).rev().collect())];
        while let Some((this, nbrs)) = stack.last_mut() {
            let this = *this;
            if let Some(next) = nbrs.pop() {
                if next == start {
                    emit(&path, &mut loops)?;
                    closed.extend(path.iter().copied());
                } else if !blocked.contains(&next) {
                    path.push(next);
                    stack.push((next, sub(next).rev().collect()));
                    closed.remove(&next);
                    blocked.insert(next);
                    continue;
                }
            }
            if stack.last().is_some_and(|(_, nb)| nb.is_empty()) {
                if closed.contains(&this) {
                    let mut todo = vec![this];
                    while let Some(u) = todo.pop() {
                        if blocked.remove(&u) {
                            todo.extend(b.remove(&u).into_iter().flatten());
                        }
                    }
                } else {
                    for w in sub(this) {
                        b.entry(w).or_default().insert(this);
                    }
                }
                stack.pop();
                path.pop();
            }
        }
    }
    loops.sort_by(|x, y| (&x.nodes[0], &x.steps).cmp(&(&y.nodes[0], &y.steps)));
    Ok(loops)
}

/// Nodes `>= start` in the same strongly connected component as `start`,
/// within the subgraph induced by nodes `>= start`. Empty if `start` lies on
/// no cycle there.
fn component_from(start: usize, succ: &[Vec<usize>]) -> BTreeSet<usize> {
    let reach = |fwd: bool| {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        let mut pred: Vec<Vec<usize>> = Vec::new();
        if !fwd {
            pred = vec![Vec::new(); succ.len()];
            for (v, ws) in succ.iter().enumerate() {
                for &w in ws {
                    pred[w].push(v);
                }
            }
        }
        while let Some(v) = queue.pop_front() {
            let next = if fwd { &succ[v] } else { &pred[v] };
            for &w in next {
                if w >= start && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    if !fwd.contains(&start) {
        return BTreeSet::new();
    }
    let bwd = reach(false);
    fwd.intersection(&bwd).copied().collect()
}

/// Loops whose atom sets are minimal under proper inclusion.
pub fn enumerate_minimal_loops(
    rg: &ReachabilityGraph,
    cycle_limit: usize,
) -> Result<Vec<Loop>, StructureError> {
    let all = elementary_cycles(rg, cycle_limit)?;
    let sets: BTreeSet<BTreeSet<AtomId>> = all.iter().map(Loop::atoms).collect();
    Ok(all
        .into_iter()
        .filter(|l| {
            let a = l.atoms();
            !sets.iter().any(|o| o.len() < a.len() && o.is_subset(&a))
        })
        .collect())
}

/// Atoms of the loop whose parties include the parties of every loop atom.
pub fn synchronizers(neg: &Negotiation, lp: &Loop) -> BTreeSet<AtomId> {
    let atoms = lp.atoms();
    let parties = |n: &AtomId| neg.atom(n).map(|a| &a.parties);
    atoms
        .iter()
        .filter(|s| {
            let Some(ps) = parties(s) else { return false };
            atoms
                .iter()
                .all(|m| parties(m).is_some_and(|pm| pm.is_subset(ps)))
        })
        .cloned()
        .collect()
}

/// The atoms and outcomes of all loops synchronized by `synchronizer`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub synchronizer: AtomId,
    /// Projected atoms: atom name to the outcomes occurring in the loops.
    pub atoms: BTreeMap<AtomId, BTreeSet<OutcomeName>>,
}

impl Fragment {
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn contains(&self, atom: &AtomId, outcome: &OutcomeName) -> bool {
        self.atoms.get(atom).is_some_and(|rs| rs.contains(outcome))
    }

    pub fn outcome_count(&self) -> usize {
        self.atoms.values().map(BTreeSet::len).sum()
    }
}

/// Computes `F_s` exactly.
///
/// A loop synchronized by `s` is a closed walk of the reachability graph that
/// uses an `s`-edge and only atoms whose parties are included in `P_s`. So
/// `F_s` collects the edges inside those strongly connected components of the
/// restricted graph that contain an `s`-edge.
pub fn fragment(neg: &Negotiation, rg: &ReachabilityGraph, s: &AtomId) -> Fragment {
    fragment_within(neg, rg, s, None)
}

/// [`fragment`] with the loops further confined to `within`.
pub fn fragment_within(
    neg: &Negotiation,
    rg: &ReachabilityGraph,
    s: &AtomId,
    within: Option<&BTreeSet<AtomId>>,
) -> Fragment {
    let mut out = Fragment {
        synchronizer: s.clone(),
        atoms: BTreeMap::new(),
    };
    let Some(ps) = neg.atom(s).map(|a| &a.parties) else {
        return out;
    };
    let allowed: BTreeSet<&AtomId> = neg
        .atoms
        .iter()
        .filter(|(n, a)| a.parties.is_subset(ps) && within.is_none_or(|w| w.contains(*n)))
        .map(|(n, _)| n)
        .collect();
    let mut g: DiGraphMap<usize, ()> = DiGraphMap::new();
    for e in rg.edges.iter().filter(|e| allowed.contains(&e.atom)) {
        g.add_edge(e.source, e.target, ());
    }
    let mut comp_of: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, comp) in tarjan_scc(&g).into_iter().enumerate() {
        for v in comp {
            comp_of.insert(v, i);
        }
    }
    let internal = |e: &crate::semantics::Edge| {
        allowed.contains(&e.atom)
            && comp_of.contains_key(&e.source)
            && comp_of.get(&e.source) == comp_of.get(&e.target)
    };
    let seeded: BTreeSet<usize> = rg
        .edges
        .iter()
        .filter(|e| e.atom == *s && internal(e))
        .map(|e| comp_of[&e.source])
        .collect();
    for e in rg.edges.iter().filter(|e| internal(e)) {
        if seeded.contains(&comp_of[&e.source]) {
            out.atoms
                .entry(e.atom.clone())
                .or_default()
                .insert(e.outcome.clone());
        }
    }
    out
}

/// `F_s` rebuilt from a family of elementary cycles: the cycles within
/// `P_s` that use `s`, closed under sharing a marking with a cycle already
/// taken. Agrees with [`fragment`] when `loops` holds all elementary cycles.
pub fn fragment_from_loops(neg: &Negotiation, s: &AtomId, loops: &[Loop]) -> Fragment {
    let mut out = Fragment {
        synchronizer: s.clone(),
        atoms: BTreeMap::new(),
    };
    let Some(ps) = neg.atom(s).map(|a| &a.parties) else {
        return out;
    };
    let within: Vec<&Loop> = loops
        .iter()
        .filter(|l| {
            l.steps
                .iter()
                .all(|(n, _)| neg.atom(n).is_some_and(|a| a.parties.is_subset(ps)))
        })
        .collect();
    let mut taken: Vec<bool> = within.iter().map(|l| l.atoms().contains(s)).collect();
    let mut nodes: BTreeSet<usize> = BTreeSet::new();
    loop {
        for (l, _) in within.iter().zip(&taken).filter(|(_, t)| **t) {
            nodes.extend(l.nodes.iter().copied());
        }
        let mut grew = false;
        for (i, l) in within.iter().enumerate() {
            if !taken[i] && l.nodes.iter().any(|v| nodes.contains(v)) {
                taken[i] = true;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    for (l, _) in within.iter().zip(&taken).filter(|(_, t)| **t) {
        for (n, r) in &l.steps {
            out.atoms.entry(n.clone()).or_default().insert(r.clone());
        }
    }
    out
}

/// Atoms that synchronize at least one loop.
pub fn synchronizer_atoms(neg: &Negotiation, rg: &ReachabilityGraph) -> BTreeSet<AtomId> {
    neg.atoms
        .keys()
        .filter(|s| !fragment(neg, rg, s).is_empty())
        .cloned()
        .collect()
}

/// Outcomes of fragment atoms that are not fragment outcomes.
pub fn exits(neg: &Negotiation, f: &Fragment) -> Vec<(AtomId, OutcomeName)> {
    let mut out = Vec::new();
    for (n, rs) in &f.atoms {
        if let Some(atom) = neg.atom(n) {
            for r in atom.outcomes.keys().filter(|r| !rs.contains(*r)) {
                out.push((n.clone(), r.clone()));
            }
        }
    }
    out
}

/// The s-negotiation `N_s`: the fragment with `s` split into an initial
/// copy (keeping the name `s`) and a fresh final atom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitNegotiation {
    pub neg: Negotiation,
    pub synchronizer: AtomId,
    /// The fresh final atom `n_sf`.
    pub split_final: AtomId,
    /// Atom of `N_s` to atom of the parent; both halves of `s` map to `s`.
    pub back_map: BTreeMap<AtomId, AtomId>,
}

pub fn split_negotiation(
    neg: &Negotiation,
    f: &Fragment,
) -> Result<SplitNegotiation, StructureError> {
    let s = &f.synchronizer;
    let s_atom = match neg.atom(s) {
        Some(a) if !f.is_empty() => a,
        _ => return Err(StructureError::EmptyFragment(s.clone())),
    };
    let mut fin = AtomId::new(format!("{s}_f"));
    while neg.atoms.contains_key(&fin) {
        fin = AtomId::new(format!("{fin}'"));
    }
    let mut atoms = BTreeMap::new();
    let mut back_map = BTreeMap::new();
    for (n, rs) in &f.atoms {
        let parent = &neg.atoms[n];
        let mut atom = Atom::new(parent.parties.iter().cloned());
        for r in rs {
            let o = &parent.outcomes[r];
            let next = o
                .next
                .iter()
                .map(|(a, ts)| {
                    let ts = ts
                        .iter()
                        .map(|t| if t == s { fin.clone() } else { t.clone() })
                        .collect();
                    (a.clone(), ts)
                })
                .collect();
            atom.outcomes.insert(
                r.clone(),
                Outcome {
                    next,
                    transformer: o.transformer.clone(),
                },
            );
        }
        atoms.insert(n.clone(), atom);
        back_map.insert(n.clone(), n.clone());
    }
    let identity = s_atom
        .outcomes
        .values()
        .next()
        .map(|o| o.transformer.identity_like())
        .unwrap_or(Transformer::Symbolic(crate::model::Expr::Identity));
    let mut final_atom = Atom::new(s_atom.parties.iter().cloned());
    final_atom.outcomes.insert(
        OutcomeName::new(SPLIT_FINAL_OUTCOME),
        Outcome {
            next: s_atom
                .parties
                .iter()
                .map(|a| (a.clone(), BTreeSet::new()))
                .collect(),
            transformer: identity,
        },
    );
    atoms.insert(fin.clone(), final_atom);
    back_map.insert(fin.clone(), s.clone());
    Ok(SplitNegotiation {
        neg: Negotiation {
            agents: s_atom.parties.clone(),
            atoms,
            initial: s.clone(),
            final_atom: fin.clone(),
            states: neg.states.clone(),
        },
        synchronizer: s.clone(),
        split_final: fin,
        back_map,
    })
}

/// The synchronizer chosen for one round of the cyclic reduction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub synchronizer: AtomId,
    pub fragment: Fragment,
    pub split: SplitNegotiation,
}

/// Picks `s` with a nonempty fragment and an acyclic `N_s`, preferring the
/// fewest fragment atoms and then the smallest name.
///
/// Exact fragments come first. With nested loops none of them may split
/// acyclically, since the fragment of an atom on an outer loop holds every
/// inner loop too. Then each atom is tried with its fragment confined to
/// the atoms it dominates, which picks out innermost loop bodies. Last,
/// every elementary cycle offers its synchronizers with fragments confined
/// to the cycle's atoms, closed fragments first. `None` if nothing works or
/// the cycles exceed `cycle_limit`.
pub fn select_synchronizer(neg: &Negotiation, rg: &ReachabilityGraph) -> Option<Selection> {
    select_synchronizer_with(neg, rg, DEFAULT_CYCLE_LIMIT)
}

pub fn select_synchronizer_with(
    neg: &Negotiation,
    rg: &ReachabilityGraph,
    cycle_limit: usize,
) -> Option<Selection> {
    let exact = best_split(neg, neg.atoms.keys().map(|s| (0, fragment(neg, rg, s))));
    if exact.is_some() {
        return exact;
    }
    let graph = negotiation_graph(neg);
    let dominated = best_split(
        neg,
        neg.atoms.keys().map(|s| {
            let mut body = graph.dominated_by(&neg.initial, s);
            body.insert(s.clone());
            (0, fragment_within(neg, rg, s, Some(&body)))
        }),
    );
    if dominated.is_some() {
        return dominated;
    }
    let cycles = elementary_cycles(rg, cycle_limit).ok()?;
    let atom_sets: BTreeSet<(BTreeSet<AtomId>, BTreeSet<AtomId>)> = cycles
        .iter()
        .map(|l| (l.atoms(), synchronizers(neg, l)))
        .collect();
    best_split(
        neg,
        atom_sets.iter().flat_map(|(atoms, syncs)| {
            syncs.iter().map(move |s| {
                let f = fragment_within(neg, rg, s, Some(atoms));
                (usize::from(!is_closed(neg, &f)), f)
            })
        }),
    )
}

/// Whether every atom of `f` other than its synchronizer is entered only
/// through fragment outcomes. Replaying the reduction of a closed fragment
/// removes all those atoms.
pub fn is_closed(neg: &Negotiation, f: &Fragment) -> bool {
    neg.atoms.iter().all(|(n, atom)| {
        atom.outcomes.iter().all(|(r, o)| {
            f.contains(n, r)
                || o
                    .next
                    .values()
                    .flatten()
                    .all(|t| t == &f.synchronizer || !f.atoms.contains_key(t))
        })
    })
}

/// The candidate with the smallest (rank, atom count, name) whose split is
/// acyclic.
fn best_split(
    neg: &Negotiation,
    candidates: impl Iterator<Item = (usize, Fragment)>,
) -> Option<Selection> {
    let mut best: Option<((usize, usize, AtomId), Selection)> = None;
    for (rank, f) in candidates {
        let key = (rank, f.atoms.len(), f.synchronizer.clone());
        if f.is_empty() || best.as_ref().is_some_and(|(k, _)| *k <= key) {
            continue;
        }
        let Ok(split) = split_negotiation(neg, &f) else {
            continue;
        };
        if negotiation_graph(&split.neg).is_acyclic() {
            let selection = Selection {
                synchronizer: f.synchronizer.clone(),
                fragment: f,
                split,
            };
            best = Some((key, selection));
        }
    }
    best.map(|(_, s)| s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::{is_deterministic, validate, NegotiationBuilder};
    use crate::semantics::{reachability_graph, soundness_oracle, DEFAULT_NODE_LIMIT};

    fn rg(neg: &Negotiation) -> ReachabilityGraph {
        reachability_graph(neg, DEFAULT_NODE_LIMIT).unwrap()
    }

    fn step(n: &str, r: &str) -> (AtomId, OutcomeName) {
        (AtomId::new(n), OutcomeName::new(r))
    }

    fn names(v: &[&str]) -> BTreeSet<AtomId> {
        v.iter().map(AtomId::new).collect()
    }

    #[test]
    fn graphs_of_the_father_daughter_mother_negotiations() {
        assert!(negotiation_graph(&fixtures::fdm_acyclic()).is_acyclic());
        let g = negotiation_graph(&fixtures::fdm_cyclic());
        assert!(!g.is_acyclic());
        assert!(g.edges.contains(&("n1".into(), "n2".into())));
        assert!(g.edges.contains(&("n2".into(), "n1".into())));
        assert!(!negotiation_graph(&fixtures::fig4_left()).is_acyclic());
        let single = negotiation_graph(&fixtures::single_atom());
        assert_eq!(single.vertices.len(), 1);
        assert!(single.edges.is_empty() && single.is_acyclic());
    }

    #[test]
    fn topological_order_breaks_ties_by_name() {
        let g = negotiation_graph(&fixtures::fdm_deadlock());
        assert_eq!(
            g.topological_order().unwrap(),
            vec!["n0", "nFD", "nDM", "nf"]
        );
        assert!(negotiation_graph(&fixtures::fdm_cyclic()).topological_order().is_none());
    }

    #[test]
    fn fig4_left_has_no_loops() {
        let neg = fixtures::fig4_left();
        assert!(enumerate_minimal_loops(&rg(&neg), DEFAULT_CYCLE_LIMIT).unwrap().is_empty());
    }

    #[test]
    fn fig3_loops_and_synchronizers() {
        let neg = fixtures::fig3();
        let all = elementary_cycles(&rg(&neg), DEFAULT_CYCLE_LIMIT).unwrap();
        let rotations = |l: &Loop| -> Vec<Vec<(AtomId, OutcomeName)>> {
            (0..l.steps.len())
                .map(|i| l.steps[i..].iter().chain(&l.steps[..i]).cloned().collect())
                .collect()
        };
        let has = |want: Vec<(AtomId, OutcomeName)>| all.iter().any(|l| rotations(l).contains(&want));
        let big = vec![step("n1", "a"), step("n2", "a"), step("n4", "a"), step("n5", "b")];
        assert!(has(big.clone()));
        assert!(has(vec![step("n1", "b"), step("n3", "a"), step("n5", "b")]));
        assert!(has(vec![step("n2", "a"), step("n4", "b")]));
        let big_loop = all.iter().find(|l| rotations(l).contains(&big)).unwrap();
        assert_eq!(synchronizers(&neg, big_loop), names(&["n1", "n5"]));

        let minimal = enumerate_minimal_loops(&rg(&neg), DEFAULT_CYCLE_LIMIT).unwrap();
        assert!(minimal.iter().any(|l| l.atoms() == names(&["n2", "n4"])));
    }

    #[test]
    fn fig4_right_loop_has_no_synchronizer() {
        let neg = fixtures::fig4_right();
        let loops = enumerate_minimal_loops(&rg(&neg), DEFAULT_CYCLE_LIMIT).unwrap();
        let l = loops
            .iter()
            .find(|l| l.atoms() == names(&["n1", "n2"]))
            .expect("loop n1 n2");
        assert!(synchronizers(&neg, l).is_empty());
    }

    fn self_loop() -> Negotiation {
        NegotiationBuilder::new(&["a", "b"])
            .atom("n0", &["a", "b"])
            .atom("n1", &["a", "b"])
            .atom("nf", &["a", "b"])
            .initial("n0")
            .final_atom("nf")
            .outcome_all("n0", "r", "n1")
            .outcome_all("n1", "again", "n1")
            .outcome_all("n1", "exit", "nf")
            .outcome("nf", "end", &[])
            .build()
            .unwrap()
    }

    #[test]
    fn self_loop_is_a_loop_of_length_one() {
        let neg = self_loop();
        let g = rg(&neg);
        let loops = enumerate_minimal_loops(&g, DEFAULT_CYCLE_LIMIT).unwrap();
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].steps, vec![step("n1", "again")]);
        assert_eq!(synchronizers(&neg, &loops[0]), names(&["n1"]));

        let sel = select_synchronizer(&neg, &g).unwrap();
        assert_eq!(sel.synchronizer, "n1");
        assert_eq!(sel.fragment.atoms.len(), 1);
        // split: n1 --again--> n1_f
        let split = &sel.split.neg;
        assert_eq!(split.atom_count(), 2);
        assert_eq!(
            split.outcome(&"n1".into(), &"again".into()).unwrap().next_of(&"a".into()),
            Some(&AtomId::new("n1_f"))
        );
        assert!(validate(split).is_empty());
    }

    #[test]
    fn fig3_fragments_nest() {
        let neg = fixtures::fig3();
        let g = rg(&neg);
        let f1 = fragment(&neg, &g, &"n1".into());
        let f2 = fragment(&neg, &g, &"n2".into());
        assert_eq!(f2.atoms.keys().cloned().collect::<BTreeSet<_>>(), names(&["n2", "n4"]));
        assert_eq!(
            f1.atoms.keys().cloned().collect::<BTreeSet<_>>(),
            names(&["n1", "n2", "n3", "n4", "n5"])
        );
        for (n, rs) in &f2.atoms {
            assert!(rs.is_subset(&f1.atoms[n]));
        }
        assert!(fragment(&neg, &g, &"n0".into()).is_empty());

        let n1_split = split_negotiation(&neg, &f1).unwrap();
        assert!(!negotiation_graph(&n1_split.neg).is_acyclic());
        let n2_split = split_negotiation(&neg, &f2).unwrap();
        assert!(negotiation_graph(&n2_split.neg).is_acyclic());

        let sel = select_synchronizer(&neg, &g).unwrap();
        assert_eq!(sel.synchronizer, "n2");
    }

    #[test]
    fn fragments_agree_with_loop_closure() {
        for (name, neg) in fixtures::all() {
            if !is_deterministic(&neg) {
                continue;
            }
            let g = rg(&neg);
            let loops = elementary_cycles(&g, DEFAULT_CYCLE_LIMIT).unwrap();
            for s in neg.atoms.keys() {
                assert_eq!(fragment(&neg, &g, s), fragment_from_loops(&neg, s, &loops), "{name} {s}");
            }
        }
    }

    #[test]
    fn split_of_sound_negotiation_is_sound() {
        for neg in [fixtures::fig3(), fixtures::fdm_cyclic(), fixtures::fig5()] {
            let sel = select_synchronizer(&neg, &rg(&neg)).unwrap();
            assert!(validate(&sel.split.neg).is_empty());
            assert!(soundness_oracle(&sel.split.neg, DEFAULT_NODE_LIMIT).unwrap().is_sound());
        }
    }

    #[test]
    fn exits_carry_all_synchronizer_parties() {
        for neg in [fixtures::fig3(), fixtures::fdm_cyclic(), fixtures::fig5()] {
            let g = rg(&neg);
            for s in synchronizer_atoms(&neg, &g) {
                let f = fragment(&neg, &g, &s);
                let ps = &neg.atoms[&s].parties;
                for (e, r) in exits(&neg, &f) {
                    assert_eq!(&neg.atoms[&e].parties, ps);
                    let o = neg.outcome(&e, &r).unwrap();
                    assert!(o.referenced().all(|t| !f.atoms.contains_key(t)));
                }
            }
        }
    }

    #[test]
    fn deterministic_fig4_left_has_no_acyclic_split() {
        let neg = fixtures::fig4_left_deterministic();
        assert!(!negotiation_graph(&neg).is_acyclic());
        assert!(!soundness_oracle(&neg, DEFAULT_NODE_LIMIT).unwrap().is_sound());
        assert!(select_synchronizer(&neg, &rg(&neg)).is_none());
    }

    #[test]
    fn cycle_limit_is_an_error() {
        let neg = fixtures::fig3();
        assert_eq!(
            elementary_cycles(&rg(&neg), 1),
            Err(StructureError::CycleLimit(1))
        );
    }

    // n2 -> n4 <-> n5 -> n6 <-> (n7 n8) -> n2: every exact fragment holds
    // the other inner loop, so only the confined ones split acyclically.
    const NESTED: &str = "\
agents a
atom n0 parties a initial
outcome n0 go -> a:n2
atom n2 parties a
outcome n2 in -> a:n4
outcome n2 out -> a:nf
atom n4 parties a
outcome n4 x -> a:n5
atom n5 parties a
outcome n5 again -> a:n4
outcome n5 on -> a:n6
atom n6 parties a
outcome n6 again -> a:n7
outcome n6 back -> a:n2
atom n7 parties a
outcome n7 x -> a:n8
atom n8 parties a
outcome n8 x -> a:n6
atom nf parties a final
outcome nf end
";

    #[test]
    fn nested_loops_fall_back_to_dominated_bodies() {
        let neg = crate::io::parse(NESTED).unwrap();
        let g = rg(&neg);
        for s in neg.atoms.keys() {
            let f = fragment(&neg, &g, s);
            if !f.is_empty() {
                let split = split_negotiation(&neg, &f).unwrap();
                assert!(!negotiation_graph(&split.neg).is_acyclic(), "{s}");
            }
        }
        let sel = select_synchronizer(&neg, &g).unwrap();
        assert_eq!(sel.synchronizer, "n4");
        assert_eq!(sel.fragment.atoms.keys().collect::<Vec<_>>(), ["n4", "n5"]);
        assert!(is_closed(&neg, &sel.fragment));
    }

    #[test]
    fn dominated_atoms() {
        let neg = crate::io::parse(NESTED).unwrap();
        let g = negotiation_graph(&neg);
        assert_eq!(g.dominated_by(&neg.initial, &AtomId::new("n6")), names(&["n7", "n8"]));
        assert_eq!(g.dominated_by(&neg.initial, &AtomId::new("n4")), names(&["n5", "n6", "n7", "n8"]));
        assert!(g.dominated_by(&neg.initial, &AtomId::new("nf")).is_empty());
    }
}
