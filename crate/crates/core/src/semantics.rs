//! Operational semantics and brute-force oracles.
//!
//! Everything here works on the explicit reachability graph, so it only
//! scales to small instances. The reduction engine in [`crate::summarize`] is
//! cross-checked against these oracles.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::model::{AgentId, AtomId, Negotiation, OutcomeName, Relation, TransformerError};

/// Default cap on the number of reachable markings an oracle may explore.
pub const DEFAULT_NODE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticsError {
    #[error("reachability graph exceeds the limit of {0} markings")]
    NodeLimit(usize),
    #[error("atom {0} is not enabled")]
    NotEnabled(AtomId),
    #[error("unknown atom {0}")]
    UnknownAtom(AtomId),
    #[error("atom {atom} has no outcome {outcome}")]
    UnknownOutcome { atom: AtomId, outcome: OutcomeName },
    #[error("summary oracle needs a sound negotiation")]
    Unsound,
    #[error("summary oracle needs concrete transformers over a state space")]
    NotConcrete,
    #[error(transparent)]
    Transformer(#[from] TransformerError),
}

/// For every agent, the set of atoms it is ready to engage in.
///
/// The derived order (agents in canonical order, sets sorted) is the
/// canonical order of reachability-graph nodes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Marking {
    pub ready: BTreeMap<AgentId, BTreeSet<AtomId>>,
}

impl Marking {
    pub fn is_final(&self) -> bool {
        self.ready.values().all(BTreeSet::is_empty)
    }
}

impl std::fmt::Display for Marking {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self
            .ready
            .iter()
            .map(|(a, s)| {
                let atoms: Vec<&str> = s.iter().map(AtomId::as_str).collect();
                format!("{a}:{{{}}}", atoms.join(","))
            })
            .collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

pub fn initial_marking(neg: &Negotiation) -> Marking {
    Marking {
        ready: neg
            .agents
            .iter()
            .map(|a| (a.clone(), BTreeSet::from([neg.initial.clone()])))
            .collect(),
    }
}

pub fn final_marking(neg: &Negotiation) -> Marking {
    Marking {
        ready: neg.agents.iter().map(|a| (a.clone(), BTreeSet::new())).collect(),
    }
}

pub fn enabled(neg: &Negotiation, m: &Marking) -> BTreeSet<AtomId> {
    neg.atoms
        .iter()
        .filter(|(n, atom)| {
            atom.parties
                .iter()
                .all(|a| m.ready.get(a).is_some_and(|s| s.contains(*n)))
        })
        .map(|(n, _)| n.clone())
        .collect()
}

/// Fires `(atom, outcome)` at `m`.
pub fn fire(
    neg: &Negotiation,
    m: &Marking,
    atom: &AtomId,
    outcome: &OutcomeName,
) -> Result<Marking, SemanticsError> {
    let a = neg
        .atom(atom)
        .ok_or_else(|| SemanticsError::UnknownAtom(atom.clone()))?;
    let o = a
        .outcomes
        .get(outcome)
        .ok_or_else(|| SemanticsError::UnknownOutcome {
            atom: atom.clone(),
            outcome: outcome.clone(),
        })?;
    if !a
        .parties
        .iter()
        .all(|p| m.ready.get(p).is_some_and(|s| s.contains(atom)))
    {
        return Err(SemanticsError::NotEnabled(atom.clone()));
    }
    let mut next = m.clone();
    for p in &a.parties {
        next.ready
            .insert(p.clone(), o.next.get(p).cloned().unwrap_or_default());
    }
    Ok(next)
}

/// A small step `source --(atom, outcome)--> target`, by node index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub source: usize,
    pub atom: AtomId,
    pub outcome: OutcomeName,
    pub target: usize,
}

/// Reachable markings and small steps, in canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReachabilityGraph {
    pub nodes: Vec<Marking>,
    /// Sorted by `(source, atom, outcome, target)`.
    pub edges: Vec<Edge>,
    pub initial: usize,
    /// Index of `x_f`, if reachable.
    pub final_node: Option<usize>,
    out_ranges: Vec<(usize, usize)>,
}

/// Compact form of a negotiation used by the explorer: atoms and agents by
/// index, markings as per-agent bitsets.
struct Compiled<'a> {
    atoms: Vec<&'a AtomId>,
    words: usize,
    n_agents: usize,
    parties: Vec<Vec<usize>>,
    outcomes: Vec<Vec<(&'a OutcomeName, Vec<(usize, Vec<u64>)>)>>,
}

impl<'a> Compiled<'a> {
    fn new(neg: &'a Negotiation) -> Self {
        let agents: Vec<&AgentId> = neg.agents.iter().collect();
        let atoms: Vec<&AtomId> = neg.atoms.keys().collect();
        let words = atoms.len().div_ceil(64).max(1);
        let agent_ix = |a: &AgentId| agents.binary_search(&a).ok();
        let atom_ix = |n: &AtomId| atoms.binary_search(&n).ok();
        let mut parties = Vec::new();
        let mut outcomes = Vec::new();
        for atom in neg.atoms.values() {
            parties.push(atom.parties.iter().filter_map(agent_ix).collect());
            outcomes.push(
                atom.outcomes
                    .iter()
                    .map(|(r, o)| {
                        let moves = atom
                            .parties
                            .iter()
                            .filter_map(|p| {
                                let mut bits = vec![0u64; words];
                                for t in o.next.get(p).into_iter().flatten() {
                                    if let Some(i) = atom_ix(t) {
                                        bits[i / 64] |= 1 << (i % 64);
                                    }
                                }
                                Some((agent_ix(p)?, bits))
                            })
                            .collect();
                        (r, moves)
                    })
                    .collect(),
            );
        }
        Self {
            atoms,
            words,
            n_agents: agents.len(),
            parties,
            outcomes,
        }
    }

    fn is_enabled(&self, m: &[u64], atom: usize) -> bool {
        self.parties[atom]
            .iter()
            .all(|&a| m[a * self.words + atom / 64] & (1 << (atom % 64)) != 0)
    }

    fn decode(&self, neg: &Negotiation, m: &[u64]) -> Marking {
        Marking {
            ready: neg
                .agents
                .iter()
                .enumerate()
                .map(|(a, id)| {
                    let set = (0..self.atoms.len())
                        .filter(|&i| m[a * self.words + i / 64] & (1 << (i % 64)) != 0)
                        .map(|i| self.atoms[i].clone())
                        .collect();
                    (id.clone(), set)
                })
                .collect(),
        }
    }
}

pub fn reachability_graph(
    neg: &Negotiation,
    node_limit: usize,
) -> Result<ReachabilityGraph, SemanticsError> {
    let c = Compiled::new(neg);
    let mut index: HashMap<Box<[u64]>, usize> = HashMap::new();
    let mut states: Vec<Box<[u64]>> = Vec::new();
    let mut raw_edges: Vec<(usize, usize, usize, usize)> = Vec::new();

    let mut init = vec![0u64; c.n_agents * c.words];
    if let Ok(i) = c.atoms.binary_search(&&neg.initial) {
        for a in 0..c.n_agents {
            init[a * c.words + i / 64] |= 1 << (i % 64);
        }
    }
    let init: Box<[u64]> = init.into();
    index.insert(init.clone(), 0);
    states.push(init);
    let mut queue = VecDeque::from([0usize]);
    while let Some(s) = queue.pop_front() {
        let m = states[s].clone();
        for atom in 0..c.atoms.len() {
            if !c.is_enabled(&m, atom) {
                continue;
            }
            for (k, (_, moves)) in c.outcomes[atom].iter().enumerate() {
                let mut next = m.clone();
                for (a, bits) in moves {
                    next[a * c.words..(a + 1) * c.words].copy_from_slice(bits);
                }
                let t = match index.get(&next) {
                    Some(&t) => t,
                    None => {
                        if states.len() >= node_limit {
                            return Err(SemanticsError::NodeLimit(node_limit));
                        }
                        let t = states.len();
                        index.insert(next.clone(), t);
                        states.push(next);
                        queue.push_back(t);
                        t
                    }
                };
                raw_edges.push((s, atom, k, t));
            }
        }
    }

    // canonical renumbering
    let decoded: Vec<Marking> = states.iter().map(|m| c.decode(neg, m)).collect();
    let mut order: Vec<usize> = (0..decoded.len()).collect();
    order.sort_by(|&a, &b| decoded[a].cmp(&decoded[b]));
    let mut rank = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let mut edges: Vec<Edge> = raw_edges
        .into_iter()
        .map(|(s, atom, k, t)| Edge {
            source: rank[s],
            atom: c.atoms[atom].clone(),
            outcome: c.outcomes[atom][k].0.clone(),
            target: rank[t],
        })
        .collect();
    edges.sort();
    let mut decoded_sorted: Vec<Option<Marking>> = decoded.into_iter().map(Some).collect();
    let nodes: Vec<Marking> = order
        .iter()
        .map(|&old| decoded_sorted[old].take().unwrap())
        .collect();
    let final_node = nodes.iter().position(Marking::is_final);
    let mut out_ranges = vec![(0, 0); nodes.len()];
    let mut start = 0;
    for (i, range) in out_ranges.iter_mut().enumerate() {
        let end = start + edges[start..].iter().take_while(|e| e.source == i).count();
        *range = (start, end);
        start = end;
    }
    Ok(ReachabilityGraph {
        nodes,
        edges,
        initial: rank[0],
        final_node,
        out_ranges,
    })
}

impl ReachabilityGraph {
    pub fn node_index(&self, m: &Marking) -> Option<usize> {
        self.nodes.binary_search(m).ok()
    }

    pub fn out_edges(&self, node: usize) -> &[Edge] {
        let (s, e) = self.out_ranges[node];
        &self.edges[s..e]
    }

    /// True if the graph has no cycles (self-loops included).
    pub fn is_acyclic(&self) -> bool {
        let mut indeg = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            indeg[e.target] += 1;
        }
        let mut stack: Vec<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(n) = stack.pop() {
            seen += 1;
            for e in self.out_edges(n) {
                indeg[e.target] -= 1;
                if indeg[e.target] == 0 {
                    stack.push(e.target);
                }
            }
        }
        seen == self.nodes.len()
    }

    /// BFS distances from the initial marking.
    pub fn distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes.len()];
        dist[self.initial] = Some(0);
        let mut queue = VecDeque::from([self.initial]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n].unwrap();
            for e in self.out_edges(n) {
                if dist[e.target].is_none() {
                    dist[e.target] = Some(d + 1);
                    queue.push_back(e.target);
                }
            }
        }
        dist
    }

    /// One shortest occurrence sequence from the initial marking to `target`,
    /// choosing the canonically smallest edge at every step.
    pub fn shortest_path(&self, target: usize) -> Vec<(AtomId, OutcomeName)> {
        self.shortest_sequences(target, 1)
            .into_iter()
            .next()
            .unwrap_or_default()
    }

    /// Up to `limit` shortest occurrence sequences to `target`, in canonical
    /// order.
    pub fn shortest_sequences(&self, target: usize, limit: usize) -> Vec<Vec<(AtomId, OutcomeName)>> {
        let dist = self.distances();
        let Some(goal) = dist.get(target).copied().flatten() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.extend_shortest(self.initial, target, goal, &dist, &mut path, &mut out, limit);
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn extend_shortest(
        &self,
        at: usize,
        target: usize,
        goal: usize,
        dist: &[Option<usize>],
        path: &mut Vec<(AtomId, OutcomeName)>,
        out: &mut Vec<Vec<(AtomId, OutcomeName)>>,
        limit: usize,
    ) {
        if out.len() >= limit {
            return;
        }
        if at == target {
            out.push(path.clone());
            return;
        }
        let d = path.len();
        for e in self.out_edges(at) {
            // the next node must lie on a shortest path to the target
            if dist[e.target] == Some(d + 1) && self.reaches_within(e.target, target, goal - d - 1) {
                path.push((e.atom.clone(), e.outcome.clone()));
                self.extend_shortest(e.target, target, goal, dist, path, out, limit);
                path.pop();
            }
        }
    }

    fn reaches_within(&self, from: usize, to: usize, steps: usize) -> bool {
        let mut frontier = BTreeSet::from([from]);
        for _ in 0..steps {
            if frontier.contains(&to) {
                return true;
            }
            frontier = frontier
                .iter()
                .flat_map(|&n| self.out_edges(n).iter().map(|e| e.target))
                .collect();
        }
        frontier.contains(&to)
    }

    /// Nodes from which `x_f` is reachable.
    pub fn coreachable_final(&self) -> Vec<bool> {
        let mut ok = vec![false; self.nodes.len()];
        let Some(f) = self.final_node else {
            return ok;
        };
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            preds[e.target].push(e.source);
        }
        ok[f] = true;
        let mut stack = vec![f];
        while let Some(n) = stack.pop() {
            for &p in &preds[n] {
                if !ok[p] {
                    ok[p] = true;
                    stack.push(p);
                }
            }
        }
        ok
    }

    /// Atoms that occur on at least one edge.
    pub fn enabled_atoms(&self) -> BTreeSet<AtomId> {
        self.edges.iter().map(|e| e.atom.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum WitnessKind {
    /// The atom is not enabled at any reachable marking.
    NeverEnabled(AtomId),
    /// A reachable non-final marking enabling no atom.
    Deadlock,
    /// A reachable marking with successors, none of which leads to `x_f`.
    Livelock,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub kind: WitnessKind,
    /// The offending marking (absent for never-enabled atoms).
    pub marking: Option<Marking>,
    /// A shortest occurrence sequence to `marking`.
    pub sequence: Vec<(AtomId, OutcomeName)>,
}

impl std::fmt::Display for Witness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            WitnessKind::NeverEnabled(n) => write!(f, "atom {n} is never enabled"),
            kind => {
                let what = if *kind == WitnessKind::Deadlock {
                    "deadlock"
                } else {
                    "livelock"
                };
                write!(f, "{what} at ")?;
                if let Some(m) = &self.marking {
                    write!(f, "{m}")?;
                }
                write!(f, " after {}", format_sequence(&self.sequence))
            }
        }
    }
}

/// Renders an occurrence sequence as `(n0,st)(n1,yes)`, or `ε` if empty.
pub fn format_sequence(seq: &[(AtomId, OutcomeName)]) -> String {
    if seq.is_empty() {
        return "ε".into();
    }
    seq.iter().map(|(n, r)| format!("({n},{r})")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Sound,
    Unsound(Witness),
}

impl Verdict {
    pub fn is_sound(&self) -> bool {
        matches!(self, Verdict::Sound)
    }
}

/// Decides soundness on the reachability graph.
///
/// Sound iff `x_f` is reachable from every reachable marking and every atom
/// is enabled somewhere. Deadlocks and livelocks are reported before
/// never-enabled atoms; among offending markings the one closest to `x_0`
/// (then canonically smallest) is chosen.
pub fn soundness_oracle(neg: &Negotiation, node_limit: usize) -> Result<Verdict, SemanticsError> {
    let rg = reachability_graph(neg, node_limit)?;
    Ok(verdict_of(neg, &rg))
}

pub fn verdict_of(neg: &Negotiation, rg: &ReachabilityGraph) -> Verdict {
    let ok = rg.coreachable_final();
    let dist = rg.distances();
    let bad = (0..rg.nodes.len())
        .filter(|&i| !ok[i])
        .min_by_key(|&i| (dist[i], i));
    if let Some(b) = bad {
        let kind = if rg.out_edges(b).is_empty() {
            WitnessKind::Deadlock
        } else {
            WitnessKind::Livelock
        };
        return Verdict::Unsound(Witness {
            kind,
            marking: Some(rg.nodes[b].clone()),
            sequence: rg.shortest_path(b),
        });
    }
    let seen = rg.enabled_atoms();
    if let Some(n) = neg.atoms.keys().find(|n| !seen.contains(*n)) {
        return Verdict::Unsound(Witness {
            kind: WitnessKind::NeverEnabled(n.clone()),
            marking: None,
            sequence: Vec::new(),
        });
    }
    Verdict::Sound
}

/// Reachable non-final markings that enable no atom.
pub fn deadlocks(neg: &Negotiation, node_limit: usize) -> Result<BTreeSet<Marking>, SemanticsError> {
    let rg = reachability_graph(neg, node_limit)?;
    Ok((0..rg.nodes.len())
        .filter(|&i| Some(i) != rg.final_node && rg.out_edges(i).is_empty())
        .map(|i| rg.nodes[i].clone())
        .collect())
}

/// Summary transformer of every final outcome, as a relation.
///
/// Computed as a forward data-flow fixpoint: each marking is labelled with
/// the union of the composed relations of all paths reaching it.
pub fn summary_oracle(
    neg: &Negotiation,
    node_limit: usize,
) -> Result<BTreeMap<OutcomeName, Relation>, SemanticsError> {
    let space = neg.states.clone().ok_or(SemanticsError::NotConcrete)?;
    let rg = reachability_graph(neg, node_limit)?;
    if !verdict_of(neg, &rg).is_sound() {
        return Err(SemanticsError::Unsound);
    }
    let delta = |n: &AtomId, r: &OutcomeName| -> Result<&Relation, SemanticsError> {
        neg.outcome(n, r)
            .and_then(|o| o.transformer.as_relation())
            .ok_or(SemanticsError::NotConcrete)
    };
    let mut label: Vec<Relation> = vec![Relation::empty(space.clone()); rg.nodes.len()];
    label[rg.initial] = Relation::identity(space.clone());
    let mut queued = vec![false; rg.nodes.len()];
    let mut work = VecDeque::from([rg.initial]);
    queued[rg.initial] = true;
    while let Some(n) = work.pop_front() {
        queued[n] = false;
        let here = label[n].clone();
        for e in rg.out_edges(n) {
            let step = here.compose(delta(&e.atom, &e.outcome)?)?;
            if label[e.target].union_with(&step)? && !queued[e.target] {
                queued[e.target] = true;
                work.push_back(e.target);
            }
        }
    }
    let mut out = BTreeMap::new();
    let fin = neg
        .atom(&neg.final_atom)
        .ok_or_else(|| SemanticsError::UnknownAtom(neg.final_atom.clone()))?;
    for r in fin.outcomes.keys() {
        out.insert(r.clone(), Relation::empty(space.clone()));
    }
    if let Some(f) = rg.final_node {
        for e in rg.edges.iter().filter(|e| e.target == f) {
            let step = label[e.source].compose(delta(&e.atom, &e.outcome)?)?;
            out.get_mut(&e.outcome)
                .expect("x_f is entered only through final outcomes")
                .union_with(&step)?;
        }
    }
    Ok(out)
}
