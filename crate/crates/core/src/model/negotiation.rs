use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use super::ids::{AgentId, AtomId, OutcomeName};
use super::transformer::{Backend, StateSpace, Transformer};

/// One outcome of an atom: where every party goes next, and how the
/// parties' internal states change.
///
/// `next` has one entry per party of the atom. Outcomes of the final atom map
/// every party to the empty set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub next: BTreeMap<AgentId, BTreeSet<AtomId>>,
    pub transformer: Transformer,
}

impl Outcome {
    /// The unique next atom of `agent`, if the outcome is deterministic there.
    pub fn next_of(&self, agent: &AgentId) -> Option<&AtomId> {
        let set = self.next.get(agent)?;
        if set.len() == 1 {
            set.iter().next()
        } else {
            None
        }
    }

    /// Atoms referenced by any party.
    pub fn referenced(&self) -> impl Iterator<Item = &AtomId> + '_ {
        self.next.values().flatten()
    }
}

/// The target of an outcome: the next-atom map restricted to its parties.
pub type Target = BTreeMap<AgentId, BTreeSet<AtomId>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub parties: BTreeSet<AgentId>,
    pub outcomes: BTreeMap<OutcomeName, Outcome>,
}

impl Atom {
    pub fn new(parties: impl IntoIterator<Item = AgentId>) -> Self {
        Self {
            parties: parties.into_iter().collect(),
            outcomes: BTreeMap::new(),
        }
    }
}

/// A negotiation `(N, n0, nf, X)` over a set of agents.
///
/// The transition function `X` is stored inside the atoms' outcomes. The
/// optional state space is only present for the concrete backend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Negotiation {
    pub agents: BTreeSet<AgentId>,
    pub atoms: BTreeMap<AtomId, Atom>,
    pub initial: AtomId,
    pub final_atom: AtomId,
    pub states: Option<Arc<StateSpace>>,
}

impl Negotiation {
    pub fn atom(&self, id: &AtomId) -> Option<&Atom> {
        self.atoms.get(id)
    }

    pub fn outcome(&self, atom: &AtomId, outcome: &OutcomeName) -> Option<&Outcome> {
        self.atoms.get(atom)?.outcomes.get(outcome)
    }

    /// `|N|`, the number of atoms.
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// `|Out(N)|`, the number of outcomes over all atoms.
    pub fn outcome_count(&self) -> usize {
        self.atoms.values().map(|a| a.outcomes.len()).sum()
    }

    /// All `(atom, outcome)` pairs in canonical order.
    pub fn outcomes(&self) -> impl Iterator<Item = (&AtomId, &OutcomeName, &Outcome)> + '_ {
        self.atoms
            .iter()
            .flat_map(|(n, a)| a.outcomes.iter().map(move |(r, o)| (n, r, o)))
    }

    /// `Ta(N)`: the set of targets of all outcomes.
    pub fn targets(&self) -> BTreeSet<Target> {
        self.outcomes().map(|(_, _, o)| o.next.clone()).collect()
    }

    /// True if some triple `(n, a, r)` has `target` in `X(n, a, r)`.
    pub fn has_incoming(&self, target: &AtomId) -> bool {
        self.outcomes()
            .any(|(_, _, o)| o.referenced().any(|t| t == target))
    }

    /// Backend of the transformers, or `None` for an empty or mixed
    /// negotiation.
    pub fn backend(&self) -> Option<Backend> {
        let mut backends = self.outcomes().map(|(_, _, o)| o.transformer.backend());
        let first = backends.next()?;
        backends.all(|b| b == first).then_some(first)
    }

    /// Copy in which every transformer is replaced by its own label `n/r`.
    /// Evaluating symbolic results of this copy against the original
    /// relations recovers the concrete results.
    pub fn symbolic_skeleton(&self) -> Negotiation {
        let mut out = self.clone();
        for (n, atom) in out.atoms.iter_mut() {
            for (r, o) in atom.outcomes.iter_mut() {
                o.transformer = Transformer::label(n.clone(), r.clone());
            }
        }
        out.states = None;
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Error)]
pub enum Violation {
    #[error("negotiation has no agents")]
    NoAgents,
    #[error("atom {0} is referenced but not declared")]
    UndeclaredAtom(AtomId),
    #[error("initial atom {0} is not declared")]
    UnknownInitial(AtomId),
    #[error("final atom {0} is not declared")]
    UnknownFinal(AtomId),
    #[error("agent {agent} does not participate in the initial atom {atom}")]
    MissingFromInitial { agent: AgentId, atom: AtomId },
    #[error("agent {agent} does not participate in the final atom {atom}")]
    MissingFromFinal { agent: AgentId, atom: AtomId },
    #[error("atom {0} has no parties")]
    NoParties(AtomId),
    #[error("atom {0} has no outcomes")]
    NoOutcomes(AtomId),
    #[error("atom {atom} has party {agent}, which is not a declared agent")]
    UnknownParty { atom: AtomId, agent: AgentId },
    #[error("X({atom},{agent},{outcome}) is empty but {atom} is not final")]
    EmptyNext {
        atom: AtomId,
        agent: AgentId,
        outcome: OutcomeName,
    },
    #[error("X({atom},{agent},{outcome}) is nonempty but {atom} is final")]
    FinalHasNext {
        atom: AtomId,
        agent: AgentId,
        outcome: OutcomeName,
    },
    #[error("X({atom},{agent},{outcome}) is undefined although {agent} is a party")]
    MissingNext {
        atom: AtomId,
        agent: AgentId,
        outcome: OutcomeName,
    },
    #[error("X({atom},{agent},{outcome}) is defined although {agent} is not a party")]
    NonPartyNext {
        atom: AtomId,
        agent: AgentId,
        outcome: OutcomeName,
    },
    #[error("X({atom},{agent},{outcome}) contains undeclared atom {target}")]
    DanglingTarget {
        atom: AtomId,
        agent: AgentId,
        outcome: OutcomeName,
        target: AtomId,
    },
    #[error("transformers mix symbolic and concrete backends")]
    MixedBackends,
    #[error("concrete transformer of {atom}/{outcome} needs a state space")]
    MissingStateSpace { atom: AtomId, outcome: OutcomeName },
    #[error("transformer of {atom}/{outcome} uses a different state space")]
    ForeignStateSpace { atom: AtomId, outcome: OutcomeName },
    #[error("state space has no states for agent {0}")]
    StateSpaceAgent(AgentId),
    #[error("transformer of {atom}/{outcome} is not left-total")]
    NotLeftTotal { atom: AtomId, outcome: OutcomeName },
    #[error("transformer of {atom}/{outcome} changes the state of a non-party")]
    TouchesNonParty { atom: AtomId, outcome: OutcomeName },
}

/// Returns every well-formedness violation of `neg`, in canonical order.
pub fn validate(neg: &Negotiation) -> Vec<Violation> {
    let mut out = BTreeSet::new();
    if neg.agents.is_empty() {
        out.insert(Violation::NoAgents);
    }
    for (end, id) in [(false, &neg.initial), (true, &neg.final_atom)] {
        match neg.atoms.get(id) {
            None if end => {
                out.insert(Violation::UnknownFinal(id.clone()));
            }
            None => {
                out.insert(Violation::UnknownInitial(id.clone()));
            }
            Some(atom) => {
                for agent in neg.agents.iter().filter(|a| !atom.parties.contains(*a)) {
                    let (agent, atom) = (agent.clone(), id.clone());
                    out.insert(if end {
                        Violation::MissingFromFinal { agent, atom }
                    } else {
                        Violation::MissingFromInitial { agent, atom }
                    });
                }
            }
        }
    }

    if let Some(space) = &neg.states {
        // extra agents in the space are allowed: split negotiations keep the
        // parent's space but only a subset of its agents
        for a in neg.agents.iter().filter(|a| space.agent_index(a).is_none()) {
            out.insert(Violation::StateSpaceAgent(a.clone()));
        }
    }
    if neg.backend().is_none() && neg.outcome_count() > 0 {
        out.insert(Violation::MixedBackends);
    }

    for (n, atom) in &neg.atoms {
        if atom.parties.is_empty() {
            out.insert(Violation::NoParties(n.clone()));
        }
        if atom.outcomes.is_empty() {
            out.insert(Violation::NoOutcomes(n.clone()));
        }
        for a in atom.parties.iter().filter(|a| !neg.agents.contains(*a)) {
            out.insert(Violation::UnknownParty {
                atom: n.clone(),
                agent: a.clone(),
            });
        }
        let is_final = *n == neg.final_atom;
        for (r, o) in &atom.outcomes {
            for a in &atom.parties {
                let Some(set) = o.next.get(a) else {
                    out.insert(Violation::MissingNext {
                        atom: n.clone(),
                        agent: a.clone(),
                        outcome: r.clone(),
                    });
                    continue;
                };
                if set.is_empty() && !is_final {
                    out.insert(Violation::EmptyNext {
                        atom: n.clone(),
                        agent: a.clone(),
                        outcome: r.clone(),
                    });
                }
                if !set.is_empty() && is_final {
                    out.insert(Violation::FinalHasNext {
                        atom: n.clone(),
                        agent: a.clone(),
                        outcome: r.clone(),
                    });
                }
                for t in set.iter().filter(|t| !neg.atoms.contains_key(*t)) {
                    out.insert(Violation::DanglingTarget {
                        atom: n.clone(),
                        agent: a.clone(),
                        outcome: r.clone(),
                        target: t.clone(),
                    });
                }
            }
            for a in o.next.keys().filter(|a| !atom.parties.contains(*a)) {
                out.insert(Violation::NonPartyNext {
                    atom: n.clone(),
                    agent: a.clone(),
                    outcome: r.clone(),
                });
            }
            if let Some(rel) = o.transformer.as_relation() {
                let site = || (n.clone(), r.clone());
                match &neg.states {
                    None => {
                        let (atom, outcome) = site();
                        out.insert(Violation::MissingStateSpace { atom, outcome });
                    }
                    Some(space) if **rel.space() != **space => {
                        let (atom, outcome) = site();
                        out.insert(Violation::ForeignStateSpace { atom, outcome });
                    }
                    Some(_) => {
                        if !rel.is_left_total() {
                            let (atom, outcome) = site();
                            out.insert(Violation::NotLeftTotal { atom, outcome });
                        }
                        if !rel.only_transforms(&atom.parties) {
                            let (atom, outcome) = site();
                            out.insert(Violation::TouchesNonParty { atom, outcome });
                        }
                    }
                }
            }
        }
    }
    out.into_iter().collect()
}

/// True iff `|X(n,a,r)| = 1` for every triple with `n` not final.
///
/// The final atom is exempt since its next-sets are empty by construction.
pub fn is_deterministic(neg: &Negotiation) -> bool {
    neg.atoms
        .iter()
        .filter(|(n, _)| **n != neg.final_atom)
        .flat_map(|(_, a)| a.outcomes.values())
        .all(|o| o.next.values().all(|s| s.len() == 1))
}

/// Incremental constructor, mostly for fixtures and tests.
///
/// Outcomes without an explicit transformer get their own label `n/r`.
#[derive(Clone, Debug, Default)]
pub struct NegotiationBuilder {
    agents: BTreeSet<AgentId>,
    atoms: BTreeMap<AtomId, Atom>,
    initial: Option<AtomId>,
    final_atom: Option<AtomId>,
    states: Option<Arc<StateSpace>>,
    undeclared: BTreeSet<AtomId>,
}

impl NegotiationBuilder {
    pub fn new<S: AsRef<str>>(agents: &[S]) -> Self {
        Self {
            agents: agents.iter().map(AgentId::new).collect(),
            ..Self::default()
        }
    }

    pub fn atom<S: AsRef<str>>(mut self, id: &str, parties: &[S]) -> Self {
        self.atoms.insert(
            AtomId::new(id),
            Atom::new(parties.iter().map(AgentId::new)),
        );
        self
    }

    pub fn initial(mut self, id: &str) -> Self {
        self.initial = Some(AtomId::new(id));
        self
    }

    pub fn final_atom(mut self, id: &str) -> Self {
        self.final_atom = Some(AtomId::new(id));
        self
    }

    pub fn states(mut self, space: Arc<StateSpace>) -> Self {
        self.states = Some(space);
        self
    }

    /// Deterministic outcome: each `(agent, atom)` pair sets `X(n, agent, r)`.
    /// Parties not listed go nowhere, which is right for the final atom.
    pub fn outcome(self, atom: &str, name: &str, next: &[(&str, &str)]) -> Self {
        let next: Vec<(&str, Vec<&str>)> = next.iter().map(|(a, t)| (*a, vec![*t])).collect();
        self.hyper_outcome(atom, name, &next)
    }

    /// Outcome sending every party of `atom` to `target`.
    pub fn outcome_all(self, atom: &str, name: &str, target: &str) -> Self {
        let parties: Vec<String> = self
            .atoms
            .get(atom)
            .map(|a| a.parties.iter().map(|p| p.to_string()).collect())
            .unwrap_or_default();
        let next: Vec<(&str, &str)> = parties.iter().map(|p| (p.as_str(), target)).collect();
        self.outcome(atom, name, &next)
    }

    /// Possibly nondeterministic outcome.
    pub fn hyper_outcome(mut self, atom: &str, name: &str, next: &[(&str, Vec<&str>)]) -> Self {
        let id = AtomId::new(atom);
        let Some(a) = self.atoms.get_mut(&id) else {
            self.undeclared.insert(id);
            return self;
        };
        let mut map: BTreeMap<AgentId, BTreeSet<AtomId>> =
            a.parties.iter().map(|p| (p.clone(), BTreeSet::new())).collect();
        for (agent, targets) in next {
            map.entry(AgentId::new(agent))
                .or_default()
                .extend(targets.iter().map(AtomId::new));
        }
        a.outcomes.insert(
            OutcomeName::new(name),
            Outcome {
                next: map,
                transformer: Transformer::label(id.clone(), name),
            },
        );
        self
    }

    /// Overrides the transformer of an existing outcome.
    pub fn delta(mut self, atom: &str, name: &str, transformer: Transformer) -> Self {
        let id = AtomId::new(atom);
        match self
            .atoms
            .get_mut(&id)
            .and_then(|a| a.outcomes.get_mut(name))
        {
            Some(o) => o.transformer = transformer,
            None => {
                self.undeclared.insert(id);
            }
        }
        self
    }

    /// Assembles the negotiation without validating it.
    pub fn build_unchecked(self) -> Negotiation {
        let first = self.atoms.keys().next().cloned();
        Negotiation {
            agents: self.agents,
            initial: self
                .initial
                .or_else(|| first.clone())
                .unwrap_or_else(|| AtomId::new("n0")),
            final_atom: self
                .final_atom
                .or(first)
                .unwrap_or_else(|| AtomId::new("nf")),
            atoms: self.atoms,
            states: self.states,
        }
    }

    pub fn build(self) -> Result<Negotiation, Vec<Violation>> {
        let mut early: Vec<Violation> = self
            .undeclared
            .iter()
            .cloned()
            .map(Violation::UndeclaredAtom)
            .collect();
        let neg = self.build_unchecked();
        early.extend(validate(&neg));
        if early.is_empty() {
            Ok(neg)
        } else {
            Err(early)
        }
    }
}
