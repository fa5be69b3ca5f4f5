//! Seeded random generation of sound deterministic negotiations, concrete
//! transformers for them, and unsound mutants.
//!
//! Negotiations are grown from nested blocks, each over a set of agents
//! that all enter through one atom whose parties are exactly that set:
//!
//! * step: one atom, every outcome goes on to the continuation
//! * sequence of two blocks
//! * choice: one atom whose outcomes lead into different blocks
//! * fork: one atom splits the agents into two groups that run blocks of
//!   their own and meet again at the continuation
//! * loop: a synchronizer with an `again` outcome into the body and an
//!   `exit` outcome to the continuation; the body returns to it
//!
//! Every block hands each of its agents to the continuation exactly once,
//! which makes the result sound by construction. The tests check this
//! against the reachability oracle anyway.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{
    AgentId, Atom, AtomId, Negotiation, Outcome, OutcomeName, Relation, StateSpace, Transformer,
    TransformerError,
};
use crate::structure::negotiation_graph;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("need at least 2 atoms, got {0}")]
    TooFewAtoms(usize),
    #[error("need at least 1 agent")]
    NoAgents,
    #[error("need between 1 and 8 state labels per agent, got {0}")]
    Labels(usize),
    #[error(transparent)]
    Transformer(#[from] TransformerError),
}

/// Parameters of [`generate_sound_sdn`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub atoms: usize,
    pub agents: usize,
    /// Maximal nesting depth of loops; 0 gives an acyclic negotiation.
    pub loop_depth: usize,
}

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    atoms: BTreeMap<AtomId, Atom>,
    counter: usize,
}

type Cont = BTreeMap<AgentId, AtomId>;

const NAMES: [&str; 4] = ["a", "b", "c", "d"];

impl Builder<'_> {
    fn fresh(&mut self, parties: &BTreeSet<AgentId>) -> AtomId {
        self.counter += 1;
        let id = AtomId::new(format!("t{}", self.counter));
        self.atoms.insert(id.clone(), Atom::new(parties.iter().cloned()));
        id
    }

    fn add(&mut self, atom: &AtomId, name: &str, next: &Cont) {
        let a = self.atoms.get_mut(atom).unwrap();
        let next = a
            .parties
            .iter()
            .map(|p| (p.clone(), BTreeSet::from([next[p].clone()])))
            .collect();
        a.outcomes.insert(
            OutcomeName::new(name),
            Outcome {
                next,
                transformer: Transformer::label(atom.clone(), name),
            },
        );
    }

    /// A block of exactly `k` atoms over `parties`, returning its entry.
    fn block(&mut self, parties: &BTreeSet<AgentId>, k: usize, loops: usize, cont: &Cont) -> AtomId {
        let to = |e: &AtomId| -> Cont { parties.iter().map(|p| (p.clone(), e.clone())).collect() };
        let mut kinds = vec![0u8];
        if k >= 2 {
            kinds = vec![1, 1, 2];
            if loops > 0 {
                kinds.extend([4, 4]);
            }
        }
        if k >= 3 && parties.len() >= 2 {
            kinds.push(3);
        }
        match *kinds.choose(self.rng).unwrap() {
            0 => {
                let n = self.fresh(parties);
                let outcomes = self.rng.gen_range(1..=2);
                for name in &NAMES[..outcomes] {
                    self.add(&n, name, cont);
                }
                n
            }
            1 => {
                let k1 = self.rng.gen_range(1..k);
                let second = self.block(parties, k - k1, loops, cont);
                self.block(parties, k1, loops, &to(&second))
            }
            2 => {
                let n = self.fresh(parties);
                let k1 = self.rng.gen_range(0..k - 1);
                let first = self.block(parties, k - 1 - k1, loops, cont);
                self.add(&n, "a", &to(&first));
                if k1 == 0 {
                    self.add(&n, "b", cont);
                } else {
                    let second = self.block(parties, k1, loops, cont);
                    self.add(&n, "b", &to(&second));
                }
                n
            }
            3 => {
                let mut agents: Vec<AgentId> = parties.iter().cloned().collect();
                agents.shuffle(self.rng);
                let cut = self.rng.gen_range(1..agents.len());
                let g1: BTreeSet<AgentId> = agents[..cut].iter().cloned().collect();
                let g2: BTreeSet<AgentId> = agents[cut..].iter().cloned().collect();
                let n = self.fresh(parties);
                let k1 = self.rng.gen_range(1..k - 1);
                let restrict = |g: &BTreeSet<AgentId>| -> Cont {
                    g.iter().map(|a| (a.clone(), cont[a].clone())).collect()
                };
                let e1 = self.block(&g1, k1, loops, &restrict(&g1));
                let e2 = self.block(&g2, k - 1 - k1, loops, &restrict(&g2));
                let mut fork = Cont::new();
                fork.extend(g1.iter().map(|a| (a.clone(), e1.clone())));
                fork.extend(g2.iter().map(|a| (a.clone(), e2.clone())));
                self.add(&n, "a", &fork);
                n
            }
            _ => {
                let s = self.fresh(parties);
                let body = self.block(parties, k - 1, loops - 1, &to(&s));
                self.add(&s, "again", &to(&body));
                self.add(&s, "exit", cont);
                // do-while when the body comes first
                if self.rng.gen_bool(0.5) {
                    body
                } else {
                    s
                }
            }
        }
    }
}

/// A sound deterministic negotiation with exactly `shape.atoms` atoms over
/// agents `a1..ak`, reproducible from `seed`. With `loop_depth > 0` and at
/// least 4 atoms the result is cyclic.
pub fn generate_sound_sdn(seed: u64, shape: Shape) -> Result<Negotiation, GenerateError> {
    if shape.atoms < 2 {
        return Err(GenerateError::TooFewAtoms(shape.atoms));
    }
    if shape.agents == 0 {
        return Err(GenerateError::NoAgents);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents: BTreeSet<AgentId> = (1..=shape.agents).map(|i| AgentId::new(format!("a{i}"))).collect();
    let want_cycle = shape.loop_depth > 0 && shape.atoms >= 4;
    let mut last = None;
    for _ in 0..64 {
        let neg = attempt(&mut rng, &agents, shape);
        let cyclic = !negotiation_graph(&neg).is_acyclic();
        if cyclic || !want_cycle {
            return Ok(neg);
        }
        last = Some(neg);
    }
    Ok(last.expect("at least one attempt"))
}

fn attempt(rng: &mut ChaCha8Rng, agents: &BTreeSet<AgentId>, shape: Shape) -> Negotiation {
    let mut b = Builder {
        rng,
        atoms: BTreeMap::new(),
        counter: 0,
    };
    let nf = AtomId::new("nf");
    let mut fin = Atom::new(agents.iter().cloned());
    let finals = b.rng.gen_range(1..=2);
    for name in ["end", "alt"].into_iter().take(finals) {
        fin.outcomes.insert(
            OutcomeName::new(name),
            Outcome {
                next: agents.iter().map(|a| (a.clone(), BTreeSet::new())).collect(),
                transformer: Transformer::label(nf.clone(), name),
            },
        );
    }
    b.atoms.insert(nf.clone(), fin);
    let to_final: Cont = agents.iter().map(|a| (a.clone(), nf.clone())).collect();
    let start = b.fresh(agents);
    let after = if shape.atoms == 2 {
        to_final
    } else {
        let e = b.block(agents, shape.atoms - 2, shape.loop_depth, &to_final);
        agents.iter().map(|a| (a.clone(), e.clone())).collect()
    };
    let outcomes = b.rng.gen_range(1..=2);
    for name in &NAMES[..outcomes] {
        b.add(&start, name, &after);
    }

    // duplicate some target maps so that merges have work to do
    let ids: Vec<AtomId> = b.atoms.keys().filter(|n| **n != nf).cloned().collect();
    for n in ids {
        if b.rng.gen_bool(0.2) {
            let atom = &b.atoms[&n];
            let source = atom.outcomes.values().next().unwrap().next.clone();
            let name = (0..)
                .map(|i| format!("d{i}"))
                .find(|c| !atom.outcomes.contains_key(c.as_str()))
                .unwrap();
            b.atoms.get_mut(&n).unwrap().outcomes.insert(
                OutcomeName::new(&name),
                Outcome {
                    next: source,
                    transformer: Transformer::label(n.clone(), name.as_str()),
                },
            );
        }
    }
    renumber(Negotiation {
        agents: agents.clone(),
        atoms: b.atoms,
        initial: start,
        final_atom: nf,
        states: None,
    })
}

/// Renames atoms to `n0, n1, ...` in breadth-first order from the initial
/// atom; the final atom keeps its name.
fn renumber(neg: Negotiation) -> Negotiation {
    let mut names = BTreeMap::new();
    let mut queue = VecDeque::from([neg.initial.clone()]);
    while let Some(n) = queue.pop_front() {
        if names.contains_key(&n) || n == neg.final_atom {
            continue;
        }
        names.insert(n.clone(), AtomId::new(format!("n{}", names.len())));
        for o in neg.atoms[&n].outcomes.values() {
            queue.extend(o.referenced().cloned());
        }
    }
    names.insert(neg.final_atom.clone(), neg.final_atom.clone());
    let rename = |n: &AtomId| names[n].clone();
    let atoms = neg
        .atoms
        .iter()
        .map(|(n, a)| {
            let outcomes = a
                .outcomes
                .iter()
                .map(|(r, o)| {
                    let next = o
                        .next
                        .iter()
                        .map(|(p, ts)| (p.clone(), ts.iter().map(rename).collect()))
                        .collect();
                    let o = Outcome {
                        next,
                        transformer: Transformer::label(rename(n), r.clone()),
                    };
                    (r.clone(), o)
                })
                .collect();
            (
                rename(n),
                Atom {
                    parties: a.parties.clone(),
                    outcomes,
                },
            )
        })
        .collect();
    Negotiation {
        agents: neg.agents.clone(),
        atoms,
        initial: rename(&neg.initial),
        final_atom: rename(&neg.final_atom),
        states: None,
    }
}

/// Replaces every transformer of `neg` by a random left-total relation over
/// a fresh state space with up to `max_labels` local states per agent. Each
/// relation is lifted from a relation on the parties' local states, so
/// non-parties keep their state.
pub fn random_concrete(neg: &Negotiation, seed: u64, max_labels: usize) -> Result<Negotiation, GenerateError> {
    if !(1..=8).contains(&max_labels) {
        return Err(GenerateError::Labels(max_labels));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_agent: BTreeMap<AgentId, Vec<String>> = neg
        .agents
        .iter()
        .map(|a| {
            let k = rng.gen_range(1..=max_labels);
            (a.clone(), (0..k).map(|i| format!("q{i}")).collect())
        })
        .collect();
    let space = Arc::new(StateSpace::new(per_agent)?);
    let mut out = neg.clone();
    for (n, atom) in out.atoms.iter_mut() {
        let ix: Vec<usize> = atom
            .parties
            .iter()
            .map(|p| space.agent_index(p).expect("agent in space"))
            .collect();
        let _ = n;
        for o in atom.outcomes.values_mut() {
            o.transformer = Transformer::concrete(random_lifted(&space, &ix, &mut rng)?)?;
        }
    }
    out.states = Some(space);
    Ok(out)
}

fn random_lifted(space: &Arc<StateSpace>, parties: &[usize], rng: &mut ChaCha8Rng) -> Result<Relation, GenerateError> {
    let sizes: Vec<usize> = space
        .agents()
        .iter()
        .map(|a| space.labels(a).map_or(1, |l| l.len()))
        .collect();
    // local relation on the parties' components, as tuple -> images
    let mut local: BTreeMap<Vec<usize>, Vec<Vec<usize>>> = BTreeMap::new();
    let mut rel = Relation::empty(space.clone());
    for p in 0..space.size() {
        let comps = space.decode(p);
        let key: Vec<usize> = parties.iter().map(|&i| comps[i]).collect();
        let images = local.entry(key).or_insert_with(|| {
            let count = if rng.gen_bool(0.3) { 2 } else { 1 };
            (0..count)
                .map(|_| parties.iter().map(|&i| rng.gen_range(0..sizes[i])).collect())
                .collect()
        });
        for img in images.iter() {
            let mut q = comps.clone();
            for (j, &i) in parties.iter().enumerate() {
                q[i] = img[j];
            }
            rel.insert(p, space.encode(&q)?)?;
        }
    }
    Ok(rel)
}

/// Moves one agent of one non-final outcome to a different atom in which it
/// participates. `None` if no such change exists.
pub fn retarget_mutant(neg: &Negotiation, seed: u64) -> Option<Negotiation> {
    let mut candidates = Vec::new();
    for (n, r, o) in neg.outcomes() {
        if *n == neg.final_atom {
            continue;
        }
        for (a, ts) in &o.next {
            for (t, atom) in &neg.atoms {
                if !ts.contains(t) && atom.parties.contains(a) {
                    candidates.push((n.clone(), r.clone(), a.clone(), t.clone()));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, r, a, t) = candidates.choose(&mut rng)?.clone();
    let mut out = neg.clone();
    let o = out.atoms.get_mut(&n).unwrap().outcomes.get_mut(&r).unwrap();
    o.next.insert(a, BTreeSet::from([t]));
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{is_deterministic, validate};
    use crate::semantics::{soundness_oracle, DEFAULT_NODE_LIMIT};

    fn shape(atoms: usize, agents: usize, loop_depth: usize) -> Shape {
        Shape {
            atoms,
            agents,
            loop_depth,
        }
    }

    #[test]
    fn two_atoms_give_the_trivial_chain() {
        let neg = generate_sound_sdn(1, shape(2, 2, 1)).unwrap();
        assert_eq!(neg.atom_count(), 2);
        assert!(neg.atoms[&neg.initial].outcomes.values().all(|o| o.referenced().all(|t| *t == neg.final_atom)));
    }

    #[test]
    fn generated_instances_are_sound_and_sized() {
        for seed in 0..200 {
            let atoms = 2 + (seed as usize % 7);
            let agents = 1 + (seed as usize % 3);
            let neg = generate_sound_sdn(seed, shape(atoms, agents, (seed % 3) as usize)).unwrap();
            assert!(validate(&neg).is_empty(), "seed {seed}: {:?}", validate(&neg));
            assert!(is_deterministic(&neg));
            assert_eq!(neg.atom_count(), atoms);
            assert!(soundness_oracle(&neg, DEFAULT_NODE_LIMIT).unwrap().is_sound(), "seed {seed}");
        }
    }

    #[test]
    fn loop_depth_zero_is_acyclic() {
        for seed in 0..50 {
            let neg = generate_sound_sdn(seed, shape(10, 3, 0)).unwrap();
            assert!(negotiation_graph(&neg).is_acyclic());
        }
    }

    #[test]
    fn loops_requested_give_cycles() {
        for seed in 0..50 {
            let neg = generate_sound_sdn(seed, shape(8, 3, 2)).unwrap();
            assert!(!negotiation_graph(&neg).is_acyclic(), "seed {seed}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_sound_sdn(7, shape(6, 3, 1)).unwrap();
        let b = generate_sound_sdn(7, shape(6, 3, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_parameters() {
        assert_eq!(generate_sound_sdn(0, shape(1, 1, 0)), Err(GenerateError::TooFewAtoms(1)));
        assert_eq!(generate_sound_sdn(0, shape(3, 0, 0)), Err(GenerateError::NoAgents));
    }

    #[test]
    fn concrete_relations_are_valid() {
        for seed in 0..30 {
            let neg = generate_sound_sdn(seed, shape(6, 3, 1)).unwrap();
            let c = random_concrete(&neg, seed, 3).unwrap();
            assert!(validate(&c).is_empty(), "{:?}", validate(&c));
            assert!(c.states.as_ref().unwrap().size() <= 27);
        }
    }

    #[test]
    fn mutants_stay_deterministic() {
        let neg = generate_sound_sdn(3, shape(6, 2, 1)).unwrap();
        let m = retarget_mutant(&neg, 11).unwrap();
        assert_ne!(m, neg);
        assert!(is_deterministic(&m));
        assert!(validate(&m).is_empty());
    }
}
