//! Outcome state transformers.
//!
//! A transformer describes how an outcome changes the internal states of the
//! agents. Two backends are supported:
//!
//! * [`Expr`], a symbolic term over outcome labels built with concatenation,
//!   union and Kleene star. It works for arbitrary (even infinite) state sets
//!   because nothing is ever evaluated.
//! * [`Relation`], an explicit relation over a finite global state space
//!   `Q_A = Π_a Q_a`, stored as a dense bit matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use super::ids::{is_valid_name, AgentId, AtomId, OutcomeName};

/// Upper bound on `|Q_A|` for the concrete backend.
pub const MAX_GLOBAL_STATES: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformerError {
    #[error("cannot combine a symbolic and a concrete transformer")]
    BackendMismatch,
    #[error("relations are defined over different state spaces")]
    SpaceMismatch,
    #[error("relation is not left-total: state {0} has no successor")]
    NotLeftTotal(String),
    #[error("global state index {0} is outside the state space")]
    StateOutOfRange(usize),
    #[error("operation needs a concrete transformer")]
    NotConcrete,
    #[error("no relation bound to label {atom}/{outcome}")]
    UnboundLabel { atom: AtomId, outcome: OutcomeName },
    #[error("agent {0} has an empty state set")]
    EmptyStateSet(AgentId),
    #[error("agent {agent} lists state {label} twice")]
    DuplicateState { agent: AgentId, label: String },
    #[error("invalid state label {0:?}")]
    InvalidLabel(String),
    #[error("state space has more than {MAX_GLOBAL_STATES} global states")]
    SpaceTooLarge,
    #[error("agent {0} is not part of the state space")]
    UnknownAgent(AgentId),
    #[error("unknown state {label:?} for agent {agent}")]
    UnknownState { agent: AgentId, label: String },
    #[error("state tuple has {found} components, expected {expected}")]
    TupleArity { expected: usize, found: usize },
    #[error("malformed expression: {0}")]
    Syntax(String),
}

/// Finite per-agent state sets and the induced global state space.
///
/// Agents are kept in canonical (lexicographic) order. A global state is an
/// index in `0..size()`; the tuple components follow the agent order, with
/// the first agent most significant, so index order is tuple order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StateSpace {
    agents: Vec<AgentId>,
    labels: Vec<Vec<String>>,
    strides: Vec<usize>,
    size: usize,
}

impl StateSpace {
    pub fn new(per_agent: BTreeMap<AgentId, Vec<String>>) -> Result<Self, TransformerError> {
        let mut agents = Vec::with_capacity(per_agent.len());
        let mut labels = Vec::with_capacity(per_agent.len());
        let mut size: usize = 1;
        for (agent, states) in per_agent {
            if states.is_empty() {
                return Err(TransformerError::EmptyStateSet(agent));
            }
            let mut seen = BTreeSet::new();
            for label in &states {
                if !is_valid_name(label) {
                    return Err(TransformerError::InvalidLabel(label.clone()));
                }
                if !seen.insert(label.as_str()) {
                    return Err(TransformerError::DuplicateState {
                        agent,
                        label: label.clone(),
                    });
                }
            }
            size = size
                .checked_mul(states.len())
                .filter(|s| *s <= MAX_GLOBAL_STATES)
                .ok_or(TransformerError::SpaceTooLarge)?;
            agents.push(agent);
            labels.push(states);
        }
        let mut strides = vec![1; agents.len()];
        for i in (0..agents.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * labels[i + 1].len();
        }
        Ok(Self {
            agents,
            labels,
            strides,
            size,
        })
    }

    /// Convenience constructor from string slices.
    pub fn from_labels<'a>(
        per_agent: impl IntoIterator<Item = (&'a str, Vec<&'a str>)>,
    ) -> Result<Self, TransformerError> {
        Self::new(
            per_agent
                .into_iter()
                .map(|(a, ls)| (AgentId::new(a), ls.into_iter().map(String::from).collect()))
                .collect(),
        )
    }

    pub fn agents(&self) -> &[AgentId] {
        &self.agents
    }

    pub fn agent_index(&self, agent: &AgentId) -> Option<usize> {
        self.agents.binary_search(agent).ok()
    }

    pub fn labels(&self, agent: &AgentId) -> Option<&[String]> {
        self.agent_index(agent).map(|i| self.labels[i].as_slice())
    }

    /// Number of global states `|Q_A|`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn encode(&self, local: &[usize]) -> Result<usize, TransformerError> {
        if local.len() != self.agents.len() {
            return Err(TransformerError::TupleArity {
                expected: self.agents.len(),
                found: local.len(),
            });
        }
        let mut index = 0;
        for (i, &q) in local.iter().enumerate() {
            if q >= self.labels[i].len() {
                return Err(TransformerError::StateOutOfRange(q));
            }
            index += q * self.strides[i];
        }
        Ok(index)
    }

    pub fn decode(&self, state: usize) -> Vec<usize> {
        self.agents
            .iter()
            .enumerate()
            .map(|(i, _)| (state / self.strides[i]) % self.labels[i].len())
            .collect()
    }

    /// Local state index of `agent` inside global state `state`.
    pub fn component(&self, state: usize, agent_index: usize) -> usize {
        (state / self.strides[agent_index]) % self.labels[agent_index].len()
    }

    /// Parses a tuple of labels in agent order, e.g. `["t1", "bot"]`.
    pub fn state_of<S: AsRef<str>>(&self, labels: &[S]) -> Result<usize, TransformerError> {
        if labels.len() != self.agents.len() {
            return Err(TransformerError::TupleArity {
                expected: self.agents.len(),
                found: labels.len(),
            });
        }
        let local = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                self.labels[i]
                    .iter()
                    .position(|x| x == l.as_ref())
                    .ok_or_else(|| TransformerError::UnknownState {
                        agent: self.agents[i].clone(),
                        label: l.as_ref().to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.encode(&local)
    }

    /// Renders a global state as `(l1,l2,...)`.
    pub fn format_state(&self, state: usize) -> String {
        let parts: Vec<&str> = self
            .decode(state)
            .into_iter()
            .enumerate()
            .map(|(i, q)| self.labels[i][q].as_str())
            .collect();
        format!("({})", parts.join(","))
    }

    /// Parses `(l1,l2,...)`.
    pub fn parse_state(&self, text: &str) -> Result<usize, TransformerError> {
        let inner = text
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(|| TransformerError::Syntax(format!("expected a state tuple, got {text:?}")))?;
        let parts: Vec<&str> = if inner.is_empty() {
            Vec::new()
        } else {
            inner.split(',').collect()
        };
        self.state_of(&parts)
    }
}

/// A binary relation over the global states of a [`StateSpace`].
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Relation {
    space: Arc<StateSpace>,
    words: usize,
    rows: Vec<u64>,
}

impl Relation {
    pub fn empty(space: Arc<StateSpace>) -> Self {
        let words = space.size().div_ceil(64);
        let rows = vec![0; words * space.size()];
        Self { space, words, rows }
    }

    pub fn identity(space: Arc<StateSpace>) -> Self {
        let mut rel = Self::empty(space);
        for q in 0..rel.size() {
            rel.set(q, q);
        }
        rel
    }

    /// Builds a relation and checks that every state has a successor.
    pub fn from_pairs(
        space: Arc<StateSpace>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TransformerError> {
        let rel = Self::from_pairs_partial(space, pairs)?;
        rel.check_left_total()?;
        Ok(rel)
    }

    /// Builds a relation without the left-totality check.
    pub fn from_pairs_partial(
        space: Arc<StateSpace>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TransformerError> {
        let mut rel = Self::empty(space);
        for (p, q) in pairs {
            rel.insert(p, q)?;
        }
        Ok(rel)
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    fn size(&self) -> usize {
        self.space.size()
    }

    fn row(&self, p: usize) -> &[u64] {
        &self.rows[p * self.words..(p + 1) * self.words]
    }

    fn set(&mut self, p: usize, q: usize) {
        self.rows[p * self.words + q / 64] |= 1 << (q % 64);
    }

    pub fn insert(&mut self, p: usize, q: usize) -> Result<(), TransformerError> {
        for s in [p, q] {
            if s >= self.size() {
                return Err(TransformerError::StateOutOfRange(s));
            }
        }
        self.set(p, q);
        Ok(())
    }

    pub fn contains(&self, p: usize, q: usize) -> bool {
        p < self.size() && q < self.size() && self.row(p)[q / 64] & (1 << (q % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.rows.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|w| *w == 0)
    }

    /// All pairs in `(source, target)` order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.size()).flat_map(move |p| self.image_iter(p).map(move |q| (p, q)))
    }

    fn image_iter(&self, p: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(p).iter().enumerate().flat_map(|(w, &bits)| {
            (0..64)
                .filter(move |b| bits & (1u64 << b) != 0)
                .map(move |b| w * 64 + b)
        })
    }

    /// Image of a single state.
    pub fn image(&self, p: usize) -> Result<Vec<usize>, TransformerError> {
        if p >= self.size() {
            return Err(TransformerError::StateOutOfRange(p));
        }
        Ok(self.image_iter(p).collect())
    }

    pub fn is_left_total(&self) -> bool {
        (0..self.size()).all(|p| self.row(p).iter().any(|w| *w != 0))
    }

    fn check_left_total(&self) -> Result<(), TransformerError> {
        match (0..self.size()).find(|&p| self.row(p).iter().all(|w| *w == 0)) {
            Some(p) => Err(TransformerError::NotLeftTotal(self.space.format_state(p))),
            None => Ok(()),
        }
    }

    fn same_space(&self, other: &Self) -> Result<(), TransformerError> {
        if Arc::ptr_eq(&self.space, &other.space) || self.space == other.space {
            Ok(())
        } else {
            Err(TransformerError::SpaceMismatch)
        }
    }

    /// Relational composition: `self` first, then `other`.
    pub fn compose(&self, other: &Self) -> Result<Self, TransformerError> {
        self.same_space(other)?;
        let mut out = Self::empty(self.space.clone());
        let w = self.words;
        for p in 0..self.size() {
            let dst = p * w;
            for mid in self.image_iter(p) {
                let src = other.row(mid);
                for (k, bits) in src.iter().enumerate() {
                    out.rows[dst + k] |= bits;
                }
            }
        }
        Ok(out)
    }

    pub fn union(&self, other: &Self) -> Result<Self, TransformerError> {
        let mut out = self.clone();
        out.union_with(other)?;
        Ok(out)
    }

    /// In-place union; returns whether `self` grew.
    pub fn union_with(&mut self, other: &Self) -> Result<bool, TransformerError> {
        self.same_space(other)?;
        let mut changed = false;
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            let merged = *a | *b;
            changed |= merged != *a;
            *a = merged;
        }
        Ok(changed)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.space == other.space && self.rows.iter().zip(&other.rows).all(|(a, b)| a & !b == 0)
    }

    /// Reflexive-transitive closure.
    pub fn star(&self) -> Self {
        let mut out = self.clone();
        let w = self.words;
        for q in 0..self.size() {
            out.set(q, q);
        }
        for k in 0..self.size() {
            let pivot: Vec<u64> = out.row(k).to_vec();
            for i in 0..self.size() {
                if out.contains(i, k) {
                    for (j, bits) in pivot.iter().enumerate() {
                        out.rows[i * w + j] |= bits;
                    }
                }
            }
        }
        out
    }

    /// True if every pair leaves the components of agents outside `parties`
    /// unchanged, i.e. the relation is a `parties`-transformer.
    pub fn only_transforms(&self, parties: &BTreeSet<AgentId>) -> bool {
        let fixed: Vec<usize> = self
            .space
            .agents()
            .iter()
            .enumerate()
            .filter(|(_, a)| !parties.contains(*a))
            .map(|(i, _)| i)
            .collect();
        self.pairs().all(|(p, q)| {
            fixed
                .iter()
                .all(|&i| self.space.component(p, i) == self.space.component(q, i))
        })
    }
}

impl fmt::Debug for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set()
            .entries(self.pairs().map(|(p, q)| {
                format!(
                    "{}->{}",
                    self.space.format_state(p),
                    self.space.format_state(q)
                )
            }))
            .finish()
    }
}

/// Symbolic transformer term.
///
/// The smart constructors [`Expr::concat`], [`Expr::union`] and [`Expr::star`]
/// keep terms in a light normal form: identities are dropped from
/// concatenations, nested concatenations and unions are flattened, union
/// operands are sorted and deduplicated, and `star` is idempotent.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    Identity,
    Label(AtomId, OutcomeName),
    Concat(Vec<Expr>),
    Union(Vec<Expr>),
    Star(Box<Expr>),
}

impl Expr {
    pub fn label(atom: impl Into<AtomId>, outcome: impl Into<OutcomeName>) -> Self {
        Expr::Label(atom.into(), outcome.into())
    }

    pub fn concat(first: Expr, second: Expr) -> Expr {
        let mut parts = Vec::new();
        for e in [first, second] {
            match e {
                Expr::Identity => {}
                Expr::Concat(inner) => parts.extend(inner),
                other => parts.push(other),
            }
        }
        match parts.len() {
            0 => Expr::Identity,
            1 => parts.pop().unwrap(),
            _ => Expr::Concat(parts),
        }
    }

    pub fn union(first: Expr, second: Expr) -> Expr {
        let mut parts = BTreeSet::new();
        for e in [first, second] {
            match e {
                Expr::Union(inner) => parts.extend(inner),
                other => {
                    parts.insert(other);
                }
            }
        }
        let mut parts: Vec<Expr> = parts.into_iter().collect();
        if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Expr::Union(parts)
        }
    }

    pub fn star(inner: Expr) -> Expr {
        match inner {
            Expr::Identity => Expr::Identity,
            s @ Expr::Star(_) => s,
            other => Expr::Star(Box::new(other)),
        }
    }

    /// Number of nodes in the term.
    pub fn size(&self) -> usize {
        match self {
            Expr::Identity | Expr::Label(..) => 1,
            Expr::Concat(v) | Expr::Union(v) => 1 + v.iter().map(Expr::size).sum::<usize>(),
            Expr::Star(e) => 1 + e.size(),
        }
    }

    /// Evaluates the term over a finite state space, mapping every label to
    /// a relation with `leaf`.
    pub fn evaluate(
        &self,
        space: &Arc<StateSpace>,
        leaf: &mut dyn FnMut(&AtomId, &OutcomeName) -> Option<Relation>,
    ) -> Result<Relation, TransformerError> {
        match self {
            Expr::Identity => Ok(Relation::identity(space.clone())),
            Expr::Label(a, r) => leaf(a, r).ok_or_else(|| TransformerError::UnboundLabel {
                atom: a.clone(),
                outcome: r.clone(),
            }),
            Expr::Concat(parts) => {
                let mut acc = Relation::identity(space.clone());
                for p in parts {
                    acc = acc.compose(&p.evaluate(space, leaf)?)?;
                }
                Ok(acc)
            }
            Expr::Union(parts) => {
                let mut acc = Relation::empty(space.clone());
                for p in parts {
                    acc.union_with(&p.evaluate(space, leaf)?)?;
                }
                Ok(acc)
            }
            Expr::Star(e) => Ok(e.evaluate(space, leaf)?.star()),
        }
    }

    fn write_to(&self, out: &mut String) {
        match self {
            Expr::Identity => out.push_str("id"),
            Expr::Label(a, r) => {
                out.push_str(a.as_str());
                out.push('/');
                out.push_str(r.as_str());
            }
            Expr::Concat(parts) | Expr::Union(parts) => {
                out.push_str(if matches!(self, Expr::Concat(_)) {
                    "(cat"
                } else {
                    "(alt"
                });
                for p in parts {
                    out.push(' ');
                    p.write_to(out);
                }
                out.push(')');
            }
            Expr::Star(e) => {
                out.push_str("(star ");
                e.write_to(out);
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_to(&mut s);
        f.write_str(&s)
    }
}

impl FromStr for Expr {
    type Err = TransformerError;

    /// Parses the S-expression syntax produced by `Display`:
    /// `id`, `atom/outcome`, `(cat e ...)`, `(alt e ...)`, `(star e)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let spaced = s.replace('(', " ( ").replace(')', " ) ");
        let tokens: Vec<&str> = spaced.split_whitespace().collect();
        let mut pos = 0;
        let expr = parse_expr(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(TransformerError::Syntax(format!(
                "trailing input after expression: {:?}",
                tokens[pos..].join(" ")
            )));
        }
        Ok(expr)
    }
}

fn parse_expr(tokens: &[&str], pos: &mut usize) -> Result<Expr, TransformerError> {
    let tok = *tokens
        .get(*pos)
        .ok_or_else(|| TransformerError::Syntax("unexpected end of expression".into()))?;
    *pos += 1;
    match tok {
        "(" => {
            let op = *tokens
                .get(*pos)
                .ok_or_else(|| TransformerError::Syntax("missing operator".into()))?;
            *pos += 1;
            let mut args = Vec::new();
            while tokens.get(*pos) != Some(&")") {
                if *pos >= tokens.len() {
                    return Err(TransformerError::Syntax("unbalanced parenthesis".into()));
                }
                args.push(parse_expr(tokens, pos)?);
            }
            *pos += 1;
            match (op, args.len()) {
                ("star", 1) => Ok(Expr::star(args.pop().unwrap())),
                ("cat", n) if n >= 1 => Ok(args.into_iter().fold(Expr::Identity, Expr::concat)),
                ("alt", n) if n >= 1 => {
                    let mut it = args.into_iter();
                    let first = it.next().unwrap();
                    Ok(it.fold(first, Expr::union))
                }
                _ => Err(TransformerError::Syntax(format!(
                    "bad operator {op:?} with {} operands",
                    args.len()
                ))),
            }
        }
        ")" => Err(TransformerError::Syntax("unexpected ')'".into())),
        "id" => Ok(Expr::Identity),
        label => {
            let (atom, outcome) = label
                .split_once('/')
                .filter(|(a, r)| is_valid_name(a) && is_valid_name(r))
                .ok_or_else(|| TransformerError::Syntax(format!("bad label {label:?}")))?;
            Ok(Expr::label(atom, outcome))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Backend {
    Symbolic,
    Concrete,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Symbolic => "symbolic",
            Backend::Concrete => "concrete",
        })
    }
}

/// The state transformer attached to an outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transformer {
    Symbolic(Expr),
    Concrete(Relation),
}

impl Transformer {
    /// The default symbolic transformer of an outcome: its own label.
    pub fn label(atom: impl Into<AtomId>, outcome: impl Into<OutcomeName>) -> Self {
        Transformer::Symbolic(Expr::label(atom, outcome))
    }

    /// Wraps a relation, rejecting relations that are not left-total.
    pub fn concrete(relation: Relation) -> Result<Self, TransformerError> {
        relation.check_left_total()?;
        Ok(Transformer::Concrete(relation))
    }

    pub fn backend(&self) -> Backend {
        match self {
            Transformer::Symbolic(_) => Backend::Symbolic,
            Transformer::Concrete(_) => Backend::Concrete,
        }
    }

    pub fn as_relation(&self) -> Option<&Relation> {
        match self {
            Transformer::Concrete(r) => Some(r),
            Transformer::Symbolic(_) => None,
        }
    }

    pub fn as_expr(&self) -> Option<&Expr> {
        match self {
            Transformer::Symbolic(e) => Some(e),
            Transformer::Concrete(_) => None,
        }
    }

    /// Identity transformer in the same backend (and state space) as `self`.
    pub fn identity_like(&self) -> Self {
        match self {
            Transformer::Symbolic(_) => Transformer::Symbolic(Expr::Identity),
            Transformer::Concrete(r) => Transformer::Concrete(Relation::identity(r.space.clone())),
        }
    }

    /// Sequential composition: `self` happens first.
    pub fn compose(&self, other: &Self) -> Result<Self, TransformerError> {
        match (self, other) {
            (Transformer::Symbolic(a), Transformer::Symbolic(b)) => {
                Ok(Transformer::Symbolic(Expr::concat(a.clone(), b.clone())))
            }
            (Transformer::Concrete(a), Transformer::Concrete(b)) => {
                Ok(Transformer::Concrete(a.compose(b)?))
            }
            _ => Err(TransformerError::BackendMismatch),
        }
    }

    pub fn union(&self, other: &Self) -> Result<Self, TransformerError> {
        match (self, other) {
            (Transformer::Symbolic(a), Transformer::Symbolic(b)) => {
                Ok(Transformer::Symbolic(Expr::union(a.clone(), b.clone())))
            }
            (Transformer::Concrete(a), Transformer::Concrete(b)) => {
                Ok(Transformer::Concrete(a.union(b)?))
            }
            _ => Err(TransformerError::BackendMismatch),
        }
    }

    pub fn star(&self) -> Result<Self, TransformerError> {
        Ok(match self {
            Transformer::Symbolic(e) => Transformer::Symbolic(Expr::star(e.clone())),
            Transformer::Concrete(r) => Transformer::Concrete(r.star()),
        })
    }

    /// Set of states reachable from `q0` through the relation.
    pub fn apply_relation(&self, q0: usize) -> Result<BTreeSet<usize>, TransformerError> {
        match self {
            Transformer::Concrete(r) => Ok(r.image(q0)?.into_iter().collect()),
            Transformer::Symbolic(_) => Err(TransformerError::NotConcrete),
        }
    }
}
