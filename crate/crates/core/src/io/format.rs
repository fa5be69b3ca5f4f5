//! Line-oriented text format for negotiations.
//!
//! ```text
//! # Father, Daughter, Mother
//! agents D F M
//! states D bot t1          # optional; switches to concrete transformers
//! atom n0 parties D F M initial
//! outcome n0 yes -> D:n1 F:n1 M:n2
//! outcome n0 no -> D:nf F:nf M:nf delta (cat n0/no n1/t)
//! pairs n0 yes (bot)->(t1) (t1)->(t1)
//! atom nf parties D F M final
//! outcome nf end
//! ```
//!
//! A hyperarc repeats the agent: `A:n2 A:nf`. Parties that an outcome does
//! not mention get an empty next-set. `delta` takes the rest of the line.
//! Without `states`, an outcome's transformer defaults to its own label.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::model::{
    is_valid_name, validate, AgentId, Atom, AtomId, Expr, Negotiation, Outcome, OutcomeName,
    Relation, StateSpace, Transformer,
};

/// A problem with a document. `line` is 1-based; 0 marks problems that
/// belong to the document as a whole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "{}:{}: {}", self.line, self.column, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
pub struct ParseError(pub Vec<Diagnostic>);

struct Line<'a> {
    number: usize,
    text: &'a str,
    words: Vec<(usize, &'a str)>,
}

impl<'a> Line<'a> {
    fn new(number: usize, raw: &'a str) -> Self {
        let text = raw.split('#').next().unwrap_or("");
        let mut words = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    words.push((s, &text[s..i]));
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            words.push((s, &text[s..]));
        }
        Line {
            number,
            text,
            words,
        }
    }

    fn error(&self, word: usize, message: impl Into<String>) -> Diagnostic {
        let column = self.words.get(word).map_or(self.text.len(), |w| w.0) + 1;
        Diagnostic {
            line: self.number,
            column,
            message: message.into(),
        }
    }

    fn name(&self, word: usize, what: &str) -> Result<&'a str, Diagnostic> {
        match self.words.get(word) {
            None => Err(self.error(word, format!("expected {what}"))),
            Some((_, w)) if !is_valid_name(w) => Err(self.error(word, format!("invalid {what} {w:?}"))),
            Some((_, w)) => Ok(w),
        }
    }
}

#[derive(Default)]
struct Draft {
    agents: Option<(usize, BTreeSet<AgentId>)>,
    states: BTreeMap<AgentId, Vec<String>>,
    atoms: BTreeMap<AtomId, (usize, Atom)>,
    initial: Vec<(usize, AtomId)>,
    finals: Vec<(usize, AtomId)>,
    outcomes: Vec<OutcomeDraft>,
    pairs: Vec<(usize, AtomId, OutcomeName, Vec<(String, String)>)>,
}

struct OutcomeDraft {
    line: usize,
    atom: AtomId,
    name: OutcomeName,
    next: Vec<(AgentId, AtomId)>,
    delta: Option<Expr>,
}

/// Parses and validates a document.
pub fn parse(doc: &str) -> Result<Negotiation, ParseError> {
    let neg = parse_unchecked(doc)?;
    let violations = validate(&neg);
    if violations.is_empty() {
        Ok(neg)
    } else {
        Err(ParseError(
            violations
                .into_iter()
                .map(|v| Diagnostic {
                    line: 0,
                    column: 0,
                    message: v.to_string(),
                })
                .collect(),
        ))
    }
}

/// Parses a document without checking well-formedness. Syntax errors and
/// references to undeclared atoms are still reported.
pub fn parse_unchecked(doc: &str) -> Result<Negotiation, ParseError> {
    let mut draft = Draft::default();
    let mut errors = Vec::new();
    for (i, raw) in doc.lines().enumerate() {
        let line = Line::new(i + 1, raw);
        if line.words.is_empty() {
            continue;
        }
        if let Err(e) = parse_line(&line, &mut draft) {
            errors.push(e);
        }
    }
    if errors.is_empty() {
        build(draft).map_err(ParseError)
    } else {
        Err(ParseError(errors))
    }
}

fn parse_line(line: &Line<'_>, draft: &mut Draft) -> Result<(), Diagnostic> {
    let words: Vec<&str> = line.words.iter().map(|w| w.1).collect();
    match words[0] {
        "agents" => {
            if draft.agents.is_some() {
                return Err(line.error(0, "agents declared twice"));
            }
            let mut set = BTreeSet::new();
            for i in 1..words.len() {
                if !set.insert(AgentId::new(line.name(i, "agent")?)) {
                    return Err(line.error(i, format!("duplicate agent {}", words[i])));
                }
            }
            if set.is_empty() {
                return Err(line.error(1, "expected at least one agent"));
            }
            draft.agents = Some((line.number, set));
        }
        "states" => {
            let agent = AgentId::new(line.name(1, "agent")?);
            let mut labels = Vec::new();
            for i in 2..words.len() {
                labels.push(line.name(i, "state label")?.to_string());
            }
            if labels.is_empty() {
                return Err(line.error(2, "expected at least one state label"));
            }
            if draft.states.insert(agent.clone(), labels).is_some() {
                return Err(line.error(1, format!("states of {agent} declared twice")));
            }
        }
        "atom" => {
            let id = AtomId::new(line.name(1, "atom")?);
            if words.get(2) != Some(&"parties") {
                return Err(line.error(2, "expected `parties`"));
            }
            let mut parties = BTreeSet::new();
            let mut i = 3;
            while i < words.len() && !matches!(words[i], "initial" | "final") {
                parties.insert(AgentId::new(line.name(i, "party")?));
                i += 1;
            }
            for (j, w) in words.iter().enumerate().skip(i) {
                match *w {
                    "initial" => draft.initial.push((line.number, id.clone())),
                    "final" => draft.finals.push((line.number, id.clone())),
                    _ => return Err(line.error(j, format!("unexpected {w:?}"))),
                }
            }
            if draft.atoms.contains_key(&id) {
                return Err(line.error(1, format!("atom {id} declared twice")));
            }
            draft.atoms.insert(id, (line.number, Atom::new(parties)));
        }
        "outcome" => {
            let atom = AtomId::new(line.name(1, "atom")?);
            let name = OutcomeName::new(line.name(2, "outcome")?);
            let mut next = Vec::new();
            let mut delta = None;
            let mut i = 3;
            if words.get(i) == Some(&"->") {
                i += 1;
                while i < words.len() && words[i] != "delta" {
                    let (agent, target) = words[i]
                        .split_once(':')
                        .ok_or_else(|| line.error(i, "expected agent:atom"))?;
                    if !is_valid_name(agent) || !is_valid_name(target) {
                        return Err(line.error(i, format!("invalid agent:atom {:?}", words[i])));
                    }
                    next.push((AgentId::new(agent), AtomId::new(target)));
                    i += 1;
                }
            }
            if words.get(i) == Some(&"delta") {
                let start = line.words.get(i + 1).map(|w| w.0).ok_or_else(|| line.error(i + 1, "expected expression"))?;
                let expr: Expr = line.text[start..]
                    .trim()
                    .parse()
                    .map_err(|e| line.error(i + 1, format!("bad expression: {e}")))?;
                delta = Some(expr);
            } else if i < words.len() {
                return Err(line.error(i, format!("unexpected {:?}", words[i])));
            }
            draft.outcomes.push(OutcomeDraft {
                line: line.number,
                atom,
                name,
                next,
                delta,
            });
        }
        "pairs" => {
            let atom = AtomId::new(line.name(1, "atom")?);
            let name = OutcomeName::new(line.name(2, "outcome")?);
            let mut pairs = Vec::new();
            for i in 3..words.len() {
                let (p, q) = words[i]
                    .split_once("->")
                    .ok_or_else(|| line.error(i, "expected (state)->(state)"))?;
                pairs.push((p.to_string(), q.to_string()));
            }
            draft.pairs.push((line.number, atom, name, pairs));
        }
        other => return Err(line.error(0, format!("unknown directive {other:?}"))),
    }
    Ok(())
}

fn at(line: usize, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        line,
        column: 1,
        message: message.into(),
    }
}

fn build(draft: Draft) -> Result<Negotiation, Vec<Diagnostic>> {
    let mut errors = Vec::new();
    let agents = match draft.agents {
        Some((_, a)) => a,
        None => {
            errors.push(at(0, "missing `agents` line"));
            BTreeSet::new()
        }
    };
    let single = |v: &[(usize, AtomId)], what: &str, errors: &mut Vec<Diagnostic>| match v {
        [] => {
            errors.push(at(0, format!("no {what} atom declared")));
            None
        }
        [(_, a)] => Some(a.clone()),
        [_, (l, _), ..] => {
            errors.push(at(*l, format!("second {what} atom")));
            None
        }
    };
    let initial = single(&draft.initial, "initial", &mut errors);
    let final_atom = single(&draft.finals, "final", &mut errors);

    let space = if draft.states.is_empty() {
        None
    } else {
        match StateSpace::new(draft.states) {
            Ok(s) => Some(Arc::new(s)),
            Err(e) => {
                errors.push(at(0, format!("bad state space: {e}")));
                None
            }
        }
    };

    let mut relations: BTreeMap<(AtomId, OutcomeName), (usize, Relation)> = BTreeMap::new();
    for (line, atom, name, pairs) in draft.pairs {
        let Some(space) = &space else {
            errors.push(at(line, "`pairs` needs `states`"));
            continue;
        };
        let entry = relations
            .entry((atom, name))
            .or_insert_with(|| (line, Relation::empty(space.clone())));
        for (p, q) in pairs {
            match (space.parse_state(&p), space.parse_state(&q)) {
                (Ok(p), Ok(q)) => {
                    entry.1.insert(p, q).expect("states come from the same space");
                }
                (Err(e), _) | (_, Err(e)) => errors.push(at(line, format!("bad state: {e}"))),
            }
        }
    }

    let mut atoms: BTreeMap<AtomId, Atom> = draft.atoms.into_iter().map(|(k, (_, a))| (k, a)).collect();
    for o in draft.outcomes {
        let Some(atom) = atoms.get_mut(&o.atom) else {
            errors.push(at(o.line, format!("outcome of undeclared atom {}", o.atom)));
            continue;
        };
        if atom.outcomes.contains_key(&o.name) {
            errors.push(at(o.line, format!("outcome {}/{} declared twice", o.atom, o.name)));
            continue;
        }
        let mut next: BTreeMap<AgentId, BTreeSet<AtomId>> =
            atom.parties.iter().map(|a| (a.clone(), BTreeSet::new())).collect();
        for (agent, target) in o.next {
            next.entry(agent).or_default().insert(target);
        }
        let transformer = match (o.delta, relations.remove(&(o.atom.clone(), o.name.clone()))) {
            (Some(_), Some((l, _))) => {
                errors.push(at(l, format!("{}/{} has both delta and pairs", o.atom, o.name)));
                continue;
            }
            (Some(e), None) => Transformer::Symbolic(e),
            (None, Some((_, r))) => Transformer::Concrete(r),
            (None, None) => match &space {
                // no pairs at all: the empty relation, reported by validation
                Some(s) => Transformer::Concrete(Relation::empty(s.clone())),
                None => Transformer::label(o.atom.clone(), o.name.clone()),
            },
        };
        atom.outcomes.insert(o.name, Outcome { next, transformer });
    }
    for ((atom, name), (line, _)) in relations {
        errors.push(at(line, format!("pairs for undeclared outcome {atom}/{name}")));
    }
    if !errors.is_empty() {
        errors.sort_by_key(|d| d.line);
        return Err(errors);
    }
    Ok(Negotiation {
        agents,
        atoms,
        initial: initial.expect("checked above"),
        final_atom: final_atom.expect("checked above"),
        states: space,
    })
}

/// Canonical document for `neg`: agents, state labels, then every atom in
/// name order followed by its outcomes in name order.
pub fn serialize(neg: &Negotiation) -> String {
    let mut s = String::new();
    let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(" ");
    writeln!(s, "agents {}", join(&mut neg.agents.iter().map(|a| a.to_string()))).unwrap();
    if let Some(space) = &neg.states {
        for a in space.agents() {
            let labels = space.labels(a).unwrap_or_default();
            writeln!(s, "states {a} {}", labels.join(" ")).unwrap();
        }
    }
    for (n, atom) in &neg.atoms {
        write!(s, "atom {n} parties {}", join(&mut atom.parties.iter().map(|a| a.to_string()))).unwrap();
        if *n == neg.initial {
            s.push_str(" initial");
        }
        if *n == neg.final_atom {
            s.push_str(" final");
        }
        s.push('\n');
        for (r, o) in &atom.outcomes {
            write!(s, "outcome {n} {r}").unwrap();
            let arcs: Vec<String> = o
                .next
                .iter()
                .flat_map(|(a, ts)| ts.iter().map(move |t| format!("{a}:{t}")))
                .collect();
            if !arcs.is_empty() {
                write!(s, " -> {}", arcs.join(" ")).unwrap();
            }
            match &o.transformer {
                Transformer::Symbolic(e) if *e == Expr::label(n.clone(), r.clone()) => {}
                Transformer::Symbolic(e) => write!(s, " delta {e}").unwrap(),
                Transformer::Concrete(_) => {}
            }
            s.push('\n');
            if let Transformer::Concrete(rel) = &o.transformer {
                let space = rel.space();
                let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for (p, q) in rel.pairs() {
                    by_source.entry(p).or_default().push(q);
                }
                for (p, qs) in by_source {
                    let ps = space.format_state(p);
                    let pairs: Vec<String> =
                        qs.iter().map(|q| format!("{ps}->{}", space.format_state(*q))).collect();
                    writeln!(s, "pairs {n} {r} {}", pairs.join(" ")).unwrap();
                }
            }
        }
    }
    s
}
