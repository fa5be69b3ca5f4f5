//! Summarization of sound deterministic negotiations.
//!
//! [`summarize_acyclic`] reduces an acyclic negotiation with merges and
//! shortcuts. [`summarize`] handles cycles: it repeatedly picks a
//! synchronizer `s`, summarizes the acyclic `N_s`, replays that reduction
//! (all but its final collapse) on the whole negotiation, and removes the
//! resulting self-loop on `s` with the iteration rule.
//!
//! Reduction ends in a single atom exactly when the input is sound, so a
//! stuck reduction doubles as a soundness verdict.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::model::{is_deterministic, validate, AtomId, Negotiation, OutcomeName, Target, Violation};
use crate::rules::{
    apply, apply_iteration, find_iterations, find_merges, find_shortcuts, replay, ReplayError,
    Redex, RuleApplication, RuleError, RuleKind, Transcript,
};
use crate::semantics::{reachability_graph, SemanticsError, DEFAULT_NODE_LIMIT};
use crate::structure::{negotiation_graph, select_synchronizer, synchronizer_atoms, Selection};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SummarizeError {
    #[error("negotiation is not well formed: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("negotiation is not deterministic")]
    NotDeterministic,
    #[error("acyclic summarization needs an acyclic negotiation")]
    Cyclic,
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("rule failed unexpectedly: {0}")]
    Rule(#[from] RuleError),
    /// The while loop ran past its round budget without becoming acyclic.
    #[error("no progress after {0} rounds")]
    RoundLimit(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    /// Marking limit for the reachability graphs used to find fragments.
    pub node_limit: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            node_limit: DEFAULT_NODE_LIMIT,
        }
    }
}

/// Why a reduction got stuck.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StuckReason {
    /// More than one atom left and no merge or shortcut applies.
    NoRuleApplies,
    /// The negotiation is cyclic but no atom has a usable fragment.
    NoSynchronizer,
    /// The reduction of `N_s` got stuck.
    SplitStuck {
        synchronizer: AtomId,
        reason: Box<StuckReason>,
    },
    /// A rule of the `N_s` transcript does not apply to the whole negotiation.
    Replay(ReplayError),
    /// After replay, `s` has no self-loop to iterate.
    NoSelfLoop(AtomId),
    /// Iteration would leave `s` without outcomes.
    OnlySelfLoop(AtomId),
}

impl fmt::Display for StuckReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StuckReason::NoRuleApplies => f.write_str("no rule applies"),
            StuckReason::NoSynchronizer => f.write_str("cyclic, but no synchronizer has an acyclic split"),
            StuckReason::SplitStuck {
                synchronizer,
                reason,
            } => write!(f, "reduction of the split at {synchronizer} got stuck: {reason}"),
            StuckReason::Replay(e) => write!(f, "{e}"),
            StuckReason::NoSelfLoop(s) => write!(f, "{s} has no self-loop after replay"),
            StuckReason::OnlySelfLoop(s) => write!(f, "{s} can only loop"),
        }
    }
}

/// The negotiation at which reduction got stuck.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub reason: StuckReason,
    pub negotiation: Negotiation,
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} atoms, {} outcomes left)",
            self.reason,
            self.negotiation.atom_count(),
            self.negotiation.outcome_count()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// A single atom, initial and final at once.
    Summary(Negotiation),
    Unsound(Box<Evidence>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryResult {
    pub outcome: Outcome,
    /// Every rule applied to the input negotiation, in order. Reductions of
    /// the split negotiations are not included; their replays are.
    pub transcript: Transcript,
    pub stats: RunStats,
}

impl SummaryResult {
    pub fn is_sound(&self) -> bool {
        matches!(self.outcome, Outcome::Summary(_))
    }

    pub fn summary(&self) -> Option<&Negotiation> {
        match &self.outcome {
            Outcome::Summary(n) => Some(n),
            Outcome::Unsound(_) => None,
        }
    }
}

/// Measurements of one round of the while loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationRecord {
    /// `|N_i|` and `|Out(N_i)|` at the loop head.
    pub atoms: usize,
    pub outcomes: usize,
    pub atom_set: BTreeSet<AtomId>,
    pub targets: BTreeSet<Target>,
    pub synchronizers: usize,
    /// Whether no merge applied at the loop head.
    pub merge_free: bool,
    pub synchronizer: AtomId,
    pub fragment_atoms: usize,
    /// Length of the reduction of `N_s`, including the skipped last rule.
    pub split_applications: usize,
    pub replayed: usize,
    pub self_loop_merges: usize,
    pub iterations: usize,
    /// `|Out(N_i')|`: outcomes right after the iteration rule.
    pub outcomes_after_iteration: usize,
    pub merges_after: usize,
}

impl IterationRecord {
    pub fn applications(&self) -> usize {
        self.replayed + self.self_loop_merges + self.iterations + self.merges_after
    }

    /// `|N_i|² + |Out(N_i)| + 1 + |Out(N_i')|`
    pub fn bound(&self) -> usize {
        self.atoms * self.atoms + self.outcomes + 1 + self.outcomes_after_iteration
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub initial_atoms: usize,
    pub initial_outcomes: usize,
    pub initial_merges: usize,
    pub rounds: Vec<IterationRecord>,
    /// Negotiation size, targets and synchronizer count when the loop exits.
    pub exit_atoms: usize,
    pub exit_outcomes: usize,
    pub exit_atom_set: BTreeSet<AtomId>,
    pub exit_targets: BTreeSet<Target>,
    pub exit_synchronizers: usize,
    /// Merges and shortcuts of the closing acyclic phase.
    pub acyclic_applications: usize,
    /// False when the run got stuck before the closing phase.
    pub completed: bool,
}

/// One checked property of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flag {
    pub name: &'static str,
    pub round: Option<usize>,
    pub holds: bool,
    pub detail: String,
}

impl RunStats {
    pub fn total_applications(&self) -> usize {
        self.initial_merges
            + self.rounds.iter().map(IterationRecord::applications).sum::<usize>()
            + self.acyclic_applications
    }

    /// `|N₀|⁴·|Out(N₀)|`
    pub fn total_bound(&self) -> usize {
        self.initial_atoms.pow(4) * self.initial_outcomes
    }

    /// `|N|² + |Out(N)|` of the input, the bound for acyclic inputs.
    pub fn acyclic_bound(&self) -> usize {
        self.initial_atoms * self.initial_atoms + self.initial_outcomes
    }

    /// The complexity invariants of the reduction, checked on this run.
    pub fn flags(&self) -> Vec<Flag> {
        let mut out = Vec::new();
        let mut push = |name, round, holds, detail: String| {
            out.push(Flag {
                name,
                round,
                holds,
                detail,
            })
        };
        let n = self.rounds.len();
        for (i, r) in self.rounds.iter().enumerate() {
            push("merge_free_head", Some(i), r.merge_free, String::new());
            push(
                "round_bound",
                Some(i),
                r.applications() <= r.bound(),
                format!("{} <= {}", r.applications(), r.bound()),
            );
            let grown = r.outcomes * (1 + r.atoms);
            push(
                "outcome_growth",
                Some(i),
                r.outcomes_after_iteration <= grown,
                format!("{} <= {}", r.outcomes_after_iteration, grown),
            );
            let (next_atoms, next_targets, next_syncs) = match self.rounds.get(i + 1) {
                Some(next) => (&next.atom_set, &next.targets, next.synchronizers),
                None => (&self.exit_atom_set, &self.exit_targets, self.exit_synchronizers),
            };
            if i + 1 < n || self.completed {
                push(
                    "atoms_shrink",
                    Some(i),
                    next_atoms.is_subset(&r.atom_set),
                    String::new(),
                );
                push(
                    "targets_shrink",
                    Some(i),
                    next_targets.is_subset(&r.targets),
                    String::new(),
                );
                push(
                    "synchronizers_decrease",
                    Some(i),
                    next_syncs < r.synchronizers,
                    format!("{} < {}", next_syncs, r.synchronizers),
                );
            }
        }
        push(
            "round_count",
            None,
            n <= self.initial_atoms,
            format!("{} <= {}", n, self.initial_atoms),
        );
        if n == 0 {
            let used = self.initial_merges + self.acyclic_applications;
            push(
                "acyclic_bound",
                None,
                used <= self.acyclic_bound(),
                format!("{} <= {}", used, self.acyclic_bound()),
            );
        }
        push(
            "total_bound",
            None,
            self.total_applications() <= self.total_bound(),
            format!("{} <= {}", self.total_applications(), self.total_bound()),
        );
        out
    }

    /// Line-keyed report: one `iter k key=value` line per measured quantity,
    /// followed by `total key=value` and `flag name[@k]=pass|fail` lines.
    pub fn report(&self) -> String {
        let mut s = String::new();
        for (k, r) in self.rounds.iter().enumerate() {
            let fields: [(&str, String); 14] = [
                ("atoms", r.atoms.to_string()),
                ("outcomes", r.outcomes.to_string()),
                ("targets", r.targets.len().to_string()),
                ("synchronizers", r.synchronizers.to_string()),
                ("synchronizer", r.synchronizer.to_string()),
                ("fragment_atoms", r.fragment_atoms.to_string()),
                ("split_applications", r.split_applications.to_string()),
                ("replayed", r.replayed.to_string()),
                ("self_loop_merges", r.self_loop_merges.to_string()),
                ("iterations", r.iterations.to_string()),
                ("outcomes_after_iteration", r.outcomes_after_iteration.to_string()),
                ("merges_after", r.merges_after.to_string()),
                ("applications", r.applications().to_string()),
                ("bound", r.bound().to_string()),
            ];
            for (key, value) in fields {
                s.push_str(&format!("iter {k} {key}={value}\n"));
            }
        }
        let totals = [
            ("initial_atoms", self.initial_atoms),
            ("initial_outcomes", self.initial_outcomes),
            ("initial_merges", self.initial_merges),
            ("rounds", self.rounds.len()),
            ("acyclic_applications", self.acyclic_applications),
            ("applications", self.total_applications()),
            ("bound", self.total_bound()),
        ];
        for (key, value) in totals {
            s.push_str(&format!("total {key}={value}\n"));
        }
        for flag in self.flags() {
            let at = flag.round.map_or(String::new(), |k| format!("@{k}"));
            let verdict = if flag.holds { "pass" } else { "fail" };
            s.push_str(&format!("flag {}{at}={verdict}\n", flag.name));
        }
        s
    }
}

/// Which negotiation a rule was applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// The negotiation being summarized.
    Main,
    /// A split `N_s`.
    Split,
}

/// Progress notifications from a reduction run.
#[derive(Debug)]
pub enum Event<'a> {
    Applied {
        scope: Scope,
        before: &'a Negotiation,
        application: &'a RuleApplication,
        after: &'a Negotiation,
    },
    Selected {
        round: usize,
        selection: &'a Selection,
    },
    /// The split's reduction, before replay.
    SplitReduced {
        round: usize,
        transcript: &'a Transcript,
    },
    Replayed {
        round: usize,
        negotiation: &'a Negotiation,
    },
    Iterated {
        round: usize,
        negotiation: &'a Negotiation,
    },
}

pub type Observer<'o> = dyn FnMut(&Event<'_>) + 'o;

fn check_input(neg: &Negotiation) -> Result<(), SummarizeError> {
    let violations = validate(neg);
    if !violations.is_empty() {
        return Err(SummarizeError::Invalid(violations));
    }
    if !is_deterministic(neg) {
        return Err(SummarizeError::NotDeterministic);
    }
    Ok(())
}

struct Run<'o, 'p> {
    observer: &'o mut Observer<'p>,
    transcript: Vec<RuleApplication>,
    scope: Scope,
}

impl Run<'_, '_> {
    fn step(&mut self, neg: &Negotiation, redex: &Redex) -> Result<Negotiation, RuleError> {
        let (after, app) = apply(neg, redex)?;
        (self.observer)(&Event::Applied {
            scope: self.scope,
            before: neg,
            application: &app,
            after: &after,
        });
        self.transcript.push(app);
        Ok(after)
    }

    fn merge_all(&mut self, mut neg: Negotiation) -> Result<(Negotiation, usize), RuleError> {
        let mut count = 0;
        while let Some(redex) = find_merges(&neg).into_iter().next() {
            neg = self.step(&neg, &redex)?;
            count += 1;
        }
        Ok((neg, count))
    }

    /// Merges and shortcuts until one atom remains. `Err` carries the stuck
    /// negotiation.
    fn acyclic(&mut self, mut neg: Negotiation) -> Result<Result<Negotiation, Negotiation>, RuleError> {
        loop {
            neg = self.merge_all(neg)?.0;
            if neg.atom_count() == 1 {
                return Ok(Ok(neg));
            }
            let Some(redex) = pick_shortcut(&neg) else {
                return Ok(Err(neg));
            };
            neg = self.step(&neg, &redex)?;
        }
    }
}

/// The shortcut whose target comes first in topological order, ties broken
/// by atom and outcome name.
fn pick_shortcut(neg: &Negotiation) -> Option<Redex> {
    let order = negotiation_graph(neg).topological_order()?;
    let rank = |a: &AtomId| order.iter().position(|x| x == a).unwrap_or(usize::MAX);
    find_shortcuts(neg)
        .into_iter()
        .min_by_key(|r| match r {
            Redex::Shortcut {
                atom,
                outcome,
                target,
            } => (rank(target), atom.clone(), outcome.clone()),
            _ => unreachable!("find_shortcuts returns shortcuts"),
        })
}

fn stats_of(neg: &Negotiation) -> RunStats {
    RunStats {
        initial_atoms: neg.atom_count(),
        initial_outcomes: neg.outcome_count(),
        ..RunStats::default()
    }
}

/// Summarizes an acyclic deterministic negotiation with merges and
/// shortcuts, always taking the shortcut into the topologically earliest
/// target.
pub fn summarize_acyclic(neg: &Negotiation) -> Result<SummaryResult, SummarizeError> {
    summarize_acyclic_observed(neg, &mut |_| {})
}

pub fn summarize_acyclic_observed(
    neg: &Negotiation,
    observer: &mut Observer<'_>,
) -> Result<SummaryResult, SummarizeError> {
    check_input(neg)?;
    if !negotiation_graph(neg).is_acyclic() {
        return Err(SummarizeError::Cyclic);
    }
    let mut run = Run {
        observer,
        transcript: Vec::new(),
        scope: Scope::Main,
    };
    let mut stats = stats_of(neg);
    let (merged, merges) = run.merge_all(neg.clone())?;
    stats.initial_merges = merges;
    fill_exit(&mut stats, &merged, 0);
    let result = run.acyclic(merged)?;
    stats.acyclic_applications = run.transcript.len() - merges;
    stats.completed = true;
    Ok(SummaryResult {
        outcome: match result {
            Ok(n) => Outcome::Summary(n),
            Err(n) => stuck(StuckReason::NoRuleApplies, n),
        },
        transcript: Transcript(run.transcript),
        stats,
    })
}

fn stuck(reason: StuckReason, negotiation: Negotiation) -> Outcome {
    Outcome::Unsound(Box::new(Evidence {
        reason,
        negotiation,
    }))
}

fn fill_exit(stats: &mut RunStats, neg: &Negotiation, synchronizers: usize) {
    stats.exit_atoms = neg.atom_count();
    stats.exit_outcomes = neg.outcome_count();
    stats.exit_atom_set = neg.atoms.keys().cloned().collect();
    stats.exit_targets = neg.targets();
    stats.exit_synchronizers = synchronizers;
}

/// Summarizes a deterministic negotiation, cyclic or not. The result is a
/// summary exactly when the negotiation is sound.
pub fn summarize(neg: &Negotiation) -> Result<SummaryResult, SummarizeError> {
    summarize_with(neg, Options::default(), &mut |_| {})
}

pub fn summarize_with(
    neg: &Negotiation,
    options: Options,
    observer: &mut Observer<'_>,
) -> Result<SummaryResult, SummarizeError> {
    check_input(neg)?;
    let mut run = Run {
        observer,
        transcript: Vec::new(),
        scope: Scope::Main,
    };
    let mut stats = stats_of(neg);
    let (mut current, merges) = run.merge_all(neg.clone())?;
    stats.initial_merges = merges;

    let finish = |run: Run, stats: RunStats, outcome: Outcome| SummaryResult {
        outcome,
        transcript: Transcript(run.transcript),
        stats,
    };

    // Sound inputs need at most |N0| rounds; the budget only guards against
    // a fragment choice that makes no progress.
    let budget = neg.atom_count() * neg.outcome_count() + 1;
    while !negotiation_graph(&current).is_acyclic() {
        let round = stats.rounds.len();
        if round >= budget {
            return Err(SummarizeError::RoundLimit(round));
        }
        let rg = reachability_graph(&current, options.node_limit)?;
        let synchronizers = synchronizer_atoms(&current, &rg).len();
        let merge_free = find_merges(&current).is_empty();
        let Some(selection) = select_synchronizer(&current, &rg) else {
            return Ok(finish(run, stats, stuck(StuckReason::NoSynchronizer, current)));
        };
        (run.observer)(&Event::Selected {
            round,
            selection: &selection,
        });
        let s = selection.synchronizer.clone();
        let mut record = IterationRecord {
            atoms: current.atom_count(),
            outcomes: current.outcome_count(),
            atom_set: current.atoms.keys().cloned().collect(),
            targets: current.targets(),
            synchronizers,
            merge_free,
            synchronizer: s.clone(),
            fragment_atoms: selection.fragment.atoms.len(),
            split_applications: 0,
            replayed: 0,
            self_loop_merges: 0,
            iterations: 0,
            outcomes_after_iteration: 0,
            merges_after: 0,
        };

        // reduce N_s on its own
        let mut split_run = Run {
            observer: &mut *run.observer,
            transcript: Vec::new(),
            scope: Scope::Split,
        };
        let reduced = split_run.acyclic(selection.split.neg.clone())?;
        let split_transcript = Transcript(split_run.transcript);
        record.split_applications = split_transcript.len();
        if let Err(at) = reduced {
            let reason = StuckReason::SplitStuck {
                synchronizer: s,
                reason: Box::new(StuckReason::NoRuleApplies),
            };
            stats.rounds.push(record);
            return Ok(finish(run, stats, stuck(reason, at)));
        }
        (run.observer)(&Event::SplitReduced {
            round,
            transcript: &split_transcript,
        });

        // all but the collapse into a single atom
        let keep = split_transcript.len().saturating_sub(1);
        let replayed = match replay(&current, &split_transcript.0[..keep], &selection.split) {
            Ok((n, realized)) => {
                let mut before = current.clone();
                for app in &realized.0 {
                    let (after, _) = apply(&before, &app.redex())?;
                    (run.observer)(&Event::Applied {
                        scope: Scope::Main,
                        before: &before,
                        application: app,
                        after: &after,
                    });
                    before = after;
                }
                record.replayed = realized.len();
                run.transcript.extend(realized.0);
                n
            }
            Err(e) => {
                stats.rounds.push(record);
                return Ok(finish(run, stats, stuck(StuckReason::Replay(e), current)));
            }
        };
        (run.observer)(&Event::Replayed {
            round,
            negotiation: &replayed,
        });
        current = replayed;

        // one self-loop on s, then iterate it away
        loop {
            let loops = self_loops(&current, &s);
            if loops.len() < 2 {
                break;
            }
            let redex = Redex::Merge {
                atom: s.clone(),
                first: loops[0].clone(),
                second: loops[1].clone(),
            };
            current = run.step(&current, &redex)?;
            record.self_loop_merges += 1;
        }
        let Some(r) = self_loops(&current, &s).into_iter().next() else {
            stats.rounds.push(record);
            return Ok(finish(run, stats, stuck(StuckReason::NoSelfLoop(s), current)));
        };
        match apply_iteration(&current, &s, &r) {
            Ok((after, app)) => {
                (run.observer)(&Event::Applied {
                    scope: Scope::Main,
                    before: &current,
                    application: &app,
                    after: &after,
                });
                run.transcript.push(app);
                current = after;
                record.iterations += 1;
            }
            Err(RuleError::OnlySelfLoop(_)) => {
                stats.rounds.push(record);
                return Ok(finish(run, stats, stuck(StuckReason::OnlySelfLoop(s), current)));
            }
            Err(e) => return Err(e.into()),
        }
        record.outcomes_after_iteration = current.outcome_count();
        (run.observer)(&Event::Iterated {
            round,
            negotiation: &current,
        });
        let (merged, merges) = run.merge_all(current)?;
        record.merges_after = merges;
        current = merged;
        stats.rounds.push(record);
    }

    let synchronizers = if stats.rounds.is_empty() {
        0
    } else {
        let rg = reachability_graph(&current, options.node_limit)?;
        synchronizer_atoms(&current, &rg).len()
    };
    fill_exit(&mut stats, &current, synchronizers);
    let before = run.transcript.len();
    let result = run.acyclic(current)?;
    stats.acyclic_applications = run.transcript.len() - before;
    stats.completed = true;
    let outcome = match result {
        Ok(n) => Outcome::Summary(n),
        Err(n) => stuck(StuckReason::NoRuleApplies, n),
    };
    Ok(finish(run, stats, outcome))
}

fn self_loops(neg: &Negotiation, s: &AtomId) -> Vec<OutcomeName> {
    find_iterations(neg)
        .into_iter()
        .filter_map(|r| match r {
            Redex::Iteration { atom, outcome } if atom == *s => Some(outcome),
            _ => None,
        })
        .collect()
}

/// Soundness verdict by reduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReductionVerdict {
    Sound,
    Unsound(Box<Evidence>),
}

impl ReductionVerdict {
    pub fn is_sound(&self) -> bool {
        matches!(self, ReductionVerdict::Sound)
    }
}

pub fn check_sound_reduction(neg: &Negotiation) -> Result<ReductionVerdict, SummarizeError> {
    check_sound_reduction_with(neg, Options::default())
}

pub fn check_sound_reduction_with(
    neg: &Negotiation,
    options: Options,
) -> Result<ReductionVerdict, SummarizeError> {
    Ok(match summarize_with(neg, options, &mut |_| {})?.outcome {
        Outcome::Summary(_) => ReductionVerdict::Sound,
        Outcome::Unsound(e) => ReductionVerdict::Unsound(e),
    })
}

/// Follows the final outcomes of `neg` through a transcript: for each final
/// outcome, the name it carries at the end. Only absorptions of the final
/// atom rename final outcomes.
pub fn final_outcome_names(
    neg: &Negotiation,
    transcript: &Transcript,
) -> std::collections::BTreeMap<OutcomeName, OutcomeName> {
    let mut names: std::collections::BTreeMap<OutcomeName, OutcomeName> = neg.atoms[&neg.final_atom]
        .outcomes
        .keys()
        .map(|r| (r.clone(), r.clone()))
        .collect();
    let mut final_atom = neg.final_atom.clone();
    for app in &transcript.0 {
        if app.kind == RuleKind::Shortcut
            && app.target.as_ref() == Some(&final_atom)
            && app.removed_atom.is_some()
        {
            for current in names.values_mut() {
                if let Some(f) = app.fresh(current) {
                    *current = f.clone();
                }
            }
            final_atom = app.atom.clone();
        }
    }
    names
}
