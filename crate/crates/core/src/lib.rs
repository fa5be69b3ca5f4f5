//! Deterministic negotiations: a Petri-net-like concurrency model in which
//! agents meet in multiparty *atoms*, agree on an outcome, and move on to the
//! next atoms prescribed by a transition function.
//!
//! The crate decides soundness and computes summaries of deterministic
//! negotiations with three reduction rules (merge, shortcut, iteration), and
//! ships brute-force semantic oracles used to cross-check the reduction
//! engine on small instances.
//!
//! Module map:
//!
//! * [`model`]: negotiations, atoms, transformers, validation.
//! * [`semantics`]: markings, reachability graphs, soundness and summary oracles.
//! * [`structure`]: negotiation graph, loops, synchronizers, fragments, splits.
//! * [`rules`]: the reduction rules, transcripts and replay.
//! * [`summarize`]: acyclic and cyclic reduction procedures with instrumentation.
//! * [`io`]: text format, DOT export, and the random instance generator.
//! * [`cli`]: the `negot` command-line front end.

pub mod cli;
pub mod fixtures;
pub mod io;
pub mod model;
pub mod rules;
pub mod semantics;
pub mod structure;
pub mod summarize;

pub use model::{
    is_deterministic, validate, AgentId, Atom, AtomId, Backend, Expr, Negotiation,
    NegotiationBuilder, Outcome, OutcomeName, Relation, StateSpace, Transformer,
    TransformerError, Violation,
};
