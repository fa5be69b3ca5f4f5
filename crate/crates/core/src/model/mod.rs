//! Core domain types: identifiers, transformers and negotiations.

mod ids;
mod negotiation;
mod transformer;

pub use ids::{is_valid_name, AgentId, AtomId, OutcomeName};
pub use negotiation::{
    is_deterministic, validate, Atom, Negotiation, NegotiationBuilder, Outcome, Target, Violation,
};
pub use transformer::{Backend, Expr, Relation, StateSpace, Transformer, TransformerError};
