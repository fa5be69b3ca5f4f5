//! Text format, Graphviz export and random instances.

pub mod dot;
pub mod format;
pub mod generate;

pub use dot::{graph_to_dot, reachability_to_dot};
pub use format::{parse, parse_unchecked, serialize, Diagnostic, ParseError};
pub use generate::{generate_sound_sdn, random_concrete, retarget_mutant, GenerateError, Shape};
