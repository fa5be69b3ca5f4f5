use std::borrow::Borrow;
use std::fmt;
use std::sync::Arc;

/// Characters that carry meaning in the text format and therefore cannot
/// appear inside names.
const RESERVED: &[char] = &['#', ':', '/', '(', ')', ',', '='];

/// Returns true if `name` can be used as an agent, atom, outcome or state
/// label in the text format.
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "->"
        && name
            .chars()
            .all(|c| !c.is_whitespace() && !c.is_control() && !RESERVED.contains(&c))
}

macro_rules! name_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(name: impl AsRef<str>) -> Self {
                Self(Arc::from(name.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", &*self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self::new(s)
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(Arc::from(s))
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }

        impl PartialEq<str> for $name {
            fn eq(&self, other: &str) -> bool {
                &*self.0 == other
            }
        }

        impl PartialEq<&str> for $name {
            fn eq(&self, other: &&str) -> bool {
                &*self.0 == *other
            }
        }
    };
}

name_type!(
    /// Name of an agent (a negotiation party).
    AgentId
);
name_type!(
    /// Name of an atom.
    AtomId
);
name_type!(
    /// Name of an outcome; unique within its atom.
    OutcomeName
);
