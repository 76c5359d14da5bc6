//! Name-keyed registries of interchangeable strategies.
//!
//! Each algorithm family (media decoders, caption templates, mask
//! selectors, variance estimators) exposes one static [`Registry`] so the
//! CLI and config files can pick an implementation by name.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub type Constructor<T> = fn() -> Box<T>;

pub struct Registry<T: ?Sized + 'static> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Constructor<T>>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("unknown {kind} `{name}` (available: {available})")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub available: String,
}

impl<T: ?Sized + 'static> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Adds a constructor. Later registrations under the same name win.
    pub fn with(mut self, name: &'static str, ctor: Constructor<T>) -> Self {
        self.entries.insert(name, ctor);
        self
    }

    pub fn create(&self, name: &str) -> Result<Box<T>, UnknownStrategy> {
        match self.entries.get(name) {
            Some(ctor) => Ok(ctor()),
            None => Err(UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().collect::<Vec<_>>().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Registered names in ascending order.
    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    /// Instantiates every registered strategy, in name order.
    pub fn all(&self) -> impl Iterator<Item = (&'static str, Box<T>)> + '_ {
        self.entries.iter().map(|(name, ctor)| (*name, ctor()))
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}
