//! Name-keyed registries of interchangeable strategies.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// Strategies of one family, keyed by a stable name.
///
/// `T` is normally a trait object, e.g. `Registry<dyn SampleWeighting>`.
pub struct Registry<T: ?Sized> {
    family: &'static str,
    entries: BTreeMap<&'static str, Box<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            entries: BTreeMap::new(),
        }
    }

    /// Adds a strategy, replacing any previous entry with the same name.
    pub fn register(&mut self, name: &'static str, strategy: Box<T>) -> &mut Self {
        self.entries.insert(name, strategy);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown {} '{}' (available: {})",
                self.family,
                name,
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<T: ?Sized> fmt::Debug for Registry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("names", &self.names().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }
    struct Hello;
    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    #[test]
    fn lookup_and_unknown_name() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register("hello", Box::new(Hello));
        assert_eq!(reg.get("hello").unwrap().greet(), "hello");
        let err = reg.get("bye").err().unwrap().to_string();
        assert!(err.contains("unknown greeter 'bye'"));
        assert!(err.contains("hello"));
    }
}
