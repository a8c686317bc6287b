use std::fmt;

use serde::{Deserialize, Serialize};

/// Machine-readable classification of a metadata or payload violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    MalformedDocument,
    UnknownComponent,
    PropConstraintViolation,
    EmptyModel,
    DuplicateStepName,
    SchemaMismatch,
    InvalidFinalStep,
    CardinalityViolation,
    TypeMismatch,
    ExtensionNotAllowed,
    SelectionLimitExceeded,
    SelectionBelowMinimum,
    LengthExceeded,
    UnknownItem,
    UnknownField,
    MissingField,
}

/// One located violation. `path` is JSON-path style without a leading `$`,
/// e.g. `steps[0].inputs[0].component`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ErrorCode,
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(code: ErrorCode, path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            code,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.path.is_empty() { "<root>" } else { &self.path };
        write!(f, "{:?} at {}: {}", self.code, at, self.message)
    }
}

/// Every violation found, never just the first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidationErrors(pub Vec<Violation>);

impl ValidationErrors {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Violation> {
        self.0.iter()
    }

    pub fn has(&self, code: ErrorCode) -> bool {
        self.0.iter().any(|v| v.code == code)
    }

    pub fn find(&self, code: ErrorCode) -> Option<&Violation> {
        self.0.iter().find(|v| v.code == code)
    }

    /// Prefixes every path, for embedding a component-level report in a
    /// request-level one.
    pub fn prefixed(mut self, prefix: &str) -> Self {
        for v in &mut self.0 {
            v.path = join(prefix, &v.path);
        }
        self
    }

    pub(crate) fn into_result(self) -> Result<(), ValidationErrors> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(self)
        }
    }
}

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation error(s)", self.0.len())?;
        for v in &self.0 {
            write!(f, "; {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationErrors {}

impl IntoIterator for ValidationErrors {
    type Item = Violation;
    type IntoIter = std::vec::IntoIter<Violation>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

pub(crate) fn field(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

pub(crate) fn index(path: &str, i: usize) -> String {
    format!("{path}[{i}]")
}

fn join(prefix: &str, path: &str) -> String {
    match (prefix.is_empty(), path.is_empty()) {
        (true, _) => path.to_string(),
        (false, true) => prefix.to_string(),
        (false, false) if path.starts_with('[') => format!("{prefix}{path}"),
        (false, false) => format!("{prefix}.{path}"),
    }
}
