use std::fmt;
use std::path::Path;

/// Error carried to `main`, which turns it into the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// unreadable or inconsistent configuration (exit 2)
    Config(String),
    /// an upstream artifact is absent or unreadable (exit 3)
    Missing(String),
    /// training or evaluation produced non-finite numbers (exit 4)
    Numeric(String),
    /// anything else, typically I/O (exit 1)
    Other(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Missing(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    pub fn config(e: evict::Error) -> Self {
        Failure::Config(e.to_string())
    }

    pub fn missing(path: &Path, producer: &str) -> Self {
        Failure::Missing(format!("{} not found; run `evict {producer}` first", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Missing(m) => write!(f, "missing artifact: {m}"),
            Failure::Numeric(m) => write!(f, "numeric failure: {m}"),
            Failure::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<evict::Error> for Failure {
    fn from(e: evict::Error) -> Self {
        match e {
            evict::Error::NonFinite(_) => Failure::Numeric(e.to_string()),
            evict::Error::Invalid(_) | evict::Error::Shape { .. } => Failure::Config(e.to_string()),
            _ => Failure::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Other(e.to_string())
    }
}
