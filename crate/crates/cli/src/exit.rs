use std::fmt;

pub const OK: i32 = 0;
pub const OTHER: i32 = 1;
pub const CONFIG: i32 = 2;
pub const DATA: i32 = 3;
pub const NUMERIC: i32 = 4;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Failure::new(CONFIG, message)
    }

    pub fn config_from(e: anyhow::Error) -> Self {
        Failure::new(CONFIG, format!("{e:#}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<geosup::Error> for Failure {
    fn from(e: geosup::Error) -> Self {
        use geosup::Error::*;
        let code = match &e {
            Config(_) => CONFIG,
            Ingestion(_) | Decode { .. } | Image(_) => DATA,
            NonFinite { .. } => NUMERIC,
            Checkpoint(_) | Io(_) | Json(_) => OTHER,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<geosup::Error>() {
            Ok(inner) => inner.into(),
            Err(e) => Failure::new(OTHER, format!("{e:#}")),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(OTHER, e.to_string())
    }
}
