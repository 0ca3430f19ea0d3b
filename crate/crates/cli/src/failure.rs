use std::fmt;

use soid::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_ESTIMATION: i32 = 4;
pub const EXIT_DEGENERATE: i32 = 5;
pub const EXIT_MC_FAILURES: i32 = 6;

/// A terminal error: exit code plus a one-line reason.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub reason: String,
}

impl Failure {
    pub fn new(code: i32, reason: impl Into<String>) -> Self {
        let reason: String = reason.into();
        Self { code, reason: reason.split_whitespace().collect::<Vec<_>>().join(" ") }
    }

    pub fn config(reason: impl Into<String>) -> Self {
        Self::new(EXIT_CONFIG, reason)
    }

    pub fn data(reason: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, reason)
    }

    pub fn kind(&self) -> &'static str {
        match self.code {
            EXIT_CONFIG => "config",
            EXIT_DATA => "data",
            EXIT_ESTIMATION => "estimation",
            EXIT_DEGENERATE => "degenerate",
            EXIT_MC_FAILURES => "replications",
            _ => "internal",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error kind={} code={}: {}", self.kind(), self.code, self.reason)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parameter(_) | Error::Model(_) => EXIT_CONFIG,
            Error::Data(_) | Error::InsufficientData(_) | Error::NonFiniteMoment { .. } | Error::Csv(_) | Error::Io(_) => {
                EXIT_DATA
            }
            Error::Degenerate(_) => EXIT_DEGENERATE,
            Error::TooManyFailures { .. } => EXIT_MC_FAILURES,
            _ => EXIT_ESTIMATION,
        };
        Failure::new(code, e.to_string())
    }
}
