//! Command failures and their process exit codes.

use std::fmt;

use hydroctrl_core::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ASSERTION: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_GUARD: u8 = 3;
pub const EXIT_BUDGET: u8 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn assertion(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_ASSERTION,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) | Error::InvalidConfig(_) => EXIT_CONFIG,
            Error::Guard { .. } => EXIT_GUARD,
            Error::Budget { .. } => EXIT_BUDGET,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}
