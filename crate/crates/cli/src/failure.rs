// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Input,
    Numerical,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Input,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self.kind {
            Kind::Input => ExitCode::from(2),
            Kind::Numerical => ExitCode::from(3),
        }
    }
}

impl From<biasheads::Error> for Failure {
    fn from(e: biasheads::Error) -> Self {
        Self {
            kind: if e.is_numerical() { Kind::Numerical } else { Kind::Input },
            message: e.to_string(),
        }
    }
}

/// One line: `error kind=<input|numerical> message="<escaped>"`.
impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            Kind::Input => "input",
            Kind::Numerical => "numerical",
        };
        write!(f, "error kind={kind} message={:?}", self.message)
    }
}
