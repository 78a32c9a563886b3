use std::fmt;

/// Process exit codes.
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Validation,
    Numerical,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub messages: Vec<String>,
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self { kind: Kind::Validation, messages: vec![msg.into()] }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self { kind: Kind::Numerical, messages: vec![msg.into()] }
    }

    /// Several independent validation problems reported together.
    pub fn many(messages: Vec<String>) -> Self {
        Self { kind: Kind::Validation, messages }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Validation => EXIT_VALIDATION,
            Kind::Numerical => EXIT_NUMERICAL,
        }
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        for m in &mut self.messages {
            *m = format!("{what}: {m}");
        }
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.messages.join("\n"))
    }
}

impl std::error::Error for CliError {}

impl From<spinforge::Error> for CliError {
    fn from(e: spinforge::Error) -> Self {
        if e.is_numerical() {
            Self::numerical(e.to_string())
        } else {
            Self::validation(e.to_string())
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
