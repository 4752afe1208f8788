use std::fmt;
use std::process::ExitCode;

/// Failure of a subcommand, split by who has to act on it.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input, or a bad flag value.
    Input(String),
    /// Well-formed input that violates a resource or model constraint.
    Constraint(String),
}

impl CliError {
    pub fn input(msg: impl fmt::Display) -> Self {
        CliError::Input(msg.to_string())
    }

    pub fn constraint(msg: impl fmt::Display) -> Self {
        CliError::Constraint(msg.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(2),
            CliError::Constraint(_) => ExitCode::from(3),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Constraint(m) => write!(f, "constraint violated: {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Reads a file, naming it in the error.
pub fn read_bytes(path: &std::path::Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &std::path::Path) -> CliResult<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes)
        .map_err(|_| CliError::input(format!("{}: not valid UTF-8", path.display())))
}
