use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(sing_core::Error),
    /// Some rows of a batch failed numerically; the report holds the rest.
    PartialFailure {
        failed: usize,
        total: usize,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
            CliError::PartialFailure { .. } => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::PartialFailure { failed, total } => {
                write!(f, "{failed} of {total} samples failed (see warnings above)")
            }
        }
    }
}

impl From<sing_core::Error> for CliError {
    fn from(e: sing_core::Error) -> Self {
        CliError::Core(e)
    }
}
