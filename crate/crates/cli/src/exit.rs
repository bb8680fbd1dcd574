use std::fmt;
use std::process::ExitCode;

use editprog_core::config::SessionConfigError;
use editprog_core::gateway::ConfigError;
use editprog_core::image::ImageError;
use editprog_core::interpreter::InterpreterError;
use editprog_core::planner::PlannerError;
use editprog_core::program::ProgramError;

/// Exit status contract: 0 ok, 1 I/O, 2 plan or validation, 3 runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Io = 1,
    Plan = 2,
    Runtime = 3,
}

/// Error carrying the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind,
            error: error.into(),
        }
    }

    pub fn io(error: impl Into<anyhow::Error>) -> Self {
        Failure::new(Kind::Io, error)
    }

    pub fn plan(error: impl Into<anyhow::Error>) -> Self {
        Failure::new(Kind::Plan, error)
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure::new(Kind::Runtime, error)
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        Failure {
            kind: self.kind,
            error: self.error.context(msg),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind as u8)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<SessionConfigError> for Failure {
    fn from(e: SessionConfigError) -> Self {
        Failure::plan(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::plan(e)
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        Failure::io(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e)
    }
}

impl From<ProgramError> for Failure {
    fn from(e: ProgramError) -> Self {
        Failure::plan(e)
    }
}

impl From<PlannerError> for Failure {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::Backend(_) => Failure::runtime(e),
            _ => Failure::plan(e),
        }
    }
}

impl From<InterpreterError> for Failure {
    fn from(e: InterpreterError) -> Self {
        let kind = match &e {
            InterpreterError::MissingIntermediate(_) | InterpreterError::Trace(_) => Kind::Io,
            InterpreterError::InvalidProgram(_) | InterpreterError::IndexOutOfRange { .. } => Kind::Plan,
            _ => Kind::Runtime,
        };
        Failure::new(kind, e)
    }
}

impl Failure {
    /// Individual violations when the failure is a rejected program.
    pub fn violations(&self) -> Vec<String> {
        // `PlannerError::Program` is transparent and hides its source.
        let program = self.error.chain().find_map(|e| {
            e.downcast_ref::<ProgramError>()
                .or_else(|| match e.downcast_ref::<PlannerError>() {
                    Some(PlannerError::Program(p)) => Some(p),
                    _ => None,
                })
        });
        match program {
            Some(ProgramError::Invalid(report)) => report.violations.iter().map(|v| v.to_string()).collect(),
            _ => Vec::new(),
        }
    }
}
