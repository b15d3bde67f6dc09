use std::fmt;

use ganlc::Error;

/// Exit-status classes of the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Other,
    /// Invalid configuration or a checkpoint that does not fit it.
    Config,
    MissingInput,
    NonFinite,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Config => 2,
            Kind::MissingInput => 3,
            Kind::NonFinite => 4,
        }
    }
}

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

    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure::new(Kind::Config, error)
    }

    pub fn missing(what: impl fmt::Display) -> Self {
        Failure::new(Kind::MissingInput, anyhow::anyhow!("{what}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn classify(e: &Error) -> Kind {
    match e {
        Error::NonFinite(_) => Kind::NonFinite,
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => Kind::Config,
        Error::Unreadable { .. } => Kind::MissingInput,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Kind::MissingInput,
        _ => Kind::Other,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(classify(&e), e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        let kind = if e.kind() == std::io::ErrorKind::NotFound { Kind::MissingInput } else { Kind::Other };
        Failure::new(kind, e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let kind = e.downcast_ref::<Error>().map(classify).unwrap_or(Kind::Other);
        Failure::new(kind, e)
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Attaches context without losing the exit class.
pub trait Context<T> {
    fn at(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn at(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| {
            let f: Failure = e.into();
            Failure::new(f.kind, f.error.context(what.to_string()))
        })
    }
}
