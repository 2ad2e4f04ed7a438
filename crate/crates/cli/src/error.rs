use std::path::Path;

use procgraph::corpus::CorpusError;
use procgraph::dialog::DialogError;
use procgraph::eval::EvalError;
use procgraph::graph::GraphError;
use procgraph::mistakes::MistakeError;
use procgraph::online::OnlineError;
use procgraph::predict::PredictError;
use procgraph::recognizer::RecognizerError;
use procgraph::retrieval::RetrievalError;
use procgraph::textmap::MapError;
use thiserror::Error;

/// Validation problems exit with 1, I/O problems with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
    /// The reader of our output went away; not worth reporting.
    #[error("broken pipe")]
    BrokenPipe,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Invalid(_) => 1,
            Self::Io(_) => 2,
            Self::BrokenPipe => 0,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return Self::BrokenPipe;
        }
        Self::Io(e.to_string())
    }
}

macro_rules! split_io {
    ($($ty:ident),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                match e {
                    $ty::Io { .. } => Self::Io(e.to_string()),
                    _ => Self::Invalid(e.to_string()),
                }
            }
        }
    )*};
}

split_io!(CorpusError, GraphError, OnlineError, RetrievalError);

macro_rules! invalid {
    ($($ty:ty),*) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                Self::Invalid(e.to_string())
            }
        }
    )*};
}

invalid!(
    DialogError,
    EvalError,
    MapError,
    MistakeError,
    RecognizerError
);

impl From<PredictError> for CliError {
    fn from(e: PredictError) -> Self {
        match e {
            PredictError::Graph(g) => g.into(),
            other => Self::Invalid(other.to_string()),
        }
    }
}
