use std::path::PathBuf;

use thiserror::Error;

use crate::graphstore::GraphError;
use crate::numcore::NumError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("{stage} diverged at epoch {epoch} (lr {lr}): {detail}")]
    Diverged { stage: &'static str, epoch: usize, lr: f64, detail: String },
}

impl Error {
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Num(_) | Error::Diverged { .. })
    }

    /// Process exit code: 2 configuration, 3 infeasible experiment,
    /// 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Num(_) | Error::Diverged { .. } => 4,
            Error::Infeasible(_) => 3,
            Error::Graph(GraphError::Infeasible { .. } | GraphError::Split(_) | GraphError::UndefinedRatio) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
