use thiserror::Error;

/// Errors produced by mesh handling, assembly, solvers and signal models.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error(
        "conjugate gradient stalled after {iterations} iterations \
         (relative residual {achieved:.3e}, requested {tol:.3e})"
    )]
    SolverDiverged {
        iterations: usize,
        achieved: f64,
        tol: f64,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("signal model error: {0}")]
    Signal(String),

    #[error("voxel grid error: {0}")]
    Voxel(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}
