use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("point cloud is in the {found:?} frame, expected {expected:?}")]
    FrameMismatch {
        expected: crate::camera::Frame,
        found: crate::camera::Frame,
    },

    #[error("no dimension prior for class `{0}`")]
    MissingPrior(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed {what} in {path}: {detail}")]
    Format {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        what: &'static str,
        path: impl Into<PathBuf>,
        detail: impl ToString,
    ) -> Self {
        Self::Format {
            what,
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}
